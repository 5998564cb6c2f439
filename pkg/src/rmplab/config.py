"""Experiment configuration: versioned JSON schema, fail closed.

Unknown keys are rejected everywhere.  A configuration that loads is
guaranteed to round-trip: load(dump(cfg)) reproduces cfg exactly,
including defaults that were filled in.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import engine, noise
from .errors import ConfigInvalidError
from .grid import TimeGrid, default_dt

SCHEMA_VERSION = 1

FORMATS = ("csv", "json", "binary", "plotdata")

ESTIMATOR_PARAMS: dict[str, dict[str, object]] = {
    # name -> {param: default}; None means required-or-derived at run time
    "moments": {"p": None, "source": "X", "save_every": None, "window": None},
    "beta": {"p_grid": None, "horizon": None, "window": None, "save_every": None},
    "hill": {"t_star": None, "k": None, "n": None, "p_max": 1.0},
    "green_kubo": {"window": None},
    "dt_fit": {"window": None},
    "condition1": {"p": None, "t_max": 50.0, "nodes": 26, "ratio_budget": 1e3, "mc_n": 0},
    "b_equals_h": {"t": None, "n": None, "replicates": 10, "level": 0.01},
    "inequalities": {"trials": 1000, "p": (0.3, 0.7, 1.0, 2.0), "n": 256},
    "converge": {"functions": None, "times": None, "t_star": None, "n": None, "mode": "auto"},
}


@dataclass(frozen=True)
class EstimatorRequest:
    name: str
    params: tuple[tuple[str, object], ...]

    def get(self, key: str, default: object = None) -> object:
        for k, v in self.params:
            if k == key:
                return v
        return default

    def to_dict(self) -> dict:
        out: dict = {"name": self.name}
        out.update({k: _plain(v) for k, v in self.params})
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int
    model: "engine.LinearModel | engine.NonlinearModel"
    grid: TimeGrid
    n_paths: int
    master_seed: int
    workers: int
    out_dir: str
    formats: tuple[str, ...]
    estimators: tuple[EstimatorRequest, ...]

    def to_dict(self) -> dict:
        m: dict = {"a": self.model.a, "x0": self.model.x0}
        if isinstance(self.model, engine.NonlinearModel):
            m["kind"] = "nonlinear"
            m["multiplicative"] = _spec_to_dict(self.model.multiplicative)
            m["envelope"] = _spec_to_dict(self.model.envelope)
            m["nonlinearity"] = self.model.nonlinearity
        else:
            m["kind"] = "linear"
            m["multiplicative"] = _spec_to_dict(self.model.multiplicative)
            m["additive"] = _spec_to_dict(self.model.additive)
        return {
            "schema_version": self.schema_version,
            "model": m,
            "grid": {"dt": self.grid.dt, "t_max": self.grid.horizon},
            "ensemble": {"n_paths": self.n_paths, "master_seed": self.master_seed},
            "workers": self.workers,
            "outputs": {"directory": self.out_dir, "formats": list(self.formats)},
            "estimators": [e.to_dict() for e in self.estimators],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _plain(v: object) -> object:
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _freeze(v: object) -> object:
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    if isinstance(v, dict):
        return tuple(sorted((k, _freeze(val)) for k, val in v.items()))
    return v


def _check_keys(d: dict, allowed: "set[str]", required: "set[str]", where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigInvalidError(f"{where}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigInvalidError(f"{where}: unknown fields {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ConfigInvalidError(f"{where}: missing fields {sorted(missing)}")


def _number(d: dict, key: str, where: str, *, default: "float | None" = None) -> float:
    if key not in d:
        if default is None:
            raise ConfigInvalidError(f"{where}: missing field {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigInvalidError(f"{where}.{key}: expected a number")
    return float(v)


def _spec_to_dict(spec: noise.NoiseSpec) -> dict:
    if spec.kind == noise.OU:
        sigma, tau = spec.components[0]
        return {"kind": "ou", "sigma": sigma, "tau_c": tau}
    if spec.kind == noise.OU_SUPERPOSITION:
        return {"kind": "ou_superposition", "components": [list(c) for c in spec.components]}
    if spec.kind == noise.ZERO:
        return {"kind": "zero"}
    if spec.kind == noise.CONSTANT:
        return {"kind": "constant", "level": spec.level}
    return {
        "kind": "pareto_transformed_ou",
        "tau_c": spec.components[0][1],
        "tail_index": spec.tail_index,
        "scale": spec.scale,
    }


def spec_from_dict(d: dict, where: str) -> noise.NoiseSpec:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigInvalidError(f"{where}: noise spec must be an object with a 'kind'")
    kind = d["kind"]
    try:
        if kind == "ou":
            _check_keys(d, {"kind", "sigma", "tau_c"}, {"sigma", "tau_c"}, where)
            return noise.NoiseSpec.ou(_number(d, "sigma", where), _number(d, "tau_c", where))
        if kind == "ou_superposition":
            _check_keys(d, {"kind", "components"}, {"components"}, where)
            comps = d["components"]
            if not isinstance(comps, list) or not all(
                isinstance(c, list) and len(c) == 2 for c in comps
            ):
                raise ConfigInvalidError(f"{where}.components: expected [[sigma, tau_c], ...]")
            return noise.NoiseSpec.superposition([(float(s), float(t)) for s, t in comps])
        if kind == "zero":
            _check_keys(d, {"kind"}, set(), where)
            return noise.NoiseSpec.zero()
        if kind == "constant":
            _check_keys(d, {"kind", "level"}, {"level"}, where)
            return noise.NoiseSpec.constant(_number(d, "level", where))
        if kind == "pareto_transformed_ou":
            _check_keys(d, {"kind", "tau_c", "tail_index", "scale"}, {"tau_c", "tail_index"}, where)
            return noise.NoiseSpec.pareto_ou(
                _number(d, "tau_c", where),
                _number(d, "tail_index", where),
                _number(d, "scale", where, default=1.0),
            )
    except ValueError as exc:
        raise ConfigInvalidError(f"{where}: {exc}") from exc
    raise ConfigInvalidError(f"{where}.kind: unknown noise kind {kind!r}")


def _model_from_dict(d: dict) -> "engine.LinearModel | engine.NonlinearModel":
    if not isinstance(d, dict):
        raise ConfigInvalidError("model: expected an object")
    kind = d.get("kind", "linear")
    try:
        if kind == "linear":
            _check_keys(
                d,
                {"kind", "a", "x0", "multiplicative", "additive"},
                {"a", "multiplicative", "additive"},
                "model",
            )
            return engine.LinearModel(
                a=_number(d, "a", "model"),
                multiplicative=spec_from_dict(d["multiplicative"], "model.multiplicative"),
                additive=spec_from_dict(d["additive"], "model.additive"),
                x0=_number(d, "x0", "model", default=1.0),
            )
        if kind == "nonlinear":
            _check_keys(
                d,
                {"kind", "a", "x0", "multiplicative", "envelope", "nonlinearity"},
                {"a", "multiplicative", "envelope", "nonlinearity"},
                "model",
            )
            if d["nonlinearity"] not in engine.NONLINEARITIES:
                raise ConfigInvalidError(
                    f"model.nonlinearity: expected one of {list(engine.NONLINEARITIES)}"
                )
            return engine.NonlinearModel(
                a=_number(d, "a", "model"),
                multiplicative=spec_from_dict(d["multiplicative"], "model.multiplicative"),
                envelope=spec_from_dict(d["envelope"], "model.envelope"),
                nonlinearity=d["nonlinearity"],
                x0=_number(d, "x0", "model", default=1.0),
            )
    except ValueError as exc:
        raise ConfigInvalidError(f"model: {exc}") from exc
    raise ConfigInvalidError(f"model.kind: expected 'linear' or 'nonlinear', got {kind!r}")


def _estimator_from_dict(d: dict, index: int) -> EstimatorRequest:
    where = f"estimators[{index}]"
    if not isinstance(d, dict) or "name" not in d:
        raise ConfigInvalidError(f"{where}: expected an object with a 'name'")
    name = d["name"]
    if name not in ESTIMATOR_PARAMS:
        raise ConfigInvalidError(f"{where}.name: unknown estimator {name!r}")
    spec = ESTIMATOR_PARAMS[name]
    _check_keys(d, set(spec) | {"name"}, set(), where)
    params = []
    for key, default in sorted(spec.items()):
        value = d.get(key, default)
        params.append((key, _freeze(value)))
    return EstimatorRequest(name=name, params=tuple(params))


def _validate_estimator_against_model(
    req: EstimatorRequest, model: "engine.LinearModel | engine.NonlinearModel"
) -> None:
    """Cross-field checks: requested orders must make sense for the model."""
    additive = getattr(model, "additive", None) or getattr(model, "envelope")
    beta_1 = noise.tail_index(additive)
    for key in ("p", "p_grid"):
        value = req.get(key)
        if value is None:
            continue
        orders = value if isinstance(value, tuple) else (value,)
        for p in orders:
            if isinstance(p, bool) or not isinstance(p, (int, float)) or p <= 0:
                raise ConfigInvalidError(f"{req.name}.{key}: orders must be positive numbers")
            if p >= beta_1:
                raise ConfigInvalidError(
                    f"{req.name}.{key}: order {p} is not below the additive tail index {beta_1}"
                )
    p_max = req.get("p_max")
    if p_max is not None and req.name == "hill":
        if p_max >= model.beta_c:
            raise ConfigInvalidError(
                f"hill.p_max: {p_max} is not below the transition order {model.beta_c}"
            )


def config_from_dict(raw: dict) -> ExperimentConfig:
    _check_keys(
        raw,
        {"schema_version", "model", "grid", "ensemble", "workers", "outputs", "estimators"},
        {"schema_version", "model", "grid", "ensemble"},
        "config",
    )
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigInvalidError(
            f"schema_version: expected {SCHEMA_VERSION}, got {raw['schema_version']!r}"
        )
    model = _model_from_dict(raw["model"])

    gd = raw["grid"]
    _check_keys(gd, {"dt", "t_max"}, {"t_max"}, "grid")
    t_max = _number(gd, "t_max", "grid")
    if t_max <= 0:
        raise ConfigInvalidError("grid.t_max: must be positive")
    taus = [model.multiplicative.max_tau]
    additive = getattr(model, "additive", None) or getattr(model, "envelope")
    taus.append(additive.max_tau)
    dt = _number(gd, "dt", "grid", default=default_dt(max(model.a, 1e-12), *taus))
    n_steps = max(int(round(t_max / dt)), 1)
    try:
        grid = TimeGrid(dt=t_max / n_steps, n_steps=n_steps)
    except ValueError as exc:
        raise ConfigInvalidError(f"grid: {exc}") from exc

    ed = raw["ensemble"]
    _check_keys(ed, {"n_paths", "master_seed"}, {"n_paths", "master_seed"}, "ensemble")
    n_paths = ed["n_paths"]
    if not isinstance(n_paths, int) or isinstance(n_paths, bool) or n_paths < 1:
        raise ConfigInvalidError("ensemble.n_paths: must be a positive integer")
    master_seed = ed["master_seed"]
    if not isinstance(master_seed, int) or isinstance(master_seed, bool) or master_seed < 0:
        raise ConfigInvalidError("ensemble.master_seed: must be a nonnegative integer")

    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
        raise ConfigInvalidError("workers: must be a positive integer")

    od = raw.get("outputs", {})
    _check_keys(od, {"directory", "formats"}, set(), "outputs")
    out_dir = od.get("directory", "out")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigInvalidError("outputs.directory: must be a nonempty string")
    formats = od.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or not formats or any(f not in FORMATS for f in formats):
        raise ConfigInvalidError(f"outputs.formats: entries must be among {list(FORMATS)}")

    raw_estimators = raw.get("estimators", [])
    if not isinstance(raw_estimators, list):
        raise ConfigInvalidError("estimators: expected a list")
    estimators = tuple(_estimator_from_dict(e, i) for i, e in enumerate(raw_estimators))
    for req in estimators:
        _validate_estimator_against_model(req, model)

    return ExperimentConfig(
        schema_version=SCHEMA_VERSION,
        model=model,
        grid=grid,
        n_paths=n_paths,
        master_seed=master_seed,
        workers=workers,
        out_dir=out_dir,
        formats=tuple(formats),
        estimators=estimators,
    )


def load_config(path: "str | Path") -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalidError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalidError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    import hashlib

    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
