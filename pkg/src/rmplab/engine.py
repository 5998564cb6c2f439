"""Path simulation for the linear and nonlinear random ODEs.

The linear model is dX/dt = -(a + zeta_t) X + phi_t.  Everything is
built from the integrated multiplicative noise Y_t: the homogeneous
propagator is A_t = exp(-a t - Y_t), the driven response obeys the
one-step recursion B_{k+1} = B_k A_{k+1}/A_k + local quadrature, and the
time-reversed response H_t integrates phi A on [0, t].  All propagator
arithmetic happens on log A; per-step ratios exp(dlog A) are order one,
so the recursion never manufactures overflow on its own.

Paths whose log-propagator leaves the representable exponent budget are
retained with saturated values and flagged; moment estimators exclude
them and report the count.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import noise as noise_mod
from .blocks import DEFAULT_BLOCK_SIZE, pairwise_sum, run_blocks
from .errors import TruncationWarningError
from .grid import TimeGrid
from .noise import NoiseSpec, diffusion_constant, require_multiplicative, y_variance_half
from .rng import ROLE_ADDITIVE, ROLE_MARGINAL, ROLE_MULTIPLICATIVE, path_stream

LOG_BUDGET = 700.0
SATURATION = 1e300
_EXP_CAP = 709.0

SIN_MODULATED = "sin_modulated"
CLIPPED = "clipped"
ENVELOPE_ITSELF = "envelope_itself"
NONLINEARITIES = (SIN_MODULATED, CLIPPED, ENVELOPE_ITSELF)

PROCESS_LABELS = ("X", "Y", "A", "B", "H", "zeta", "phi")


def _beta_c(a: float, multiplicative: NoiseSpec) -> float:
    d = diffusion_constant(multiplicative)
    if d > 0.0:
        return a / d
    return float("inf") if a >= 0.0 else float("-inf")


@dataclass(frozen=True)
class LinearModel:
    """dX/dt = -(a + zeta) X + phi with initial value x0."""

    a: float
    multiplicative: NoiseSpec
    additive: NoiseSpec
    x0: float = 1.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.a):
            raise ValueError("a must be finite")
        if not np.isfinite(self.x0):
            raise ValueError("x0 must be finite")
        require_multiplicative(self.multiplicative)

    @property
    def beta_c(self) -> float:
        """Transition order a/D of the moment dichotomy."""
        return _beta_c(self.a, self.multiplicative)


@dataclass(frozen=True)
class NonlinearModel:
    """dX/dt = -(a + zeta) X + psi(t, X) with |psi| bounded by the envelope.

    The envelope path enters as |phi_t|; nonlinearity selects how the
    bound is realized: phi sin(x), clamp(x, -phi, phi), or phi itself
    (which reproduces the linear model).
    """

    a: float
    multiplicative: NoiseSpec
    envelope: NoiseSpec
    nonlinearity: str
    x0: float = 1.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.a):
            raise ValueError("a must be finite")
        if not np.isfinite(self.x0):
            raise ValueError("x0 must be finite")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity: {self.nonlinearity!r}")
        require_multiplicative(self.multiplicative)

    @property
    def beta_c(self) -> float:
        return _beta_c(self.a, self.multiplicative)


@dataclass
class PathEnsemble:
    """A rectangular block of realizations of one labeled process.

    Row i is reproducible from (master_seed, i) alone.  flagged marks
    rows whose propagator exponent left the budget or whose values had
    to be saturated; they stay in the array but are excluded from
    moment estimates.
    """

    grid: TimeGrid
    label: str
    values: np.ndarray
    flagged: np.ndarray
    master_seed: int

    def __post_init__(self) -> None:
        if self.label not in PROCESS_LABELS:
            raise ValueError(f"unknown process label: {self.label!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be 2-D (paths by nodes)")
        if self.values.shape[1] != self.grid.n_nodes:
            raise ValueError("node count does not match the grid")
        self.flagged = np.asarray(self.flagged, dtype=bool)
        if self.flagged.shape != (self.values.shape[0],):
            raise ValueError("flagged must have one entry per path")

    @property
    def n_paths(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())

    @property
    def final_values(self) -> np.ndarray:
        return self.values[:, -1]


@dataclass
class LinearSolution:
    x: PathEnsemble
    y: PathEnsemble
    a: PathEnsemble
    b: PathEnsemble


@dataclass
class StationarySample:
    """Draws of the reversed response at a fixed horizon t_star."""

    values: np.ndarray
    t_star: float
    master_seed: int
    n_flagged: int
    p_max: float | None = None
    truncation_bound: float | None = None
    warnings: tuple[str, ...] = ()


@dataclass
class NonlinearSolution:
    x: PathEnsemble
    substeps: int
    refinement: tuple[tuple[int, float], ...]


def _sanitize(arr: np.ndarray) -> np.ndarray:
    """Saturate overflowed entries in place; return row mask of repairs."""
    bad = ~np.isfinite(arr)
    if bad.any():
        np.nan_to_num(arr, copy=False, nan=0.0, posinf=SATURATION, neginf=-SATURATION)
    return bad.any(axis=1)


def integrate_y_values(zeta: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid of the multiplicative noise, Y_0 = 0."""
    return cumulative_trapezoid(zeta, dx=dt, axis=-1, initial=0.0)


def integrate_y(zeta: PathEnsemble) -> PathEnsemble:
    vals = integrate_y_values(zeta.values, zeta.grid.dt)
    return PathEnsemble(
        grid=zeta.grid,
        label="Y",
        values=vals,
        flagged=zeta.flagged.copy(),
        master_seed=zeta.master_seed,
    )


def propagator(y: PathEnsemble, a: float) -> PathEnsemble:
    """A_t = exp(-a t - Y_t), flagged where the exponent leaves budget."""
    log_a = -a * y.grid.times[None, :] - y.values
    flagged = y.flagged | (np.abs(log_a).max(axis=1) > LOG_BUDGET)
    vals = np.exp(np.minimum(log_a, _EXP_CAP))
    return PathEnsemble(
        grid=y.grid, label="A", values=vals, flagged=flagged, master_seed=y.master_seed
    )


def _response_from_log(log_a: np.ndarray, phi: np.ndarray, dt: float) -> np.ndarray:
    """Driven response via the stable per-step recursion.

    B_{k+1} = B_k exp(dlogA_k) + (dt/2) (phi_k exp(dlogA_k) + phi_{k+1}),
    the trapezoid rule applied inside each step after factoring out the
    propagator ratio.
    """
    n, nodes = log_a.shape
    with np.errstate(over="ignore", invalid="ignore"):
        ratios = np.exp(np.diff(log_a, axis=1))
        q = 0.5 * dt * (phi[:, :-1] * ratios + phi[:, 1:])
        b = np.empty((n, nodes))
        b[:, 0] = 0.0
        for k in range(nodes - 1):
            b[:, k + 1] = b[:, k] * ratios[:, k] + q[:, k]
    return b


_NEEDS = {"zeta", "phi", "Y", "logA", "A", "B", "X", "H"}


def linear_block_arrays(
    model: LinearModel,
    grid: TimeGrid,
    master_seed: int,
    indices: np.ndarray,
    *,
    save_every: int = 1,
    need: "tuple[str, ...] | frozenset[str]" = ("X",),
) -> dict[str, np.ndarray]:
    """Compute requested process arrays for a block of path indices.

    Returns full-resolution dynamics subsampled to every save_every-th
    node, plus a 'flagged' row mask.  This is the kernel every ensemble
    estimator is built on.
    """
    need = frozenset(need)
    unknown = need - _NEEDS
    if unknown:
        raise ValueError(f"unknown process requests: {sorted(unknown)}")
    want_y = bool(need & {"Y", "logA", "A", "B", "X", "H"})
    want_phi = bool(need & {"phi", "B", "X", "H"})

    out: dict[str, np.ndarray] = {}
    flagged = np.zeros(len(indices), dtype=bool)

    zeta = None
    if want_y or "zeta" in need:
        zeta = noise_mod.sample_block(
            model.multiplicative, grid, master_seed, indices, ROLE_MULTIPLICATIVE
        )
    phi = None
    if want_phi:
        phi = noise_mod.sample_block(model.additive, grid, master_seed, indices, ROLE_ADDITIVE)

    log_a = None
    y = None
    if want_y:
        y = integrate_y_values(zeta, grid.dt)
        log_a = -model.a * grid.times[None, :] - y
        flagged |= np.abs(log_a).max(axis=1) > LOG_BUDGET

    a_vals = None
    if need & {"A", "X", "H"}:
        a_vals = np.exp(np.minimum(log_a, _EXP_CAP))

    b = None
    if need & {"B", "X"}:
        b = _response_from_log(log_a, phi, grid.dt)
        flagged |= _sanitize(b)

    def sub(arr: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(arr[:, ::save_every])

    if "zeta" in need:
        out["zeta"] = sub(zeta)
    if "phi" in need:
        out["phi"] = sub(phi)
    if "Y" in need:
        out["Y"] = sub(y)
    if "logA" in need:
        out["logA"] = sub(log_a)
    if "A" in need:
        out["A"] = sub(a_vals)
    if "B" in need:
        out["B"] = sub(b)
    if "X" in need:
        with np.errstate(over="ignore", invalid="ignore"):
            x = model.x0 * a_vals + b
        flagged |= _sanitize(x)
        out["X"] = sub(x)
    if "H" in need:
        with np.errstate(over="ignore", invalid="ignore"):
            h = cumulative_trapezoid(phi * a_vals, dx=grid.dt, axis=1, initial=0.0)
        flagged |= _sanitize(h)
        out["H"] = sub(h)
    out["flagged"] = flagged
    return out


def _stack_blocks(
    parts: list[dict[str, np.ndarray]], key: str
) -> np.ndarray:
    return np.concatenate([p[key] for p in parts], axis=0)


def solve_linear(
    model: LinearModel,
    grid: TimeGrid,
    master_seed: int,
    n_paths: int,
    *,
    save_every: int = 1,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> LinearSolution:
    """Simulate the full ensemble and return X, Y, A, B processes."""
    out_grid = grid.subsampled(save_every)
    need = ("X", "Y", "A", "B")
    parts = run_blocks(
        n_paths,
        lambda idx: linear_block_arrays(
            model, grid, master_seed, idx, save_every=save_every, need=need
        ),
        workers=workers,
        block_size=block_size,
    )
    flagged = np.concatenate([p["flagged"] for p in parts])

    def ens(label: str, key: str) -> PathEnsemble:
        return PathEnsemble(
            grid=out_grid,
            label=label,
            values=_stack_blocks(parts, key),
            flagged=flagged.copy(),
            master_seed=master_seed,
        )

    return LinearSolution(x=ens("X", "X"), y=ens("Y", "Y"), a=ens("A", "A"), b=ens("B", "B"))


def reversed_h(
    model: LinearModel,
    grid: TimeGrid,
    master_seed: int,
    n_paths: int,
    *,
    save_every: int = 1,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> PathEnsemble:
    """Time-reversed response H_t, equal to B_t in distribution."""
    out_grid = grid.subsampled(save_every)
    parts = run_blocks(
        n_paths,
        lambda idx: linear_block_arrays(
            model, grid, master_seed, idx, save_every=save_every, need=("H",)
        ),
        workers=workers,
        block_size=block_size,
    )
    return PathEnsemble(
        grid=out_grid,
        label="H",
        values=_stack_blocks(parts, "H"),
        flagged=np.concatenate([p["flagged"] for p in parts]),
        master_seed=master_seed,
    )


def terminal_linear_samples(
    model: LinearModel,
    grid: TimeGrid,
    master_seed: int,
    n_paths: int,
    which: tuple[str, ...] = ("B", "H"),
    *,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> dict[str, np.ndarray]:
    """Final-node samples of the requested processes plus the flag mask.

    Memory-light variant of solve_linear for horizon-only estimators
    such as distribution tests and stationary draws.
    """
    parts = run_blocks(
        n_paths,
        lambda idx: linear_block_arrays(model, grid, master_seed, idx, need=tuple(which)),
        workers=workers,
        block_size=block_size,
    )
    out = {key: np.concatenate([p[key][:, -1] for p in parts]) for key in which}
    out["flagged"] = np.concatenate([p["flagged"] for p in parts])
    return out


def gamma_rate(a: float, d: float, p: float) -> float:
    """Decay/growth rate sigma_p D (p - a/D) used for horizon choices."""
    return min(1.0, p) * (d * p - a)


def stationary_horizon(model: LinearModel, p_max: float, tail_tol: float = 1e-3) -> float:
    """Horizon t_star with exp(gamma_p t_star) < tail_tol for p = p_max."""
    rate = gamma_rate(model.a, diffusion_constant(model.multiplicative), p_max)
    if rate >= 0.0:
        raise TruncationWarningError(
            f"moment order {p_max} is at or above the transition order; no stationary moment"
        )
    return float(np.log(tail_tol) / rate)


def stationary_sample(
    model: LinearModel,
    t_star: float,
    n: int,
    master_seed: int,
    *,
    dt: float | None = None,
    p_max: float | None = None,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> StationarySample:
    """Approximate stationary draws via the reversed response at t_star.

    H_{t_star} has the law of the stationary state up to a tail the
    caller controls through t_star.  When p_max is given, a fitted
    truncation bound K exp(gamma_p t_star) is attached: K is calibrated
    from quasi-norm increments of H between intermediate horizons.
    """
    d = diffusion_constant(model.multiplicative)
    warnings: tuple[str, ...] = ()
    rate = None
    if p_max is not None:
        rate = gamma_rate(model.a, d, p_max)
        if rate >= 0.0:
            raise TruncationWarningError(
                f"moment order {p_max} is at or above the transition order {model.beta_c}"
            )
    if dt is None:
        dt = min(0.02 * t_star, 0.01)
    n_steps = max(int(round(t_star / dt)), 8)
    # Keep a handful of interior nodes to calibrate the truncation bound.
    while n_steps % 8 != 0:
        n_steps += 1
    grid = TimeGrid(dt=t_star / n_steps, n_steps=n_steps)
    save_every = n_steps // 8

    parts = run_blocks(
        n,
        lambda idx: linear_block_arrays(
            model, grid, master_seed, idx, save_every=save_every, need=("H",)
        ),
        workers=workers,
        block_size=block_size,
    )
    h = _stack_blocks(parts, "H")
    flagged = np.concatenate([p["flagged"] for p in parts])
    ok = ~flagged
    values = h[:, -1]

    bound = None
    if p_max is not None:
        sigma_p = min(1.0, p_max)
        times = grid.subsampled(save_every).times
        k_hat = 0.0
        for j in range(2, len(times) - 1):
            u, v = times[j], times[j + 1]
            incr = np.mean(np.abs(h[ok, j + 1] - h[ok, j]) ** p_max) ** (sigma_p / p_max)
            denom = np.exp(rate * u) + np.exp(rate * v)
            k_hat = max(k_hat, float(incr / denom))
        bound = k_hat * float(np.exp(rate * t_star))

    return StationarySample(
        values=values,
        t_star=t_star,
        master_seed=master_seed,
        n_flagged=int(flagged.sum()),
        p_max=p_max,
        truncation_bound=bound,
        warnings=warnings,
    )


def sample_y_marginal(
    spec: NoiseSpec, ts: "np.ndarray | float", n: int, master_seed: int
) -> np.ndarray:
    """Exact-law draws of the integrated noise marginal Y_t ~ N(0, 2 d(t)).

    Bypasses path simulation entirely; intended for single-time moment
    checks at orders where path Monte Carlo is hopeless.  One keyed
    stream per master seed (role: marginal).
    """
    t = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    sd = np.sqrt(2.0 * y_variance_half(spec, t))
    stream = path_stream(master_seed, 0, ROLE_MARGINAL)
    draws = stream.standard_normal((t.size, n))
    out = sd[:, None] * draws
    return out if np.ndim(ts) else out[0]


def _psi(nonlinearity: str, phi: np.ndarray, x: np.ndarray) -> np.ndarray:
    if nonlinearity == SIN_MODULATED:
        return phi * np.sin(x)
    if nonlinearity == CLIPPED:
        return np.clip(x, -phi, phi)
    return phi


def _rk4_block(
    model: NonlinearModel,
    grid: TimeGrid,
    master_seed: int,
    indices: np.ndarray,
    substeps: int,
    save_every: int,
) -> dict[str, np.ndarray]:
    """Classical RK4 on one block, noise linearly interpolated in each step."""
    zeta = noise_mod.sample_block(model.multiplicative, grid, master_seed, indices, ROLE_MULTIPLICATIVE)
    phi = np.abs(
        noise_mod.sample_block(model.envelope, grid, master_seed, indices, ROLE_ADDITIVE)
    )
    a = model.a
    kind = model.nonlinearity
    h = grid.dt / substeps
    n = len(indices)
    saved = np.empty((n, grid.n_steps // save_every + 1))
    x = np.full(n, float(model.x0))
    saved[:, 0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(grid.n_steps):
            z0 = zeta[:, k]
            dz = zeta[:, k + 1] - z0
            p0 = phi[:, k]
            dp = phi[:, k + 1] - p0
            for j in range(substeps):
                t0 = j / substeps
                th = (j + 0.5) / substeps
                t1 = (j + 1) / substeps
                za, zb, zc = z0 + dz * t0, z0 + dz * th, z0 + dz * t1
                pa, pb, pc = p0 + dp * t0, p0 + dp * th, p0 + dp * t1
                k1 = -(a + za) * x + _psi(kind, pa, x)
                x2 = x + 0.5 * h * k1
                k2 = -(a + zb) * x2 + _psi(kind, pb, x2)
                x3 = x + 0.5 * h * k2
                k3 = -(a + zb) * x3 + _psi(kind, pb, x3)
                x4 = x + h * k3
                k4 = -(a + zc) * x4 + _psi(kind, pc, x4)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if (k + 1) % save_every == 0:
                saved[:, (k + 1) // save_every] = x
    flagged = _sanitize(saved)
    return {"X": saved, "flagged": flagged}


def solve_nonlinear(
    model: NonlinearModel,
    grid: TimeGrid,
    master_seed: int,
    n_paths: int,
    *,
    save_every: int = 1,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    p_check: float = 0.5,
    rel_tol: float = 5e-3,
    max_refines: int = 6,
) -> NonlinearSolution:
    """Integrate the nonlinear model with automatic step refinement.

    The ODE substep is halved (noise grid fixed, values interpolated)
    until the order-p_check ensemble quasi-norm at the horizon moves by
    less than rel_tol between consecutive refinements.
    """
    out_grid = grid.subsampled(save_every)
    history: list[tuple[int, float]] = []
    prev_q: float | None = None
    result: list[dict[str, np.ndarray]] | None = None
    substeps = 1
    for _ in range(max_refines + 1):
        parts = run_blocks(
            n_paths,
            lambda idx: _rk4_block(model, grid, master_seed, idx, substeps, save_every),
            workers=workers,
            block_size=block_size,
        )
        partials = [
            np.array(
                [
                    float(np.sum(np.abs(p["X"][~p["flagged"], -1]) ** p_check)),
                    float((~p["flagged"]).sum()),
                ]
            )
            for p in parts
        ]
        total = pairwise_sum(partials)
        moment = total[0] / max(total[1], 1.0)
        q = float(moment ** (min(1.0, p_check) / p_check))
        history.append((substeps, q))
        result = parts
        if prev_q is not None and abs(q - prev_q) <= rel_tol * max(abs(prev_q), 1e-300):
            break
        prev_q = q
        substeps *= 2
    else:
        raise RuntimeError("step refinement did not settle within max_refines")

    ensemble = PathEnsemble(
        grid=out_grid,
        label="X",
        values=_stack_blocks(result, "X"),
        flagged=np.concatenate([p["flagged"] for p in result]),
        master_seed=master_seed,
    )
    return NonlinearSolution(x=ensemble, substeps=substeps, refinement=tuple(history))
