"""Stationary noise processes driving the random ODE.

Two roles appear in the model: a centered Gaussian process multiplying
the state (built from exponentially correlated components) and an
additive forcing term that may be Gaussian, constant, or heavy tailed.
The heavy-tailed option maps a unit-variance exponentially correlated
Gaussian path through the inverse Pareto CDF, which preserves
stationarity and time reversibility while giving exact power-law
marginals.

All samplers use one counter-based stream per (path, role), so ensembles
are reproducible path-by-path regardless of batching.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.special import ndtr

from .errors import SpecRejectedError, UnsupportedKindError
from .grid import TimeGrid
from .rng import block_normals

OU = "ou"
OU_SUPERPOSITION = "ou_superposition"
ZERO = "zero"
CONSTANT = "constant"
PARETO_TRANSFORMED_OU = "pareto_transformed_ou"

GAUSSIAN_KINDS = frozenset({OU, OU_SUPERPOSITION, ZERO})
ALL_KINDS = frozenset({OU, OU_SUPERPOSITION, ZERO, CONSTANT, PARETO_TRANSFORMED_OU})


@dataclass(frozen=True)
class NoiseSpec:
    """Declarative description of one stationary noise source.

    components holds (sigma_i, tau_i) pairs for the exponentially
    correlated kinds.  level is the value of a constant source.
    tail_index and scale parameterize the Pareto marginal of the
    transformed kind; its components entry holds the single latent
    correlation time with unit sigma.
    """

    kind: str
    components: tuple[tuple[float, float], ...] = ()
    level: float = 0.0
    tail_index: float = float("inf")
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown noise kind: {self.kind!r}")
        if self.kind in (OU, OU_SUPERPOSITION, PARETO_TRANSFORMED_OU):
            if not self.components:
                raise ValueError(f"{self.kind} requires at least one component")
            for sigma, tau in self.components:
                if not (sigma > 0.0 and np.isfinite(sigma)):
                    raise ValueError("component sigma must be positive and finite")
                if not (tau > 0.0 and np.isfinite(tau)):
                    raise ValueError("component tau_c must be positive and finite")
        if self.kind == OU and len(self.components) != 1:
            raise ValueError("plain ou takes exactly one component")
        if self.kind == PARETO_TRANSFORMED_OU:
            if not (self.tail_index > 1.0):
                raise ValueError("tail_index must exceed 1 so the mean exists")
            if not (self.scale > 0.0 and np.isfinite(self.scale)):
                raise ValueError("scale must be positive and finite")
        if self.kind == CONSTANT and not np.isfinite(self.level):
            raise ValueError("constant level must be finite")

    @staticmethod
    def ou(sigma: float, tau_c: float) -> "NoiseSpec":
        return NoiseSpec(kind=OU, components=((float(sigma), float(tau_c)),))

    @staticmethod
    def superposition(components: "list[tuple[float, float]]") -> "NoiseSpec":
        comps = tuple((float(s), float(t)) for s, t in components)
        return NoiseSpec(kind=OU_SUPERPOSITION, components=comps)

    @staticmethod
    def zero() -> "NoiseSpec":
        return NoiseSpec(kind=ZERO)

    @staticmethod
    def constant(level: float) -> "NoiseSpec":
        return NoiseSpec(kind=CONSTANT, level=float(level))

    @staticmethod
    def pareto_ou(tau_c: float, tail_index: float, scale: float = 1.0) -> "NoiseSpec":
        return NoiseSpec(
            kind=PARETO_TRANSFORMED_OU,
            components=((1.0, float(tau_c)),),
            tail_index=float(tail_index),
            scale=float(scale),
        )

    @property
    def max_tau(self) -> float:
        return max((t for _, t in self.components), default=0.0)


@dataclass(frozen=True)
class ValidationResult:
    accepted: bool
    warnings: tuple[str, ...] = ()
    reason: str = ""
    code: str = ""


def validate_multiplicative(spec: NoiseSpec) -> ValidationResult:
    """Decide whether a spec may multiply the state.

    Only centered Gaussian kinds qualify: the moment machinery downstream
    rests on the Gaussian law of the integrated noise.  The degenerate
    zero spec is accepted with a warning since it voids the transition
    order a/D.
    """
    if spec.kind in (OU, OU_SUPERPOSITION):
        return ValidationResult(accepted=True)
    if spec.kind == ZERO:
        return ValidationResult(
            accepted=True,
            warnings=("zero multiplicative noise: D = 0, no finite transition order",),
        )
    if spec.kind == PARETO_TRANSFORMED_OU:
        return ValidationResult(
            accepted=False,
            reason="heavy-tailed multiplicative noise is outside the Gaussian route",
            code=SpecRejectedError.code,
        )
    return ValidationResult(
        accepted=False,
        reason=f"{spec.kind} is not a centered Gaussian process",
        code=SpecRejectedError.code,
    )


def require_multiplicative(spec: NoiseSpec) -> tuple[str, ...]:
    """Raise unless the spec is a valid multiplicative source; return warnings."""
    result = validate_multiplicative(spec)
    if not result.accepted:
        raise SpecRejectedError(result.reason)
    return result.warnings


def _require_gaussian(spec: NoiseSpec, op: str) -> None:
    if spec.kind not in GAUSSIAN_KINDS:
        raise UnsupportedKindError(f"{op} is only defined for Gaussian kinds, got {spec.kind}")


def correlation(spec: NoiseSpec, ts: "np.ndarray | float") -> np.ndarray:
    """Stationary autocovariance sum_i sigma_i^2 exp(-|t|/tau_i)."""
    _require_gaussian(spec, "correlation")
    t = np.abs(np.asarray(ts, dtype=np.float64))
    out = np.zeros_like(t)
    for sigma, tau in spec.components:
        out += sigma * sigma * np.exp(-t / tau)
    return out


def diffusion_constant(spec: NoiseSpec) -> float:
    """Zero-frequency spectral weight D = sum_i sigma_i^2 tau_i."""
    _require_gaussian(spec, "diffusion_constant")
    return float(sum(s * s * t for s, t in spec.components))


def y_variance_half(spec: NoiseSpec, ts: "np.ndarray | float") -> np.ndarray:
    """Half the variance of the integrated noise at each time.

    Closed form per component: sigma^2 tau t - sigma^2 tau^2 (1 - exp(-t/tau)),
    which equals the double integral of the correlation over the time
    wedge.  The unit tests pin this against direct quadrature.
    """
    _require_gaussian(spec, "y_variance_half")
    t = np.asarray(ts, dtype=np.float64)
    if np.any(t < 0.0):
        raise ValueError("y_variance_half requires nonnegative times")
    out = np.zeros_like(t)
    for sigma, tau in spec.components:
        out += sigma * sigma * tau * t - sigma * sigma * tau * tau * (-np.expm1(-t / tau))
    # the two terms cancel to O(t^2) as t -> 0 and rounding can leave a
    # negative ulp; the result is a variance, clamp it
    return np.maximum(out, 0.0)


def tail_index(spec: NoiseSpec) -> float:
    """Largest order p such that E|noise|^q is finite for all q < p."""
    if spec.kind == PARETO_TRANSFORMED_OU:
        return spec.tail_index
    return float("inf")


def stationary_moment(spec: NoiseSpec, p: float) -> float:
    """E|noise_t|^p of the marginal law, where a closed form exists."""
    if spec.kind == ZERO:
        return 0.0
    if spec.kind == CONSTANT:
        return float(abs(spec.level) ** p)
    if spec.kind == PARETO_TRANSFORMED_OU:
        if p >= spec.tail_index:
            raise ValueError("moment of order p >= tail_index diverges")
        b = spec.tail_index
        return float(spec.scale**p * b / (b - p))
    raise UnsupportedKindError(f"no closed-form marginal moment for kind {spec.kind}")


def _component_noise_shape(spec: NoiseSpec, grid: TimeGrid) -> tuple[int, ...]:
    n_comp = max(len(spec.components), 1)
    return (n_comp, grid.n_nodes)


def _assemble_block(spec: NoiseSpec, grid: TimeGrid, draws: np.ndarray) -> np.ndarray:
    """Turn standard normal draws into noise paths on the grid.

    draws has shape (n_paths, n_components, n_nodes); column 0 seeds the
    stationary initial value, the rest drive the exact one-step update
    g_{k+1} = r g_k + sigma sqrt(1 - r^2) xi_{k+1} with r = exp(-dt/tau).
    """
    n_paths = draws.shape[0]
    if spec.kind == ZERO:
        return np.zeros((n_paths, grid.n_nodes))
    if spec.kind == CONSTANT:
        return np.full((n_paths, grid.n_nodes), spec.level)

    out = np.zeros((n_paths, grid.n_nodes))
    for j, (sigma, tau) in enumerate(spec.components):
        r = np.exp(-grid.dt / tau)
        s = sigma * np.sqrt(-np.expm1(-2.0 * grid.dt / tau))
        g0 = sigma * draws[:, j, 0]
        innovations = s * draws[:, j, 1:]
        zi = (r * g0)[:, None]
        rest, _ = lfilter([1.0], [1.0, -r], innovations, axis=1, zi=zi)
        out[:, 0] += g0
        out[:, 1:] += rest

    if spec.kind == PARETO_TRANSFORMED_OU:
        # Latent path has unit variance; ndtr(-w) is the exact survival
        # function, safe from cancellation for large w.
        out = spec.scale * ndtr(-out) ** (-1.0 / spec.tail_index)
    return out


def sample_block(
    spec: NoiseSpec,
    grid: TimeGrid,
    master_seed: int,
    path_indices: np.ndarray,
    role: int,
) -> np.ndarray:
    """Sample paths for a block of path indices; shape (n, n_nodes)."""
    if spec.kind in (ZERO, CONSTANT):
        return _assemble_block(spec, grid, np.empty((len(path_indices), 0, 0)))
    draws = block_normals(master_seed, path_indices, role, _component_noise_shape(spec, grid))
    return _assemble_block(spec, grid, draws)


def sample_path(spec: NoiseSpec, grid: TimeGrid, stream: np.random.Generator) -> np.ndarray:
    """Sample a single path on the grid from an explicit stream."""
    if spec.kind in (ZERO, CONSTANT):
        return _assemble_block(spec, grid, np.empty((1, 0, 0)))[0]
    draws = stream.standard_normal(_component_noise_shape(spec, grid))[None, ...]
    return _assemble_block(spec, grid, draws)[0]


# Catalog of Gaussian specs exercised by the verification suite.  All of
# them keep sum_i sigma_i^2 tau_i^2 small enough that the integrated-noise
# variance deficit stays within the default diagnostic ratio budget up to
# order p = 2.
SHIPPED_GAUSSIAN_SPECS: dict[str, NoiseSpec] = {
    "ou_short": NoiseSpec.ou(1.0, 0.5),
    "ou_long": NoiseSpec.ou(0.5, 2.0),
    "two_scale": NoiseSpec.superposition([(1.0, 1.0), (2.0, 0.25)]),
    "three_scale": NoiseSpec.superposition([(0.5, 0.4), (0.35, 1.2), (0.25, 3.0)]),
}
