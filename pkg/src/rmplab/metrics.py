"""Fractional-moment quasi-norms, growth-rate fits, and inequality checks.

For p >= 1 the quasi-norm is the usual L^p norm; for p in (0, 1) it is
(E|f|^p) itself, i.e. the p-th moment without the 1/p power.  Both cases
are covered by the exponent sigma_p/p with sigma_p = min(1, p); the
scaling rule is then |c f| -> |c|^{sigma_p} |f| uniformly in p.

Error bars use the delta method on the sample mean of |f|^p.  When that
mean is dominated by a handful of extreme samples its error bar is
meaningless, so estimates also carry a stability flag driven by the
empirical kurtosis of |f|^p.
"""
from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .blocks import DEFAULT_BLOCK_SIZE, pairwise_sum, run_blocks
from .engine import LinearModel, PathEnsemble, linear_block_arrays
from .errors import (
    DNonpositiveError,
    EmptyInputError,
    LengthMismatchError,
    NonpositiveValueError,
    WindowTooShortError,
)
from .grid import TimeGrid
from .noise import NoiseSpec, y_variance_half

KURTOSIS_THRESHOLD = 100.0
MIN_FIT_NODES = 5


def sigma_p(p: float) -> float:
    return min(1.0, p)


@dataclass(frozen=True)
class QuasiNormEstimate:
    """Point estimate of a fractional-moment quasi-norm.

    value is (E|f|^p)^(sigma_p/p) unless raw_moment is set, in which
    case it is the plain moment E|f|^p.  flagged_excluded counts paths
    removed by the overflow guard before averaging.
    """

    p: float
    sigma_p: float
    value: float
    n: int
    std_err: float
    flagged_excluded: int = 0
    unstable: bool = False
    raw_moment: bool = False


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of log(value) against time."""

    slope: float
    intercept: float
    window: tuple[float, float]
    r_squared: float
    slope_std_err: float
    n_points: int
    weighted: bool
    predicted: float | None = None


@dataclass(frozen=True)
class InequalityReport:
    name: str
    p: float
    lhs: float
    rhs: float
    n: int
    passed: bool

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def _moment_stats(weights: np.ndarray) -> tuple[float, float, bool]:
    """Mean, standard error, and kurtosis instability of a weight sample."""
    n = weights.size
    m = float(weights.mean())
    if n < 2:
        return m, 0.0, False
    var = float(weights.var(ddof=1))
    se = np.sqrt(var / n)
    unstable = False
    if var > 0.0 and n >= 4:
        centered = weights - m
        m2 = float(np.mean(centered**2))
        m4 = float(np.mean(centered**4))
        # m2^2 can underflow for tiny samples even when var > 0
        if m2 * m2 > 0.0:
            unstable = bool(m4 / (m2 * m2) > KURTOSIS_THRESHOLD)
    return m, float(se), unstable


def quasi_norm(
    samples: np.ndarray,
    p: float,
    *,
    flagged: "np.ndarray | None" = None,
) -> QuasiNormEstimate:
    """Empirical quasi-norm of a sample set with delta-method error bar."""
    if p <= 0.0:
        raise ValueError("order p must be positive")
    x = np.asarray(samples, dtype=np.float64).ravel()
    excluded = 0
    if flagged is not None:
        mask = np.asarray(flagged, dtype=bool).ravel()
        if mask.shape != x.shape:
            raise LengthMismatchError("flag mask must match the sample count")
        excluded = int(mask.sum())
        x = x[~mask]
    if x.size == 0:
        raise EmptyInputError("no usable samples")
    w = np.abs(x) ** p
    m, se_m, unstable = _moment_stats(w)
    s = sigma_p(p)
    if m == 0.0:
        return QuasiNormEstimate(p, s, 0.0, x.size, 0.0, excluded, unstable)
    expo = s / p
    value = m**expo
    std_err = expo * m ** (expo - 1.0) * se_m
    return QuasiNormEstimate(p, s, float(value), x.size, float(std_err), excluded, unstable)


def fractional_moment(
    samples: np.ndarray,
    p: float,
    z: complex = 0.0,
    *,
    flagged: "np.ndarray | None" = None,
) -> QuasiNormEstimate:
    """Raw moment E|x + z|^p with a complex shift, no quasi-norm power."""
    if p <= 0.0:
        raise ValueError("order p must be positive")
    x = np.asarray(samples, dtype=np.float64).ravel()
    excluded = 0
    if flagged is not None:
        mask = np.asarray(flagged, dtype=bool).ravel()
        if mask.shape != x.shape:
            raise LengthMismatchError("flag mask must match the sample count")
        excluded = int(mask.sum())
        x = x[~mask]
    if x.size == 0:
        raise EmptyInputError("no usable samples")
    w = np.abs(x + z) ** p
    m, se_m, unstable = _moment_stats(w)
    return QuasiNormEstimate(
        p, sigma_p(p), m, x.size, se_m, excluded, unstable, raw_moment=True
    )


def gamma_p(a: float, d: float, p: float) -> float:
    """Rate sigma_p D (p - a/D) of the quasi-norm of the propagator."""
    if p <= 0.0:
        raise ValueError("order p must be positive")
    if not (d > 0.0):
        raise DNonpositiveError("diffusion constant must be positive")
    return sigma_p(p) * (d * p - a)


def resolvable_horizon(
    spec: NoiseSpec, p: float, n: int, t_max: float, *, floor: float = 30.0
) -> float:
    """Largest t <= t_max where the order-p propagator moment is resolvable.

    E[|A_t|^p] is a lognormal mean with log-variance p^2 2 d(t); once that
    passes 2 ln(n / floor) the heaviest sampled quantile no longer covers
    the mass carrying the mean, and the empirical estimate is biased low
    no matter how the fit is weighted.
    """
    if p <= 0.0:
        raise ValueError("order p must be positive")
    if n < 2 or n <= floor:
        raise EmptyInputError("sample too small for any resolvable horizon")
    budget = math.log(n / floor) / (p * p)  # d(t) budget
    if float(y_variance_half(spec, np.array([t_max]))[0]) <= budget:
        return float(t_max)
    lo, hi = 0.0, float(t_max)
    for _ in range(80):  # d is monotone; plain bisection
        mid = 0.5 * (lo + hi)
        if float(y_variance_half(spec, np.array([mid]))[0]) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


def exact_propagator_quasi_norm(
    spec: NoiseSpec, a: float, p: float, ts: np.ndarray
) -> np.ndarray:
    """Quasi-norm of A_t from the exact Gaussian law of Y_t.

    E|A_t|^p = exp(-p a t + p^2 d(t)); the quasi-norm applies the
    sigma_p/p power.  No sampling error, usable at any order.
    """
    if p <= 0.0:
        raise ValueError("order p must be positive")
    t = np.asarray(ts, dtype=np.float64)
    log_moment = -p * a * t + p * p * y_variance_half(spec, t)
    return np.exp((sigma_p(p) / p) * log_moment)


def fit_rate(
    times: np.ndarray,
    values: np.ndarray,
    window: "tuple[float, float] | None" = None,
    *,
    std_errs: "np.ndarray | None" = None,
    predicted: "float | None" = None,
) -> RateFit:
    """Fit log(values) = intercept + slope * t on a time window.

    When per-node standard errors are supplied the fit is weighted by
    the implied variance of log(value); nodes where the estimate has
    O(1) relative error then contribute almost nothing, which keeps
    tail-dominated late-time nodes from bending the fit.
    """
    t = np.asarray(times, dtype=np.float64).ravel()
    v = np.asarray(values, dtype=np.float64).ravel()
    if t.shape != v.shape:
        raise LengthMismatchError("times and values must have equal length")
    if window is None:
        window = (float(t[0]), float(t[-1]))
    lo, hi = window
    mask = (t >= lo) & (t <= hi)
    if mask.sum() < MIN_FIT_NODES:
        raise WindowTooShortError(
            f"window [{lo}, {hi}] covers {int(mask.sum())} nodes, need {MIN_FIT_NODES}"
        )
    t = t[mask]
    v = v[mask]
    if np.any(v <= 0.0) or not np.all(np.isfinite(v)):
        raise NonpositiveValueError("rate fit needs strictly positive finite values")
    y = np.log(v)

    weighted = False
    if std_errs is not None:
        se = np.asarray(std_errs, dtype=np.float64).ravel()
        if se.shape != mask.shape:
            raise LengthMismatchError("std_errs must match times")
        se = se[mask]
        if np.all(np.isfinite(se)) and np.all(se > 0.0):
            w = (v / se) ** 2
            weighted = True
        else:
            w = np.ones_like(y)
    else:
        w = np.ones_like(y)

    wsum = w.sum()
    t_bar = float((w * t).sum() / wsum)
    y_bar = float((w * y).sum() / wsum)
    dt = t - t_bar
    s_tt = float((w * dt * dt).sum())
    if s_tt <= 0.0:
        raise WindowTooShortError("window has no time spread")
    slope = float((w * dt * (y - y_bar)).sum() / s_tt)
    intercept = y_bar - slope * t_bar
    resid = y - (intercept + slope * t)
    rss = float((w * resid * resid).sum())
    tss = float((w * (y - y_bar) ** 2).sum())
    r_squared = 1.0 - rss / tss if tss > 0.0 else 1.0
    n_pts = int(t.size)
    if weighted:
        # Known-variance WLS, inflated by reduced chi^2 when the model
        # under-fits; node errors share paths so this is a lower bound.
        chi2_red = rss / max(n_pts - 2, 1)
        slope_var = max(chi2_red, 1.0) / s_tt
    else:
        s2 = rss / max(n_pts - 2, 1)
        slope_var = s2 / s_tt
    return RateFit(
        slope=slope,
        intercept=float(intercept),
        window=(float(lo), float(hi)),
        r_squared=float(r_squared),
        slope_std_err=float(np.sqrt(slope_var)),
        n_points=n_pts,
        weighted=weighted,
        predicted=predicted,
    )


def _tolerance_factor(n: int) -> float:
    return 1.0 + n * np.finfo(np.float64).eps


def jensen_check(u: np.ndarray, v: np.ndarray, p: float) -> InequalityReport:
    """Check E[U^p V] <= (E[U V])^p (E V)^(1-p) on an empirical measure.

    Requires p in (0, 1] and nonnegative U, V.  Equality-breaking noise
    at machine precision is absorbed by a factor (1 + n eps).
    """
    if not (0.0 < p <= 1.0):
        raise ValueError("p must lie in (0, 1]")
    uu = np.asarray(u, dtype=np.float64).ravel()
    vv = np.asarray(v, dtype=np.float64).ravel()
    if uu.size == 0:
        raise EmptyInputError("empty sample")
    if uu.shape != vv.shape:
        raise LengthMismatchError("U and V must have equal length")
    if np.any(uu < 0.0) or np.any(vv < 0.0):
        raise ValueError("U and V must be nonnegative")
    lhs = float(np.mean(uu**p * vv))
    rhs = float(np.mean(uu * vv) ** p * np.mean(vv) ** (1.0 - p))
    passed = lhs <= rhs * _tolerance_factor(uu.size) + 1e-300
    return InequalityReport("jensen", p, lhs, rhs, int(uu.size), bool(passed))


def quasi_triangle_check(
    f: np.ndarray, g: np.ndarray, alpha: float, p: float
) -> InequalityReport:
    """Check the scaled triangle bound on paired empirical samples.

    quasi_norm(alpha f + g) <= |alpha|^sigma_p quasi_norm(f) + quasi_norm(g).
    """
    ff = np.asarray(f, dtype=np.float64).ravel()
    gg = np.asarray(g, dtype=np.float64).ravel()
    if ff.size == 0:
        raise EmptyInputError("empty sample")
    if ff.shape != gg.shape:
        raise LengthMismatchError("f and g must have equal length")
    lhs = quasi_norm(alpha * ff + gg, p).value
    rhs = abs(alpha) ** sigma_p(p) * quasi_norm(ff, p).value + quasi_norm(gg, p).value
    passed = lhs <= rhs * _tolerance_factor(ff.size) + 1e-300
    return InequalityReport("quasi_triangle", p, lhs, rhs, int(ff.size), bool(passed))


@dataclass
class MomentCurves:
    """Quasi-norm curves of one process at several orders on one grid."""

    source: str
    p_values: tuple[float, ...]
    times: np.ndarray
    value: np.ndarray
    std_err: np.ndarray
    unstable: np.ndarray
    n: int
    excluded: int
    master_seed: int
    z: complex = 0.0

    def estimate(self, p: float, node: int) -> QuasiNormEstimate:
        i = self.p_values.index(p)
        return QuasiNormEstimate(
            p=p,
            sigma_p=sigma_p(p),
            value=float(self.value[i, node]),
            n=self.n,
            std_err=float(self.std_err[i, node]),
            flagged_excluded=self.excluded,
            unstable=bool(self.unstable[i, node]),
        )

    def curve(self, p: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        i = self.p_values.index(p)
        return self.times, self.value[i], self.std_err[i]

    def fit(
        self,
        p: float,
        window: "tuple[float, float] | None" = None,
        *,
        weighted: bool = True,
        predicted: "float | None" = None,
    ) -> RateFit:
        times, value, std_err = self.curve(p)
        return fit_rate(
            times,
            value,
            window,
            std_errs=std_err if weighted else None,
            predicted=predicted,
        )


def _power_sums(vals: np.ndarray, p_values: tuple[float, ...], z: complex) -> np.ndarray:
    """Raw power sums S1..S4 of |x + z|^p per order and node."""
    n_p = len(p_values)
    out = np.empty((n_p, 4, vals.shape[1]))
    base = np.abs(vals + z) if z else np.abs(vals)
    for i, p in enumerate(p_values):
        w = base**p
        out[i, 0] = w.sum(axis=0)
        w2 = w * w
        out[i, 1] = w2.sum(axis=0)
        out[i, 2] = (w2 * w).sum(axis=0)
        out[i, 3] = (w2 * w2).sum(axis=0)
    return out


def _curves_from_sums(
    source: str,
    p_values: tuple[float, ...],
    times: np.ndarray,
    sums: np.ndarray,
    n_ok: int,
    excluded: int,
    master_seed: int,
    z: complex,
) -> MomentCurves:
    n = max(n_ok, 1)
    s1, s2, s3, s4 = sums[:, 0], sums[:, 1], sums[:, 2], sums[:, 3]
    mean = s1 / n
    var = np.maximum(s2 / n - mean**2, 0.0) * (n / max(n - 1, 1))
    se_mean = np.sqrt(var / n)
    # Central fourth moment from raw sums, for the stability flag.
    m2 = np.maximum(s2 / n - mean**2, 0.0)
    m4 = np.maximum(
        s4 / n - 4.0 * mean * s3 / n + 6.0 * mean**2 * s2 / n - 3.0 * mean**4, 0.0
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        kurt = np.where(m2 > 0.0, m4 / np.maximum(m2 * m2, 1e-300), 0.0)
    unstable = kurt > KURTOSIS_THRESHOLD

    p_arr = np.array(p_values)[:, None]
    expo = np.minimum(1.0, p_arr) / p_arr
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(mean > 0.0, mean**expo, 0.0)
        std_err = np.where(
            mean > 0.0, expo * mean ** (expo - 1.0) * se_mean, 0.0
        )
    return MomentCurves(
        source=source,
        p_values=p_values,
        times=times,
        value=value,
        std_err=std_err,
        unstable=unstable,
        n=n_ok,
        excluded=excluded,
        master_seed=master_seed,
        z=z,
    )


def linear_moment_curves(
    model: LinearModel,
    grid: TimeGrid,
    master_seed: int,
    n_paths: int,
    p_values: "tuple[float, ...] | list[float]",
    *,
    source: str = "X",
    z: complex = 0.0,
    save_every: int = 1,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> MomentCurves:
    """Stream quasi-norm curves of a linear-model process over blocks.

    Only power sums are held per block, so ensembles far larger than
    memory are fine.  Flagged paths are excluded from every node.
    """
    p_values = tuple(float(p) for p in p_values)
    if not p_values:
        raise EmptyInputError("need at least one order p")
    if any(p <= 0.0 for p in p_values):
        raise ValueError("orders must be positive")
    out_grid = grid.subsampled(save_every)

    def block_fn(idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        arrays = linear_block_arrays(
            model, grid, master_seed, idx, save_every=save_every, need=(source,)
        )
        ok = ~arrays["flagged"]
        sums = _power_sums(arrays[source][ok], p_values, z)
        counts = np.array([float(ok.sum()), float((~ok).sum())])
        return sums, counts

    parts = run_blocks(n_paths, block_fn, workers=workers, block_size=block_size)
    sums = pairwise_sum([p[0] for p in parts])
    counts = pairwise_sum([p[1] for p in parts])
    return _curves_from_sums(
        source,
        p_values,
        out_grid.times,
        sums,
        int(counts[0]),
        int(counts[1]),
        master_seed,
        z,
    )


def ensemble_moment_curves(
    ensemble: PathEnsemble,
    p_values: "tuple[float, ...] | list[float]",
    *,
    z: complex = 0.0,
) -> MomentCurves:
    """Quasi-norm curves of an ensemble already held in memory."""
    p_values = tuple(float(p) for p in p_values)
    if not p_values:
        raise EmptyInputError("need at least one order p")
    if any(p <= 0.0 for p in p_values):
        raise ValueError("orders must be positive")
    ok = ~ensemble.flagged
    if not ok.any():
        raise EmptyInputError("every path is flagged")
    sums = _power_sums(ensemble.values[ok], p_values, z)
    return _curves_from_sums(
        ensemble.label,
        p_values,
        ensemble.grid.times,
        sums,
        int(ok.sum()),
        int((~ok).sum()),
        ensemble.master_seed,
        z,
    )
