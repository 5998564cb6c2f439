"""Estimators for the transition order and the diffusion constant.

Four independent routes to the same pair of numbers: the Hill estimator
reads the tail index off stationary samples, the moment-transition scan
locates the order where fitted quasi-norm growth rates change sign, and
the two diffusion estimators integrate the noise autocovariance
(Green-Kubo) or fit the growth of the integrated-noise variance.
Cross-checking them against each other and against a/D is the point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp
from scipy.stats import t as student_t

from .blocks import DEFAULT_BLOCK_SIZE
from .engine import LinearModel, PathEnsemble, sample_y_marginal, terminal_linear_samples
from .errors import (
    EmptyInputError,
    InsufficientTailError,
    NoSignChangeError,
    SameSeedError,
    WindowTooLongError,
    WindowTooShortError,
)
from .grid import TimeGrid, default_dt
from .metrics import RateFit, linear_moment_curves
from .noise import NoiseSpec, diffusion_constant, y_variance_half

FLAG_NONSTABLE = "NONSTABLE"


@dataclass(frozen=True)
class ExponentReport:
    """Outcome of one exponent or diffusion-constant estimator.

    The confidence interval always brackets the estimate; analytic holds
    the model value when the caller knows it, purely for reporting.
    """

    method: str
    estimate: float
    ci_low: float
    ci_high: float
    n_effective: int
    analytic: float | None = None
    flags: tuple[str, ...] = ()
    details: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ci_low", min(self.ci_low, self.estimate))
        object.__setattr__(self, "ci_high", max(self.ci_high, self.estimate))

    @property
    def ci(self) -> tuple[float, float]:
        return (self.ci_low, self.ci_high)


def default_hill_k(n: int) -> int:
    return int(np.ceil(n**0.6))


def _hill_point(xs_desc: np.ndarray, k: int) -> float:
    """Hill estimate from descending order statistics; 1 / mean log spacing."""
    top = xs_desc[:k]
    h = float(np.mean(np.log(top)) - np.log(xs_desc[k]))
    if h <= 0.0:
        raise InsufficientTailError("degenerate tail: top order statistics are equal")
    return 1.0 / h


def hill_estimator(
    samples: np.ndarray, k: "int | None" = None, *, analytic: "float | None" = None
) -> ExponentReport:
    """Hill tail-index estimate from the top-k order statistics.

    k defaults to ceil(n^0.6).  A scan over nearby k values is attached;
    if the scan estimates are mutually inconsistent at the 95% level the
    report is flagged NONSTABLE, the signature of a sample without a
    power tail.
    """
    x = np.abs(np.asarray(samples, dtype=np.float64).ravel())
    x = x[np.isfinite(x) & (x > 0.0)]
    n = x.size
    if n < 30:
        raise InsufficientTailError(f"need at least 30 positive samples, got {n}")
    if k is None:
        k = default_hill_k(n)
    if k < 10 or 2 * k >= n:
        raise InsufficientTailError(f"k = {k} outside the usable range [10, {n // 2})")
    xs = np.sort(x)[::-1]
    estimate = _hill_point(xs, k)
    half = 1.96 * estimate / np.sqrt(k)

    scan_ks: list[int] = []
    for kk in np.geomspace(max(10, k // 4), min((n - 1) // 2, 4 * k), 5):
        kk = int(round(kk))
        if kk >= 10 and 2 * kk < n and kk not in scan_ks:
            scan_ks.append(kk)
    scan = [(kk, _hill_point(xs, kk)) for kk in scan_ks]
    stable = True
    for i in range(len(scan)):
        for j in range(i + 1, len(scan)):
            ki, ei = scan[i]
            kj, ej = scan[j]
            if abs(ei - ej) > 1.96 * (ei / np.sqrt(ki) + ej / np.sqrt(kj)):
                stable = False
    flags = () if stable else (FLAG_NONSTABLE,)
    return ExponentReport(
        method="hill",
        estimate=estimate,
        ci_low=estimate - half,
        ci_high=estimate + half,
        n_effective=k,
        analytic=analytic,
        flags=flags,
        details={"k": k, "n_samples": n, "k_scan": scan},
    )


def moment_transition(
    model: LinearModel,
    p_grid: "list[float] | tuple[float, ...]",
    horizon: float,
    n_paths: int,
    master_seed: int,
    *,
    dt: "float | None" = None,
    window: "tuple[float, float] | None" = None,
    save_every: "int | None" = None,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> ExponentReport:
    """Locate the transition order from fitted quasi-norm growth rates.

    For each order the state quasi-norm curve is fitted on the window
    (weighted by its error bars, so nodes drowned in sampling noise do
    not tilt the fit); the estimate interpolates the slope sign change
    between the bracketing grid orders.
    """
    ps = tuple(sorted(float(p) for p in p_grid))
    if len(ps) < 2:
        raise ValueError("p_grid needs at least two orders")
    if dt is None:
        dt = default_dt(max(model.a, 1e-12), model.multiplicative.max_tau)
    n_steps = int(round(horizon / dt))
    if save_every is None:
        save_every = max(1, n_steps // 400)
    while n_steps % save_every != 0:
        n_steps += 1
    grid = TimeGrid(dt=horizon / n_steps, n_steps=n_steps)
    if window is None:
        window = (horizon / 2.0, horizon)

    curves = linear_moment_curves(
        model,
        grid,
        master_seed,
        n_paths,
        ps,
        source="X",
        save_every=save_every,
        workers=workers,
        block_size=block_size,
    )
    fits: list[RateFit] = [curves.fit(p, window) for p in ps]
    slopes = np.array([f.slope for f in fits])
    ses = np.array([f.slope_std_err for f in fits])

    nonpos = np.nonzero(slopes <= 0.0)[0]
    if nonpos.size == 0 or nonpos[-1] == len(ps) - 1:
        raise NoSignChangeError(
            "fitted slopes do not change sign on the order grid; widen p_grid"
        )
    i = int(nonpos[-1])
    p_lo, p_hi = ps[i], ps[i + 1]
    s_lo, s_hi = float(slopes[i]), float(slopes[i + 1])
    dp = p_hi - p_lo
    ds = s_hi - s_lo
    estimate = p_lo - s_lo * dp / ds
    d_lo = -dp * s_hi / (ds * ds)
    d_hi = dp * s_lo / (ds * ds)
    half = 1.96 * float(np.hypot(d_lo * ses[i], d_hi * ses[i + 1]))
    return ExponentReport(
        method="moment_transition",
        estimate=float(estimate),
        ci_low=float(estimate - half),
        ci_high=float(estimate + half),
        n_effective=curves.n,
        analytic=model.beta_c,
        details={
            "p_grid": list(ps),
            "slopes": [float(s) for s in slopes],
            "slope_std_errs": [float(s) for s in ses],
            "window": list(window),
            "excluded": curves.excluded,
        },
    )


def _batch_ci(batch_values: np.ndarray) -> tuple[float, float]:
    b = batch_values.size
    mean = float(batch_values.mean())
    if b < 2:
        return mean, mean
    half = float(student_t.ppf(0.975, b - 1) * batch_values.std(ddof=1) / np.sqrt(b))
    return mean - half, mean + half


def _batch_slices(n: int, n_batches: int) -> list[slice]:
    edges = np.linspace(0, n, n_batches + 1, dtype=int)
    return [slice(edges[i], edges[i + 1]) for i in range(n_batches) if edges[i + 1] > edges[i]]


def green_kubo_d(
    zeta: PathEnsemble,
    window: float,
    *,
    n_batches: int = 20,
    analytic: "float | None" = None,
) -> ExponentReport:
    """Integrate the empirical autocovariance of the noise up to a lag cap.

    The covariance at each lag is an ensemble average against the
    initial node (stationarity makes the base node irrelevant), then a
    trapezoid integral over lags gives the diffusion constant.  The CI
    comes from batching paths.
    """
    dt = zeta.grid.dt
    if window > zeta.grid.horizon / 2.0 + 1e-12:
        raise WindowTooLongError("lag window must not exceed half the grid horizon")
    n_lags = int(round(window / dt))
    if n_lags < 2:
        raise WindowTooShortError("lag window must span at least two steps")
    vals = zeta.values[~zeta.flagged]
    if vals.shape[0] < n_batches:
        raise EmptyInputError("too few unflagged paths for batching")
    products = vals[:, :1] * vals[:, : n_lags + 1]
    corr = products.mean(axis=0)
    estimate = float(np.trapezoid(corr, dx=dt))
    batch_d = np.array(
        [float(np.trapezoid(products[s].mean(axis=0), dx=dt)) for s in _batch_slices(vals.shape[0], n_batches)]
    )
    ci_low, ci_high = _batch_ci(batch_d)
    return ExponentReport(
        method="green_kubo",
        estimate=estimate,
        ci_low=ci_low,
        ci_high=ci_high,
        n_effective=int(vals.shape[0]),
        analytic=analytic,
        details={"window": window, "n_lags": n_lags, "n_batches": len(batch_d)},
    )


def _linear_slope(ts: np.ndarray, ys: np.ndarray) -> float:
    t_bar = ts.mean()
    y_bar = ys.mean()
    return float(((ts - t_bar) * (ys - y_bar)).sum() / ((ts - t_bar) ** 2).sum())


def dt_fit_d(
    y: PathEnsemble,
    window: tuple[float, float],
    *,
    n_batches: int = 20,
    analytic: "float | None" = None,
) -> ExponentReport:
    """Slope of half the integrated-noise variance over a late window.

    E[Y_t^2]/2 approaches D t plus a constant once t passes a few
    correlation times, so the least-squares slope estimates D.
    """
    lo, hi = window
    times = y.grid.times
    mask = (times >= lo) & (times <= hi)
    if mask.sum() < 5:
        raise WindowTooShortError("variance-slope window must cover at least 5 nodes")
    vals = y.values[~y.flagged][:, mask]
    if vals.shape[0] < n_batches:
        raise EmptyInputError("too few unflagged paths for batching")
    ts = times[mask]
    estimate = _linear_slope(ts, 0.5 * (vals**2).mean(axis=0))
    batch_slopes = np.array(
        [
            _linear_slope(ts, 0.5 * (vals[s] ** 2).mean(axis=0))
            for s in _batch_slices(vals.shape[0], n_batches)
        ]
    )
    ci_low, ci_high = _batch_ci(batch_slopes)
    return ExponentReport(
        method="dt_fit",
        estimate=estimate,
        ci_low=ci_low,
        ci_high=ci_high,
        n_effective=int(vals.shape[0]),
        analytic=analytic,
        details={"window": list(window), "n_batches": len(batch_slopes)},
    )


VERDICT_BOUNDED = "BOUNDED"
VERDICT_UNBOUNDED = "UNBOUNDED"


@dataclass(frozen=True)
class Condition1Report:
    """Boundedness check of the compensated exponential moment.

    r(t) = E[exp(-p Y_t)] exp(-p^2 D t); for Gaussian integrated noise
    this equals exp(p^2 (d(t) - D t)) exactly.  The verdict is BOUNDED
    when max r / min r over the grid stays inside the ratio budget.
    An optional Monte Carlo cross-check draws Y_t from its exact normal
    law, avoiding path-simulation noise entirely.
    """

    p: float
    times: np.ndarray
    r_analytic: np.ndarray
    ratio: float
    ratio_budget: float
    verdict: str
    r_mc: "np.ndarray | None" = None
    mc_std_err: "np.ndarray | None" = None
    mc_consistent: "bool | None" = None
    mc_max_z: "float | None" = None

    @property
    def passed(self) -> bool:
        return self.verdict == VERDICT_BOUNDED


def condition1_diagnostic(
    spec: NoiseSpec,
    p: float,
    t_grid: np.ndarray,
    n: int = 0,
    *,
    master_seed: int = 0,
    ratio_budget: float = 1e3,
) -> Condition1Report:
    if p <= 0.0:
        raise ValueError("order p must be positive")
    ts = np.asarray(t_grid, dtype=np.float64)
    if ts.size < 2:
        raise ValueError("need at least two grid times")
    d_const = diffusion_constant(spec)
    d_curve = y_variance_half(spec, ts)
    r_analytic = np.exp(p * p * (d_curve - d_const * ts))
    ratio = float(r_analytic.max() / r_analytic.min())
    verdict = VERDICT_BOUNDED if ratio <= ratio_budget else VERDICT_UNBOUNDED

    r_mc = mc_se = None
    consistent = None
    max_z = None
    if n > 0:
        draws = sample_y_marginal(spec, ts, n, master_seed)
        w = np.exp(-p * draws)
        m = w.mean(axis=1)
        se = w.std(axis=1, ddof=1) / np.sqrt(n)
        damp = np.exp(-p * p * d_const * ts)
        r_mc = m * damp
        mc_se = se * damp
        z = np.abs(r_mc - r_analytic) / np.where(mc_se > 0.0, mc_se, np.inf)
        max_z = float(z.max())
        consistent = bool(max_z <= 3.0)
    return Condition1Report(
        p=p,
        times=ts,
        r_analytic=r_analytic,
        ratio=ratio,
        ratio_budget=ratio_budget,
        verdict=verdict,
        r_mc=r_mc,
        mc_std_err=mc_se,
        mc_consistent=consistent,
        mc_max_z=max_z,
    )


@dataclass(frozen=True)
class KsReport:
    statistic: float
    p_value: float
    n_first: int
    n_second: int
    level: float
    passed: bool


def b_equals_h_test(
    b_samples: np.ndarray,
    h_samples: np.ndarray,
    *,
    level: float = 0.01,
    seed_b: "int | None" = None,
    seed_h: "int | None" = None,
) -> KsReport:
    """Two-sample KS test of the forward response against the reversed one.

    The two ensembles must come from independently seeded simulations;
    reusing a seed couples the samples and voids the test.
    """
    if seed_b is not None and seed_b == seed_h:
        raise SameSeedError("B and H ensembles share a master seed")
    b = np.asarray(b_samples, dtype=np.float64).ravel()
    h = np.asarray(h_samples, dtype=np.float64).ravel()
    if b.size == 0 or h.size == 0:
        raise EmptyInputError("both sample sets must be nonempty")
    result = ks_2samp(b, h)
    passed = bool(result.pvalue > level)
    return KsReport(
        statistic=float(result.statistic),
        p_value=float(result.pvalue),
        n_first=int(b.size),
        n_second=int(h.size),
        level=level,
        passed=passed,
    )


def b_h_replicates(
    model: LinearModel,
    t: float,
    n_per_side: int,
    replicates: int,
    base_seed: int,
    *,
    dt: "float | None" = None,
    level: float = 0.01,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> list[KsReport]:
    """Repeated distribution tests of B_t against H_t, fresh seeds each time."""
    if dt is None:
        dt = default_dt(max(model.a, 1e-12), model.multiplicative.max_tau, model.additive.max_tau)
    n_steps = max(int(round(t / dt)), 8)
    grid = TimeGrid(dt=t / n_steps, n_steps=n_steps)
    reports = []
    for r in range(replicates):
        seed_b = base_seed + 2 * r
        seed_h = base_seed + 2 * r + 1
        b = terminal_linear_samples(
            model, grid, seed_b, n_per_side, which=("B",), workers=workers, block_size=block_size
        )
        h = terminal_linear_samples(
            model, grid, seed_h, n_per_side, which=("H",), workers=workers, block_size=block_size
        )
        reports.append(
            b_equals_h_test(
                b["B"][~b["flagged"]],
                h["H"][~h["flagged"]],
                level=level,
                seed_b=seed_b,
                seed_h=seed_h,
            )
        )
    return reports
