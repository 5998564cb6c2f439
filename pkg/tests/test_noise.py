"""Noise spec validation and the sampled laws against closed forms.

The integrated-noise variance oracle is independent quadrature of the
autocovariance over the time wedge; marginal laws of the transformed
kind are pinned against exact Pareto formulas.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from rmplab.errors import SpecRejectedError, UnsupportedKindError
from rmplab.grid import TimeGrid
from rmplab.noise import (
    SHIPPED_GAUSSIAN_SPECS,
    NoiseSpec,
    correlation,
    diffusion_constant,
    require_multiplicative,
    sample_block,
    sample_path,
    stationary_moment,
    tail_index,
    validate_multiplicative,
    y_variance_half,
)
from rmplab.rng import ROLE_ADDITIVE, ROLE_MULTIPLICATIVE, path_stream


# ---------------------------------------------------------------- specs


def test_spec_invariants_rejected():
    with pytest.raises(ValueError):
        NoiseSpec.ou(0.0, 1.0)
    with pytest.raises(ValueError):
        NoiseSpec.ou(1.0, -0.5)
    with pytest.raises(ValueError):
        NoiseSpec.superposition([])
    with pytest.raises(ValueError):
        NoiseSpec.pareto_ou(0.5, 1.0)  # tail index must exceed 1
    with pytest.raises(ValueError):
        NoiseSpec.pareto_ou(0.5, 2.0, scale=0.0)
    with pytest.raises(ValueError):
        NoiseSpec(kind="weird")


def test_multiplicative_gate():
    assert validate_multiplicative(NoiseSpec.ou(1.0, 0.5)).accepted
    assert validate_multiplicative(NoiseSpec.superposition([(1, 1), (2, 0.25)])).accepted

    res = validate_multiplicative(NoiseSpec.zero())
    assert res.accepted and res.warnings  # degenerate but allowed

    for bad in (NoiseSpec.pareto_ou(0.5, 2.5), NoiseSpec.constant(1.0)):
        res = validate_multiplicative(bad)
        assert not res.accepted and res.reason
        with pytest.raises(SpecRejectedError):
            require_multiplicative(bad)


# ------------------------------------------------------- analytic layer


def test_correlation_values():
    spec = NoiseSpec.ou(1.0, 0.5)
    assert correlation(spec, 0.0) == pytest.approx(1.0)
    assert correlation(spec, 0.5) == pytest.approx(np.exp(-1.0))
    two = SHIPPED_GAUSSIAN_SPECS["two_scale"]
    assert correlation(two, 0.0) == pytest.approx(1.0 + 4.0)
    # even in the lag
    assert correlation(spec, -0.5) == correlation(spec, 0.5)


def test_diffusion_constants_of_shipped_specs():
    assert diffusion_constant(SHIPPED_GAUSSIAN_SPECS["ou_short"]) == pytest.approx(0.5)
    assert diffusion_constant(SHIPPED_GAUSSIAN_SPECS["ou_long"]) == pytest.approx(0.5)
    assert diffusion_constant(SHIPPED_GAUSSIAN_SPECS["two_scale"]) == pytest.approx(2.0)
    assert diffusion_constant(SHIPPED_GAUSSIAN_SPECS["three_scale"]) == pytest.approx(
        0.25 * 0.4 + 0.1225 * 1.2 + 0.0625 * 3.0
    )
    assert diffusion_constant(NoiseSpec.zero()) == 0.0


def test_gaussian_only_operations_reject_other_kinds():
    heavy = NoiseSpec.pareto_ou(0.5, 2.5)
    for fn in (correlation, y_variance_half):
        with pytest.raises(UnsupportedKindError):
            fn(heavy, 1.0)
    with pytest.raises(UnsupportedKindError):
        diffusion_constant(heavy)


def test_y_variance_half_closed_form_ou():
    # One component: D t - sigma^2 tau^2 (1 - exp(-t/tau)) with D = 0.5
    spec = NoiseSpec.ou(1.0, 0.5)
    expected = 0.5 * 10.0 - 0.25 * (1.0 - np.exp(-20.0))
    assert y_variance_half(spec, 10.0) == pytest.approx(expected, rel=1e-14)
    assert y_variance_half(spec, 0.0) == 0.0


@pytest.mark.parametrize("t", [0.3, 2.0, 10.0])
def test_y_variance_half_matches_quadrature(t):
    spec = SHIPPED_GAUSSIAN_SPECS["two_scale"]
    oracle, err = quad(lambda s: (t - s) * correlation(spec, s), 0.0, t)
    assert y_variance_half(spec, t) == pytest.approx(oracle, abs=max(1e-10, 10 * err))


def test_variance_deficit_is_bounded_and_monotone():
    spec = SHIPPED_GAUSSIAN_SPECS["three_scale"]
    d_const = diffusion_constant(spec)
    ts = np.linspace(0.0, 80.0, 400)
    deficit = d_const * ts - y_variance_half(spec, ts)
    cap = sum(s * s * t * t for s, t in spec.components)
    assert np.all(deficit >= -1e-12)
    assert np.all(np.diff(deficit) >= -1e-12)
    assert deficit[-1] == pytest.approx(cap, rel=1e-6)


@given(
    sigma=st.floats(0.1, 3.0),
    tau=st.floats(0.05, 4.0),
    t=st.floats(0.0, 50.0),
)
@settings(max_examples=60, deadline=None)
def test_y_variance_half_nonnegative_below_linear_bound(sigma, tau, t):
    spec = NoiseSpec.ou(sigma, tau)
    val = float(y_variance_half(spec, t))
    assert 0.0 <= val <= diffusion_constant(spec) * t + 1e-12


def test_tail_index_and_marginal_moments():
    heavy = NoiseSpec.pareto_ou(0.5, 3.0, scale=2.0)
    assert tail_index(heavy) == 3.0
    assert tail_index(NoiseSpec.ou(1, 1)) == np.inf
    # E phi^p = beta scale^p / (beta - p)
    assert stationary_moment(heavy, 1.0) == pytest.approx(3.0)
    assert stationary_moment(heavy, 2.0) == pytest.approx(12.0)
    with pytest.raises(ValueError):
        stationary_moment(heavy, 3.0)
    assert stationary_moment(NoiseSpec.zero(), 2.0) == 0.0
    assert stationary_moment(NoiseSpec.constant(-1.5), 2.0) == pytest.approx(2.25)
    with pytest.raises(UnsupportedKindError):
        stationary_moment(NoiseSpec.ou(1, 1), 2.0)


# ------------------------------------------------------------- sampling


def test_degenerate_kinds_sample_exactly():
    grid = TimeGrid(dt=0.1, n_steps=5)
    idx = np.arange(3)
    np.testing.assert_array_equal(
        sample_block(NoiseSpec.zero(), grid, 0, idx, ROLE_ADDITIVE), np.zeros((3, 6))
    )
    np.testing.assert_array_equal(
        sample_block(NoiseSpec.constant(2.5), grid, 0, idx, ROLE_ADDITIVE),
        np.full((3, 6), 2.5),
    )


def test_sample_path_matches_block_row():
    spec = SHIPPED_GAUSSIAN_SPECS["two_scale"]
    grid = TimeGrid(dt=0.05, n_steps=20)
    block = sample_block(spec, grid, 77, np.array([0, 5, 9]), ROLE_MULTIPLICATIVE)
    single = sample_path(spec, grid, path_stream(77, 5, ROLE_MULTIPLICATIVE))
    np.testing.assert_array_equal(block[1], single)


def test_ou_block_is_stationary_with_exact_autocovariance():
    sigma, tau = 1.3, 0.5
    spec = NoiseSpec.ou(sigma, tau)
    grid = TimeGrid(dt=0.05, n_steps=40)
    vals = sample_block(spec, grid, 2024, np.arange(8000), ROLE_MULTIPLICATIVE)

    var0 = vals[:, 0].var()
    var_end = vals[:, -1].var()
    se_var = sigma**2 * np.sqrt(2.0 / 8000)
    assert abs(var0 - sigma**2) < 5 * se_var
    assert abs(var_end - sigma**2) < 5 * se_var

    lag_nodes = int(tau / grid.dt)
    emp = np.mean(vals[:, 0] * vals[:, lag_nodes])
    assert abs(emp - sigma**2 * np.exp(-1.0)) < 5 * se_var


def test_pareto_block_has_exact_pareto_marginal():
    beta, scale = 3.0, 2.0
    spec = NoiseSpec.pareto_ou(0.5, beta, scale)
    grid = TimeGrid(dt=0.1, n_steps=10)
    vals = sample_block(spec, grid, 5, np.arange(8000), ROLE_ADDITIVE)
    terminal = vals[:, -1]

    assert terminal.min() >= scale  # support is [scale, inf)
    mean = terminal.mean()
    se = terminal.std(ddof=1) / np.sqrt(terminal.size)
    assert abs(mean - stationary_moment(spec, 1.0)) < 5 * se
    # survival at x = 2 scale is 2^-beta
    emp_sf = np.mean(terminal > 2.0 * scale)
    assert abs(emp_sf - 2.0**-beta) < 5 * np.sqrt(2.0**-beta / terminal.size)


def test_block_rows_do_not_depend_on_partition():
    spec = SHIPPED_GAUSSIAN_SPECS["three_scale"]
    grid = TimeGrid(dt=0.1, n_steps=7)
    full = sample_block(spec, grid, 31, np.arange(6), ROLE_MULTIPLICATIVE)
    part = sample_block(spec, grid, 31, np.array([4, 5]), ROLE_MULTIPLICATIVE)
    np.testing.assert_array_equal(full[4:], part)
