"""Stream independence and layout invariance of the keyed generators."""
import numpy as np
import pytest

from rmplab.rng import (
    ROLE_ADDITIVE,
    ROLE_GENERIC,
    ROLE_MARGINAL,
    ROLE_MULTIPLICATIVE,
    block_normals,
    path_stream,
)


def test_same_triple_reproduces_draws():
    a = path_stream(42, 7, ROLE_MULTIPLICATIVE).standard_normal(32)
    b = path_stream(42, 7, ROLE_MULTIPLICATIVE).standard_normal(32)
    np.testing.assert_array_equal(a, b)


def test_distinct_triples_give_distinct_streams():
    base = path_stream(42, 7, ROLE_MULTIPLICATIVE).standard_normal(32)
    for seed, idx, role in [
        (43, 7, ROLE_MULTIPLICATIVE),
        (42, 8, ROLE_MULTIPLICATIVE),
        (42, 7, ROLE_ADDITIVE),
        (42, 7, ROLE_MARGINAL),
        (42, 7, ROLE_GENERIC),
    ]:
        other = path_stream(seed, idx, role).standard_normal(32)
        assert not np.array_equal(base, other)


def test_role_bits_do_not_alias_neighboring_paths():
    # (idx << 3) | role must never collide with another (idx, role) pair
    a = path_stream(0, 1, ROLE_MULTIPLICATIVE).standard_normal(16)
    b = path_stream(0, 0, ROLE_GENERIC).standard_normal(16)
    assert not np.array_equal(a, b)


def test_block_rows_independent_of_block_layout():
    wide = block_normals(9, np.arange(10), ROLE_ADDITIVE, (5,))
    narrow = block_normals(9, np.array([6, 7]), ROLE_ADDITIVE, (5,))
    np.testing.assert_array_equal(wide[6], narrow[0])
    np.testing.assert_array_equal(wide[7], narrow[1])
    direct = path_stream(9, 6, ROLE_ADDITIVE).standard_normal((5,))
    np.testing.assert_array_equal(wide[6], direct)


def test_block_normals_shape():
    out = block_normals(1, np.arange(3), ROLE_MULTIPLICATIVE, (2, 4))
    assert out.shape == (3, 2, 4)


def test_invalid_role_and_index_rejected():
    with pytest.raises(ValueError):
        path_stream(1, 0, 17)
    with pytest.raises(ValueError):
        path_stream(1, -1, ROLE_GENERIC)
    with pytest.raises(ValueError):
        path_stream(1, 1 << 61, ROLE_GENERIC)


def test_pooled_draws_are_standard_normal():
    draws = block_normals(123, np.arange(200), ROLE_GENERIC, (50,)).ravel()
    n = draws.size
    assert abs(draws.mean()) < 5.0 / np.sqrt(n)
    assert abs(draws.var() - 1.0) < 5.0 * np.sqrt(2.0 / n)
