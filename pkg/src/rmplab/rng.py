"""Counter-based random number streams.

Each (master_seed, path_index, role) triple owns an independent Philox
stream, so path i draws the same numbers no matter how paths are
batched, ordered, or spread across workers.  The role field separates
the noise sources feeding one path: multiplicative noise, additive
noise, and marginal draws used by exact-law estimators.
"""
from __future__ import annotations

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_ROLE_BITS = 3

ROLE_MULTIPLICATIVE = 0
ROLE_ADDITIVE = 1
ROLE_MARGINAL = 2
ROLE_GENERIC = 3

_VALID_ROLES = (ROLE_MULTIPLICATIVE, ROLE_ADDITIVE, ROLE_MARGINAL, ROLE_GENERIC)


def path_stream(master_seed: int, path_index: int, role: int) -> np.random.Generator:
    """Return the generator owned by (master_seed, path_index, role).

    The 128-bit Philox key is [master_seed, path_index << 3 | role], so
    distinct triples never collide as long as path_index < 2**61.
    """
    if role not in _VALID_ROLES:
        raise ValueError(f"unknown stream role: {role}")
    if path_index < 0:
        raise ValueError("path_index must be nonnegative")
    if path_index >= (1 << (64 - _ROLE_BITS)):
        raise ValueError("path_index exceeds the keyable range")
    key = np.array(
        [
            np.uint64(master_seed) & _MASK64,
            (np.uint64(path_index) << np.uint64(_ROLE_BITS)) | np.uint64(role),
        ],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def block_normals(
    master_seed: int,
    path_indices: np.ndarray,
    role: int,
    shape_per_path: tuple[int, ...],
) -> np.ndarray:
    """Standard normal draws for a block of paths, one stream per path.

    Output shape is (len(path_indices), *shape_per_path).  Row k depends
    only on (master_seed, path_indices[k], role), never on the block
    layout.
    """
    out = np.empty((len(path_indices),) + shape_per_path, dtype=np.float64)
    for row, idx in enumerate(path_indices):
        out[row] = path_stream(master_seed, int(idx), role).standard_normal(shape_per_path)
    return out
