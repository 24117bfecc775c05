"""Counter-based Gaussian streams for reproducible path simulation.

Normals are generated in fixed blocks of ``BLOCK`` paths, one Philox stream
per (seed, block) pair.  The draw for a given global path index therefore does
not depend on how many paths are requested, how the work is chunked, or how
many workers consume it.
"""

import numpy as np

BLOCK = 1024


def _block_generator(seed: int, block: int) -> np.random.Generator:
    # 128-bit Philox key: high word = user seed, low word = block index.
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) << 64 | (int(block) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def block_normals(seed: int, first_path: int, n_paths: int, shape: tuple) -> np.ndarray:
    """Standard normals for paths [first_path, first_path + n_paths).

    ``shape`` is the per-path draw shape, e.g. (n_steps, n_drivers).  The
    result has shape (n_paths, *shape) and is a pure function of
    (seed, global path index), so any chunking reproduces the same numbers.
    """
    if first_path < 0 or n_paths < 0:
        raise ValueError("path range must be nonnegative")
    out = np.empty((n_paths,) + tuple(shape))
    per_path = int(np.prod(shape)) if shape else 1
    pos = 0
    path = first_path
    while pos < n_paths:
        block, offset = divmod(path, BLOCK)
        take = min(BLOCK - offset, n_paths - pos)
        z = _block_generator(seed, block).standard_normal((BLOCK, per_path))
        out[pos:pos + take] = z[offset:offset + take].reshape((take,) + tuple(shape))
        pos += take
        path += take
    return out
