"""Pure-numpy z-buffer scatter, the fallback for the compiled kernel.

Semantics are identical to ``_scatter_cy``: among all source pixels that
land on the same target pixel, the one with the smallest depth wins;
exact depth ties go to the smallest source index.  Both implementations
are order-independent, so permuting the input arrays never changes the
result.
"""

import numpy as np


def scatter_zbuffer(target_u, target_v, depth, valid, src_index, height, width):
    """Resolve a forward scatter into a per-target winner map.

    All per-pixel inputs are flat arrays of equal length.  ``target_u`` and
    ``target_v`` are integer target coordinates (already rounded); entries
    with ``valid`` false or coordinates outside ``height`` x ``width`` are
    dropped.  Returns an int64 (height, width) array holding the winning
    ``src_index`` per target, -1 where nothing landed.
    """
    target_u = np.asarray(target_u, dtype=np.int64)
    target_v = np.asarray(target_v, dtype=np.int64)
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    src_index = np.asarray(src_index, dtype=np.int64)

    keep = valid & (target_u >= 0) & (target_u < width) & (target_v >= 0) & (target_v < height)
    winner = np.full((height, width), -1, dtype=np.int64)
    if not keep.any():
        return winner

    tu, tv = target_u[keep], target_v[keep]
    d, si = depth[keep], src_index[keep]
    flat = tv * width + tu
    # Sort by (target, depth, source index); the first row of each target
    # group is the winner under the nearest-depth / smallest-index rule.
    order = np.lexsort((si, d, flat))
    flat, si = flat[order], si[order]
    _, first = np.unique(flat, return_index=True)
    winner.ravel()[flat[first]] = si[first]
    return winner
