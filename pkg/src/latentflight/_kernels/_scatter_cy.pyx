# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled z-buffer scatter kernel.

Must stay semantically identical to ``_scatter_np.scatter_zbuffer``:
nearest depth wins, exact ties go to the smallest source index, and the
result is independent of input order.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def scatter_zbuffer(target_u, target_v, depth, valid, src_index, int height, int width):
    cdef cnp.int64_t[::1] tu = np.ascontiguousarray(target_u, dtype=np.int64)
    cdef cnp.int64_t[::1] tv = np.ascontiguousarray(target_v, dtype=np.int64)
    cdef cnp.float64_t[::1] d = np.ascontiguousarray(depth, dtype=np.float64)
    cdef cnp.uint8_t[::1] ok = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef cnp.int64_t[::1] si = np.ascontiguousarray(src_index, dtype=np.int64)

    winner_arr = np.full(height * width, -1, dtype=np.int64)
    best_arr = np.full(height * width, np.inf, dtype=np.float64)
    cdef cnp.int64_t[::1] winner = winner_arr
    cdef cnp.float64_t[::1] best = best_arr

    cdef Py_ssize_t i, j, n = tu.shape[0]
    cdef cnp.float64_t di
    with nogil:
        for i in range(n):
            if not ok[i]:
                continue
            if tu[i] < 0 or tu[i] >= width or tv[i] < 0 or tv[i] >= height:
                continue
            j = tv[i] * width + tu[i]
            di = d[i]
            if di < best[j] or (di == best[j] and si[i] < winner[j]):
                best[j] = di
                winner[j] = si[i]
    return winner_arr.reshape(height, width)
