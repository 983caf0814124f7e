"""Warp kernel selection: compiled extension when available, numpy otherwise.

``scatter_zbuffer`` is the hot inner loop of forward warping.  The two
implementations are interchangeable bit-for-bit; ``KERNEL_BACKEND`` reports
which one was picked so benchmarks and bug reports can say.
"""

from . import _scatter_np

try:
    from . import _scatter_cy

    scatter_zbuffer = _scatter_cy.scatter_zbuffer
    KERNEL_BACKEND = "compiled"
except ImportError:  # extension not built; numpy fallback
    scatter_zbuffer = _scatter_np.scatter_zbuffer
    KERNEL_BACKEND = "numpy"

scatter_zbuffer_numpy = _scatter_np.scatter_zbuffer

__all__ = ["scatter_zbuffer", "scatter_zbuffer_numpy", "KERNEL_BACKEND"]
