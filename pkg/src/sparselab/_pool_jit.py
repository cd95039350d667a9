"""Optional numba-compiled max-pool kernels.

Same semantics as the numpy path in layers.py (first maximal element of
each window wins, row-major); just faster on the hot shapes. Falls back
silently when numba is unavailable or SPARSELAB_NO_JIT is set.
"""

from __future__ import annotations

import os

HAVE_JIT = False

if not os.environ.get("SPARSELAB_NO_JIT"):
    try:
        import numpy as np
        from numba import njit

        @njit(cache=True)
        def pool_fwd(x, wsz, s):
            b_n, h, w, c_n = x.shape
            oh = (h - wsz) // s + 1
            ow = (w - wsz) // s + 1
            y = np.empty((b_n, oh, ow, c_n), dtype=x.dtype)
            win = np.zeros((b_n, oh, ow, c_n), dtype=np.uint8)
            for b in range(b_n):
                for o1 in range(oh):
                    hb = o1 * s
                    for o2 in range(ow):
                        wb = o2 * s
                        for c in range(c_n):
                            best = x[b, hb, wb, c]
                            code = np.uint8(0)
                            for i in range(wsz):
                                for j in range(wsz):
                                    v = x[b, hb + i, wb + j, c]
                                    if v > best:
                                        best = v
                                        code = np.uint8(i * wsz + j)
                            y[b, o1, o2, c] = best
                            win[b, o1, o2, c] = code
            return y, win

        @njit(cache=True)
        def pool_bwd(dy, win, wsz, s, h, w):
            b_n, oh, ow, c_n = dy.shape
            dx = np.zeros((b_n, h, w, c_n), dtype=dy.dtype)
            for b in range(b_n):
                for o1 in range(oh):
                    hb = o1 * s
                    for o2 in range(ow):
                        wb = o2 * s
                        for c in range(c_n):
                            code = win[b, o1, o2, c]
                            dx[b, hb + code // wsz, wb + code % wsz, c] += dy[b, o1, o2, c]
            return dx

        HAVE_JIT = True
    except ImportError:  # pragma: no cover - depends on environment
        HAVE_JIT = False
