# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel for the flattened PLR matvec.

Walks the leaf table once per right-hand side; each leaf applies its
factor pair as two small dense products.  Exactly the arithmetic of the
pure-Python fallback, reordered for tight loops.
"""

import numpy as np

cimport numpy as cnp


def flat_matvec(
    cnp.int64_t[::1] row0,
    cnp.int64_t[::1] col0,
    cnp.int64_t[::1] nb,
    cnp.int64_t[::1] rk,
    cnp.int64_t[::1] uoff,
    cnp.int64_t[::1] voff,
    cnp.complex128_t[::1] udata,
    cnp.complex128_t[::1] vdata,
    cnp.complex128_t[:, ::1] x,
    cnp.complex128_t[:, ::1] y,
):
    cdef Py_ssize_t nleaf = row0.shape[0]
    cdef Py_ssize_t ncols = x.shape[1]
    cdef Py_ssize_t li, c, i, j, r, s, ro, co, uo, vo
    cdef double complex acc
    cdef Py_ssize_t rmax = 0
    for li in range(nleaf):
        if rk[li] > rmax:
            rmax = rk[li]
    if rmax == 0:
        return
    tmp_arr = np.empty(rmax, dtype=np.complex128)
    cdef cnp.complex128_t[::1] tmp = tmp_arr
    with nogil:
        for c in range(ncols):
            for li in range(nleaf):
                r = rk[li]
                if r == 0:
                    continue
                s = nb[li]
                ro = row0[li]
                co = col0[li]
                uo = uoff[li]
                vo = voff[li]
                for i in range(r):
                    acc = 0
                    for j in range(s):
                        acc = acc + vdata[vo + i * s + j] * x[co + j, c]
                    tmp[i] = acc
                for i in range(s):
                    acc = 0
                    for j in range(r):
                        acc = acc + udata[uo + i * r + j] * tmp[j]
                    y[ro + i, c] = y[ro + i, c] + acc
