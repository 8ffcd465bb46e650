# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled projector kernels (hot path).

Scalar-loop twins of the vectorized routines in ``_kernels_np``: identical
ray parametrization, marching rule, and interpolation weights, so the two
backends agree to float rounding and either one passes the adjoint test.
"""

from libc.math cimport fabs, floor

import numpy as np

BACKEND = "cython"


def forward_project(image, cos_t, sin_t, int n_dets, double det_spacing):
    """Project an (n, n) image into an (n_views, n_dets) sinogram."""
    cdef double[:, ::1] img = np.ascontiguousarray(image, dtype=np.float64)
    cdef double[::1] ct_v = np.ascontiguousarray(cos_t, dtype=np.float64)
    cdef double[::1] st_v = np.ascontiguousarray(sin_t, dtype=np.float64)
    cdef int n = img.shape[0]
    cdef int n_views = ct_v.shape[0]
    out = np.zeros((n_views, n_dets))
    cdef double[:, ::1] sino = out
    cdef double c = (n - 1) / 2.0
    cdef double ct, st, a, b, dl, s, f, w1, acc
    cdef Py_ssize_t v, d, m, p0
    cdef bint march_x
    for v in range(n_views):
        ct = ct_v[v]
        st = st_v[v]
        march_x = fabs(st) >= fabs(ct)
        if march_x:
            a = ct
            b = st
            dl = 1.0 / fabs(st)
        else:
            a = st
            b = ct
            dl = 1.0 / fabs(ct)
        for d in range(n_dets):
            s = (d - (n_dets - 1) / 2.0) * det_spacing
            acc = 0.0
            for m in range(n):
                f = (s - (m - c) * a) / b + c
                p0 = <Py_ssize_t>floor(f)
                w1 = f - p0
                if march_x:
                    if 0 <= p0 < n:
                        acc += (1.0 - w1) * img[p0, m]
                    if 0 <= p0 + 1 < n:
                        acc += w1 * img[p0 + 1, m]
                else:
                    if 0 <= p0 < n:
                        acc += (1.0 - w1) * img[m, p0]
                    if 0 <= p0 + 1 < n:
                        acc += w1 * img[m, p0 + 1]
            sino[v, d] = acc * dl
    return out


def back_project(sino_in, cos_t, sin_t, int n, double det_spacing):
    """Adjoint of ``forward_project``: (n_views, n_dets) -> (n, n)."""
    cdef double[:, ::1] sino = np.ascontiguousarray(sino_in, dtype=np.float64)
    cdef double[::1] ct_v = np.ascontiguousarray(cos_t, dtype=np.float64)
    cdef double[::1] st_v = np.ascontiguousarray(sin_t, dtype=np.float64)
    cdef int n_views = ct_v.shape[0]
    cdef int n_dets = sino.shape[1]
    out = np.zeros((n, n))
    cdef double[:, ::1] img = out
    cdef double c = (n - 1) / 2.0
    cdef double ct, st, a, b, dl, s, f, w1, q
    cdef Py_ssize_t v, d, m, p0
    cdef bint march_x
    for v in range(n_views):
        ct = ct_v[v]
        st = st_v[v]
        march_x = fabs(st) >= fabs(ct)
        if march_x:
            a = ct
            b = st
            dl = 1.0 / fabs(st)
        else:
            a = st
            b = ct
            dl = 1.0 / fabs(ct)
        for d in range(n_dets):
            s = (d - (n_dets - 1) / 2.0) * det_spacing
            q = sino[v, d] * dl
            if q == 0.0:
                continue
            for m in range(n):
                f = (s - (m - c) * a) / b + c
                p0 = <Py_ssize_t>floor(f)
                w1 = f - p0
                if march_x:
                    if 0 <= p0 < n:
                        img[p0, m] += (1.0 - w1) * q
                    if 0 <= p0 + 1 < n:
                        img[p0 + 1, m] += w1 * q
                else:
                    if 0 <= p0 < n:
                        img[m, p0] += (1.0 - w1) * q
                    if 0 <= p0 + 1 < n:
                        img[m, p0 + 1] += w1 * q
    return out
