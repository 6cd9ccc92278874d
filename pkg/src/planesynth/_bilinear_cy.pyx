# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled bilinear gather/scatter core.

Mirrors ``_bilinear_np`` exactly: floor-based cell selection, index clamping
for MODE_CLAMP, zeroed out-of-bounds corners for MODE_ZERO, and the same
corner accumulation order in the forward pass.
"""

import numpy as np

from libc.math cimport floor

cimport numpy as cnp

cnp.import_array()

MODE_CLAMP = 0
MODE_ZERO = 1


cdef inline Py_ssize_t _clampi(Py_ssize_t v, Py_ssize_t hi) noexcept nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


def bilinear_forward(double[:, :, ::1] values, double[::1] xs, double[::1] ys, int mode):
    cdef Py_ssize_t h = values.shape[0]
    cdef Py_ssize_t w = values.shape[1]
    cdef Py_ssize_t c = values.shape[2]
    cdef Py_ssize_t p = xs.shape[0]
    out_arr = np.empty((p, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, ch, x0, y0, x1, y1, x0c, x1c, y0c, y1c
    cdef double x, y, fx, fy, w00, w10, w01, w11, v00, v10, v01, v11
    cdef bint m00, m10, m01, m11
    with nogil:
        for i in range(p):
            x = xs[i]
            y = ys[i]
            x0 = <Py_ssize_t>floor(x)
            y0 = <Py_ssize_t>floor(y)
            fx = x - floor(x)
            fy = y - floor(y)
            x1 = x0 + 1
            y1 = y0 + 1
            x0c = _clampi(x0, w - 1)
            x1c = _clampi(x1, w - 1)
            y0c = _clampi(y0, h - 1)
            y1c = _clampi(y1, h - 1)
            w00 = (1.0 - fx) * (1.0 - fy)
            w10 = fx * (1.0 - fy)
            w01 = (1.0 - fx) * fy
            w11 = fx * fy
            m00 = m10 = m01 = m11 = True
            if mode == 1:
                m00 = 0 <= x0 <= w - 1 and 0 <= y0 <= h - 1
                m10 = 0 <= x1 <= w - 1 and 0 <= y0 <= h - 1
                m01 = 0 <= x0 <= w - 1 and 0 <= y1 <= h - 1
                m11 = 0 <= x1 <= w - 1 and 0 <= y1 <= h - 1
            for ch in range(c):
                v00 = values[y0c, x0c, ch] if m00 else 0.0
                v10 = values[y0c, x1c, ch] if m10 else 0.0
                v01 = values[y1c, x0c, ch] if m01 else 0.0
                v11 = values[y1c, x1c, ch] if m11 else 0.0
                out[i, ch] = v00 * w00 + v10 * w10 + v01 * w01 + v11 * w11
    return out_arr


def bilinear_backward(double[:, :, ::1] values, double[::1] xs, double[::1] ys,
                      double[:, ::1] gout, int mode):
    cdef Py_ssize_t h = values.shape[0]
    cdef Py_ssize_t w = values.shape[1]
    cdef Py_ssize_t c = values.shape[2]
    cdef Py_ssize_t p = xs.shape[0]
    gval_arr = np.zeros((h, w, c), dtype=np.float64)
    gxs_arr = np.empty(p, dtype=np.float64)
    gys_arr = np.empty(p, dtype=np.float64)
    cdef double[:, :, ::1] gval = gval_arr
    cdef double[::1] gxs = gxs_arr
    cdef double[::1] gys = gys_arr
    cdef Py_ssize_t i, ch, x0, y0, x1, y1, x0c, x1c, y0c, y1c
    cdef double x, y, fx, fy, w00, w10, w01, w11
    cdef double v00, v10, v01, v11, g, gx, gy
    cdef bint m00, m10, m01, m11
    with nogil:
        for i in range(p):
            x = xs[i]
            y = ys[i]
            x0 = <Py_ssize_t>floor(x)
            y0 = <Py_ssize_t>floor(y)
            fx = x - floor(x)
            fy = y - floor(y)
            x1 = x0 + 1
            y1 = y0 + 1
            x0c = _clampi(x0, w - 1)
            x1c = _clampi(x1, w - 1)
            y0c = _clampi(y0, h - 1)
            y1c = _clampi(y1, h - 1)
            w00 = (1.0 - fx) * (1.0 - fy)
            w10 = fx * (1.0 - fy)
            w01 = (1.0 - fx) * fy
            w11 = fx * fy
            m00 = m10 = m01 = m11 = True
            if mode == 1:
                m00 = 0 <= x0 <= w - 1 and 0 <= y0 <= h - 1
                m10 = 0 <= x1 <= w - 1 and 0 <= y0 <= h - 1
                m01 = 0 <= x0 <= w - 1 and 0 <= y1 <= h - 1
                m11 = 0 <= x1 <= w - 1 and 0 <= y1 <= h - 1
            gx = 0.0
            gy = 0.0
            for ch in range(c):
                g = gout[i, ch]
                v00 = values[y0c, x0c, ch] if m00 else 0.0
                v10 = values[y0c, x1c, ch] if m10 else 0.0
                v01 = values[y1c, x0c, ch] if m01 else 0.0
                v11 = values[y1c, x1c, ch] if m11 else 0.0
                if m00:
                    gval[y0c, x0c, ch] += g * w00
                if m10:
                    gval[y0c, x1c, ch] += g * w10
                if m01:
                    gval[y1c, x0c, ch] += g * w01
                if m11:
                    gval[y1c, x1c, ch] += g * w11
                gx += g * ((v10 - v00) * (1.0 - fy) + (v11 - v01) * fy)
                gy += g * ((v01 - v00) * (1.0 - fx) + (v11 - v10) * fx)
            gxs[i] = gx
            gys[i] = gy
    return gval_arr, gxs_arr, gys_arr
