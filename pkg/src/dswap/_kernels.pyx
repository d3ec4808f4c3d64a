# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled statevector kernels. All functions act in place on a complex128 vector.

Amplitudes are read through a double pointer (re, im interleaved) and the
loops walk contiguous blocks of 2**bit amplitudes, which the C compiler
vectorizes.
"""
import numpy as np

ctypedef double complex cplx


def apply_1q(cplx[::1] psi, int bit, cplx m00, cplx m01, cplx m10, cplx m11):
    cdef Py_ssize_t n = psi.shape[0]
    cdef Py_ssize_t stride = (<Py_ssize_t>1) << bit
    cdef Py_ssize_t hi, lo, i0, i1
    cdef double* d = <double*>&psi[0]
    cdef double ar, ai, br, bi
    cdef double r00 = m00.real, j00 = m00.imag, r01 = m01.real, j01 = m01.imag
    cdef double r10 = m10.real, j10 = m10.imag, r11 = m11.real, j11 = m11.imag
    with nogil:
        hi = 0
        while hi < n:
            for lo in range(stride):
                i0 = 2 * (hi + lo)
                i1 = i0 + 2 * stride
                ar = d[i0]
                ai = d[i0 + 1]
                br = d[i1]
                bi = d[i1 + 1]
                d[i0] = r00 * ar - j00 * ai + r01 * br - j01 * bi
                d[i0 + 1] = r00 * ai + j00 * ar + r01 * bi + j01 * br
                d[i1] = r10 * ar - j10 * ai + r11 * br - j11 * bi
                d[i1 + 1] = r10 * ai + j10 * ar + r11 * bi + j11 * br
            hi += 2 * stride


def apply_mcx(cplx[::1] psi, long long ctrl_mask, int tbit):
    cdef Py_ssize_t n = psi.shape[0]
    cdef Py_ssize_t stride = (<Py_ssize_t>1) << tbit
    cdef Py_ssize_t hi, lo, i0, i1
    cdef double* d = <double*>&psi[0]
    cdef double tr, ti
    with nogil:
        hi = 0
        while hi < n:
            for lo in range(stride):
                if ((hi + lo) & ctrl_mask) == ctrl_mask:
                    i0 = 2 * (hi + lo)
                    i1 = i0 + 2 * stride
                    tr = d[i0]
                    ti = d[i0 + 1]
                    d[i0] = d[i1]
                    d[i0 + 1] = d[i1 + 1]
                    d[i1] = tr
                    d[i1 + 1] = ti
            hi += 2 * stride


def apply_mcswap(cplx[::1] psi, long long ctrl_mask, int b1, int b2):
    cdef Py_ssize_t n = psi.shape[0]
    cdef long long m1 = (<long long>1) << b1
    cdef long long m2 = (<long long>1) << b2
    cdef long long want = ctrl_mask | m1
    cdef long long test = ctrl_mask | m1 | m2
    cdef Py_ssize_t i, j
    cdef double* d = <double*>&psi[0]
    cdef double tr, ti
    with nogil:
        for i in range(n):
            if (i & test) == want:
                j = (i ^ m1) | m2
                tr = d[2 * i]
                ti = d[2 * i + 1]
                d[2 * i] = d[2 * j]
                d[2 * i + 1] = d[2 * j + 1]
                d[2 * j] = tr
                d[2 * j + 1] = ti


def apply_phase(cplx[::1] psi, long long mask, cplx phase):
    cdef Py_ssize_t n = psi.shape[0]
    cdef Py_ssize_t i
    cdef double* d = <double*>&psi[0]
    cdef double pr = phase.real, pi = phase.imag, ar, ai
    with nogil:
        for i in range(n):
            if (i & mask) == mask:
                ar = d[2 * i]
                ai = d[2 * i + 1]
                d[2 * i] = pr * ar - pi * ai
                d[2 * i + 1] = pr * ai + pi * ar


def prob_one(cplx[::1] psi, int bit):
    cdef Py_ssize_t n = psi.shape[0]
    cdef Py_ssize_t stride = (<Py_ssize_t>1) << bit
    cdef Py_ssize_t hi, lo, k
    cdef double* d = <double*>&psi[0]
    cdef double acc = 0.0
    with nogil:
        hi = stride
        while hi < n:
            for lo in range(2 * stride):
                k = 2 * hi + lo
                acc += d[k] * d[k]
            hi += 2 * stride
    return acc


def collapse_remove(cplx[::1] psi, int bit, int outcome, double scale):
    cdef Py_ssize_t n = psi.shape[0]
    cdef Py_ssize_t stride = (<Py_ssize_t>1) << bit
    out = np.empty(n >> 1, dtype=np.complex128)
    if n < 2:
        return out
    cdef cplx[::1] o = out
    cdef double* dst = <double*>&o[0]
    cdef double* src = <double*>&psi[0]
    cdef Py_ssize_t hi, lo, w = 0
    cdef Py_ssize_t off = stride if outcome else 0
    with nogil:
        hi = 0
        while hi < n:
            for lo in range(2 * stride):
                dst[2 * w + lo] = src[2 * (hi + off) + lo] * scale
            w += stride
            hi += 2 * stride
    return out
