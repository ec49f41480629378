# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled receive-and-combine kernel.

Consumes the numpy bit generator in exactly the order used by
``_kernels_py.ota_combine`` so both backends see identical channel draws.
"""

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.stdlib cimport free, malloc
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal


def ota_combine(object gen, x, amp, own, Py_ssize_t K, double noise_amp, double power):
    cdef double complex[:, ::1] xv = np.ascontiguousarray(x, dtype=np.complex128)
    cdef double[:, ::1] av = np.ascontiguousarray(amp, dtype=np.float64)
    cdef unsigned char[:, ::1] ov = np.ascontiguousarray(own, dtype=np.uint8)
    cdef Py_ssize_t J = xv.shape[0]
    cdef Py_ssize_t N = xv.shape[1]
    cdef Py_ssize_t R = av.shape[0]
    out = np.zeros((R, N), dtype=np.complex128)
    cdef double complex[:, ::1] ov_out = out

    bit_generator = gen.bit_generator
    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")

    cdef double *buf = <double *> malloc(5 * N * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double *re = buf
    cdef double *sr = buf + N
    cdef double *si = buf + 2 * N
    cdef double *yr = buf + 3 * N
    cdef double *yi = buf + 4 * N
    cdef Py_ssize_t r, k, j, n
    cdef double a, hr, hi, xr, xi, zr, zi, tr, ti, ar, ai
    cdef unsigned char is_own
    cdef double inv_k = 1.0 / K
    try:
        with bit_generator.lock:
            with nogil:
                for r in range(R):
                    for k in range(K):
                        for n in range(N):
                            sr[n] = 0.0
                            si[n] = 0.0
                            yr[n] = 0.0
                            yi[n] = 0.0
                        for j in range(J):
                            a = av[r, j]
                            is_own = ov[r, j]
                            for n in range(N):
                                re[n] = a * random_standard_normal(rng)
                            for n in range(N):
                                hi = a * random_standard_normal(rng)
                                hr = re[n]
                                if is_own:
                                    sr[n] += hr
                                    si[n] += hi
                                xr = xv[j, n].real
                                xi = xv[j, n].imag
                                yr[n] += hr * xr - hi * xi
                                yi[n] += hr * xi + hi * xr
                        for n in range(N):
                            re[n] = noise_amp * random_standard_normal(rng)
                        for n in range(N):
                            zi = noise_amp * random_standard_normal(rng)
                            zr = re[n]
                            tr = power * yr[n] + zr
                            ti = power * yi[n] + zi
                            # conj(s) * y
                            ar = sr[n] * tr + si[n] * ti
                            ai = sr[n] * ti - si[n] * tr
                            ov_out[r, n] = ov_out[r, n] + (ar + 1j * ai)
                    for n in range(N):
                        ov_out[r, n] = ov_out[r, n] * inv_k
    finally:
        free(buf)
    return out
