# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled sampling kernels; semantics defined by the twin in _pykernels.py.

Arithmetic must stay bit-identical to the Python fallback: plain IEEE doubles,
libm calls, uniforms pulled one at a time via next_double.  Do not "optimize"
expressions here without mirroring the change in _pykernels.py.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.math cimport fabs, floor, log, pow, sqrt
from numpy.random cimport bitgen_t

cnp.import_array()

BACKEND_NAME = "compiled"

cdef long long OVERFLOW_LIMIT_LL = (<long long>1) << 62

cdef double _ST[10]
_ST[0] = 0.08106146679532726
_ST[1] = 0.04134069595540929
_ST[2] = 0.02767792568499834
_ST[3] = 0.02079067210376509
_ST[4] = 0.01664469118982119
_ST[5] = 0.01387612882307075
_ST[6] = 0.01189670994589177
_ST[7] = 0.01041126526197209
_ST[8] = 0.009255462182712733
_ST[9] = 0.008330563433362871


cdef inline double _next(bitgen_t *rng) noexcept nogil:
    return rng.next_double(rng.state)


cdef inline double _stirling_tail(double k) noexcept nogil:
    if k <= 9.0:
        return _ST[<int>k]
    cdef double kp1 = k + 1.0
    cdef double kp1sq = kp1 * kp1
    return (1.0 / 12 - (1.0 / 360 - 1.0 / 1260 / kp1sq) / kp1sq) / kp1


cdef long long _binomial_inversion(bitgen_t *rng, long long n, double p) noexcept nogil:
    cdef double q = 1.0 - p
    cdef double s = p / q
    cdef double f = pow(q, <double>n)
    cdef double u = _next(rng)
    cdef long long k = 0
    cdef double cdf = f
    while u > cdf and k < n:
        k += 1
        f *= s * <double>(n - k + 1) / <double>k
        cdf += f
    return k


cdef long long _binomial_btrs(bitgen_t *rng, long long n, double p) noexcept nogil:
    cdef double nf = <double>n
    cdef double spq = sqrt(nf * p * (1.0 - p))
    cdef double b = 1.15 + 2.53 * spq
    cdef double a = -0.0873 + 0.0248 * b + 0.01 * p
    cdef double c = nf * p + 0.5
    cdef double v_r = 0.92 - 4.2 / b
    cdef double r = p / (1.0 - p)
    cdef double alpha = (2.83 + 5.1 / b) * spq
    cdef double m = floor((nf + 1.0) * p)
    cdef double u, v, us, k, upper
    while True:
        u = _next(rng) - 0.5
        v = _next(rng)
        us = 0.5 - fabs(u)
        k = floor((2.0 * a / us + b) * u + c)
        if us >= 0.07 and v <= v_r:
            return <long long>k
        if k < 0.0 or k > nf:
            continue
        v = log(v * alpha / (a / (us * us) + b))
        upper = ((m + 0.5) * log((m + 1.0) / (r * (nf - m + 1.0)))
                 + (nf + 1.0) * log((nf - m + 1.0) / (nf - k + 1.0))
                 + (k + 0.5) * log(r * (nf - k + 1.0) / (k + 1.0))
                 + _stirling_tail(m) + _stirling_tail(nf - m)
                 - _stirling_tail(k) - _stirling_tail(nf - k))
        if v <= upper:
            return <long long>k


cdef long long _binomial(bitgen_t *rng, long long n, double p) noexcept nogil:
    cdef double ps
    cdef long long k
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    ps = 1.0 - p if p > 0.5 else p
    if <double>n * ps < 10.0:
        k = _binomial_inversion(rng, n, ps)
    else:
        k = _binomial_btrs(rng, n, ps)
    return n - k if p > 0.5 else k


cdef inline Py_ssize_t _inverse_cdf(const double *cum, Py_ssize_t lo, Py_ssize_t hi,
                                    double u) noexcept nogil:
    cdef Py_ssize_t mid
    hi -= 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if u < cum[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


cdef bitgen_t *_get_bitgen(object bit_generator) except NULL:
    capsule = bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("expected a numpy BitGenerator")
    return <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")


def binomial_seeded(bit_generator, n, p):
    cdef bitgen_t *rng = _get_bitgen(bit_generator)
    return _binomial(rng, <long long>n, <double>p)


def multinomial_split_seeded(bit_generator, n, probs):
    cdef bitgen_t *rng = _get_bitgen(bit_generator)
    p_arr = np.ascontiguousarray(probs, dtype=np.float64)
    cdef const double[::1] p = p_arr
    cdef Py_ssize_t K = p.shape[0]
    out_arr = np.zeros(K, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef long long remaining = <long long>n
    cdef double prem = 1.0
    cdef double pj
    cdef long long d
    cdef Py_ssize_t j
    with nogil:
        for j in range(K - 1):
            if remaining == 0:
                break
            pj = p[j]
            if pj <= 0.0:
                continue
            if prem <= pj:
                out[j] = remaining
                remaining = 0
            else:
                d = _binomial(rng, remaining, pj / prem)
                out[j] = d
                remaining -= d
            prem -= pj
        out[K - 1] = remaining
    return out_arr


def run_chain(bit_generator, Q, e, proto, initial, horizon, hidden0):
    """Simulate the chain; mirrors _pykernels.run_chain exactly."""
    cdef bitgen_t *rng = _get_bitgen(bit_generator)

    Q_arr = np.ascontiguousarray(Q, dtype=np.float64)
    cdef const double[:, ::1] Qv = Q_arr
    cdef Py_ssize_t S = Qv.shape[0]
    cdef long long T = <long long>horizon

    cdef int mode = proto.mode
    const_arr = np.ascontiguousarray(proto.const_vec, dtype=np.int64)
    offsets_arr = np.ascontiguousarray(proto.offsets, dtype=np.int64)
    values_arr = np.ascontiguousarray(proto.values, dtype=np.int64)
    cums_arr = np.ascontiguousarray(proto.cums, dtype=np.float64)
    support_arr = np.ascontiguousarray(proto.support, dtype=np.int64)
    table_cums_arr = np.ascontiguousarray(proto.table_cums, dtype=np.float64)
    regime_offsets_arr = np.ascontiguousarray(proto.regime_offsets, dtype=np.int64)
    hidden_cum_arr = np.ascontiguousarray(proto.hidden_cum, dtype=np.float64)

    cdef const cnp.int64_t[::1] const_vec = const_arr
    cdef const cnp.int64_t[::1] offsets = offsets_arr
    cdef const cnp.int64_t[::1] values = values_arr
    cdef const double[::1] cums = cums_arr
    cdef const cnp.int64_t[:, ::1] support = support_arr
    cdef const double[::1] table_cums = table_cums_arr
    cdef const cnp.int64_t[::1] regime_offsets = regime_offsets_arr
    cdef const double[:, ::1] hidden_cum = hidden_cum_arr

    N_arr = np.empty((T, S), dtype=np.int64)
    J_arr = np.empty((T, S), dtype=np.int64)
    U_arr = np.empty((T, S), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] N_out = N_arr
    cdef cnp.int64_t[:, ::1] J_out = J_arr
    cdef cnp.int64_t[:, ::1] U_out = U_arr

    counts_arr = np.array(initial, dtype=np.int64)
    rnext_arr = np.zeros(S, dtype=np.int64)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef cnp.int64_t[::1] rnext = rnext_arr

    cdef long long hidden = <long long>hidden0
    cdef long long t, remaining, d, nc
    cdef Py_ssize_t i, j, idx
    cdef double prem, pj, u
    cdef int status = 0
    cdef long long fail_step = 0

    with nogil:
        for t in range(T):
            for j in range(S):
                rnext[j] = 0
            for i in range(S):
                remaining = counts[i]
                if remaining == 0:
                    U_out[t, i] = 0
                    continue
                prem = 1.0
                for j in range(S):
                    if remaining == 0:
                        break
                    pj = Qv[i, j]
                    if pj <= 0.0:
                        continue
                    if prem <= pj:
                        d = remaining
                        remaining = 0
                    else:
                        d = _binomial(rng, remaining, pj / prem)
                        remaining -= d
                    rnext[j] += d
                    prem -= pj
                U_out[t, i] = remaining

            if mode == 0:
                for j in range(S):
                    J_out[t, j] = const_vec[j]
            elif mode == 1:
                for i in range(S):
                    u = _next(rng)
                    idx = _inverse_cdf(&cums[0], <Py_ssize_t>offsets[i],
                                       <Py_ssize_t>offsets[i + 1], u)
                    J_out[t, i] = values[idx]
            elif mode == 2:
                u = _next(rng)
                idx = _inverse_cdf(&table_cums[0], 0, table_cums.shape[0], u)
                for j in range(S):
                    J_out[t, j] = support[idx, j]
            else:
                u = _next(rng)
                idx = _inverse_cdf(&table_cums[0],
                                   <Py_ssize_t>regime_offsets[<Py_ssize_t>hidden],
                                   <Py_ssize_t>regime_offsets[<Py_ssize_t>hidden + 1], u)
                for j in range(S):
                    J_out[t, j] = support[idx, j]
                u = _next(rng)
                hidden = _inverse_cdf(&hidden_cum[<Py_ssize_t>hidden, 0], 0,
                                      hidden_cum.shape[1], u)

            for j in range(S):
                nc = rnext[j] + J_out[t, j]
                counts[j] = nc
                N_out[t, j] = nc
                if nc > OVERFLOW_LIMIT_LL:
                    status = 1
            if status:
                fail_step = t
                break

    if status:
        raise OverflowError(f"particle count exceeded 2**62 at step {fail_step}")
    return N_arr, J_arr, U_arr, <long long>hidden
