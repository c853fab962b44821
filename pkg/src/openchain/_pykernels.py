"""Pure-Python sampling kernels; fallback twin of the compiled extension.

Every arithmetic expression here maps one-to-one onto the C code in
``_ckernels.pyx``: same operations, same order, same libm calls, uniforms
drawn one at a time from the bit generator's ``next_double`` stream.  All
float math runs on CPython floats (C doubles); numpy scalars are converted at
the boundary because numpy's scalar ``**`` special-cases small exponents and
may differ from libm ``pow`` in the last ulp.  Given the same bit generator
state, both backends produce identical output arrays.
"""

from __future__ import annotations

from math import fabs, floor, log, sqrt

import numpy as np

BACKEND_NAME = "python"

OVERFLOW_LIMIT = 1 << 62

MODE_CONSTANT = 0
MODE_IID_PRODUCT = 1
MODE_JOINT_TABLE = 2
MODE_MARKOV_MODULATED = 3

_STIRLING_TAIL_TABLE = (
    0.08106146679532726,
    0.04134069595540929,
    0.02767792568499834,
    0.02079067210376509,
    0.01664469118982119,
    0.01387612882307075,
    0.01189670994589177,
    0.01041126526197209,
    0.009255462182712733,
    0.008330563433362871,
)


class UniformStream:
    """Scalar doubles from a BitGenerator, optionally buffered.

    Buffering pulls ahead on the underlying stream, so use it only when the
    stream owns the bit generator for its whole lifetime (as in run_chain).
    """

    __slots__ = ("_random", "_buf", "_pos", "_size")

    def __init__(self, bit_generator, buffer_size: int = 0):
        self._random = np.random.Generator(bit_generator).random
        self._size = int(buffer_size)
        self._buf = None
        self._pos = 0

    def next(self) -> float:
        if self._size == 0:
            return self._random()
        if self._buf is None or self._pos == self._size:
            self._buf = self._random(self._size).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def _stirling_tail(k: float) -> float:
    if k <= 9.0:
        return _STIRLING_TAIL_TABLE[int(k)]
    kp1 = k + 1.0
    kp1sq = kp1 * kp1
    return (1.0 / 12 - (1.0 / 360 - 1.0 / 1260 / kp1sq) / kp1sq) / kp1


def _binomial_inversion(stream, n: int, p: float) -> int:
    # requires 0 < p <= 0.5 and n*p < 10
    q = 1.0 - p
    s = p / q
    f = q ** float(n)
    u = stream.next()
    k = 0
    cdf = f
    while u > cdf and k < n:
        k += 1
        f *= s * float(n - k + 1) / float(k)
        cdf += f
    return k


def _binomial_btrs(stream, n: int, p: float) -> int:
    # Hormann's transformed-rejection sampler; 0 < p <= 0.5, n*p >= 10.
    # The final accept test uses the exact log pmf ratio via Stirling tails.
    nf = float(n)
    spq = sqrt(nf * p * (1.0 - p))
    b = 1.15 + 2.53 * spq
    a = -0.0873 + 0.0248 * b + 0.01 * p
    c = nf * p + 0.5
    v_r = 0.92 - 4.2 / b
    r = p / (1.0 - p)
    alpha = (2.83 + 5.1 / b) * spq
    m = float(floor((nf + 1.0) * p))
    while True:
        u = stream.next() - 0.5
        v = stream.next()
        us = 0.5 - fabs(u)
        k = float(floor((2.0 * a / us + b) * u + c))
        if us >= 0.07 and v <= v_r:
            return int(k)
        if k < 0.0 or k > nf:
            continue
        v = log(v * alpha / (a / (us * us) + b))
        upper = (
            (m + 0.5) * log((m + 1.0) / (r * (nf - m + 1.0)))
            + (nf + 1.0) * log((nf - m + 1.0) / (nf - k + 1.0))
            + (k + 0.5) * log(r * (nf - k + 1.0) / (k + 1.0))
            + _stirling_tail(m)
            + _stirling_tail(nf - m)
            - _stirling_tail(k)
            - _stirling_tail(nf - k)
        )
        if v <= upper:
            return int(k)


def binomial(stream, n: int, p: float) -> int:
    """Exact Binomial(n, p) draw: CDF inversion for small n*p, BTRS otherwise."""
    n = int(n)
    p = float(p)
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    ps = 1.0 - p if p > 0.5 else p
    if float(n) * ps < 10.0:
        k = _binomial_inversion(stream, n, ps)
    else:
        k = _binomial_btrs(stream, n, ps)
    return n - k if p > 0.5 else k


def inverse_cdf(cum, lo: int, hi: int, u: float) -> int:
    """First index k in [lo, hi) with u < cum[k]; cum[hi - 1] must be 1.0."""
    hi -= 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if u < cum[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def multinomial_split(stream, n: int, probs) -> np.ndarray:
    """Exact multinomial draw via the conditional-binomial chain.

    Category j < K-1 is drawn as Binomial(remaining, p_j / p_remaining); the
    last category receives the remainder, so the components always sum to n.
    """
    K = len(probs)
    out = np.zeros(K, dtype=np.int64)
    remaining = int(n)
    prem = 1.0
    for j in range(K - 1):
        if remaining == 0:
            break
        pj = float(probs[j])
        if pj <= 0.0:
            continue
        if prem <= pj:
            out[j] = remaining
            remaining = 0
        else:
            d = binomial(stream, remaining, pj / prem)
            out[j] = d
            remaining -= d
        prem -= pj
    out[K - 1] = remaining
    return out


class _NativeProto:
    """KernelProtocol arrays converted to plain Python containers."""

    __slots__ = (
        "mode",
        "const_vec",
        "offsets",
        "values",
        "cums",
        "support",
        "table_cums",
        "regime_offsets",
        "hidden_cum",
    )

    def __init__(self, proto):
        self.mode = int(proto.mode)
        self.const_vec = [int(x) for x in proto.const_vec]
        self.offsets = [int(x) for x in proto.offsets]
        self.values = [int(x) for x in proto.values]
        self.cums = [float(x) for x in proto.cums]
        self.support = [[int(x) for x in row] for row in proto.support]
        self.table_cums = [float(x) for x in proto.table_cums]
        self.regime_offsets = [int(x) for x in proto.regime_offsets]
        self.hidden_cum = [[float(x) for x in row] for row in proto.hidden_cum]


def _draw_protocol(stream, np_, J_row: list, hidden: int) -> int:
    mode = np_.mode
    if mode == MODE_CONSTANT:
        J_row[:] = np_.const_vec
        return hidden
    if mode == MODE_IID_PRODUCT:
        for i in range(len(J_row)):
            u = stream.next()
            idx = inverse_cdf(np_.cums, np_.offsets[i], np_.offsets[i + 1], u)
            J_row[i] = np_.values[idx]
        return hidden
    if mode == MODE_JOINT_TABLE:
        u = stream.next()
        idx = inverse_cdf(np_.table_cums, 0, len(np_.table_cums), u)
        J_row[:] = np_.support[idx]
        return hidden
    # MODE_MARKOV_MODULATED: draw from the current regime, then advance it
    u = stream.next()
    idx = inverse_cdf(np_.table_cums, np_.regime_offsets[hidden], np_.regime_offsets[hidden + 1], u)
    J_row[:] = np_.support[idx]
    u = stream.next()
    row = np_.hidden_cum[hidden]
    return inverse_cdf(row, 0, len(row), u)


def _step_native(stream, Qrows, S: int, np_, counts: list, hidden: int, retained=None):
    rnext = [0] * S
    U = [0] * S
    J = [0] * S
    for i in range(S):
        remaining = counts[i]
        if remaining == 0:
            continue
        row = Qrows[i]
        prem = 1.0
        for j in range(S):
            if remaining == 0:
                break
            pj = row[j]
            if pj <= 0.0:
                continue
            if prem <= pj:
                d = remaining
                remaining = 0
            else:
                d = binomial(stream, remaining, pj / prem)
                remaining -= d
            rnext[j] += d
            if retained is not None:
                retained[i][j] = d
            prem -= pj
        U[i] = remaining
    hidden = _draw_protocol(stream, np_, J, hidden)
    nxt = [rnext[j] + J[j] for j in range(S)]
    if max(nxt) > OVERFLOW_LIMIT:
        raise OverflowError("particle count exceeded 2**62")
    return nxt, J, U, hidden


def _q_rows(Q) -> tuple:
    return tuple(tuple(float(x) for x in row) for row in np.asarray(Q, dtype=float))


def step_arrays(stream, Q, e, proto, counts, hidden: int, with_retained: bool = False):
    """One redistribution + inflow step.

    Returns (next_counts, J, U, retained_or_None, hidden) with int64 arrays.
    """
    S = len(counts)
    retained = [[0] * S for _ in range(S)] if with_retained else None
    nxt, J, U, hidden = _step_native(
        stream,
        _q_rows(Q),
        S,
        _NativeProto(proto),
        [int(x) for x in counts],
        hidden,
        retained,
    )
    ret = np.array(retained, dtype=np.int64) if with_retained else None
    return (
        np.array(nxt, dtype=np.int64),
        np.array(J, dtype=np.int64),
        np.array(U, dtype=np.int64),
        ret,
        hidden,
    )


def binomial_seeded(bit_generator, n: int, p: float) -> int:
    return binomial(UniformStream(bit_generator), n, p)


def multinomial_split_seeded(bit_generator, n: int, probs) -> np.ndarray:
    return multinomial_split(UniformStream(bit_generator), n, probs)


def run_chain(bit_generator, Q, e, proto, initial, horizon: int, hidden0: int):
    """Simulate ``horizon`` steps; returns (N, J, U, final_hidden) int64 arrays."""
    stream = UniformStream(bit_generator, buffer_size=8192)
    S = len(initial)
    N_out = np.empty((horizon, S), dtype=np.int64)
    J_out = np.empty((horizon, S), dtype=np.int64)
    U_out = np.empty((horizon, S), dtype=np.int64)
    counts = [int(x) for x in initial]
    hidden = int(hidden0)
    Qrows = _q_rows(Q)
    np_ = _NativeProto(proto)
    for t in range(horizon):
        counts, J, U, hidden = _step_native(stream, Qrows, S, np_, counts, hidden)
        N_out[t] = counts
        J_out[t] = J
        U_out[t] = U
    return N_out, J_out, U_out, hidden
