# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: float64 depthwise convolution for training and a
float32 op-table interpreter for deployment-style inference.

The op-kind codes below must match ``gaitsep._program``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport expf

cnp.import_array()

DEF OP_SEPCONV = 1
DEF OP_CONV1X1 = 2
DEF OP_AFFINE = 3
DEF OP_RELU = 4
DEF OP_MAXPOOL = 5
DEF OP_AVGPOOL = 6
DEF OP_ADD = 7
DEF OP_GAP = 8
DEF OP_DENSE_SOFTMAX = 9
DEF N_COLS = 14

KIND_CODES = {
    "sepconv": OP_SEPCONV,
    "conv1x1": OP_CONV1X1,
    "affine": OP_AFFINE,
    "relu": OP_RELU,
    "maxpool": OP_MAXPOOL,
    "avgpool": OP_AVGPOOL,
    "add": OP_ADD,
    "global_avg_pool": OP_GAP,
    "dense_softmax": OP_DENSE_SOFTMAX,
}


def depthwise_forward(const double[:, :, ::1] xpad, const double[:, ::1] w):
    cdef Py_ssize_t nb = xpad.shape[0], k = w.shape[0], c = w.shape[1]
    cdef Py_ssize_t lpad = xpad.shape[1], length = lpad - k + 1
    out_arr = np.zeros((nb, length, c), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef const double* xp
    cdef const double* wp
    cdef double* op
    cdef Py_ssize_t b, t, j, ch
    if nb == 0 or length <= 0:
        return out_arr
    with nogil:
        for b in range(nb):
            for t in range(length):
                op = &out[b, t, 0]
                for j in range(k):
                    xp = &xpad[b, t + j, 0]
                    wp = &w[j, 0]
                    for ch in range(c):
                        op[ch] += wp[ch] * xp[ch]
    return out_arr


def depthwise_backward(const double[:, :, ::1] xpad, const double[:, ::1] w,
                       const double[:, :, ::1] grad):
    cdef Py_ssize_t nb = xpad.shape[0], k = w.shape[0], c = w.shape[1]
    cdef Py_ssize_t length = grad.shape[1]
    gx_arr = np.zeros((nb, xpad.shape[1], c), dtype=np.float64)
    gw_arr = np.zeros((k, c), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, ::1] gw = gw_arr
    cdef const double* gp
    cdef const double* xp
    cdef const double* wp
    cdef double* gxp
    cdef double* gwp
    cdef Py_ssize_t b, t, j, ch
    if nb == 0 or length <= 0:
        return gx_arr, gw_arr
    with nogil:
        for b in range(nb):
            for t in range(length):
                gp = &grad[b, t, 0]
                for j in range(k):
                    xp = &xpad[b, t + j, 0]
                    wp = &w[j, 0]
                    gxp = &gx[b, t + j, 0]
                    gwp = &gw[j, 0]
                    for ch in range(c):
                        gwp[ch] += gp[ch] * xp[ch]
                        gxp[ch] += gp[ch] * wp[ch]
    return gx_arr, gw_arr


def maxpool_backward(const double[:, :, ::1] x, Py_ssize_t size, const double[:, :, ::1] grad):
    """Send each pooled gradient to the first maximal input of its window."""
    cdef Py_ssize_t nb = x.shape[0], length = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t lo = grad.shape[1]
    gx_arr = np.zeros((nb, length, c), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, t, s, ch, best
    cdef double peak
    with nogil:
        for b in range(nb):
            for t in range(lo):
                for ch in range(c):
                    best = t * size
                    peak = x[b, best, ch]
                    for s in range(1, size):
                        if x[b, t * size + s, ch] > peak:
                            peak = x[b, t * size + s, ch]
                            best = t * size + s
                    gx[b, best, ch] = grad[b, t, ch]
    return gx_arr


cdef void _sepconv(const float* x, float* h, float* y, const float* dw, const float* pw,
                   const float* bias, Py_ssize_t length, Py_ssize_t cin, Py_ssize_t cout,
                   Py_ssize_t k) noexcept nogil:
    # loops keep the channel index innermost so the compiler can vectorize
    cdef Py_ssize_t left = (k - 1) // 2
    cdef Py_ssize_t t, j, c, o, s
    cdef float hv
    cdef float* hrow
    cdef float* yrow
    cdef const float* xrow
    cdef const float* wrow
    for t in range(length):
        hrow = h + t * cin
        for c in range(cin):
            hrow[c] = 0.0
        for j in range(k):
            s = t + j - left
            if s < 0 or s >= length:
                continue
            xrow = x + s * cin
            wrow = dw + j * cin
            for c in range(cin):
                hrow[c] = hrow[c] + wrow[c] * xrow[c]
    for t in range(length):
        yrow = y + t * cout
        for o in range(cout):
            yrow[o] = bias[o] if bias != NULL else 0.0
        for c in range(cin):
            hv = h[t * cin + c]
            wrow = pw + c * cout
            for o in range(cout):
                yrow[o] = yrow[o] + hv * wrow[o]


cdef void _matmul(const float* x, const float* wm, float* y, Py_ssize_t rows,
                  Py_ssize_t cin, Py_ssize_t cout) noexcept nogil:
    cdef Py_ssize_t t, c, o
    cdef float xv
    cdef float* yrow
    cdef const float* wrow
    for t in range(rows):
        yrow = y + t * cout
        for o in range(cout):
            yrow[o] = 0.0
        for c in range(cin):
            xv = x[t * cin + c]
            wrow = wm + c * cout
            for o in range(cout):
                yrow[o] = yrow[o] + xv * wrow[o]


cdef class Engine:
    """Runs a compiled op table on float32 data without allocating."""

    cdef cnp.ndarray _ops
    cdef cnp.ndarray _weights
    cdef Py_ssize_t _n_ops
    cdef Py_ssize_t _out_offset
    cdef Py_ssize_t _n_in
    cdef Py_ssize_t _in_offset

    def __init__(self, ops, weights, out_offset):
        self._ops = np.ascontiguousarray(ops, dtype=np.int64)
        self._weights = np.ascontiguousarray(weights, dtype=np.float32)
        if self._ops.ndim != 2 or self._ops.shape[1] != N_COLS:
            raise ValueError("op table must have shape (n, %d)" % N_COLS)
        self._n_ops = self._ops.shape[0]
        self._out_offset = out_offset
        self._n_in = self._ops[0, 1] * self._ops[0, 2]
        self._in_offset = self._ops[0, 6]

    @property
    def ops(self):
        return self._ops

    @property
    def weights(self):
        return self._weights

    def run(self, cnp.ndarray window, cnp.ndarray arena):
        """Copy ``window`` into ``arena`` and execute; returns p_gait.

        Both arrays must be C-contiguous float32; ``arena`` must be large
        enough for the plan the op table was compiled against.
        """
        if window.dtype != np.float32 or arena.dtype != np.float32:
            raise TypeError("window and arena must be float32")
        if not window.flags.c_contiguous or not arena.flags.c_contiguous:
            raise ValueError("window and arena must be C-contiguous")
        if window.size != self._n_in:
            raise ValueError("window has %d values, expected %d" % (window.size, self._n_in))
        cdef float* a = <float*> cnp.PyArray_DATA(arena)
        cdef const float* src = <const float*> cnp.PyArray_DATA(window)
        cdef const float* wt = <const float*> cnp.PyArray_DATA(self._weights)
        cdef const long long* ops = <const long long*> cnp.PyArray_DATA(self._ops)
        cdef Py_ssize_t i
        with nogil:
            for i in range(self._n_in):
                a[self._in_offset + i] = src[i]
            for i in range(self._n_ops):
                _run_op(ops + i * N_COLS, a, wt)
        return a[self._out_offset + 1]


cdef void _run_op(const long long* row, float* a, const float* wt) noexcept nogil:
    cdef long long kind = row[0]
    cdef Py_ssize_t lin = row[1], cin = row[2], lout = row[3], cout = row[4], k = row[5]
    cdef float* x = a + row[6]
    cdef float* y = a + row[7]
    cdef Py_ssize_t t, c, j, n
    cdef float acc, m, v, total
    cdef const float* bias
    if kind == OP_SEPCONV:
        bias = wt + row[11] if row[11] >= 0 else NULL
        _sepconv(x, a + row[12], y, wt + row[9], wt + row[10], bias, lin, cin, cout, k)
    elif kind == OP_CONV1X1:
        _matmul(x, wt + row[9], y, lin, cin, cout)
    elif kind == OP_AFFINE:
        for t in range(lin):
            for c in range(cin):
                y[t * cin + c] = x[t * cin + c] * wt[row[9] + c] + wt[row[10] + c]
    elif kind == OP_RELU:
        n = lin * cin
        for t in range(n):
            v = x[t]
            y[t] = v if v > 0.0 else 0.0
    elif kind == OP_MAXPOOL:
        for t in range(lout):
            for c in range(cin):
                m = x[(t * k) * cin + c]
                for j in range(1, k):
                    v = x[(t * k + j) * cin + c]
                    if v > m:
                        m = v
                y[t * cin + c] = m
    elif kind == OP_AVGPOOL:
        for t in range(lout):
            for c in range(cin):
                acc = 0.0
                for j in range(k):
                    acc = acc + x[(t * k + j) * cin + c]
                y[t * cin + c] = acc / k
    elif kind == OP_ADD:
        n = lin * cin
        for t in range(n):
            y[t] = x[t] + a[row[8] + t]
    elif kind == OP_GAP:
        for c in range(cin):
            acc = 0.0
            for t in range(lin):
                acc = acc + x[t * cin + c]
            y[c] = acc / lin
    elif kind == OP_DENSE_SOFTMAX:
        _matmul(x, wt + row[9], y, 1, cin, cout)
        m = y[0] + wt[row[11]]
        for c in range(cout):
            y[c] = y[c] + wt[row[11] + c]
            if y[c] > m:
                m = y[c]
        total = 0.0
        for c in range(cout):
            y[c] = expf(y[c] - m)
            total = total + y[c]
        for c in range(cout):
            y[c] = y[c] / total
