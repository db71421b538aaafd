"""Pure-numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or disabled with
``GAITSEP_PURE_PYTHON=1``. Signatures mirror ``_ckernels`` exactly.
"""

import numpy as np

from gaitsep import _program as P


def depthwise_forward(xpad, w):
    """out[b, t, c] = sum_j w[j, c] * xpad[b, t + j, c] for a pre-padded input."""
    k = w.shape[0]
    length = xpad.shape[1] - k + 1
    out = xpad[:, 0:length, :] * w[0]
    for j in range(1, k):
        out += xpad[:, j : j + length, :] * w[j]
    return out


def depthwise_backward(xpad, w, grad):
    k = w.shape[0]
    length = grad.shape[1]
    gxpad = np.zeros_like(xpad)
    gw = np.empty_like(w)
    g2 = grad.reshape(-1, grad.shape[2])
    for j in range(k):
        window = xpad[:, j : j + length, :]
        gw[j] = np.einsum("nc,nc->c", window.reshape(-1, window.shape[2]), g2)
        gxpad[:, j : j + length, :] += grad * w[j]
    return gxpad, gw


def maxpool_backward(x, size, grad):
    """Send each pooled gradient to the first maximal input of its window."""
    nb, length, c = x.shape
    lo = grad.shape[1]
    blocks = x[:, : lo * size].reshape(nb, lo, size, c)
    peak = blocks.max(axis=2)
    taken = np.zeros(peak.shape, dtype=bool)
    gx = np.zeros_like(x)
    gblocks = gx[:, : lo * size].reshape(nb, lo, size, c)
    for s in range(size):  # earlier positions win ties
        hit = (blocks[:, :, s, :] == peak) & ~taken
        gblocks[:, :, s, :] = np.where(hit, grad, 0.0)
        taken |= hit
    return gx


class Engine:
    """Interprets an op table with numpy, writing only into caller-owned arenas.

    A program is bound once per arena; the bound steps hold views into the
    arena and the weight vector so a steady-state run allocates no buffers.
    """

    def __init__(self, ops, weights, out_offset):
        self.ops = np.ascontiguousarray(ops, dtype=np.int64)
        self.weights = np.ascontiguousarray(weights)
        self.out_offset = int(out_offset)
        self._bound = {}

    def run(self, window, arena):
        steps = self._bound.get(id(arena))
        if steps is None or steps[0] is not arena:
            steps = (arena, self._bind(arena))
            self._bound[id(arena)] = steps
        first = self.ops[0]
        n_in = int(first[P.L_IN] * first[P.C_IN])
        inp = steps[1][0]
        np.copyto(inp, window.reshape(n_in))
        for step in steps[1][1:]:
            step()
        return float(arena[self.out_offset + 1])

    def _bind(self, arena):
        w = self.weights
        first = self.ops[0]
        n_in = int(first[P.L_IN] * first[P.C_IN])
        steps = [arena[int(first[P.IN]) : int(first[P.IN]) + n_in]]

        def view(buf, off, *shape):
            n = 1
            for s in shape:
                n *= s
            return buf[off : off + n].reshape(shape)

        for row in self.ops:
            kind = int(row[P.KIND])
            lin, cin, lout, cout, k = (int(row[i]) for i in (P.L_IN, P.C_IN, P.L_OUT, P.C_OUT, P.K))
            x = view(arena, int(row[P.IN]), lin, cin)
            y = view(arena, int(row[P.OUT]), lout, cout)
            if kind == P.OP_SEPCONV:
                left = (k - 1) // 2
                dw = view(w, int(row[P.W]), k, cin)
                pw = view(w, int(row[P.W2]), cin, cout)
                h = view(arena, int(row[P.SCR1]), lin, cin)
                pad = view(arena, int(row[P.SCR2]), lin + k - 1, cin)
                tmp = view(arena, int(row[P.SCR2]) + (lin + k - 1) * cin, lin, cin)
                bias = view(w, int(row[P.B]), cout) if row[P.B] >= 0 else None
                steps.append(_sepconv_step(x, pad, h, tmp, dw, pw, bias, y, left, lin, k))
            elif kind == P.OP_CONV1X1:
                wm = view(w, int(row[P.W]), cin, cout)
                steps.append(_bind_call(np.matmul, x, wm, y))
            elif kind == P.OP_AFFINE:
                scale = view(w, int(row[P.W]), cout)
                shift = view(w, int(row[P.W2]), cout)
                steps.append(_bind_call(np.multiply, x, scale, y))
                steps.append(_bind_call(np.add, y, shift, y))
            elif kind == P.OP_RELU:
                steps.append(_bind_call(np.maximum, x, 0.0, y))
            elif kind == P.OP_MAXPOOL:
                xr = x[: lout * k].reshape(lout, k, cin)
                steps.append(_bind_reduce(np.max, xr, y))
            elif kind == P.OP_AVGPOOL:
                xr = x[: lout * k].reshape(lout, k, cin)
                steps.append(_bind_reduce(np.mean, xr, y))
            elif kind == P.OP_ADD:
                skip = view(arena, int(row[P.AUX]), lin, cin)
                steps.append(_bind_call(np.add, x, skip, y))
            elif kind == P.OP_GAP:
                yv = view(arena, int(row[P.OUT]), cout)
                steps.append(_bind_gap(x, yv))
            elif kind == P.OP_DENSE_SOFTMAX:
                xv = view(arena, int(row[P.IN]), cin)
                yv = view(arena, int(row[P.OUT]), cout)
                wm = view(w, int(row[P.W]), cin, cout)
                bias = view(w, int(row[P.B]), cout)
                steps.append(_dense_softmax_step(xv, wm, bias, yv))
            else:
                raise ValueError(f"unknown op kind {kind}")
        return steps


def _bind_call(fn, a, b, out):
    def step():
        fn(a, b, out=out)

    return step


def _bind_reduce(fn, xr, out):
    def step():
        fn(xr, axis=1, out=out)

    return step


def _bind_gap(x, out):
    def step():
        np.mean(x, axis=0, out=out)

    return step


def _sepconv_step(x, pad, h, tmp, dw, pw, bias, y, left, length, k):
    pad[:left] = 0.0
    pad[left + length :] = 0.0
    interior = pad[left : left + length]
    taps = [pad[j : j + length] for j in range(k)]
    rows = [dw[j] for j in range(k)]

    def step():
        pad[:left] = 0.0
        pad[left + length :] = 0.0
        np.copyto(interior, x)
        np.multiply(taps[0], rows[0], out=h)
        for j in range(1, k):
            np.multiply(taps[j], rows[j], out=tmp)
            np.add(h, tmp, out=h)
        np.matmul(h, pw, out=y)
        if bias is not None:
            np.add(y, bias, out=y)

    return step


def _dense_softmax_step(x, wm, bias, y):
    def step():
        np.matmul(x, wm, out=y)
        np.add(y, bias, out=y)
        np.subtract(y, y.max(), out=y)
        np.exp(y, out=y)
        np.divide(y, y.sum(), out=y)

    return step
