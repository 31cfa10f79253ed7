"""Layers with hand-written forward and backward passes.

Activations use a channel-major batch layout ``(C, N, T, H, W)`` so that the
im2col matrix of a convolution is ``(C_in * 27, N * T_out * H_out * W_out)``
and the forward pass is a single ``weight @ cols`` product whose result is
already in layout for the next layer.
"""
from __future__ import annotations

import numpy as np


class Layer:
    """Base class. Parameter layers expose ``params`` and ``grads`` dicts."""

    params: dict[str, np.ndarray] = {}
    grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, need_dx: bool = True) -> np.ndarray | None:
        raise NotImplementedError


def _out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


class Conv3d(Layer):
    """3-D convolution with zero padding ``kernel // 2`` and per-axis stride."""

    def __init__(self, cin: int, cout: int, kernel=(3, 3, 3), stride=(1, 1, 1),
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.cin, self.cout = cin, cout
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.pad = tuple(k // 2 for k in self.kernel)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = cin * int(np.prod(self.kernel))
        bound = np.sqrt(6.0 / fan_in)
        self.params = {
            "weight": rng.uniform(-bound, bound, (cout, cin) + self.kernel).astype(dtype),
            "bias": np.zeros(cout, dtype=dtype),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cache = None

    def output_shape(self, t: int, h: int, w: int) -> tuple[int, int, int]:
        return tuple(_out_size(n, k, s, p) for n, k, s, p
                     in zip((t, h, w), self.kernel, self.stride, self.pad))

    def _geometry(self, x_shape):
        C, N, T, H, W = x_shape
        out = self.output_shape(T, H, W)
        # padded length per axis, rounded up to a multiple of the stride
        blocks = tuple(-(-max(n + 2 * p, k + s * (o - 1)) // s)
                       for n, p, k, s, o in zip((T, H, W), self.pad, self.kernel, self.stride, out))
        return out, blocks

    def _im2col(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        C, N, T, H, W = x.shape
        (To, Ho, Wo), (Bt, Bh, Bw) = self._geometry(x.shape)
        pt, ph, pw = self.pad
        st, sh, sw = self.stride
        kt, kh, kw = self.kernel
        buf = np.zeros((C, N, Bt * st, Bh * sh, Bw * sw), dtype=x.dtype)
        buf[:, :, pt:pt + T, ph:ph + H, pw:pw + W] = x
        # split strided axes into (phase, block) so every kernel offset is a
        # contiguous block slice of one phase
        xq = buf.reshape(C, N, Bt, st, Bh, sh, Bw, sw).transpose(3, 5, 7, 0, 1, 2, 4, 6)
        if st * sh * sw > 1:
            xq = np.ascontiguousarray(xq)
        cols = np.empty((kt, kh, kw, C, N, To, Ho, Wo), dtype=x.dtype)
        for a in range(kt):
            for b in range(kh):
                for c in range(kw):
                    qa, qb, qc = a // st, b // sh, c // sw
                    cols[a, b, c] = xq[a % st, b % sh, c % sw, :, :,
                                       qa:qa + To, qb:qb + Ho, qc:qc + Wo]
        return cols.reshape(kt * kh * kw * C, N * To * Ho * Wo), (To, Ho, Wo)

    def _col2im(self, dcols: np.ndarray, x_shape: tuple, out_thw: tuple) -> np.ndarray:
        C, N, T, H, W = x_shape
        (To, Ho, Wo), (Bt, Bh, Bw) = self._geometry(x_shape)
        pt, ph, pw = self.pad
        st, sh, sw = self.stride
        kt, kh, kw = self.kernel
        dcols = dcols.reshape(kt, kh, kw, C, N, To, Ho, Wo)
        dxq = np.zeros((st, sh, sw, C, N, Bt, Bh, Bw), dtype=dcols.dtype)
        for a in range(kt):
            for b in range(kh):
                for c in range(kw):
                    qa, qb, qc = a // st, b // sh, c // sw
                    dxq[a % st, b % sh, c % sw, :, :,
                        qa:qa + To, qb:qb + Ho, qc:qc + Wo] += dcols[a, b, c]
        dbuf = dxq.transpose(3, 4, 5, 0, 6, 1, 7, 2).reshape(C, N, Bt * st, Bh * sh, Bw * sw)
        return np.ascontiguousarray(dbuf[:, :, pt:pt + T, ph:ph + H, pw:pw + W])

    def _weight_matrix(self) -> np.ndarray:
        # (cout, kt, kh, kw, cin) flattened to match the im2col row order
        return self.params["weight"].transpose(0, 2, 3, 4, 1).reshape(self.cout, -1)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 5 or x.shape[0] != self.cin:
            raise ValueError(f"expected ({self.cin}, N, T, H, W) input, got {x.shape}")
        cols, out_thw = self._im2col(x)
        w2 = self._weight_matrix()
        y = w2 @ cols
        y += self.params["bias"][:, None]
        self._cache = (cols, x.shape, out_thw)
        return y.reshape((self.cout, x.shape[1]) + out_thw)

    def backward(self, dy: np.ndarray, need_dx: bool = True) -> np.ndarray | None:
        cols, x_shape, out_thw = self._cache
        dy2 = dy.reshape(self.cout, -1)
        gw = dy2 @ cols.T
        kt, kh, kw = self.kernel
        self.grads["weight"] += gw.reshape(self.cout, kt, kh, kw, self.cin).transpose(0, 4, 1, 2, 3)
        self.grads["bias"] += dy2.sum(axis=1, dtype=np.float64).astype(dy2.dtype)
        if not need_dx:
            return None
        dcols = self._weight_matrix().T @ dy2
        return self._col2im(dcols, x_shape, out_thw)


class ReLU(Layer):
    def __init__(self):
        self.params, self.grads = {}, {}
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy, need_dx=True):
        return np.where(self._mask, dy, 0).astype(dy.dtype, copy=False)


class GlobalAvgPool3d(Layer):
    """``(C, N, T, H, W) -> (N, C)`` spatio-temporal mean."""

    def __init__(self):
        self.params, self.grads = {}, {}
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3, 4), dtype=np.float64).astype(x.dtype).T.copy()

    def backward(self, dy, need_dx=True):
        C, N, T, H, W = self._shape
        scale = 1.0 / (T * H * W)
        g = (dy.T * scale).astype(dy.dtype)
        return np.broadcast_to(g[:, :, None, None, None], self._shape).copy()


class Linear(Layer):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = np.sqrt(6.0 / fin)
        self.params = {
            "weight": rng.uniform(-bound, bound, (fout, fin)).astype(dtype),
            "bias": np.zeros(fout, dtype=dtype),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dy, need_dx=True):
        self.grads["weight"] += dy.T @ self._x
        self.grads["bias"] += dy.sum(axis=0, dtype=np.float64).astype(dy.dtype)
        if not need_dx:
            return None
        return dy @ self.params["weight"]
