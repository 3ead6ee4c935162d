"""Small from-scratch model families with hand-written backpropagation.

Families
--------
logistic  : flatten -> affine
mlp       : flatten -> affine -> ReLU -> affine
smallconv : conv3x3 -> ReLU -> 2x2 mean-pool -> conv3x3 -> ReLU -> global mean-pool -> affine

Every model stores its weights in one flat ``float64`` vector; ``Parameters``
maps layer names to slices of it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError
from ..numerics import RngStream

FAMILIES = ("logistic", "mlp", "smallconv")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    input_shape: tuple
    num_classes: int  # output width; denoisers reuse it for the noise dimension
    hidden: int = 128
    conv_channels: tuple = (8, 16)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.family not in FAMILIES:
            raise ContractError(f"unknown model family {self.family!r}")
        if self.num_classes < 2:
            raise ContractError("num_classes must be >= 2")
        if self.hidden < 1 or min(self.conv_channels) < 1:
            raise ContractError("layer widths must be >= 1")
        if self.family == "smallconv" and len(self.input_shape) != 3:
            raise ContractError("smallconv needs a (C, H, W) input shape")

    @property
    def input_dim(self) -> int:
        return prod(self.input_shape)

    def layers(self) -> list[tuple[str, tuple, int]]:
        """(name, shape, fan_in) for every parameter tensor, in storage order."""
        d, k = self.input_dim, self.num_classes
        if self.family == "logistic":
            return [("W", (d, k), d), ("b", (k,), d)]
        if self.family == "mlp":
            h = self.hidden
            return [("W1", (d, h), d), ("b1", (h,), d), ("W2", (h, k), h), ("b2", (k,), h)]
        c = self.input_shape[0]
        c1, c2 = self.conv_channels
        return [
            ("K1", (c1, c, 3, 3), c * 9), ("b1", (c1,), c * 9),
            ("K2", (c2, c1, 3, 3), c1 * 9), ("b2", (c2,), c1 * 9),
            ("W", (c2, k), c2), ("b", (k,), c2),
        ]

    def num_params(self) -> int:
        return sum(prod(shape) for _, shape, _ in self.layers())

    def describe(self) -> dict:
        out = {"family": self.family, "input_shape": list(self.input_shape),
               "num_classes": self.num_classes}
        if self.family == "mlp":
            out["hidden"] = self.hidden
        if self.family == "smallconv":
            out["conv_channels"] = list(self.conv_channels)
        return out


@dataclass
class Parameters:
    vector: np.ndarray
    layout: dict = field(default_factory=dict)  # name -> (slice, shape)

    def __getitem__(self, name) -> np.ndarray:
        sl, shape = self.layout[name]
        return self.vector[sl].reshape(shape)

    def copy(self) -> "Parameters":
        return Parameters(self.vector.copy(), dict(self.layout))

    def with_vector(self, vector) -> "Parameters":
        return Parameters(np.asarray(vector, dtype=np.float64), self.layout)


def param_layout(spec: ModelSpec) -> dict:
    layout, off = {}, 0
    for name, shape, _ in spec.layers():
        n = prod(shape)
        layout[name] = (slice(off, off + n), shape)
        off += n
    return layout


def init_params(spec: ModelSpec, rng: RngStream) -> Parameters:
    """Weights uniform in +-sqrt(6/fan_in); biases zero."""
    chunks = []
    for name, shape, fan_in in spec.layers():
        if name.startswith("b"):
            chunks.append(np.zeros(prod(shape)))
        else:
            bound = np.sqrt(6.0 / fan_in)
            chunks.append(rng.uniform(-bound, bound, prod(shape)))
    return Parameters(np.concatenate(chunks), param_layout(spec))


def zero_params(spec: ModelSpec) -> Parameters:
    return Parameters(np.zeros(spec.num_params()), param_layout(spec))


# ---------------------------------------------------------------------------
# convolution helpers

def _im2col3(x: np.ndarray) -> np.ndarray:
    # (B, C, H, W) -> (B*H*W, C*9) for a 3x3 kernel with zero pad 1
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # B, C, H, W, 3, 3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * 9)


def _col2im3(cols: np.ndarray, shape) -> np.ndarray:
    b, c, h, w = shape
    cols = cols.reshape(b, h, w, c, 3, 3).transpose(0, 3, 1, 2, 4, 5)
    dxp = np.zeros((b, c, h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + w] += cols[..., i, j]
    return dxp[:, :, 1:-1, 1:-1]


def _conv3(x, kernel, bias):
    b, _, h, w = x.shape
    cols = _im2col3(x)
    out = cols @ kernel.reshape(kernel.shape[0], -1).T + bias
    return out.reshape(b, h, w, -1).transpose(0, 3, 1, 2), cols


def _conv3_backward(dout, cols, kernel, x_shape):
    co = kernel.shape[0]
    dflat = dout.transpose(0, 2, 3, 1).reshape(-1, co)
    dk = (dflat.T @ cols).reshape(kernel.shape)
    db = dflat.sum(axis=0)
    dcols = dflat @ kernel.reshape(co, -1)
    return _col2im3(dcols, x_shape), dk, db


def _pool2(x):
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    return x[:, :, :2 * h2, :2 * w2].reshape(b, c, h2, 2, w2, 2).mean(axis=(3, 5))


def _pool2_backward(dout, in_shape):
    b, c, h, w = in_shape
    h2, w2 = dout.shape[-2:]
    dx = np.zeros(in_shape)
    up = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) / 4.0
    dx[:, :, :2 * h2, :2 * w2] = up
    return dx


# ---------------------------------------------------------------------------
# forward / backward

def _check_batch(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != spec.input_shape:
        if x.ndim >= 2 and prod(x.shape[1:]) == spec.input_dim and spec.family != "smallconv":
            return x.reshape(x.shape[0], -1)
        raise ContractError(f"batch shape {x.shape[1:]} does not match model input {spec.input_shape}")
    return x


def forward_cache(spec: ModelSpec, params: Parameters, x):
    """Logits plus the activations needed by :func:`backward`."""
    x = _check_batch(spec, x)
    n = x.shape[0]
    if spec.family == "logistic":
        flat = x.reshape(n, -1)
        return flat @ params["W"] + params["b"], {"x": flat, "shape": x.shape}
    if spec.family == "mlp":
        flat = x.reshape(n, -1)
        pre = flat @ params["W1"] + params["b1"]
        hid = np.maximum(pre, 0.0)
        return hid @ params["W2"] + params["b2"], {"x": flat, "pre": pre, "hid": hid, "shape": x.shape}
    a1, cols1 = _conv3(x, params["K1"], params["b1"])
    r1 = np.maximum(a1, 0.0)
    p1 = _pool2(r1)
    a2, cols2 = _conv3(p1, params["K2"], params["b2"])
    r2 = np.maximum(a2, 0.0)
    feat = r2.mean(axis=(2, 3))
    logits = feat @ params["W"] + params["b"]
    cache = {"shape": x.shape, "cols1": cols1, "a1": a1, "p1": p1, "cols2": cols2, "a2": a2, "feat": feat}
    return logits, cache


def forward(spec: ModelSpec, params: Parameters, x) -> np.ndarray:
    return forward_cache(spec, params, x)[0]


def backward(spec: ModelSpec, params: Parameters, cache: dict, dlogits, need_input: bool = False):
    """Gradient of a scalar loss w.r.t. the flat parameters (and optionally the input)."""
    g = np.zeros_like(params.vector)

    def put(name, value):
        g[params.layout[name][0]] = value.ravel()

    dx = None
    if spec.family == "logistic":
        put("W", cache["x"].T @ dlogits)
        put("b", dlogits.sum(axis=0))
        if need_input:
            dx = (dlogits @ params["W"].T).reshape(cache["shape"])
        return g, dx
    if spec.family == "mlp":
        put("W2", cache["hid"].T @ dlogits)
        put("b2", dlogits.sum(axis=0))
        dpre = (dlogits @ params["W2"].T) * (cache["pre"] > 0)
        put("W1", cache["x"].T @ dpre)
        put("b1", dpre.sum(axis=0))
        if need_input:
            dx = (dpre @ params["W1"].T).reshape(cache["shape"])
        return g, dx
    put("W", cache["feat"].T @ dlogits)
    put("b", dlogits.sum(axis=0))
    a2 = cache["a2"]
    dfeat = dlogits @ params["W"].T
    da2 = (dfeat[:, :, None, None] / (a2.shape[2] * a2.shape[3])) * (a2 > 0)
    dp1, dk2, db2 = _conv3_backward(da2, cache["cols2"], params["K2"], cache["p1"].shape)
    put("K2", dk2)
    put("b2", db2)
    a1 = cache["a1"]
    da1 = _pool2_backward(dp1, a1.shape) * (a1 > 0)
    dx0, dk1, db1 = _conv3_backward(da1, cache["cols1"], params["K1"], cache["shape"])
    put("K1", dk1)
    put("b1", db1)
    return g, (dx0 if need_input else None)


def extract_features(spec: ModelSpec, params: Parameters, x) -> np.ndarray:
    """Penultimate activations: the hidden layer (mlp) or pooled conv features (smallconv).

    Accepts a single example or a batch; returns ``(d,)`` or ``(n, d)``.
    """
    if spec.family == "logistic":
        raise ContractError("logistic models have no penultimate layer")
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == spec.input_shape
    if single:
        x = x[None]
    _, cache = forward_cache(spec, params, x)
    feats = cache["hid"] if spec.family == "mlp" else cache["feat"]
    return feats[0] if single else feats
