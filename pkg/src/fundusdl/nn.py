"""Differentiable layer operations.

Every op takes and returns Tensors, works on a single sample or on a
leading batch axis (rank 3 = one HWC feature map, rank 4 = NHWC batch),
and registers its backward closure on the output. Convolution and pooling
dispatch to the selected kernel backend (compiled or numpy).
"""

import numpy as np

from . import kernels as K
from .errors import ConfigError, DimensionError
from .tensor import Tensor

BCE_EPS = 1e-7


class LayerParams:
    """Weights + bias of one parametric layer, with a trainability flag.

    Setting trainable=False also clears requires_grad on both tensors, so a
    frozen layer receives no gradients and optimizer steps skip it.
    """

    def __init__(self, weights, bias, trainable=True):
        self.weights = weights if isinstance(weights, Tensor) else Tensor(weights)
        self.bias = bias if isinstance(bias, Tensor) else Tensor(bias)
        self._trainable = bool(trainable)
        self._sync()

    def _sync(self):
        self.weights.requires_grad = self._trainable
        self.bias.requires_grad = self._trainable

    @property
    def trainable(self):
        return self._trainable

    @trainable.setter
    def trainable(self, value):
        self._trainable = bool(value)
        self._sync()

    def tensors(self):
        return [self.weights, self.bias]

    def zero_grad(self):
        for t in self.tensors():
            t.zero_grad()


class BatchNormState(LayerParams):
    """Batch normalization state: learnable gamma/beta plus running stats."""

    def __init__(self, gamma, beta, moving_mean=None, moving_var=None, trainable=True):
        super().__init__(gamma, beta, trainable)
        c = self.weights.data.shape[0]
        dt = self.weights.data.dtype
        self.moving_mean = (
            np.zeros(c, dtype=dt) if moving_mean is None else np.asarray(moving_mean, dtype=dt)
        )
        self.moving_var = (
            np.ones(c, dtype=dt) if moving_var is None else np.asarray(moving_var, dtype=dt)
        )

    @property
    def gamma(self):
        return self.weights

    @property
    def beta(self):
        return self.bias


# ---------------------------------------------------------------------------
# shape helpers


def _as_batch(x, rank):
    """Promote a single sample to a batch of one. Returns (array, was_single)."""
    if x.data.ndim == rank:
        return x.data[None], True
    if x.data.ndim == rank + 1:
        return x.data, False
    raise DimensionError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def _resolve_padding(h, w, kh, kw, sh, sw, padding):
    """Return (pt, pb, pl, pr) for 'same', 'valid', or an explicit amount."""
    if padding == "valid":
        return (0, 0, 0, 0)
    if padding == "same":
        oh = -(-h // sh)
        ow = -(-w // sw)
        th = max((oh - 1) * sh + kh - h, 0)
        tw = max((ow - 1) * sw + kw - w, 0)
        # odd totals put the extra pixel on the bottom/right
        return (th // 2, th - th // 2, tw // 2, tw - tw // 2)
    if isinstance(padding, int):
        padding = (padding, padding)
    if isinstance(padding, (tuple, list)) and len(padding) == 2:
        ph, pw = int(padding[0]), int(padding[1])
        if ph < 0 or pw < 0:
            raise ConfigError(f"padding must be >= 0, got {padding}")
        return (ph, ph, pw, pw)
    raise ConfigError(f"unknown padding spec: {padding!r}")


# ---------------------------------------------------------------------------
# layer ops


def conv2d(x, params, stride=(1, 1), padding="same"):
    """2-D convolution (cross-correlation) with per-filter bias.

    x: [H,W,Cin] or [N,H,W,Cin]; params.weights: [kh,kw,Cin,Cout].
    """
    if isinstance(stride, int):
        stride = (stride, stride)
    sh, sw = int(stride[0]), int(stride[1])
    if sh < 1 or sw < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")

    w, b = params.weights, params.bias
    kh, kw, cin, cout = w.data.shape
    xb, single = _as_batch(x, 3)
    if xb.shape[3] != cin:
        raise DimensionError(
            f"conv2d channel mismatch: input shape {tuple(xb.shape[1:])} "
            f"vs kernel shape {tuple(w.data.shape)}"
        )
    pads = _resolve_padding(xb.shape[1], xb.shape[2], kh, kw, sh, sw, padding)
    if xb.shape[1] + pads[0] + pads[1] < kh or xb.shape[2] + pads[2] + pads[3] < kw:
        raise DimensionError(
            f"kernel {kh}x{kw} does not fit input {xb.shape[1]}x{xb.shape[2]} "
            f"after padding {pads}"
        )

    # kernels need one dtype across operands
    ct = np.result_type(xb.dtype, w.data.dtype, b.data.dtype)
    xb = np.ascontiguousarray(xb, dtype=ct)
    wd = np.ascontiguousarray(w.data, dtype=ct)
    bd = np.ascontiguousarray(b.data, dtype=ct)
    y = K.conv2d_forward(xb, wd, bd, (sh, sw), pads)

    def _backward(dy):
        dyb = dy if not single else dy[None]
        dx, dw, db = K.conv2d_backward(
            xb, wd, (sh, sw), pads, np.ascontiguousarray(dyb, dtype=ct),
            need_dx=x.requires_grad, need_dw=w.requires_grad,
        )
        if x.requires_grad:
            x.accumulate_grad(dx[0] if single else dx)
        if w.requires_grad:
            w.accumulate_grad(dw)
        if b.requires_grad:
            b.accumulate_grad(db)

    return Tensor.from_op(y[0] if single else y, (x, w, b), _backward, "conv2d")


def maxpool2d(x, pool=(2, 2), stride=None):
    """Max pooling; stride defaults to the pool size (non-overlapping)."""
    if isinstance(pool, int):
        pool = (pool, pool)
    ph, pw = int(pool[0]), int(pool[1])
    if ph < 1 or pw < 1:
        raise ConfigError(f"pool dims must be >= 1, got {pool}")
    if stride is None:
        stride = (ph, pw)
    elif isinstance(stride, int):
        stride = (stride, stride)
    sh, sw = int(stride[0]), int(stride[1])

    xb, single = _as_batch(x, 3)
    if ph > xb.shape[1] or pw > xb.shape[2]:
        raise DimensionError(
            f"pool {ph}x{pw} larger than input {xb.shape[1]}x{xb.shape[2]}"
        )

    y, arg = K.maxpool2d_forward(xb, (ph, pw), (sh, sw))

    def _backward(dy):
        dyb = dy if not single else dy[None]
        dx = K.maxpool2d_backward(
            xb.shape, arg, (ph, pw), (sh, sw), np.ascontiguousarray(dyb, dtype=xb.dtype)
        )
        x.accumulate_grad(dx[0] if single else dx)

    return Tensor.from_op(y[0] if single else y, (x,), _backward, "maxpool2d")


def zero_pad2d(x, pad=(1, 1)):
    """Pad the spatial borders with zeros; pad=(ph, pw) on each side."""
    if isinstance(pad, int):
        pad = (pad, pad)
    ph, pw = int(pad[0]), int(pad[1])
    if ph < 0 or pw < 0:
        raise ConfigError(f"pad must be >= 0, got {pad}")

    xb, single = _as_batch(x, 3)
    y = np.pad(xb, ((0, 0), (ph, ph), (pw, pw), (0, 0)))

    def _backward(dy):
        dyb = dy if not single else dy[None]
        h, w = xb.shape[1], xb.shape[2]
        dx = dyb[:, ph : ph + h, pw : pw + w, :]
        x.accumulate_grad(dx[0] if single else dx)

    return Tensor.from_op(y[0] if single else y, (x,), _backward, "zero_pad2d")


def dense(x, params):
    """Fully connected layer: out = x . W + b with W of shape [in, out]."""
    w, b = params.weights, params.bias
    if w.data.ndim != 2:
        raise DimensionError(f"dense weights must be rank 2, got shape {w.data.shape}")
    xb, single = _as_batch(x, 1)
    if xb.shape[1] != w.data.shape[0]:
        raise DimensionError(
            f"dense shape mismatch: input {tuple(xb.shape)} vs weights {tuple(w.data.shape)}"
        )
    y = xb @ w.data + b.data

    def _backward(dy):
        dyb = dy if not single else dy[None]
        if x.requires_grad:
            x.accumulate_grad((dyb @ w.data.T)[0] if single else dyb @ w.data.T)
        if w.requires_grad:
            w.accumulate_grad(xb.T @ dyb)
        if b.requires_grad:
            b.accumulate_grad(dyb.sum(axis=0))

    return Tensor.from_op(y[0] if single else y, (x, w, b), _backward, "dense")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activation(x, kind):
    """Elementwise nonlinearity: relu, tanh, or sigmoid."""
    if kind == "relu":
        y = np.maximum(x.data, 0)

        def _backward(dy):
            x.accumulate_grad(dy * (x.data > 0))

    elif kind == "tanh":
        y = np.tanh(x.data)

        def _backward(dy):
            x.accumulate_grad(dy * (1.0 - y * y))

    elif kind == "sigmoid":
        y = _sigmoid(x.data)

        def _backward(dy):
            x.accumulate_grad(dy * y * (1.0 - y))

    else:
        raise ConfigError(f"unknown activation kind: {kind!r}")
    return Tensor.from_op(y, (x,), _backward, f"activation:{kind}")


def batchnorm(x, state, mode="train", momentum=0.99, epsilon=1e-3):
    """Per-channel batch normalization over all non-channel axes.

    Train mode normalizes with batch statistics and updates the running
    mean/var in `state` via `running = momentum*running + (1-momentum)*batch`;
    infer mode uses the running stats.
    """
    gamma, beta = state.gamma, state.beta
    c = gamma.data.shape[0]
    if x.data.shape[-1] != c:
        raise DimensionError(
            f"batchnorm channel mismatch: input {x.shape} vs {c} channels of state"
        )
    axes = tuple(range(x.data.ndim - 1))
    xd = x.data

    if mode == "train":
        if xd.size == 0:
            raise DimensionError("batchnorm train mode needs a non-empty batch")
        m = xd.mean(axis=axes)
        v = xd.var(axis=axes)
        state.moving_mean = (momentum * state.moving_mean + (1.0 - momentum) * m).astype(
            state.moving_mean.dtype
        )
        state.moving_var = (momentum * state.moving_var + (1.0 - momentum) * v).astype(
            state.moving_var.dtype
        )
    elif mode == "infer":
        m = state.moving_mean
        v = state.moving_var
    else:
        raise ConfigError(f"unknown batchnorm mode: {mode!r}")

    ivar = 1.0 / np.sqrt(v + epsilon)
    xhat = (xd - m) * ivar
    y = (gamma.data * xhat + beta.data).astype(xd.dtype, copy=False)

    n = xd.size // c

    def _backward(dy):
        if gamma.requires_grad:
            gamma.accumulate_grad((dy * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate_grad(dy.sum(axis=axes))
        if not x.requires_grad:
            return
        dxhat = dy * gamma.data
        if mode == "infer":
            x.accumulate_grad(dxhat * ivar)
            return
        dvar = (dxhat * (xd - m)).sum(axis=axes) * (-0.5) * ivar**3
        dmean = (dxhat * -ivar).sum(axis=axes)
        dx = dxhat * ivar + (dvar * 2.0 * (xd - m) + dmean) / n
        x.accumulate_grad(dx)

    return Tensor.from_op(y, (x, gamma, beta), _backward, "batchnorm")


def dropout(x, rate, mode="train", rng=None):
    """Inverted dropout: train mode zeroes units with probability `rate` and
    scales survivors by 1/(1-rate); infer mode is the identity."""
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x
    if mode != "train":
        raise ConfigError(f"unknown dropout mode: {mode!r}")
    if rng is None:
        raise ConfigError("dropout in train mode needs a seeded rng")

    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    scale = x.data.dtype.type(1.0 / (1.0 - rate))
    y = x.data * keep * scale

    def _backward(dy):
        x.accumulate_grad(dy * keep * scale)

    return Tensor.from_op(y, (x,), _backward, "dropout")


def reshape(x, new_shape):
    """Reshape preserving row-major order; element count must match."""
    new_shape = tuple(int(d) for d in (new_shape if hasattr(new_shape, "__len__") else (new_shape,)))
    if int(np.prod(new_shape)) != x.data.size:
        raise DimensionError(f"cannot reshape {x.shape} ({x.data.size} elems) to {new_shape}")
    y = x.data.reshape(new_shape)

    def _backward(dy):
        x.accumulate_grad(dy.reshape(x.data.shape))

    return Tensor.from_op(y, (x,), _backward, "reshape")


def flatten(x):
    """Collapse to a vector; a rank-4 batch keeps its leading axis."""
    if x.data.ndim == 4:
        return reshape(x, (x.data.shape[0], x.data.size // x.data.shape[0]))
    return reshape(x, (x.data.size,))


def add(a, b):
    """Elementwise sum of two same-shape tensors (loss accumulation)."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    y = a.data + b.data

    def _backward(dy):
        if a.requires_grad:
            a.accumulate_grad(dy)
        if b.requires_grad:
            b.accumulate_grad(dy)

    return Tensor.from_op(y, (a, b), _backward, "add")


def binary_crossentropy(pred, labels):
    """Mean binary cross-entropy over all elements.

    Predictions are clamped to [BCE_EPS, 1-BCE_EPS] before the logs; the
    gradient (p - y) / (p (1 - p)) is taken at the clamped value, so the
    clamp is transparent to backprop.
    """
    y = np.asarray(labels, dtype=pred.data.dtype)
    if y.shape != pred.data.shape:
        y = y.reshape(pred.data.shape)
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    loss = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))
    out_data = np.asarray(loss, dtype=pred.data.dtype)

    def _backward(dy):
        g = (p - y) / (p * (1.0 - p)) / n
        pred.accumulate_grad(dy * g)

    return Tensor.from_op(out_data, (pred,), _backward, "binary_crossentropy")


def l2_penalty(params, lam):
    """Weight-decay term lam * sum(w^2); biases are excluded."""
    lam = float(lam)
    if lam < 0:
        raise ConfigError(f"l2 lambda must be >= 0, got {lam}")
    w = params.weights
    val = lam * float(np.sum(np.square(w.data, dtype=np.float64)))
    out_data = np.asarray(val, dtype=w.data.dtype)

    def _backward(dy):
        w.accumulate_grad(dy * 2.0 * lam * w.data)

    return Tensor.from_op(out_data, (w,), _backward, "l2_penalty")
