"""Network graphs: layer specs, weight store, builders, and forward pass.

Three architectures are provided: a small sequential baseline, a deeper
functional-style net with batchnorm and L2-regularized convolutions, and a
VGG-16 convolutional base with a transfer-learning head (dropout ->
reshape(25088) -> dropout -> dense(1, sigmoid)).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DimensionError
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

LAYER_KINDS = (
    "input", "conv", "maxpool", "zeropad", "batchnorm", "dropout",
    "flatten", "reshape", "dense", "activation",
)


@dataclass
class LayerSpec:
    name: str
    kind: str
    hyperparams: dict = field(default_factory=dict)
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r} for layer {self.name!r}")


class WeightStore:
    """Maps layer name -> LayerParams (or BatchNormState for batchnorm)."""

    def __init__(self):
        self._params = {}

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        return self._params[name]

    def __setitem__(self, name, params):
        self._params[name] = params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def params(self):
        return list(self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def snapshot(self):
        """Deep copy of all weight arrays (and batchnorm running stats)."""
        out = {}
        for name, p in self._params.items():
            arrs = [p.weights.data.copy(), p.bias.data.copy()]
            if isinstance(p, nn.BatchNormState):
                arrs += [p.moving_mean.copy(), p.moving_var.copy()]
            out[name] = arrs
        return out

    def restore(self, snap):
        for name, arrs in snap.items():
            p = self._params[name]
            p.weights.data[...] = arrs[0]
            p.bias.data[...] = arrs[1]
            if isinstance(p, nn.BatchNormState):
                p.moving_mean[...] = arrs[2]
                p.moving_var[...] = arrs[3]


@dataclass
class ModelGraph:
    layers: list
    store: WeightStore = field(default_factory=WeightStore)
    lint_warnings: list = field(default_factory=list)

    def __post_init__(self):
        names = [s.name for s in self.layers]
        if len(names) != len(set(names)):
            raise ConfigError("layer names must be unique within a graph")
        if not self.layers or self.layers[0].kind != "input":
            raise ConfigError("a graph must start with an input layer")
        infer_shapes(self)  # static shape check at construction time

    @property
    def input_shape(self):
        return tuple(self.layers[0].hyperparams["shape"])

    def layer(self, name):
        for s in self.layers:
            if s.name == name:
                return s
        raise ConfigError(f"no layer named {name!r}")

    def parametric_layers(self):
        return [s for s in self.layers if s.kind in ("conv", "dense", "batchnorm")]

    def trainable_parametric_names(self):
        return [s.name for s in self.parametric_layers() if s.trainable]


# ---------------------------------------------------------------------------
# static shape inference


def _conv_out(h, w, spec):
    hp = spec.hyperparams
    kh, kw = hp["kernel"]
    sh, sw = hp.get("stride", (1, 1))
    pads = nn._resolve_padding(h, w, kh, kw, sh, sw, hp.get("padding", "valid"))
    oh = (h + pads[0] + pads[1] - kh) // sh + 1
    ow = (w + pads[2] + pads[3] - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"layer {spec.name!r}: kernel {kh}x{kw} does not fit input {h}x{w}"
        )
    return oh, ow


def infer_shapes(graph):
    """Per-sample output shape of every layer; raises on any mismatch."""
    shapes = []
    cur = None
    for spec in graph.layers:
        hp = spec.hyperparams
        if spec.kind == "input":
            cur = tuple(hp["shape"])
        elif spec.kind == "conv":
            if len(cur) != 3:
                raise DimensionError(f"layer {spec.name!r} needs an HxWxC input, got {cur}")
            oh, ow = _conv_out(cur[0], cur[1], spec)
            cur = (oh, ow, hp["filters"])
        elif spec.kind == "maxpool":
            ph, pw = hp["pool"]
            sh, sw = hp.get("stride") or (ph, pw)
            if ph > cur[0] or pw > cur[1]:
                raise DimensionError(
                    f"layer {spec.name!r}: pool {ph}x{pw} larger than input {cur[0]}x{cur[1]}"
                )
            cur = ((cur[0] - ph) // sh + 1, (cur[1] - pw) // sw + 1, cur[2])
        elif spec.kind == "zeropad":
            ph, pw = hp["pad"]
            cur = (cur[0] + 2 * ph, cur[1] + 2 * pw, cur[2])
        elif spec.kind in ("batchnorm", "dropout", "activation"):
            pass
        elif spec.kind == "flatten":
            cur = (int(np.prod(cur)),)
        elif spec.kind == "reshape":
            target = tuple(hp["target"])
            if int(np.prod(target)) != int(np.prod(cur)):
                raise DimensionError(
                    f"layer {spec.name!r}: cannot reshape {cur} to {target}"
                )
            cur = target
        elif spec.kind == "dense":
            if len(cur) != 1:
                raise DimensionError(
                    f"layer {spec.name!r} needs a flat input, got {cur}"
                )
            cur = (hp["units"],)
        shapes.append((spec.name, cur))
    return shapes


def output_shape(graph):
    return infer_shapes(graph)[-1][1]


def parameter_shapes(graph):
    """name -> list of parameter array shapes, derived from the spec chain."""
    out = {}
    cur_by_name = dict(infer_shapes(graph))
    prev = None
    for spec in graph.layers:
        if spec.kind == "conv":
            kh, kw = spec.hyperparams["kernel"]
            cin = prev[2]
            cout = spec.hyperparams["filters"]
            out[spec.name] = [(kh, kw, cin, cout), (cout,)]
        elif spec.kind == "dense":
            out[spec.name] = [(prev[0], spec.hyperparams["units"]), (spec.hyperparams["units"],)]
        elif spec.kind == "batchnorm":
            out[spec.name] = [(prev[-1],), (prev[-1],)]
        prev = cur_by_name[spec.name]
    return out


def parameter_count(graph, trainable_only=False, names=None):
    """Learnable scalar count (weights + biases, gamma + beta); running
    batchnorm stats are buffers and not counted."""
    total = 0
    shapes = parameter_shapes(graph)
    for spec in graph.parametric_layers():
        if trainable_only and not spec.trainable:
            continue
        if names is not None and spec.name not in names:
            continue
        total += sum(int(np.prod(s)) for s in shapes[spec.name])
    return total


# ---------------------------------------------------------------------------
# weight materialization


def init_weights(graph, rng, dtype=np.float32):
    """Glorot-uniform weights, zero biases, unit batchnorm; in layer order."""
    shapes = parameter_shapes(graph)
    for spec in graph.layers:
        if spec.name not in shapes:
            continue
        wshape, bshape = shapes[spec.name]
        if spec.kind == "conv":
            kh, kw, cin, cout = wshape
            fan_in, fan_out = kh * kw * cin, kh * kw * cout
        elif spec.kind == "dense":
            fan_in, fan_out = wshape
        else:  # batchnorm
            graph.store[spec.name] = nn.BatchNormState(
                gamma=Tensor(np.ones(wshape, dtype=dtype)),
                beta=Tensor(np.zeros(bshape, dtype=dtype)),
                trainable=spec.trainable,
            )
            continue
        limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
        w = rng.uniform(-limit, limit, size=wshape).astype(dtype)
        b = np.zeros(bshape, dtype=dtype)
        graph.store[spec.name] = nn.LayerParams(Tensor(w), Tensor(b), trainable=spec.trainable)
    return graph


# ---------------------------------------------------------------------------
# forward


def forward(graph, x, mode="infer", rng=None):
    """Run the graph; train mode records the tape and consumes rng for
    dropout. Shape problems name the offending layer."""
    if mode not in ("train", "infer"):
        raise ConfigError(f"unknown forward mode: {mode!r}")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    expected = graph.input_shape
    got = x.shape if x.data.ndim == 3 else x.shape[1:]
    if tuple(got) != expected:
        raise DimensionError(f"layer 'input': expected shape {expected}, got {tuple(x.shape)}")
    batched = x.data.ndim == 4

    ctx = no_grad() if mode == "infer" else _NullCtx()
    with ctx:
        cur = x
        for spec in graph.layers:
            hp = spec.hyperparams
            try:
                if spec.kind == "input":
                    continue
                if spec.kind in ("conv", "dense", "batchnorm") and spec.name not in graph.store:
                    raise ConfigError(
                        f"layer {spec.name!r} has no weights; call init_weights or load a model"
                    )
                if spec.kind == "conv":
                    cur = nn.conv2d(cur, graph.store[spec.name],
                                    stride=hp.get("stride", (1, 1)),
                                    padding=hp.get("padding", "valid"))
                    if hp.get("activation"):
                        cur = nn.activation(cur, hp["activation"])
                elif spec.kind == "maxpool":
                    cur = nn.maxpool2d(cur, pool=hp["pool"], stride=hp.get("stride"))
                elif spec.kind == "zeropad":
                    cur = nn.zero_pad2d(cur, pad=hp["pad"])
                elif spec.kind == "batchnorm":
                    cur = nn.batchnorm(cur, graph.store[spec.name], mode=mode,
                                       momentum=hp.get("momentum", 0.99),
                                       epsilon=hp.get("epsilon", 1e-3))
                elif spec.kind == "dropout":
                    cur = nn.dropout(cur, hp["rate"], mode=mode, rng=rng)
                elif spec.kind == "flatten":
                    cur = nn.flatten(cur)
                elif spec.kind == "reshape":
                    target = tuple(hp["target"])
                    if batched:
                        target = (cur.data.shape[0],) + target
                    cur = nn.reshape(cur, target)
                elif spec.kind == "dense":
                    cur = nn.dense(cur, graph.store[spec.name])
                    if hp.get("activation"):
                        cur = nn.activation(cur, hp["activation"])
                elif spec.kind == "activation":
                    cur = nn.activation(cur, hp["kind"])
            except DimensionError as exc:
                raise DimensionError(f"layer {spec.name!r}: {exc}") from exc
    return cur


class _NullCtx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def regularization_loss(graph):
    """Sum of the L2 penalties configured on conv/dense layers, or None."""
    total = None
    for spec in graph.layers:
        lam = spec.hyperparams.get("l2", 0.0)
        if lam and spec.name in graph.store:
            term = nn.l2_penalty(graph.store[spec.name], lam)
            total = term if total is None else nn.add(total, term)
    return total


# ---------------------------------------------------------------------------
# freezing


def freeze_prefix(graph, first_n=None, until_block=None):
    """Mark a prefix of the graph non-trainable.

    Exactly one policy: first_n freezes layers[0:first_n]; until_block
    freezes everything up to and including the named layer.
    """
    if (first_n is None) == (until_block is None):
        raise ConfigError("freeze_prefix needs exactly one of first_n / until_block")
    if first_n is not None:
        if first_n < 0 or first_n > len(graph.layers):
            raise ConfigError(f"first_n out of range: {first_n}")
        cutoff = first_n
    else:
        names = [s.name for s in graph.layers]
        if until_block not in names:
            raise ConfigError(f"unknown block name {until_block!r}")
        cutoff = names.index(until_block) + 1
    for spec in graph.layers[:cutoff]:
        spec.trainable = False
        if spec.name in graph.store:
            graph.store[spec.name].trainable = False
    return graph


# ---------------------------------------------------------------------------
# builders


VGG16_BLOCKS = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))


def build_vgg16_base(input_shape=(224, 224, 3)):
    """13 same-padded 3x3 ReLU convolutions in five blocks, each block ended
    by a 2x2/2 max pool; stops at the final pool (no classifier head)."""
    layers = [LayerSpec("input", "input", {"shape": tuple(input_shape)})]
    for b, (n_convs, filters) in enumerate(VGG16_BLOCKS, start=1):
        for c in range(1, n_convs + 1):
            layers.append(LayerSpec(
                f"block{b}_conv{c}", "conv",
                {"filters": filters, "kernel": (3, 3), "stride": (1, 1),
                 "padding": "same", "activation": "relu"},
            ))
        layers.append(LayerSpec(f"block{b}_pool", "maxpool",
                                {"pool": (2, 2), "stride": (2, 2)}))
    return ModelGraph(layers=layers)


def attach_head(base):
    """Append the transfer head: dropout(0.6) -> reshape(flat) -> dropout(0.6)
    -> dense(1, sigmoid). The base must end in a 3-D feature map."""
    out = output_shape(base)
    if len(out) != 3:
        raise DimensionError(f"head needs an HxWxC base output, got {out}")
    flat = int(np.prod(out))
    layers = list(base.layers) + [
        LayerSpec("head_dropout1", "dropout", {"rate": 0.60}),
        LayerSpec("head_reshape", "reshape", {"target": (flat,)}),
        LayerSpec("head_dropout2", "dropout", {"rate": 0.60}),
        LayerSpec("head_dense", "dense", {"units": 1, "activation": "sigmoid"}),
    ]
    return ModelGraph(layers=layers, store=base.store, lint_warnings=list(base.lint_warnings))


def build_vgg16_transfer(input_shape=(224, 224, 3), freeze="block4_pool"):
    """VGG-16 base + head with the default freeze policy applied: only the
    last three convolutions and the head remain trainable."""
    graph = attach_head(build_vgg16_base(input_shape))
    if freeze is not None:
        if isinstance(freeze, int):
            freeze_prefix(graph, first_n=freeze)
        else:
            freeze_prefix(graph, until_block=freeze)
    return graph


def build_sequential_v1(input_shape=(605, 700, 3)):
    """Small sequential baseline: conv(64, tanh) -> pool -> flatten ->
    dense(32, tanh) -> dense(1, sigmoid)."""
    layers = [
        LayerSpec("input", "input", {"shape": tuple(input_shape)}),
        LayerSpec("conv1", "conv", {"filters": 64, "kernel": (3, 3), "stride": (1, 1),
                                    "padding": "same", "activation": "tanh"}),
        LayerSpec("pool1", "maxpool", {"pool": (2, 2)}),
        LayerSpec("flatten", "flatten", {}),
        LayerSpec("dense1", "dense", {"units": 32, "activation": "tanh"}),
        LayerSpec("output", "dense", {"units": 1, "activation": "sigmoid"}),
    ]
    return ModelGraph(layers=layers)


def build_functional_v2(input_shape=(256, 256, 3)):
    """Functional-style net with batchnorm, zero padding, 1x1 pools, and
    L2(0.01) on three of the convolutions.

    The architecture it reproduces declares two dropout(0.30) outputs (after
    the 1x1 pools) that no later layer consumes; the effective graph built
    here omits those dead layers and keeps the identity 1x1 pools, and both
    quirks are listed in lint_warnings.
    """
    layers = [
        LayerSpec("input", "input", {"shape": tuple(input_shape)}),
        LayerSpec("conv1", "conv", {"filters": 16, "kernel": (3, 3), "stride": (1, 1),
                                    "padding": "valid", "activation": "relu"}),
        LayerSpec("conv2", "conv", {"filters": 32, "kernel": (3, 3), "stride": (1, 1),
                                    "padding": "valid", "activation": "relu"}),
        LayerSpec("bn1", "batchnorm", {}),
        LayerSpec("pad1", "zeropad", {"pad": (1, 1)}),
        LayerSpec("pool1", "maxpool", {"pool": (2, 2)}),
        LayerSpec("drop1", "dropout", {"rate": 0.30}),
        LayerSpec("conv3", "conv", {"filters": 32, "kernel": (3, 3),
                                    "padding": "valid", "activation": "relu", "l2": 0.01}),
        LayerSpec("conv4", "conv", {"filters": 64, "kernel": (3, 3),
                                    "padding": "valid", "activation": "relu", "l2": 0.01}),
        LayerSpec("bn2", "batchnorm", {}),
        LayerSpec("pool2", "maxpool", {"pool": (1, 1)}),
        LayerSpec("conv5", "conv", {"filters": 128, "kernel": (3, 3),
                                    "padding": "valid", "activation": "relu", "l2": 0.01}),
        LayerSpec("conv6", "conv", {"filters": 128, "kernel": (2, 2), "stride": (1, 1),
                                    "padding": "valid", "activation": "relu"}),
        LayerSpec("bn3", "batchnorm", {}),
        LayerSpec("pool3", "maxpool", {"pool": (1, 1)}),
        LayerSpec("flatten", "flatten", {}),
        LayerSpec("drop2", "dropout", {"rate": 0.50}),
        LayerSpec("output", "dense", {"units": 1, "activation": "sigmoid"}),
    ]
    warnings = [
        "dropout(0.30) outputs after pool2 and pool3 are never consumed; omitted from the effective graph",
        "pool2 and pool3 have pool_size (1,1) and are identity ops",
    ]
    graph = ModelGraph(layers=layers, lint_warnings=warnings)
    for w in warnings:
        logger.warning("functional-v2 lint: %s", w)
    return graph


ARCHITECTURES = {
    "vgg16-transfer": build_vgg16_transfer,
    "sequential-v1": build_sequential_v1,
    "functional-v2": build_functional_v2,
}


def build_architecture(name, input_shape=None):
    if name not in ARCHITECTURES:
        raise ConfigError(
            f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}"
        )
    if input_shape is None:
        return ARCHITECTURES[name]()
    return ARCHITECTURES[name](input_shape=tuple(input_shape))
