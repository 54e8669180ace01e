"""Expandable task network with attention gates over frozen prior-task features.

Every hidden layer is a list of unit *groups*, one per task that added units
to it. Group ``(t, n)`` reads the network input (``n == 1``) or the outputs of
layer ``n - 1`` belonging to tasks ``<= t``; features from tasks ``< t`` pass
through task ``t``'s attention gate first, task ``t``'s own features enter
ungated. Nothing owned by an earlier task ever reads a later group, so the
forward pass of task ``s`` is unaffected by anything added for ``t > s``.

Layouts: dense features are ``(N, width)``, conv features ``(N, C, H, W)``.
Datasets store images as ``(N, H, W, C)``; :meth:`TaskNetwork.prepare`
converts them.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import BoundsViolation, EmptyDataset, InvalidSpec, ShapeMismatch

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" | "conv2d"
    units: int
    kernel: int = 0
    stride: int = 1
    activation: str = "relu"


@dataclass(frozen=True)
class NetSpec:
    """Input shape ``(H, W, C)`` or ``(D,)``, hidden layers and class count."""

    input_shape: Tuple[int, ...]
    layers: Tuple[LayerSpec, ...]
    n_classes: int
    spatial: Tuple[Optional[Tuple[int, int]], ...] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise InvalidSpec("network needs at least one hidden layer")
        if self.n_classes < 2:
            raise InvalidSpec(f"n_classes must be >= 2, got {self.n_classes}")
        if any(v <= 0 for v in self.input_shape):
            raise InvalidSpec(f"input shape must be positive: {self.input_shape}")
        spatial = []
        if len(self.input_shape) == 3:
            h, w = self.input_shape[0], self.input_shape[1]
        else:
            h = w = None
        seen_dense = False
        for i, layer in enumerate(self.layers):
            if layer.units <= 0:
                raise InvalidSpec(f"layer {i + 1}: units must be positive")
            if layer.activation not in ("relu", "none"):
                raise InvalidSpec(f"layer {i + 1}: unknown activation {layer.activation!r}")
            if layer.kind == "dense":
                seen_dense = True
                spatial.append(None)
            elif layer.kind == "conv2d":
                if seen_dense or h is None:
                    raise InvalidSpec(f"layer {i + 1}: conv2d needs an image input and cannot follow dense")
                if layer.kernel <= 0 or layer.stride <= 0:
                    raise InvalidSpec(f"layer {i + 1}: kernel and stride must be positive")
                h = (h - layer.kernel) // layer.stride + 1
                w = (w - layer.kernel) // layer.stride + 1
                if h <= 0 or w <= 0:
                    raise InvalidSpec(f"layer {i + 1}: kernel {layer.kernel} too large for input")
                spatial.append((h, w))
            else:
                raise InvalidSpec(f"layer {i + 1}: unknown kind {layer.kind!r}")
        object.__setattr__(self, "spatial", tuple(spatial))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def conv_input(self) -> bool:
        return self.layers[0].kind == "conv2d"

    def input_channels(self) -> int:
        return self.input_shape[2] if len(self.input_shape) == 3 else 1

    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def cells(self, n: int) -> int:
        """Spatial cells per unit of hidden layer ``n`` (1 for dense)."""
        s = self.spatial[n - 1]
        return 1 if s is None else s[0] * s[1]

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [asdict(layer) for layer in self.layers],
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(tuple(d["input_shape"]), tuple(LayerSpec(**l) for l in d["layers"]), int(d["n_classes"]))


def dense_spec(input_size: int, hidden: Sequence[int], n_classes: int) -> NetSpec:
    return NetSpec((input_size,), tuple(LayerSpec("dense", h) for h in hidden), n_classes)


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ParamBlock:
    owner: int
    layer: int  # 1..depth for hidden groups, depth + 1 for an output head
    weight: np.ndarray
    bias: np.ndarray
    trainable: bool = True

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size


@dataclass
class AttentionGate:
    owner: int
    layer: int
    kind: str  # "node" | "channel"
    w_c: np.ndarray  # (bottleneck, C)
    b_c: np.ndarray
    w_s: np.ndarray  # (C, bottleneck)
    b_s: np.ndarray
    trainable: bool = True

    @property
    def width(self) -> int:
        return self.w_c.shape[1]

    @property
    def bottleneck(self) -> int:
        return self.w_c.shape[0]

    @property
    def size(self) -> int:
        return self.w_c.size + self.b_c.size + self.w_s.size + self.b_s.size

    def arrays(self):
        return {"w_c": self.w_c, "b_c": self.b_c, "w_s": self.w_s, "b_s": self.b_s}

    def beta(self, features, keep=False):
        v = features if self.kind == "node" else features.mean(axis=(2, 3))
        a1 = v @ self.w_c.T + self.b_c
        hid = np.maximum(a1, 0.0)
        b = expit(hid @ self.w_s.T + self.b_s)
        return (b, (v, a1, hid, b)) if keep else b

    def apply(self, features, keep=False):
        if features.shape[1] != self.width:
            raise ShapeMismatch(f"gate expects {self.width} channels, got {features.shape[1]}")
        b, cache = self.beta(features, keep=True)
        scale = b if self.kind == "node" else b[:, :, None, None]
        out = features * scale
        return (out, (features, cache)) if keep else out

    def backward(self, dout, cache):
        """Gradients of the gate parameters; the gated features are constants."""
        features, (v, a1, hid, b) = cache
        prod = dout * features
        dbeta = prod if self.kind == "node" else prod.sum(axis=(2, 3))
        da2 = dbeta * b * (1.0 - b)
        dhid = da2 @ self.w_s
        da1 = dhid * (a1 > 0)
        return {
            "w_s": da2.T @ hid,
            "b_s": da2.sum(axis=0),
            "w_c": da1.T @ v,
            "b_c": da1.sum(axis=0),
        }


def gate_bottleneck(width: int) -> int:
    return max(4, math.ceil(width / 4))


def attention_node(features, gate: AttentionGate):
    """Gate a batch of prior-task vectors ``(N, C)`` node by node."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        return gate.apply(features[None])[0]
    return gate.apply(features)


def attention_channel(features, gate: AttentionGate):
    """Gate prior-task feature maps ``(N, C, H, W)`` channel by channel.

    Each channel is average-pooled to a scalar that feeds the gate network.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 3:
        return gate.apply(features[None])[0]
    if features.ndim != 4:
        raise ShapeMismatch(f"expected (N, C, H, W) features, got shape {features.shape}")
    return gate.apply(features)


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    lim = math.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-lim, lim, size=shape)


def _new_gate(rng, owner: int, layer: int, kind: str, width: int) -> AttentionGate:
    h = gate_bottleneck(width)
    return AttentionGate(
        owner,
        layer,
        kind,
        w_c=_uniform(rng, width, (h, width)),
        b_c=np.zeros(h),
        w_s=_uniform(rng, h, (width, h)),
        b_s=np.ones(width),
    )


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# the network


class TaskNetwork:
    """Parameter store plus forward/backward passes for every learned task."""

    def __init__(self, spec: NetSpec, attention: bool = True):
        self.spec = spec
        self.attention = attention
        self.blocks: Dict[Tuple[int, int], ParamBlock] = {}
        self.heads: Dict[int, ParamBlock] = {}
        self.gates: Dict[Tuple[int, int], AttentionGate] = {}
        self.widths: Dict[Tuple[int, int], int] = {}
        self.n_tasks = 0

    # -- structure ---------------------------------------------------------

    def width(self, task: int, layer: int) -> int:
        return self.widths.get((task, layer), 0)

    def prior_width(self, task: int, layer: int) -> int:
        """Units of ``layer`` owned by tasks before ``task``."""
        return sum(self.width(s, layer) for s in range(1, task))

    def layer_widths(self) -> List[int]:
        return [self.prior_width(self.n_tasks + 1, n) for n in range(1, self.spec.depth + 1)]

    def param_count(self, owner: Optional[int] = None) -> int:
        items = list(self.blocks.values()) + list(self.heads.values()) + list(self.gates.values())
        return sum(p.size for p in items if owner is None or p.owner == owner)

    def _fan_in(self, task: int, layer: int, own_prev: int) -> Tuple[int, int]:
        """(input channels, flattened input size) feeding a group of ``layer``."""
        spec = self.spec
        depth = spec.depth
        if layer == 1:
            c = spec.input_channels() if spec.conv_input else spec.input_size()
        else:
            c = self.prior_width(task, layer - 1) + own_prev
        target = spec.layers[layer - 1] if layer <= depth else None
        if target is not None and target.kind == "conv2d":
            return c, c * target.kernel * target.kernel
        cells = 1 if layer == 1 else spec.cells(layer - 1)
        return c, c * cells

    def copy(self) -> "TaskNetwork":
        """Shallow structural copy; parameter arrays are shared, not duplicated."""
        other = TaskNetwork(self.spec, self.attention)
        other.blocks = dict(self.blocks)
        other.heads = dict(self.heads)
        other.gates = dict(self.gates)
        other.widths = dict(self.widths)
        other.n_tasks = self.n_tasks
        return other

    def _make_block(self, rng, task: int, layer: int, units: int, own_prev: int) -> ParamBlock:
        spec = self.spec
        _, fan_in = self._fan_in(task, layer, own_prev)
        if layer <= spec.depth and spec.layers[layer - 1].kind == "conv2d":
            c, _ = self._fan_in(task, layer, own_prev)
            k = spec.layers[layer - 1].kernel
            weight = _uniform(rng, fan_in, (units, c, k, k))
        else:
            weight = _uniform(rng, fan_in, (fan_in, units))
        return ParamBlock(task, layer, weight, np.zeros(units))

    # -- layout ------------------------------------------------------------

    def prepare(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        spec = self.spec
        if spec.conv_input:
            if x.ndim == 3 and spec.input_channels() == 1:
                x = x[..., None]
            if x.shape[1:] != spec.input_shape:
                raise ShapeMismatch(f"images {x.shape[1:]} vs input shape {spec.input_shape}")
            return np.ascontiguousarray(x.transpose(0, 3, 1, 2))
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != spec.input_size():
            raise ShapeMismatch(f"input has {x.shape[1]} features, network expects {spec.input_size()}")
        return x

    def _empty(self, batch: int, layer: int) -> np.ndarray:
        s = self.spec.spatial[layer - 1]
        return np.zeros((batch, 0) if s is None else (batch, 0, s[0], s[1]))

    # -- forward -----------------------------------------------------------

    def _layer_input(self, task, layer, prior, own_prev, keep):
        """Assemble the input of ``layer`` for ``task`` (layer >= 2 or the head)."""
        parts = []
        gate_cache = None
        prior_c = 0
        if prior is not None and prior.shape[1] > 0:
            prior_c = prior.shape[1]
            gate = self.gates.get((task, layer))
            if gate is not None:
                gated, gate_cache = gate.apply(prior, keep=True)
                parts.append(gated)
            else:
                parts.append(prior)
        parts.append(own_prev)
        inp = parts[0] if len(parts) == 1 and parts[0] is own_prev else np.concatenate(parts, axis=1)
        unflat = None
        target_dense = layer > self.spec.depth or self.spec.layers[layer - 1].kind == "dense"
        if target_dense and inp.ndim == 4:
            unflat = inp.shape
            inp = inp.reshape(inp.shape[0], -1)
        return inp, (prior_c, gate_cache, unflat)

    def _affine(self, layer, block: ParamBlock, inp):
        spec = self.spec
        if layer <= spec.depth and spec.layers[layer - 1].kind == "conv2d":
            ls = spec.layers[layer - 1]
            cols = kernels.im2col(inp, ls.kernel, ls.stride)
            f = block.weight.shape[0]
            pre = cols @ block.weight.reshape(f, -1).T + block.bias
            ho, wo = spec.spatial[layer - 1]
            pre = pre.reshape(inp.shape[0], ho, wo, f).transpose(0, 3, 1, 2)
            return np.ascontiguousarray(pre), cols
        return inp @ block.weight + block.bias, None

    def _chain(self, task, x, prior, keep=False, head=True):
        """Run the groups owned by ``task``.

        ``prior[n]`` holds the concatenated outputs of tasks ``< task`` at
        hidden layer ``n`` (``None`` for task 1). Returns the task's own
        hidden outputs (index 1..depth), its logits and, with ``keep``, the
        cache needed by :meth:`_backward`.
        """
        depth = self.spec.depth
        batch = x.shape[0]
        own = [None] * (depth + 1)
        cache = {}
        for n in range(1, depth + 1):
            if self.width(task, n) == 0:
                own[n] = self._empty(batch, n)
                continue
            if n == 1:
                inp, info = x, None
            else:
                inp, info = self._layer_input(task, n, prior[n - 1] if prior else None, own[n - 1], keep)
            block = self.blocks[(task, n)]
            pre, cols = self._affine(n, block, inp)
            act = self.spec.layers[n - 1].activation
            own[n] = np.maximum(pre, 0.0) if act == "relu" else pre
            if keep:
                cache[n] = (inp, info, pre, cols)
        if not head:
            return own, None, cache
        inp, info = self._layer_input(task, depth + 1, prior[depth] if prior else None, own[depth], keep)
        hb = self.heads[task]
        logits = inp @ hb.weight + hb.bias
        if keep:
            cache[depth + 1] = (inp, info, None, None)
        return own, logits, cache

    def prior_features(self, task: int, x) -> Optional[List[Optional[np.ndarray]]]:
        """Concatenated hidden outputs of tasks ``< task`` per layer (index 1..depth)."""
        if task == 1:
            return None
        depth = self.spec.depth
        prior = None
        for s in range(1, task):
            own, _, _ = self._chain(s, x, prior, head=False)
            if prior is None:
                prior = [None] + [own[n] for n in range(1, depth + 1)]
            else:
                prior = [None] + [np.concatenate([prior[n], own[n]], axis=1) for n in range(1, depth + 1)]
        return prior

    def forward(self, task: int, inputs, prepared: bool = False) -> np.ndarray:
        if task not in self.heads:
            raise KeyError(f"task {task} does not exist (network has {self.n_tasks} tasks)")
        x = inputs if prepared else self.prepare(inputs)
        _, logits, _ = self._chain(task, x, self.prior_features(task, x))
        return logits

    # -- backward ----------------------------------------------------------

    def trainable(self, task: int) -> Dict[tuple, np.ndarray]:
        """Arrays updated when training ``task``, keyed by parameter name."""
        out = {}
        for n in range(1, self.spec.depth + 1):
            b = self.blocks.get((task, n))
            if b is not None:
                out[("block", n, "weight")] = b.weight
                out[("block", n, "bias")] = b.bias
        for n in range(2, self.spec.depth + 2):
            g = self.gates.get((task, n))
            if g is not None:
                for name, arr in g.arrays().items():
                    out[("gate", n, name)] = arr
        h = self.heads[task]
        out[("head", "weight")] = h.weight
        out[("head", "bias")] = h.bias
        return out

    def _split(self, task, layer, dinp, info, grads):
        prior_c, gate_cache, unflat = info
        if unflat is not None:
            dinp = dinp.reshape(unflat)
        if gate_cache is not None:
            gate = self.gates[(task, layer)]
            for name, g in gate.backward(dinp[:, :prior_c], gate_cache).items():
                grads[("gate", layer, name)] = g
        return dinp[:, prior_c:]

    def _backward(self, task, cache, dlogits) -> Dict[tuple, np.ndarray]:
        spec = self.spec
        depth = spec.depth
        grads = {k: np.zeros_like(v) for k, v in self.trainable(task).items()}
        inp, info, _, _ = cache[depth + 1]
        hb = self.heads[task]
        grads[("head", "weight")] = inp.T @ dlogits
        grads[("head", "bias")] = dlogits.sum(axis=0)
        d_own = self._split(task, depth + 1, dlogits @ hb.weight.T, info, grads)
        for n in range(depth, 0, -1):
            if n not in cache:
                break
            inp, info, pre, cols = cache[n]
            block = self.blocks[(task, n)]
            dpre = d_own * (pre > 0) if spec.layers[n - 1].activation == "relu" else d_own
            if cols is not None:
                f = block.weight.shape[0]
                dflat = dpre.transpose(0, 2, 3, 1).reshape(-1, f)
                grads[("block", n, "weight")] = (dflat.T @ cols).reshape(block.weight.shape)
                grads[("block", n, "bias")] = dflat.sum(axis=0)
                if n > 1:
                    ls = spec.layers[n - 1]
                    dcols = dflat @ block.weight.reshape(f, -1)
                    dinp = kernels.col2im(dcols, inp.shape, ls.kernel, ls.stride)
            else:
                grads[("block", n, "weight")] = inp.T @ dpre
                grads[("block", n, "bias")] = dpre.sum(axis=0)
                if n > 1:
                    dinp = dpre @ block.weight.T
            if n == 1:
                break
            d_own = self._split(task, n, dinp, info, grads)
            if d_own.shape[1] == 0:
                break
        return grads

    def loss_and_grads(self, task, x, labels, prior=None):
        """Mean cross-entropy on a prepared batch and gradients of task ``task``'s parameters."""
        if prior is None:
            prior = self.prior_features(task, x)
        _, logits, cache = self._chain(task, x, prior, keep=True)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        batch = x.shape[0]
        loss = -float(np.mean(logp[np.arange(batch), labels]))
        d = np.exp(logp)
        d[np.arange(batch), labels] -= 1.0
        d /= batch
        return loss, self._backward(task, cache, d)


# ---------------------------------------------------------------------------
# construction and expansion


def new_base(spec: NetSpec, rng: np.random.Generator, attention: bool = True) -> TaskNetwork:
    """Task-1 network with the widths given by ``spec``."""
    net = TaskNetwork(spec, attention)
    prev = 0
    for n, layer in enumerate(spec.layers, start=1):
        net.widths[(1, n)] = layer.units
        net.blocks[(1, n)] = net._make_block(rng, 1, n, layer.units, prev)
        prev = layer.units
    net.heads[1] = net._make_block(rng, 1, spec.depth + 1, spec.n_classes, prev)
    net.n_tasks = 1
    return net


def expand(
    net: TaskNetwork,
    task: int,
    z: Sequence[int],
    rng: np.random.Generator,
    z_max: Optional[Sequence[int]] = None,
) -> TaskNetwork:
    """Return a child network with ``z[n]`` new units per layer owned by ``task``.

    The parent is not modified; its parameter arrays are shared with the
    child and made read-only. Gates are created for every task-``task``
    consumer of prior features: hidden groups of layer >= 2 with new units,
    and the new output head.
    """
    spec = net.spec
    if task != net.n_tasks + 1:
        raise ValueError(f"next task must be {net.n_tasks + 1}, got {task}")
    z = [int(v) for v in np.asarray(z).reshape(-1)]
    if len(z) != spec.depth:
        raise BoundsViolation(f"expansion has {len(z)} coordinates, network has {spec.depth} layers")
    if any(v < 0 for v in z) or (z_max is not None and any(v > m for v, m in zip(z, z_max))):
        raise BoundsViolation(f"expansion {z} outside [0, {list(z_max) if z_max is not None else 'inf'}]")
    freeze(net)
    child = net.copy()
    prev = 0
    for n in range(1, spec.depth + 1):
        units = z[n - 1]
        child.widths[(task, n)] = units
        if units > 0:
            if n >= 2 and child.attention:
                kind = "channel" if spec.layers[n - 2].kind == "conv2d" else "node"
                child.gates[(task, n)] = _new_gate(rng, task, n, kind, child.prior_width(task, n - 1))
            child.blocks[(task, n)] = child._make_block(rng, task, n, units, prev)
        prev = units
    if child.attention:
        kind = "channel" if spec.layers[-1].kind == "conv2d" else "node"
        child.gates[(task, spec.depth + 1)] = _new_gate(
            rng, task, spec.depth + 1, kind, child.prior_width(task, spec.depth)
        )
    child.heads[task] = child._make_block(rng, task, spec.depth + 1, spec.n_classes, prev)
    child.n_tasks = task
    return child


def freeze(net: TaskNetwork) -> None:
    for p in list(net.blocks.values()) + list(net.heads.values()):
        p.trainable = False
        _freeze(p.weight)
        _freeze(p.bias)
    for g in net.gates.values():
        g.trainable = False
        for arr in g.arrays().values():
            _freeze(arr)


def params_added_per_unit(spec: NetSpec, layer: int, widths: Sequence[int]) -> int:
    """Parameters one extra unit of hidden ``layer`` costs at the current ``widths``.

    Counts the unit's incoming weights and bias plus its outgoing weights
    into the next layer (or into an output head for the last hidden layer).
    """
    depth = spec.depth
    if not 1 <= layer <= depth:
        raise InvalidSpec(f"layer must be in 1..{depth}, got {layer}")
    ls = spec.layers[layer - 1]
    if layer == 1:
        fan_c = spec.input_channels() if ls.kind == "conv2d" else spec.input_size()
    else:
        fan_c = widths[layer - 2]
    if ls.kind == "conv2d":
        fan_in = fan_c * ls.kernel * ls.kernel
    else:
        fan_in = fan_c * (1 if layer == 1 else spec.cells(layer - 1))
    cells = spec.cells(layer)
    if layer == depth:
        fan_out = cells * spec.n_classes
    else:
        nxt = spec.layers[layer]
        if nxt.kind == "conv2d":
            fan_out = nxt.kernel * nxt.kernel * widths[layer]
        else:
            fan_out = cells * widths[layer]
    return fan_in + 1 + fan_out


# ---------------------------------------------------------------------------
# training and evaluation


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    weight_decay: float = 1e-4
    epochs: int = 5
    batch_size: int = 32
    lr_decay: float = 0.3
    decay_at: float = 2.0 / 3.0


def accuracy(logits, labels) -> float:
    labels = np.asarray(labels)
    if labels.shape[0] == 0:
        raise EmptyDataset("cannot score an empty set")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(net: TaskNetwork, task: int, dataset) -> float:
    if len(dataset.labels) == 0:
        raise EmptyDataset("evaluation set is empty")
    return accuracy(net.forward(task, dataset.images), dataset.labels)


def train_task(net: TaskNetwork, task: int, train, val, cfg: TrainConfig, rng: np.random.Generator) -> float:
    """SGD on task ``task``'s own parameters; returns validation accuracy."""
    n = len(train.labels)
    if n == 0:
        raise EmptyDataset("training set is empty")
    if val is not None and len(val.labels) == 0:
        raise EmptyDataset("validation set is empty")
    x = net.prepare(train.images)
    y = np.asarray(train.labels, dtype=np.int64)
    prior = net.prior_features(task, x)
    params = net.trainable(task)
    decay_epoch = int(round(cfg.decay_at * cfg.epochs))
    for epoch in range(cfg.epochs):
        lr = cfg.lr * (cfg.lr_decay if epoch >= decay_epoch else 1.0)
        shrink = 1.0 - lr * cfg.weight_decay
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pb = None if prior is None else [None] + [p[idx] for p in prior[1:]]
            _, grads = net.loss_and_grads(task, x[idx], y[idx], pb)
            for key, arr in params.items():
                arr -= lr * grads[key]
                if key[-1] in ("weight", "w_c", "w_s"):
                    arr *= shrink
    return evaluate(net, task, val) if val is not None else float("nan")


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(net: TaskNetwork, path) -> None:
    arrays = {}
    meta = {
        "version": CHECKPOINT_VERSION,
        "spec": net.spec.to_dict(),
        "attention": net.attention,
        "n_tasks": net.n_tasks,
        "widths": [[t, n, w] for (t, n), w in sorted(net.widths.items())],
        "gates": [[t, n, g.kind] for (t, n), g in sorted(net.gates.items())],
    }
    for (t, n), b in net.blocks.items():
        arrays[f"block_{t}_{n}_weight"] = b.weight
        arrays[f"block_{t}_{n}_bias"] = b.bias
    for t, h in net.heads.items():
        arrays[f"head_{t}_weight"] = h.weight
        arrays[f"head_{t}_bias"] = h.bias
    for (t, n), g in net.gates.items():
        for name, arr in g.arrays().items():
            arrays[f"gate_{t}_{n}_{name}"] = arr
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> TaskNetwork:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        net = TaskNetwork(NetSpec.from_dict(meta["spec"]), bool(meta["attention"]))
        net.n_tasks = int(meta["n_tasks"])
        for t, n, w in meta["widths"]:
            net.widths[(t, n)] = w
            if w > 0:
                net.blocks[(t, n)] = ParamBlock(
                    t, n, data[f"block_{t}_{n}_weight"].copy(), data[f"block_{t}_{n}_bias"].copy(), False
                )
        for t in range(1, net.n_tasks + 1):
            net.heads[t] = ParamBlock(
                t, net.spec.depth + 1, data[f"head_{t}_weight"].copy(), data[f"head_{t}_bias"].copy(), False
            )
        for t, n, kind in meta["gates"]:
            net.gates[(t, n)] = AttentionGate(
                t, n, kind, *(data[f"gate_{t}_{n}_{k}"].copy() for k in ("w_c", "b_c", "w_s", "b_s")), False
            )
    return net
