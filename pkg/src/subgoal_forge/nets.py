"""Small dense networks with hand-written gradients.

One implementation serves four consumers: the action policy, the sub-goal
classifier, the one-class embedding net, and the value baseline. Parameters
live in plain float64 numpy arrays. Updates never mutate a network in
place; ``apply_step`` returns a fresh parameter version, so concurrent
forward passes on an existing net are always safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12

HEADS = ("linear", "softmax")
LOSS_KINDS = ("cross_entropy", "mse", "svdd")


@dataclass
class Mlp:
    """Fully-connected net: tanh hidden layers, linear or softmax head.

    ``weights[i]`` has shape ``(layer_dims[i], layer_dims[i+1])``; biases are
    kept as zero arrays and frozen when ``use_bias`` is off (the one-class
    embedding net drops them to rule out the constant-map collapse).
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str = "linear"
    use_bias: bool = True

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def param_count(self) -> int:
        n = sum(w.size for w in self.weights)
        if self.use_bias:
            n += sum(b.size for b in self.biases)
        return n


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class GradientStep:
    """Adam-style update state. ``l2`` adds weight decay on every parameter."""

    lr: float
    l2: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m_w: list[np.ndarray] | None = field(default=None, repr=False)
    v_w: list[np.ndarray] | None = field(default=None, repr=False)
    m_b: list[np.ndarray] | None = field(default=None, repr=False)
    v_b: list[np.ndarray] | None = field(default=None, repr=False)


def make_step(lr: float, l2: float = 0.0) -> GradientStep:
    if not (np.isfinite(lr) and lr > 0):
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not (np.isfinite(l2) and l2 >= 0):
        raise ValueError(f"l2 coefficient must be non-negative, got {l2}")
    return GradientStep(lr=float(lr), l2=float(l2))


def init_mlp(layer_dims, head: str = "linear", seed: int = 0, use_bias: bool = True) -> Mlp:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)), zero biases."""
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}, expected one of {HEADS}")
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ValueError(f"layer_dims needs >= 2 positive entries, got {layer_dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(dims, weights, biases, head=head, use_bias=use_bias)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax, floored at PROB_FLOOR and renormalized.

    The floor keeps every entry strictly inside (0, 1) even when logits are
    extreme, so downstream logs never see an exact zero.
    """
    z = np.atleast_2d(z)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    p = np.clip(p, PROB_FLOOR, None)
    return p / p.sum(axis=1, keepdims=True)


def _check_input(net: Mlp, x: np.ndarray, batched: bool) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    want = 2 if batched else 1
    if x.ndim != want or x.shape[-1] != net.in_dim:
        raise ValueError(
            f"input shape {x.shape} incompatible with net input dim {net.in_dim}"
        )
    return x


def _forward_hidden(net: Mlp, x: np.ndarray) -> list[np.ndarray]:
    """Activations per layer: [input, h1, ..., h_last_hidden, logits]."""
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts


def forward_batch(net: Mlp, x: np.ndarray) -> np.ndarray:
    x = _check_input(net, x, batched=True)
    logits = _forward_hidden(net, x)[-1]
    return softmax(logits) if net.head == "softmax" else logits


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the net on a single input vector."""
    x = _check_input(net, x, batched=False)
    return forward_batch(net, x[None, :])[0]


def _loss_and_dlogits(net, logits, kind, targets):
    """Mean loss over the batch and its gradient at the logits.

    cross_entropy: integer class targets, softmax head required.
    mse:           vector targets, per-sample mean over output dims.
    svdd:          shared center vector, per-sample squared distance.
    """
    n = logits.shape[0]
    if kind == "cross_entropy":
        if net.head != "softmax":
            raise ValueError("cross_entropy requires a softmax head")
        y = np.asarray(targets, dtype=np.int64).reshape(n)
        if y.min() < 0 or y.max() >= net.out_dim:
            raise ValueError(f"class targets out of range for width {net.out_dim}")
        p = softmax(logits)
        picked = np.clip(p[np.arange(n), y], PROB_FLOOR, None)
        value = float(-np.log(picked).mean())
        d = p.copy()
        d[np.arange(n), y] -= 1.0
        return value, d / n
    if kind == "mse":
        t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if t.shape != (n, net.out_dim):
            raise ValueError(f"mse targets shape {t.shape} != {(n, net.out_dim)}")
        out = softmax(logits) if net.head == "softmax" else logits
        diff = out - t
        value = float((diff**2).mean(axis=1).mean())
        dout = 2.0 * diff / (net.out_dim * n)
        return value, _fold_head(net, out, dout)
    if kind == "svdd":
        c = np.asarray(targets, dtype=np.float64).reshape(-1)
        if c.shape != (net.out_dim,):
            raise ValueError(f"center shape {c.shape} != ({net.out_dim},)")
        out = softmax(logits) if net.head == "softmax" else logits
        diff = out - c[None, :]
        value = float((diff**2).sum(axis=1).mean())
        dout = 2.0 * diff / n
        return value, _fold_head(net, out, dout)
    raise ValueError(f"unknown loss kind {kind!r}, expected one of {LOSS_KINDS}")


def _fold_head(net, out, dout):
    """Pull a gradient at the head output back to the logits."""
    if net.head != "softmax":
        return dout
    # p = softmax(z): dL/dz = p * (dL/dp - sum(dL/dp * p))
    inner = (dout * out).sum(axis=1, keepdims=True)
    return out * (dout - inner)


def _backprop(net: Mlp, acts: list[np.ndarray], dz: np.ndarray) -> Gradients:
    gw = [None] * len(net.weights)
    gb = [None] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        h_prev = acts[i]
        gw[i] = h_prev.T @ dz
        gb[i] = dz.sum(axis=0) if net.use_bias else np.zeros_like(net.biases[i])
        if i > 0:
            dh = dz @ net.weights[i].T
            dz = dh * (1.0 - acts[i] ** 2)
    return Gradients(gw, gb)


def loss_batch(net: Mlp, x: np.ndarray, kind: str, targets) -> float:
    x = _check_input(net, x, batched=True)
    logits = _forward_hidden(net, x)[-1]
    value, _ = _loss_and_dlogits(net, logits, kind, targets)
    return value


def loss(net: Mlp, x: np.ndarray, kind: str, target) -> float:
    x = _check_input(net, x, batched=False)
    t = [target] if kind == "cross_entropy" else np.atleast_2d(target) if kind == "mse" else target
    return loss_batch(net, x[None, :], kind, t)


def backward_batch(net: Mlp, x: np.ndarray, kind: str, targets) -> Gradients:
    """Gradient of the mean loss over the batch, shapes mirroring the parameters."""
    x = _check_input(net, x, batched=True)
    acts = _forward_hidden(net, x)
    _, dz = _loss_and_dlogits(net, acts[-1], kind, targets)
    return _backprop(net, acts, dz)


def backward(net: Mlp, x: np.ndarray, kind: str, target) -> Gradients:
    x = _check_input(net, x, batched=False)
    t = [target] if kind == "cross_entropy" else np.atleast_2d(target) if kind == "mse" else target
    return backward_batch(net, x[None, :], kind, t)


def backward_logits(net: Mlp, x: np.ndarray, dlogits: np.ndarray) -> Gradients:
    """Backprop from a caller-supplied gradient at the logits.

    This is the shared core the three fixed loss kinds wrap; the actor-critic
    update composes its weighted-logprob-plus-entropy gradient through it.
    """
    x = _check_input(net, x, batched=True)
    acts = _forward_hidden(net, x)
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != acts[-1].shape:
        raise ValueError(f"dlogits shape {dlogits.shape} != {acts[-1].shape}")
    return _backprop(net, acts, dlogits)


def apply_step(net: Mlp, grads: Gradients, step: GradientStep) -> tuple[Mlp, GradientStep]:
    """One Adam update. Returns a new net and the advanced optimizer state."""
    if len(grads.weights) != len(net.weights):
        raise ValueError("gradient layer count does not match net")
    for i, (w, gw) in enumerate(zip(net.weights, grads.weights)):
        if gw.shape != w.shape:
            raise ValueError(f"gradient shape mismatch at weights[{i}]")
        if not np.all(np.isfinite(gw)):
            raise FloatingPointError(f"non-finite gradient at weights[{i}]")
    for i, (b, gb) in enumerate(zip(net.biases, grads.biases)):
        if gb.shape != b.shape:
            raise ValueError(f"gradient shape mismatch at biases[{i}]")
        if net.use_bias and not np.all(np.isfinite(gb)):
            raise FloatingPointError(f"non-finite gradient at biases[{i}]")

    if step.m_w is None:
        step = GradientStep(
            lr=step.lr, l2=step.l2, beta1=step.beta1, beta2=step.beta2,
            eps=step.eps, t=step.t,
            m_w=[np.zeros_like(w) for w in net.weights],
            v_w=[np.zeros_like(w) for w in net.weights],
            m_b=[np.zeros_like(b) for b in net.biases],
            v_b=[np.zeros_like(b) for b in net.biases],
        )

    t = step.t + 1
    c1 = 1.0 - step.beta1**t
    c2 = 1.0 - step.beta2**t

    def adam(p, g, m, v):
        g = g + 2.0 * step.l2 * p
        m2 = step.beta1 * m + (1.0 - step.beta1) * g
        v2 = step.beta2 * v + (1.0 - step.beta2) * g * g
        p2 = p - step.lr * (m2 / c1) / (np.sqrt(v2 / c2) + step.eps)
        return p2, m2, v2

    new_w, new_b, mw, vw, mb, vb = [], [], [], [], [], []
    for w, g, m, v in zip(net.weights, grads.weights, step.m_w, step.v_w):
        p2, m2, v2 = adam(w, g, m, v)
        new_w.append(p2), mw.append(m2), vw.append(v2)
    for b, g, m, v in zip(net.biases, grads.biases, step.m_b, step.v_b):
        if net.use_bias:
            p2, m2, v2 = adam(b, g, m, v)
        else:
            p2, m2, v2 = b.copy(), m.copy(), v.copy()
        new_b.append(p2), mb.append(m2), vb.append(v2)

    net2 = Mlp(list(net.layer_dims), new_w, new_b, head=net.head, use_bias=net.use_bias)
    step2 = GradientStep(step.lr, step.l2, step.beta1, step.beta2, step.eps, t, mw, vw, mb, vb)
    return net2, step2


def fit(net, x, kind, targets, *, epochs, lr, batch_size=64, seed=0, l2=0.0):
    """Minibatch training loop shared by every head.

    Returns the trained net and the per-epoch mean loss (measured before
    each update). Optimizer moments start fresh on every call.
    """
    x = _check_input(net, x, batched=True)
    n = x.shape[0]
    if kind == "cross_entropy":
        targets = np.asarray(targets, dtype=np.int64).reshape(n)
    elif kind == "mse":
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    rng = np.random.default_rng(seed)
    step = make_step(lr, l2=l2)
    history = []
    for _ in range(int(epochs)):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            xb = x[idx]
            tb = targets if kind == "svdd" else targets[idx]
            logits = _forward_hidden(net, xb)[-1]
            value, dz = _loss_and_dlogits(net, logits, kind, tb)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite {kind} loss during fit")
            total += value * len(idx)
            grads = _backprop(net, _forward_hidden(net, xb), dz)
            net, step = apply_step(net, grads, step)
        history.append(total / n)
    return net, history


def _fmt(a: np.ndarray) -> str:
    return " ".join("%.17g" % v for v in a.ravel())


def dump_mlp(net: Mlp) -> str:
    """Versioned text checkpoint block; round-trips float64 exactly."""
    lines = ["MLPCKPT v1"]
    lines.append("dims " + " ".join(str(d) for d in net.layer_dims))
    lines.append(f"head {net.head}")
    lines.append(f"bias {int(net.use_bias)}")
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"W{i} " + _fmt(w))
        lines.append(f"b{i} " + _fmt(b))
    return "\n".join(lines) + "\n"


def parse_mlp(text: str, where: str = "checkpoint") -> Mlp:
    lines = text.splitlines()
    if not lines or lines[0] != "MLPCKPT v1":
        raise ValueError(f"{where}: not an MLPCKPT v1 block")
    if len(lines) < 4 or not lines[1].startswith("dims "):
        raise ValueError(f"{where}: missing dims line")
    dims = [int(v) for v in lines[1].split()[1:]]
    head = lines[2].split()[1]
    use_bias = bool(int(lines[3].split()[1]))
    weights, biases = [], []
    row = 4
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        try:
            wtok = lines[row].split()
            btok = lines[row + 1].split()
        except IndexError:
            raise ValueError(f"{where}: truncated at layer {i}") from None
        if wtok[0] != f"W{i}" or btok[0] != f"b{i}":
            raise ValueError(f"{where}: layer {i} block malformed")
        w = np.array([float(v) for v in wtok[1:]])
        if w.size != fan_in * fan_out:
            raise ValueError(f"{where}: weights {i} have wrong length")
        b = np.array([float(v) for v in btok[1:]])
        if b.shape != (fan_out,):
            raise ValueError(f"{where}: bias {i} has wrong length")
        weights.append(w.reshape(fan_in, fan_out))
        biases.append(b)
        row += 2
    return Mlp(dims, weights, biases, head=head, use_bias=use_bias)


def save_mlp(net: Mlp, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_mlp(net))


def load_mlp(path) -> Mlp:
    with open(path) as fh:
        return parse_mlp(fh.read(), where=str(path))
