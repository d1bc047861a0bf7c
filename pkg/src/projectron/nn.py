"""Dense, ReLU, paired-RBF and softmax layers with exact reverse-mode gradients.

All parameters of a :class:`Model` live in one contiguous float64 buffer;
each layer holds views into it.  Gradients share the same layout, which keeps
the optimizer update a handful of vector operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GAMMA_MIN = 0.0
GAMMA_MAX = 10.0
GAMMA_INIT = 1.0
PROB_FLOOR = 1e-12


def relu(x):
    return np.maximum(x, 0.0)


def softmax(z):
    """Row-wise softmax, shifted by the row maximum so large logits cannot overflow."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p, label) -> float:
    p = np.asarray(p, dtype=np.float64)
    label = int(label)
    if not 0 <= label < p.shape[-1]:
        raise ValueError(f"label {label} out of range for {p.shape[-1]} classes")
    return float(-np.log(max(p[label], PROB_FLOOR)))


def pair_indices(width: int) -> tuple[np.ndarray, np.ndarray]:
    """Units feeding each RBF kernel: disjoint consecutive pairs (0,1), (2,3), ..."""
    if width % 2:
        raise ValueError(f"RBF pairing needs an even width, got {width}")
    idx = np.arange(width)
    return idx[0::2], idx[1::2]


class Dense:
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, activation: str | None = None):
        if n_in < 1 or n_out < 1:
            raise ValueError(f"dense widths must be positive, got {n_in}->{n_out}")
        if activation not in (None, "relu"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        self.weights = None
        self.biases = None

    @property
    def shapes(self):
        return [(self.n_out, self.n_in), (self.n_out,)]

    def bind(self, views):
        self.weights, self.biases = views

    def init(self, rng):
        limit = np.sqrt(6.0 / (self.n_in + self.n_out))
        self.weights[...] = rng.uniform(-limit, limit, size=self.weights.shape)
        self.biases[...] = 0.0

    def describe(self) -> dict:
        return {"kind": self.kind, "in": self.n_in, "out": self.n_out,
                "activation": self.activation or "none"}

    def forward(self, x):
        z = x @ self.weights.T + self.biases
        if self.activation == "relu":
            return relu(z), z
        return z, None

    def backward(self, x, cache, grad_out, grads):
        if self.activation == "relu":
            # subgradient at exactly zero is zero
            grad_out = grad_out * (cache > 0.0)
        grads[0][...] = grad_out.T @ x
        grads[1][...] = grad_out.sum(axis=0)
        return grad_out @ self.weights


class RbfPair:
    """exp(-(gamma_k * |a_left - a_right|)^2) for each pair of upstream units."""

    kind = "rbf_pair"

    def __init__(self, width: int):
        self.left, self.right = pair_indices(width)
        self.width = width
        self.n_in = width
        self.n_out = width // 2
        self.gammas = None

    @property
    def shapes(self):
        return [(self.n_out,)]

    def bind(self, views):
        (self.gammas,) = views

    def init(self, rng):
        self.gammas[...] = GAMMA_INIT

    def describe(self) -> dict:
        return {"kind": self.kind, "width": self.width}

    def clamp(self):
        np.clip(self.gammas, GAMMA_MIN, GAMMA_MAX, out=self.gammas)

    def forward(self, a):
        d = a[:, self.left] - a[:, self.right]
        out = np.exp(-np.square(self.gammas * d))
        return out, (d, out)

    def backward(self, a, cache, grad_out, grads):
        d, out = cache
        g = grad_out * out * (-2.0 * self.gammas) * d
        grads[0][...] = (g * d).sum(axis=0)
        grad_d = g * self.gammas
        grad_in = np.zeros_like(a)
        grad_in[:, self.left] = grad_d
        grad_in[:, self.right] = -grad_d
        return grad_in


LAYER_KINDS = {"dense": Dense, "rbf_pair": RbfPair}


def layer_from_descriptor(desc: dict):
    if desc["kind"] == "dense":
        act = desc.get("activation", "none")
        return Dense(int(desc["in"]), int(desc["out"]), None if act == "none" else act)
    if desc["kind"] == "rbf_pair":
        return RbfPair(int(desc["width"]))
    raise ValueError(f"unknown layer kind {desc['kind']!r}")


class Gradients:
    """Per-tensor gradients backed by one flat buffer laid out like the model's."""

    def __init__(self, flat: np.ndarray, shapes):
        self.flat = flat
        self.tensors = _views(flat, shapes)

    def __len__(self):
        return len(self.tensors)

    def __getitem__(self, i):
        return self.tensors[i]

    def __iter__(self):
        return iter(self.tensors)


def _views(flat, shapes):
    out, start = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(flat[start:start + size].reshape(shape))
        start += size
    return out


class Model:
    """A chain of layers ending in softmax.

    ``kind`` is ``"projectron"`` or ``"mlp"``; it is carried along for
    reporting and serialization and does not change the computation.
    """

    def __init__(self, layers, kind: str = "mlp", classes: int | None = None):
        if not layers:
            raise ValueError("a model needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ValueError(
                    f"incompatible widths: {prev.describe()} feeds {nxt.describe()}"
                )
        self.layers = list(layers)
        self.kind = kind
        self.input_width = layers[0].n_in
        self.classes = layers[-1].n_out if classes is None else classes
        if self.classes != layers[-1].n_out:
            raise ValueError(f"last layer has {layers[-1].n_out} outputs, expected {classes}")
        self.shapes = [s for layer in self.layers for s in layer.shapes]
        self.flat = np.zeros(sum(int(np.prod(s)) for s in self.shapes))
        self.params = _views(self.flat, self.shapes)
        self._bind()

    def _bind(self):
        start = 0
        for layer in self.layers:
            n = len(layer.shapes)
            layer.bind(self.params[start:start + n])
            start += n

    def init(self, seed):
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng)
        return self

    def descriptor(self) -> dict:
        return {"kind": self.kind, "input_width": self.input_width,
                "classes": self.classes,
                "layers": [layer.describe() for layer in self.layers]}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "Model":
        layers = [layer_from_descriptor(d) for d in desc["layers"]]
        model = cls(layers, kind=desc["kind"], classes=int(desc["classes"]))
        if model.input_width != int(desc["input_width"]):
            raise ValueError("descriptor input_width disagrees with its first layer")
        return model

    def copy(self) -> "Model":
        twin = Model.from_descriptor(self.descriptor())
        twin.flat[...] = self.flat
        return twin

    @property
    def param_count(self) -> int:
        return self.flat.size

    def clamp_constraints(self):
        for layer in self.layers:
            if isinstance(layer, RbfPair):
                layer.clamp()

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ValueError(
                f"input width {x.shape[-1]} does not match model input width {self.input_width}"
            )
        return x, single

    def logits(self, x):
        x, single = self._as_batch(x)
        for layer in self.layers:
            x, _ = layer.forward(x)
        return x[0] if single else x

    def forward(self, x):
        """Class probabilities for one vector or a batch of row vectors."""
        return softmax(self.logits(x))

    def loss_and_grads(self, x, labels) -> tuple[float, Gradients, np.ndarray]:
        """Mean cross-entropy over the batch, its gradients, and the probabilities."""
        x, _ = self._as_batch(x)
        labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
        if labels.shape != (len(x),):
            raise ValueError(f"{len(labels)} labels for {len(x)} inputs")
        if labels.min() < 0 or labels.max() >= self.classes:
            raise ValueError(f"labels must lie in [0, {self.classes})")

        inputs, caches = [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            h, cache = layer.forward(h)
            caches.append(cache)
        probs = softmax(h)
        n = len(x)
        rows = np.arange(n)
        picked = probs[rows, labels]
        loss = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())

        grad = probs.copy()
        grad[rows, labels] -= 1.0
        # inside the clamp the loss is flat
        grad[picked < PROB_FLOOR] = 0.0
        grad /= n

        grads = Gradients(np.empty_like(self.flat), self.shapes)
        start = len(self.shapes)
        for layer, inp, cache in zip(reversed(self.layers), reversed(inputs), reversed(caches)):
            k = len(layer.shapes)
            start -= k
            grad = layer.backward(inp, cache, grad, grads.tensors[start:start + k])
        return loss, grads, probs

    def loss(self, x, labels) -> float:
        x, _ = self._as_batch(x)
        labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
        probs = self.forward(x)
        picked = probs[np.arange(len(x)), labels]
        return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def backward(model: Model, x, label) -> tuple[float, Gradients]:
    loss, grads, _ = model.loss_and_grads(x, label)
    return loss, grads


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: np.ndarray | None = field(default=None, repr=False)
    second_moment: np.ndarray | None = field(default=None, repr=False)
    _scratch: np.ndarray | None = field(default=None, repr=False)

    def ensure(self, size: int):
        if self.first_moment is None:
            self.first_moment = np.zeros(size)
            self.second_moment = np.zeros(size)
            self._scratch = np.empty(size)
        elif self.first_moment.size != size:
            raise ValueError(f"optimizer state holds {self.first_moment.size} entries, model has {size}")


def adam_step(model: Model, grads: Gradients, state: AdamState):
    """One bias-corrected Adam update in place, then project gammas into [0, 10]."""
    g = grads.flat
    if g.shape != model.flat.shape:
        raise ValueError(f"gradient size {g.size} does not match model size {model.flat.size}")
    state.ensure(g.size)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    m, v, tmp = state.first_moment, state.second_moment, state._scratch

    m *= b1
    np.multiply(g, 1.0 - b1, out=tmp)
    m += tmp
    v *= b2
    np.multiply(g, g, out=tmp)
    tmp *= 1.0 - b2
    v += tmp

    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    np.divide(v, bc2, out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += state.eps
    np.divide(m, tmp, out=tmp)
    tmp *= state.learning_rate / bc1
    model.flat -= tmp
    model.clamp_constraints()
    return model, state


def grad_check(model: Model, x, label, h: float = 1e-5, floor: float = 1e-6,
               max_checks: int = 10_000, seed: int = 0) -> float:
    """Largest relative disagreement between backprop and central differences.

    The relative error of an entry is ``|analytic - numeric| / max(|analytic|,
    |numeric|, floor)``.  Above ``max_checks`` parameters a seeded random
    subset of that size is compared.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    work = model.copy()
    _, grads = backward(work, x, label)
    analytic = grads.flat
    n = work.flat.size
    if n > max_checks:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=max_checks, replace=False))
    else:
        idx = np.arange(n)
    flat = work.flat
    worst = 0.0
    for i in idx:
        saved = flat[i]
        flat[i] = saved + h
        up = work.loss(x, label)
        flat[i] = saved - h
        down = work.loss(x, label)
        flat[i] = saved
        numeric = (up - down) / (2.0 * h)
        a = analytic[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    return worst


def relu_margin(model: Model, x) -> float:
    """Smallest |pre-activation| over all ReLU units for input ``x``."""
    h, _ = model._as_batch(x)
    margin = np.inf
    for layer in model.layers:
        out, cache = layer.forward(h)
        if isinstance(layer, Dense) and layer.activation == "relu":
            margin = min(margin, float(np.abs(cache).min()))
        h = out
    return margin
