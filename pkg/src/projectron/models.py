"""Projectron and baseline MLP architectures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Dense, Model, RbfPair


@dataclass
class ArchitectureConfig:
    encode_width: int = 1024
    hidden_width: int = 512
    mlp_hidden_widths: list[int] = field(default_factory=list)
    classes: int = 10

    def validate(self):
        if self.encode_width < 2 or self.encode_width % 2:
            raise ValueError(f"encode_width must be even and >= 2, got {self.encode_width}")
        if self.hidden_width < 1:
            raise ValueError(f"hidden_width must be >= 1, got {self.hidden_width}")
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")


def build_projectron(input_width: int, cfg: ArchitectureConfig, seed: int = 0) -> Model:
    """Dense+ReLU encoder, paired RBF kernels, one ReLU hidden layer, softmax output."""
    cfg.validate()
    e, h = cfg.encode_width, cfg.hidden_width
    layers = [
        Dense(input_width, e, "relu"),
        RbfPair(e),
        Dense(e // 2, h, "relu"),
        Dense(h, cfg.classes),
    ]
    return Model(layers, kind="projectron", classes=cfg.classes).init(seed)


def build_mlp(input_width: int, hidden_widths, classes: int, seed: int = 0) -> Model:
    hidden_widths = [int(w) for w in hidden_widths]
    if not hidden_widths:
        raise ValueError("an MLP needs at least one hidden layer")
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")
    widths = [input_width] + hidden_widths
    layers = [Dense(a, b, "relu") for a, b in zip(widths, widths[1:])]
    layers.append(Dense(widths[-1], classes))
    return Model(layers, kind="mlp", classes=classes).init(seed)


def halving_chain(input_width: int, depth: int) -> list[int]:
    """Hidden widths that each halve (with floor) the previous layer."""
    widths, w = [], input_width
    for _ in range(depth):
        w //= 2
        if w < 1:
            raise ValueError(f"cannot halve {input_width} {depth} times")
        widths.append(w)
    return widths


def forward(model: Model, x):
    return model.forward(x)


def predict(model: Model, x):
    """Most probable class; ties go to the lowest index."""
    return np.argmax(model.forward(x), axis=-1)


def param_count(model: Model) -> int:
    return model.param_count


def summary(model: Model) -> str:
    rows = [("layer", "kind", "in", "out", "params")]
    for i, layer in enumerate(model.layers):
        n = sum(int(np.prod(s)) for s in layer.shapes)
        kind = layer.kind
        if getattr(layer, "activation", None):
            kind += "+" + layer.activation
        rows.append((str(i), kind, str(layer.n_in), str(layer.n_out), f"{n:,}"))
    rows.append(("", "softmax", str(model.classes), str(model.classes), "0"))
    rows.append(("", "total", "", "", f"{model.param_count:,}"))
    widths = [max(len(r[c]) for r in rows) for c in range(5)]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows)
