"""IRMA hierarchical code error and classification summaries."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

AXIS_LENGTHS = (4, 3, 3, 3)
AXIS_NAMES = ("T", "D", "A", "B")
CODE_LENGTH = sum(AXIS_LENGTHS)
ALPHABET = "0123456789abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class IrmaCode:
    """Technical, directional, anatomical and biological axes of an IRMA code."""

    axes: tuple[str, str, str, str]

    @classmethod
    def parse(cls, text: str) -> "IrmaCode":
        """Accepts ``TTTT-DDD-AAA-BBB`` with or without the hyphens."""
        if isinstance(text, IrmaCode):
            return text
        raw = str(text).strip().lower()
        chars = raw.replace("-", "")
        if len(chars) != CODE_LENGTH:
            raise ValueError(f"IRMA code {text!r} must have {CODE_LENGTH} characters")
        if "-" in raw and [len(p) for p in raw.split("-")] != list(AXIS_LENGTHS):
            raise ValueError(f"IRMA code {text!r} is not of the form TTTT-DDD-AAA-BBB")
        bad = sorted(set(chars) - set(ALPHABET))
        if bad:
            raise ValueError(f"IRMA code {text!r} contains invalid characters {''.join(bad)!r}")
        axes, start = [], 0
        for n in AXIS_LENGTHS:
            axes.append(chars[start:start + n])
            start += n
        return cls(tuple(axes))

    def __str__(self):
        return "-".join(self.axes)

    @property
    def chars(self) -> str:
        return "".join(self.axes)


@dataclass(frozen=True)
class CodeSchema:
    """Number of admissible states for each of the 13 code positions."""

    sizes: tuple[int, ...] = (len(ALPHABET),) * CODE_LENGTH

    def __post_init__(self):
        sizes = tuple(int(b) for b in self.sizes)
        if len(sizes) != CODE_LENGTH:
            raise ValueError(f"schema needs {CODE_LENGTH} sizes, got {len(sizes)}")
        if min(sizes) < 2 or max(sizes) > len(ALPHABET):
            raise ValueError(f"schema sizes must lie in [2, {len(ALPHABET)}]")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def load(cls, path) -> "CodeSchema":
        return cls(tuple(int(tok) for tok in Path(path).read_text().split()))

    def check(self, code: IrmaCode):
        for pos, (ch, b) in enumerate(zip(code.chars, self.sizes)):
            if ALPHABET.index(ch) >= b:
                raise ValueError(
                    f"character {ch!r} at position {pos + 1} of {code} exceeds the {b} states allowed"
                )


def irma_error(query, retrieved, schema: CodeSchema = CodeSchema()) -> float:
    """Depth- and alphabet-weighted mismatch between two IRMA codes.

    Position ``i`` (1-based depth within its axis, with ``b`` states) adds
    ``1 / (b * i)`` when it is wrong.  Once a position on an axis is wrong,
    every deeper position on that axis counts as wrong too.
    """
    query, retrieved = IrmaCode.parse(query), IrmaCode.parse(retrieved)
    schema.check(query)
    schema.check(retrieved)
    error, pos = 0.0, 0
    for q_axis, r_axis in zip(query.axes, retrieved.axes):
        wrong = False
        for depth, (q, r) in enumerate(zip(q_axis, r_axis), start=1):
            wrong = wrong or q != r
            if wrong:
                error += 1.0 / schema.sizes[pos] / depth
            pos += 1
    return error


def max_irma_error(schema: CodeSchema = CodeSchema()) -> float:
    depths = [d for n in AXIS_LENGTHS for d in range(1, n + 1)]
    return sum(1.0 / b / d for b, d in zip(schema.sizes, depths))


def irma_total_score(pairs, schema: CodeSchema = CodeSchema(), n: int | None = None) -> float:
    """``1 - (1/n) * sum of irma_error`` over (query, retrieved) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no code pairs given")
    n = len(pairs) if n is None else n
    if n < len(pairs):
        raise ValueError(f"denominator {n} is smaller than the {len(pairs)} pairs")
    return 1.0 - sum(irma_error(q, r, schema) for q, r in pairs) / n


def confusion_matrix(predictions, labels, classes: int) -> np.ndarray:
    """Counts with true class on rows and predicted class on columns."""
    predictions = np.asarray(predictions, dtype=np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.size} predictions for {labels.size} labels")
    for name, arr in (("prediction", predictions), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= classes):
            raise ValueError(f"{name} out of range for {classes} classes")
    out = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(out, (labels, predictions), 1)
    return out


def accuracy(predictions, labels) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if labels.size == 0:
        raise ValueError("no labels given")
    return float(np.mean(predictions == labels))
