"""Appellate stage: combine the two court representations and run both heads.

The ruling head is a sigmoid unit over the combined vector (class 1, "not
affirmed", at probability >= 0.5); the article head is a softmax classifier
over the appellate law-article space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import RngStream, Tensor

RULING_THRESHOLD = 0.5


class RulingHead:
    """Scalar sigmoid head over the combined representation."""

    def __init__(self, input_dim: int, rng: RngStream):
        self.w = Tensor(nm.glorot_uniform((1, input_dim), rng).reshape(-1), requires_grad=True)
        self.b = Tensor(np.zeros(()), requires_grad=True)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class ArticleHead:
    """Softmax head over the appellate law-article space."""

    def __init__(self, input_dim: int, num_labels: int, rng: RngStream):
        self.w = Tensor(nm.glorot_uniform((num_labels, input_dim), rng), requires_grad=True)
        self.b = Tensor(np.zeros(num_labels), requires_grad=True)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


@dataclass
class AppealPrediction:
    """Outputs of one appeal prediction pass."""

    ruling_probability: float
    ruling_class: int
    article_distribution: np.ndarray
    article_index: int
    attention: np.ndarray | None = None
    fact_tokens: tuple[str, ...] = ()
    fine_tuned: bool = True
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        expected = int(self.ruling_probability >= RULING_THRESHOLD)
        if self.ruling_class != expected:
            raise ValueError("ruling class must be the threshold function of its probability")


def combine(h_lower: Tensor, h_appeal: Tensor) -> Tensor:
    """Concatenate the lower-court and appellate representations, in that order."""
    if h_appeal.shape[0] != 2 * h_lower.shape[0]:
        raise ValueError(
            f"dimension mismatch: lower {h_lower.shape}, appellate {h_appeal.shape}")
    return nm.concat([h_lower, h_appeal])


def predict_ruling(h: Tensor, head: RulingHead) -> Tensor:
    """Probability that the appellate court does not affirm in full."""
    z = nm.add(nm.dot(head.w, h), head.b)
    return nm.sigmoid(z)


def ruling_loss(p: Tensor, truth: int, positive_weight: float = 1.0) -> Tensor:
    """Binary cross-entropy; an optional weight scales the positive class."""
    loss = nm.binary_cross_entropy(p, truth)
    if truth == 1 and positive_weight != 1.0:
        loss = nm.scale(loss, positive_weight)
    return loss


def predict_article(h: Tensor, head: ArticleHead) -> Tensor:
    return nm.softmax(nm.affine(h, head.w, head.b))


def article_loss(distribution: Tensor, truth_index: int) -> Tensor:
    return nm.cross_entropy(distribution, truth_index)
