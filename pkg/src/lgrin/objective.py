"""Joint training objective: classification loss plus graph learning loss.

The classification term is a plain sum of per-sample cross entropies. The
graph learning term regularizes the learned structure: a temporal-locality
penalty that charges each edge by the squared index distance of its
endpoints, a Frobenius penalty shrinking overall edge mass, and an L2
penalty on the pooling weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import autodiff as ad
from .adjacency import StructureMatrix
from .autodiff import Tensor
from .errors import ConfigError, ContractError, ShapeError


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 1e-4

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("loss weights must be non-negative")


def classification_loss(logits_batch: Sequence[Tensor],
                        labels: Sequence[int]) -> Tensor:
    """Sum (not mean) of cross-entropy terms over the batch."""
    if len(logits_batch) != len(labels):
        raise ContractError(f"{len(logits_batch)} logit vectors for "
                            f"{len(labels)} labels")
    return ad.add_scalars([ad.cross_entropy_logits(lg, y)
                           for lg, y in zip(logits_batch, labels)])


def graph_learning_loss(a_eff: Tensor, a_d: StructureMatrix, p: Tensor,
                        w: LossWeights) -> Tensor:
    """lambda1 * sum(A_d o A) + lambda2 * ||A||_F^2 + lambda3 * ||p||_2^2."""
    m = a_eff.shape[0]
    if a_eff.shape != (m, m) or a_d.values.shape != (m, m):
        raise ShapeError(f"adjacency {a_eff.shape} vs structure "
                         f"{a_d.values.shape}")
    if p.shape != (m,):
        raise ShapeError(f"pooling vector {p.shape} does not match M={m}")
    locality = ad.sum_all(ad.mul(ad.constant(a_d.values), a_eff))
    frobenius = ad.sum_all(ad.mul(a_eff, a_eff))
    pooling = ad.sum_all(ad.mul(p, p))
    return ad.add_scalars([
        ad.scale(locality, w.lambda1),
        ad.scale(frobenius, w.lambda2),
        ad.scale(pooling, w.lambda3),
    ])


def total_loss(cls: Tensor, gl: Tensor) -> Tensor:
    """Joint objective; gradients flow to network weights, A, and p."""
    return ad.add(cls, gl)
