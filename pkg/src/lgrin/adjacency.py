"""Construction and transforms of the shared M x M graph adjacency.

Three regimes are supported: a learnable adjacency (an unconstrained raw
parameter that is symmetrized and rectified on every forward pass), a fixed
binary chain where each node connects to its temporal neighbors, and a
fixed weighted matrix of squared distances between node attributes. The
module also provides the degree renormalization used by the plain-GCN
baseline and the quadratic temporal-distance structure matrix used by the
graph learning loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, LgrinError


@dataclass
class LearnableAdjacency:
    """Unconstrained raw M x M parameter behind the effective adjacency."""

    raw: Tensor

    @property
    def m(self) -> int:
        return self.raw.shape[0]


@dataclass(frozen=True)
class StructureMatrix:
    """Fixed matrix with entry (i, j) = (i - j)^2, 0-based indices."""

    values: np.ndarray

    @property
    def m(self) -> int:
        return self.values.shape[0]


def init_learnable_adjacency(m: int, seed: int) -> LearnableAdjacency:
    """Raw entries i.i.d. Normal(0, 1) from a generator seeded with `seed`."""
    if m < 2:
        raise ConfigError(f"adjacency needs at least 2 nodes, got {m}")
    rng = np.random.default_rng(seed)
    return LearnableAdjacency(ad.parameter(rng.standard_normal((m, m)),
                                           name="adjacency.raw"))


def effective_adjacency(adj: LearnableAdjacency) -> Tensor:
    """ReLU of the symmetrized raw parameter, recorded on the active tape.

    Symmetry is enforced by averaging raw with its transpose before
    rectifying, so the result is symmetric and non-negative for any raw
    matrix while staying differentiable almost everywhere.
    """
    sym = ad.scale(ad.add(adj.raw, ad.transpose(adj.raw)), 0.5)
    return ad.relu(sym)


def fixed_adjacency(kind: str, m: int, features: Tensor | None = None) -> Tensor:
    """Constant adjacency: 'binary' chain or 'weighted' squared-distance.

    binary:   entry (i, j) = 1 iff |i - j| = 1
    weighted: entry (i, j) = ||n_i - n_j||^2 over the given node features
    """
    if kind == "binary":
        idx = np.arange(m)
        values = (np.abs(idx[:, None] - idx[None, :]) == 1).astype(np.float64)
        return ad.constant(values)
    if kind == "weighted":
        if features is None:
            raise ConfigError("weighted adjacency requires node features")
        n = features.values
        if n.shape[0] != m:
            raise ConfigError(
                f"feature rows {n.shape[0]} do not match node count {m}")
        diff = n[:, None, :] - n[None, :, :]
        return ad.constant(np.einsum("ijk,ijk->ij", diff, diff))
    raise ConfigError(f"unknown fixed adjacency kind {kind!r}")


def renormalized_adjacency(a: Tensor) -> Tensor:
    """Degree-normalized adjacency with self-loops, as a constant.

    Adds the identity, takes D as the diagonal degree matrix of the result,
    and returns D^(-1/2) (A + I) D^(-1/2). Requires a non-negative A.
    """
    av = a.values
    if np.any(av < 0):
        raise ContractError("renormalized_adjacency requires non-negative entries")
    with_self = av + np.eye(av.shape[0])
    deg = with_self.sum(axis=1)
    if np.any(deg <= 0):
        raise LgrinError("zero degree after adding self-loops")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return ad.constant(inv_sqrt[:, None] * with_self * inv_sqrt[None, :])


def structure_matrix(m: int) -> StructureMatrix:
    """Quadratic temporal-distance penalty matrix."""
    if m < 1:
        raise ConfigError(f"node count must be positive, got {m}")
    idx = np.arange(m, dtype=np.float64)
    return StructureMatrix((idx[:, None] - idx[None, :]) ** 2)


def neighbor_mask(a_eff: Tensor, threshold: float = 0.0) -> np.ndarray:
    """Boolean 1-hop mask: weight above threshold, self always included."""
    av = a_eff.values
    mask = av > threshold
    np.fill_diagonal(mask, True)
    return mask
