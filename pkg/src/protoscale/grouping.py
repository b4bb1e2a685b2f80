"""Prototype grouping: semantic, instance, and hierarchical attention.

Each pyramid scale owns a bank of learnable prototype vectors. Pixels are
softly assigned to semantic prototypes by temperature-scaled dot-product
attention (with auxiliary sink prototypes and a centered spatial prior
fighting collapse); instance maps are convex recombinations of semantic
maps driven by prototype-to-prototype similarity; a relation MLP over the
instance prototypes yields a symmetric affinity matrix whose thresholded
form merges instance maps into group-level maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DegeneratePrototypeError, ParameterError, ShapeError
from .tensor import Tensor


@dataclass
class AttentionSet:
    """All grouping outputs for one scale, spatially flattened to h*w."""

    semantic: Tensor        # (n_semantic, h*w) — auxiliary rows already dropped
    instance: Tensor        # (n_instance, h*w)
    relation: Tensor        # (n_instance, n_instance)
    hierarchical: Tensor    # (n_instance, h*w)
    grid: tuple             # (h, w)


class GaussianPrior:
    """Centered spatial weight g in (0, 1], cached as a log map per grid."""

    def __init__(self, mu=0.5, sigma=0.7):
        if sigma <= 0.0:
            raise ParameterError(f"prior sigma must be positive, got {sigma}")
        self.mu = float(mu)
        self.sigma = float(sigma)
        self._log_maps = {}

    def log_map(self, h, w):
        cached = self._log_maps.get((h, w))
        if cached is None:
            y = (np.arange(h) + 0.5) / h
            x = (np.arange(w) + 0.5) / w
            sq = (y[:, None] - self.mu) ** 2 + (x[None, :] - self.mu) ** 2
            cached = (-sq / (2.0 * self.sigma ** 2)).reshape(-1)
            self._log_maps[(h, w)] = cached
        return cached


def apply_gaussian_prior(logits, prior, grid):
    """Add the prior's log weight at each pixel to every row of ``logits``."""
    h, w = grid
    if logits.shape[-1] != h * w:
        raise ShapeError(f"logits cover {logits.shape[-1]} pixels, grid is {h}x{w}")
    return logits + Tensor(prior.log_map(h, w)[None, :])


def semantic_attention(features, semantic, auxiliary, prior, tau, grid):
    """Per-pixel distribution over prototypes, restricted to semantic rows.

    ``features`` is (d, h*w). Semantic and auxiliary prototypes compete in
    one softmax per pixel; the spatial prior discounts semantic logits away
    from the center, so peripheral activations drain into the auxiliary
    sinks. Only the semantic rows are returned; their columns sum to 1
    exactly when there are no auxiliary prototypes.
    """
    if tau <= 0.0:
        raise ParameterError(f"attention temperature must be positive, got {tau}")
    logits = apply_gaussian_prior(semantic @ features * (1.0 / tau), prior, grid)
    if auxiliary is not None and auxiliary.shape[0] > 0:
        logits = T.concat([logits, auxiliary @ features * (1.0 / tau)], axis=0)
    full = T.softmax(logits, axis=0)
    n_semantic = semantic.shape[0]
    return full[:n_semantic, :]


def _l2_rows(matrix, what):
    norms_sq = (matrix * matrix).sum(axis=1, keepdims=True)
    if norms_sq.data.min() <= 0.0:
        raise DegeneratePrototypeError(f"zero-norm {what} prototype row")
    return matrix / norms_sq.sqrt()


def instance_assignment(semantic, instance, tau):
    """Row-stochastic mixing weights: each instance row distributes over
    semantic prototypes by softmaxed cosine similarity."""
    if tau <= 0.0:
        raise ParameterError(f"assignment temperature must be positive, got {tau}")
    sim = _l2_rows(instance, "instance") @ _l2_rows(semantic, "semantic").transpose()
    return T.softmax(sim, axis=1, temperature=tau)


def instance_attention(weights, semantic_maps):
    """Mix semantic maps into instance maps: each row a convex combination."""
    return weights @ semantic_maps


def relation_matrix(embeddings):
    """Symmetric pairwise affinity in [0,1] with the diagonal forced to 1.

    ``embeddings`` is (n, d_rel), one relation embedding per instance
    prototype; affinity is the sigmoid of the scaled pairwise dot product.
    """
    n, d_rel = embeddings.shape
    raw = (embeddings @ embeddings.transpose()) * (1.0 / np.sqrt(d_rel))
    off_diag = Tensor(1.0 - np.eye(n))
    return raw.sigmoid() * off_diag + Tensor(np.eye(n))


def hierarchical_attention(relation, instance_maps, threshold=0.5):
    """Merge instance maps through the thresholded affinity matrix.

    Entries below ``threshold`` are zeroed in the forward pass only; the
    backward pass sees the identity (straight-through), since a hard cut
    has zero gradient almost everywhere and would freeze the relation MLP.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"affinity threshold must be in [0,1], got {threshold}")
    keep = Tensor((relation.data >= threshold).astype(np.float64))
    gated = relation + (relation * keep - relation).detach()
    return gated @ instance_maps


class PrototypeBank:
    """Learnable prototypes and relation MLP for a single scale."""

    def __init__(
        self, rng, dim, n_semantic, n_auxiliary, n_instance, relation_dim,
        prototype_std=None,
    ):
        if n_semantic < 2 or n_instance < 1 or n_auxiliary < 0:
            raise ParameterError(
                f"need >=2 semantic, >=1 instance, >=0 auxiliary prototypes, "
                f"got {n_semantic}/{n_instance}/{n_auxiliary}"
            )
        std = 1.0 / np.sqrt(dim)
        proto_std = std if prototype_std is None else float(prototype_std)
        self.semantic = Tensor(
            rng.standard_normal((n_semantic, dim)) * proto_std, requires_grad=True
        )
        self.auxiliary = Tensor(
            rng.standard_normal((n_auxiliary, dim)) * proto_std, requires_grad=True
        )
        self.instance = Tensor(
            rng.standard_normal((n_instance, dim)) * proto_std, requires_grad=True
        )
        self.rel_w1 = Tensor(rng.standard_normal((dim, dim)) * std, requires_grad=True)
        self.rel_b1 = Tensor(np.zeros(dim), requires_grad=True)
        self.rel_w2 = Tensor(
            rng.standard_normal((dim, relation_dim)) * std, requires_grad=True
        )
        self.rel_b2 = Tensor(np.zeros(relation_dim), requires_grad=True)

    def relation_embeddings(self):
        hidden = (self.instance @ self.rel_w1 + self.rel_b1).relu()
        return hidden @ self.rel_w2 + self.rel_b2

    def params(self):
        return {
            "semantic": self.semantic,
            "auxiliary": self.auxiliary,
            "instance": self.instance,
            "rel_w1": self.rel_w1,
            "rel_b1": self.rel_b1,
            "rel_w2": self.rel_w2,
            "rel_b2": self.rel_b2,
        }


class GroupingHead:
    """Per-scale prototype banks applied to a feature pyramid."""

    def __init__(
        self,
        rng,
        dim,
        n_semantic=16,
        n_auxiliary=4,
        n_instance=8,
        tau=0.1,
        prior_mu=0.5,
        prior_sigma=0.7,
        use_prior=True,
        threshold=0.5,
        relation_dim=None,
        n_scales=3,
    ):
        relation_dim = dim if relation_dim is None else relation_dim
        self.tau = float(tau)
        self.threshold = float(threshold)
        self.n_semantic = n_semantic
        self.prior = GaussianPrior(prior_mu, prior_sigma)
        # A flat prior adds the same constant everywhere, which the softmax
        # ignores; this is the disable switch for ablation.
        self.use_prior = bool(use_prior)
        # Prototypes start at tau scale so the initial logits (dot / tau)
        # land near zero and attention opens close to uniform; the default
        # 1/sqrt(dim) scale saturates the softmax badly at tau ~ 0.1.
        proto_std = self.tau / np.sqrt(dim)
        self.banks = [
            PrototypeBank(
                rng, dim, n_semantic, n_auxiliary, n_instance, relation_dim,
                prototype_std=proto_std,
            )
            for _ in range(n_scales)
        ]

    def _scale_forward(self, bank, feature_map):
        d, h, w = feature_map.shape
        flat = feature_map.reshape(d, h * w)
        if self.use_prior:
            prior = self.prior
        else:
            prior = _FLAT_PRIOR
        sem = semantic_attention(
            flat, bank.semantic, bank.auxiliary, prior, self.tau, (h, w)
        )
        weights = instance_assignment(bank.semantic, bank.instance, self.tau)
        inst = instance_attention(weights, sem)
        rel = relation_matrix(bank.relation_embeddings())
        hier = hierarchical_attention(rel, inst, self.threshold)
        return AttentionSet(sem, inst, rel, hier, (h, w))

    def __call__(self, pyramid):
        return [
            self._scale_forward(bank, level)
            for bank, level in zip(self.banks, pyramid.levels)
        ]

    def params(self):
        out = {}
        for k, bank in enumerate(self.banks):
            for name, p in bank.params().items():
                out[f"scale{k + 1}/{name}"] = p
        return out


class _ZeroPrior:
    """Log map of all zeros: multiplying attention by a constant 1."""

    def log_map(self, h, w):
        return np.zeros(h * w)


_FLAT_PRIOR = _ZeroPrior()
