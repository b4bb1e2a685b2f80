"""Training objective: distillation KL terms plus instance regularizers.

Every compared quantity is a per-pixel distribution: attention columns are
renormalized to sum 1 (semantic columns lose mass to auxiliary sinks,
hierarchical columns gain mass from merging) and the student is pulled
toward the teacher with forward KL, so the student must cover everything
the teacher attends to. Teacher tensors are plain constants; no gradient
ever reaches them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DistributionError, ParameterError
from .tensor import LOG_EPS, Tensor


@dataclass
class LossWeights:
    semantic: float = 1.0
    instance: float = 2.0
    hierarchical: float = 1.0
    sparsity: float = 0.1
    diversity: float = 0.1

    def __post_init__(self):
        for name in ("semantic", "instance", "hierarchical", "sparsity", "diversity"):
            if getattr(self, name) < 0.0:
                raise ParameterError(f"loss weight {name} must be nonnegative")


@dataclass
class LossReport:
    total: Tensor
    semantic: float
    instance: float
    hierarchical: float
    sparsity: float
    diversity: float
    per_scale: dict = field(default_factory=dict)

    def components(self):
        return {
            "sem": self.semantic,
            "inst": self.instance,
            "hier": self.hierarchical,
            "sparsity": self.sparsity,
            "diversity": self.diversity,
        }


def column_distributions(attention):
    """Renormalize nonnegative columns to exact per-pixel distributions.

    Saturated columns with tiny positive mass renormalize exactly in
    float64; only a column whose mass underflowed to zero is degenerate.
    """
    sums = attention.sum(axis=0, keepdims=True)
    if sums.data.min() <= 0.0:
        raise DistributionError("attention column with no mass cannot be renormalized")
    return attention / sums


def _check_pairing(student_views, teacher_scales):
    if not student_views:
        raise ContractError("no student views supplied")
    for view in student_views:
        if len(view) != len(teacher_scales):
            raise ContractError(
                f"scale count mismatch: student view has {len(view)}, "
                f"teacher has {len(teacher_scales)}"
            )


def _mean_kl(student_views, teacher_scales, pick):
    """Mean over views and scales of per-pixel KL(teacher || student).

    ``pick`` selects the compared tensor from an AttentionSet. Returns the
    scalar loss and the per-scale float breakdown.
    """
    _check_pairing(student_views, teacher_scales)
    n_scales = len(teacher_scales)
    n_views = len(student_views)
    per_scale = []
    total = None
    for k in range(n_scales):
        target = column_distributions(pick(teacher_scales[k]))
        scale_term = None
        for view in student_views:
            term = T.kl_divergence(target, column_distributions(pick(view[k])), axis=0)
            scale_term = term if scale_term is None else scale_term + term
        scale_term = scale_term * (1.0 / n_views)
        per_scale.append(scale_term.item())
        total = scale_term if total is None else total + scale_term
    return total * (1.0 / n_scales), per_scale


def semantic_loss(student_views, teacher_scales):
    """Distillation over semantic columns, auxiliary mass renormalized away."""
    return _mean_kl(student_views, teacher_scales, lambda s: s.semantic)


def hierarchical_loss(student_views, teacher_scales):
    return _mean_kl(student_views, teacher_scales, lambda s: s.hierarchical)


def _entropy_of_columns(attention):
    q = column_distributions(attention)
    # LOG_EPS inside the log keeps exact zeros finite; the bias it adds is
    # orders below every tolerance used against this term.
    return -(q * (q + LOG_EPS).log()).sum(axis=0).mean()


def _row_overlap(attention):
    """Mean off-diagonal Gram entry of L2-normalized instance maps."""
    n = attention.shape[0]
    if n < 2:
        return Tensor(0.0)
    norms = (attention * attention).sum(axis=1, keepdims=True).sqrt()
    unit = attention / (norms + LOG_EPS)
    gram = unit @ unit.transpose()
    off = Tensor(1.0 - np.eye(n))
    return (gram * off).sum() * (1.0 / (n * (n - 1)))


def instance_loss(student_views, teacher_scales):
    """Consistency KL plus sparsity (entropy) and diversity (map overlap)."""
    consistency, per_scale = _mean_kl(student_views, teacher_scales, lambda s: s.instance)
    n_terms = len(teacher_scales) * len(student_views)
    sparsity = None
    diversity = None
    for view in student_views:
        for att in view:
            ent = _entropy_of_columns(att.instance)
            ovl = _row_overlap(att.instance)
            sparsity = ent if sparsity is None else sparsity + ent
            diversity = ovl if diversity is None else diversity + ovl
    return (
        consistency,
        sparsity * (1.0 / n_terms),
        diversity * (1.0 / n_terms),
        per_scale,
    )


def total_loss(student_views, teacher_scales, weights: LossWeights):
    sem, sem_scales = semantic_loss(student_views, teacher_scales)
    cons, spar, div, inst_scales = instance_loss(student_views, teacher_scales)
    hier, hier_scales = hierarchical_loss(student_views, teacher_scales)
    total = (
        sem * weights.semantic
        + (cons + spar * weights.sparsity + div * weights.diversity) * weights.instance
        + hier * weights.hierarchical
    )
    return LossReport(
        total=total,
        semantic=sem.item(),
        instance=cons.item(),
        hierarchical=hier.item(),
        sparsity=spar.item(),
        diversity=div.item(),
        per_scale={
            "semantic": sem_scales,
            "instance": inst_scales,
            "hierarchical": hier_scales,
        },
    )
