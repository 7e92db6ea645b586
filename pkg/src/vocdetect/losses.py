"""Training losses and their weighted aggregation.

The total objective is

    L = L_cls + lambda2 * (L_con^s + L_con^g) + lambda3 * L_rec
        - lambda4 * L_MI

where L_cls combines domain and authenticity cross-entropies, L_con is a
hinge triplet loss applied to both artifact feature sets, L_rec is the self
plus cross reconstruction L1, and L_MI is a Donsker-Varadhan lower bound on
the mutual information between content and domain-agnostic features. Note
the minus sign: the bound is maximized during training. ``mi_sign`` exposes
that sign for experimentation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F


@dataclass
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 0.3
    lambda3: float = 0.05
    lambda4: float = 0.03
    margin_b: float = 3.0
    mi_sign: float = -1.0

    def validate(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "margin_b"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.mi_sign not in (-1.0, 1.0):
            raise ValueError("mi_sign must be -1.0 or +1.0")


@dataclass
class LossReport:
    l_cls: float
    l_con_s: float
    l_con_g: float
    l_rec: float
    l_mi: float
    total: float

    def recompute_total(self, weights: LossWeights) -> float:
        return (
            self.l_cls
            + weights.lambda2 * (self.l_con_s + self.l_con_g)
            + weights.lambda3 * self.l_rec
            + weights.mi_sign * weights.lambda4 * self.l_mi
        )

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _as_tensor(x) -> torch.Tensor:
    return x if torch.is_tensor(x) else torch.as_tensor(np.asarray(x))


def classification_loss(
    domain_logits,
    domains,
    auth_logits,
    labels,
    lambda1: float,
) -> torch.Tensor:
    """Mean domain cross-entropy plus lambda1 times the authenticity term."""
    domain_logits = _as_tensor(domain_logits)
    auth_logits = _as_tensor(auth_logits)
    domains = _as_tensor(domains).long()
    labels = _as_tensor(labels).long()
    if domains.min() < 0 or domains.max() >= domain_logits.shape[1]:
        raise ValueError(f"domain index out of range for {domain_logits.shape[1]} classes")
    if labels.min() < 0 or labels.max() >= auth_logits.shape[1]:
        raise ValueError("authenticity label out of range")
    return F.cross_entropy(domain_logits, domains) + lambda1 * F.cross_entropy(auth_logits, labels)


def contrastive_loss(anchor, positive, negative, b: float) -> torch.Tensor:
    """Hinge triplet loss [b + ||a - p|| - ||a - n||]_+ , mean over triplets.

    Accepts single vectors or (T, d) stacks of triplets.
    """
    a, p, n = _as_tensor(anchor), _as_tensor(positive), _as_tensor(negative)
    if a.dim() == 1:
        a, p, n = a.unsqueeze(0), p.unsqueeze(0), n.unsqueeze(0)
    d_pos = torch.linalg.vector_norm(a - p, dim=1)
    d_neg = torch.linalg.vector_norm(a - n, dim=1)
    return torch.clamp(b + d_pos - d_neg, min=0.0).mean()


def mine_triplet_indices(sources: np.ndarray, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """(anchor, positive, negative) index triples over a batch.

    Every element whose source has another member anchors one triplet; the
    positive is drawn uniformly from the same source, the negative uniformly
    from the rest. Selection depends only on the sources, so mined triples
    can be reused across repeated loss evaluations of the same batch.
    """
    sources = np.asarray(sources)
    n = sources.shape[0]
    triples: list[tuple[int, int, int]] = []
    if len(np.unique(sources)) < 2:
        return triples
    idx_by_source = {s: np.nonzero(sources == s)[0] for s in np.unique(sources)}
    for anchor in range(n):
        same = idx_by_source[sources[anchor]]
        if len(same) < 2:
            continue
        pos = anchor
        while pos == anchor:
            pos = int(same[rng.integers(0, len(same))])
        others = np.nonzero(sources != sources[anchor])[0]
        neg = int(others[rng.integers(0, len(others))])
        triples.append((anchor, pos, neg))
    return triples


def mine_triplets(
    features,
    sources,
    rng: np.random.Generator,
) -> list[tuple[int, int, int]]:
    """Spec-facing wrapper validating the feature block before mining."""
    feats = _as_tensor(features)
    sources = np.asarray(sources)
    if feats.shape[0] != sources.shape[0]:
        raise ValueError(f"{feats.shape[0]} feature rows vs {sources.shape[0]} sources")
    return mine_triplet_indices(sources, rng)


def triplet_contrastive_term(
    features: torch.Tensor,
    triples: Sequence[tuple[int, int, int]],
    margin: float,
) -> torch.Tensor:
    """Mean hinge loss over pre-mined triplets; zero when none were mined."""
    if not triples:
        return features.new_zeros(())
    idx = torch.as_tensor(np.asarray(triples, dtype=np.int64))
    return contrastive_loss(features[idx[:, 0]], features[idx[:, 1]], features[idx[:, 2]], margin)


def reconstruction_loss(x, x_self, x_cross) -> torch.Tensor:
    """Mean absolute error of the self and cross reconstructions, summed."""
    x, s, c = _as_tensor(x), _as_tensor(x_self), _as_tensor(x_cross)
    if x.shape != s.shape or x.shape != c.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(s.shape)} vs {tuple(c.shape)}")
    return (x - s).abs().mean() + (x - c).abs().mean()


def mi_lower_bound(c, a_g) -> torch.Tensor:
    """Donsker-Varadhan lower bound with an inner-product critic.

    The score matrix is u[b1, b2] = <a_g[b1], c[b2]>; matched pairs sit on
    the diagonal and every off-diagonal pair samples the product of
    marginals. The marginal term uses a max-shifted log-mean-exp, so the
    estimate is always finite.
    """
    c, a_g = _as_tensor(c), _as_tensor(a_g)
    if c.dim() != 2 or a_g.dim() != 2:
        raise ValueError("expected 2-D (batch, dim) feature blocks")
    if c.shape[0] != a_g.shape[0]:
        raise ValueError(f"batch mismatch: {c.shape[0]} vs {a_g.shape[0]}")
    if c.shape[1] != a_g.shape[1]:
        raise ValueError(f"dim mismatch: {c.shape[1]} vs {a_g.shape[1]} (project first)")
    b = c.shape[0]
    if b < 2:
        raise ValueError("mutual information bound needs a batch of at least 2")
    u = a_g @ c.t()
    off_mask = ~torch.eye(b, dtype=torch.bool, device=u.device)
    joint = u.diagonal().mean()
    off = u[off_mask]
    shift = off.max().detach()
    margin = shift + torch.log(torch.exp(off - shift).mean())
    return joint - margin


def total_loss(
    l_cls,
    l_con_s,
    l_con_g,
    l_rec,
    l_mi,
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted aggregate of all terms; rejects non-finite parts by name."""
    parts = {"l_cls": l_cls, "l_con_s": l_con_s, "l_con_g": l_con_g, "l_rec": l_rec, "l_mi": l_mi}
    tensors = {}
    for name, value in parts.items():
        t = _as_tensor(value)
        if not torch.isfinite(t).all():
            raise FloatingPointError(f"loss term {name} is not finite: {t}")
        tensors[name] = t
    return (
        tensors["l_cls"]
        + weights.lambda2 * (tensors["l_con_s"] + tensors["l_con_g"])
        + weights.lambda3 * tensors["l_rec"]
        + weights.mi_sign * weights.lambda4 * tensors["l_mi"]
    )
