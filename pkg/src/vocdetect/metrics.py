"""Detection metrics and evaluation reports.

Score convention: every score is P(fake). A clip is accepted as real when
its score falls below the threshold, so at threshold t

    FAR(t) = fraction of fakes with score <  t   (fakes accepted as real)
    FRR(t) = fraction of reals with score >= t   (reals rejected)

The EER sweep uses midpoints of consecutive unique scores plus both
infinities, interpolating linearly at the crossing. The interpolation is
done in exact rational arithmetic, which makes the flip symmetry
eer(s, y) == eer(1 - s, 1 - y) hold exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch

from .backbone import score_batch
from .corpus import ClipDataset, Manifest


class MetricError(ValueError):
    """Raised for degenerate metric inputs (e.g. a single class)."""


def _split_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.dtype.kind in "US":
        labels = np.where(labels == "fake", 1, 0)
    labels = labels.astype(np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"scores/labels shape mismatch: {scores.shape} vs {labels.shape}")
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores contain non-finite values")
    real = scores[labels == 0]
    fake = scores[labels == 1]
    if len(real) == 0 or len(fake) == 0:
        raise MetricError("both real and fake scores are required")
    return real, fake


def far_frr(scores, labels, threshold: float) -> tuple[float, float]:
    """Error rates at one threshold under the accept-as-real convention."""
    real, fake = _split_scores(scores, labels)
    far = float(np.mean(fake < threshold))
    frr = float(np.mean(real >= threshold))
    return far, frr


def compute_eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Sweeps midpoints of sorted unique scores plus both infinities; when no
    sweep point has FAR == FRR exactly, interpolates linearly between the
    two adjacent points straddling the crossing.
    """
    real, fake = _split_scores(scores, labels)
    uniq = np.unique(np.concatenate([real, fake]))
    mids = (uniq[:-1] + uniq[1:]) / 2.0 if len(uniq) > 1 else np.empty(0)
    thresholds = np.concatenate([[-np.inf], mids, [np.inf]])

    real_sorted = np.sort(real)
    fake_sorted = np.sort(fake)
    n_r, n_f = len(real), len(fake)
    # counts at each threshold: fakes strictly below, reals at-or-above
    fars_n = np.searchsorted(fake_sorted, thresholds, side="left")
    frrs_n = n_r - np.searchsorted(real_sorted, thresholds, side="left")

    diff = fars_n * n_r - frrs_n * n_f  # sign of FAR - FRR without division
    cross = int(np.searchsorted(diff >= 0, True))
    if cross == 0:
        # FAR >= FRR already at -inf (only possible when FRR(-inf) <= FAR(-inf) = 0)
        return float(frrs_n[0]) / n_r, float(thresholds[0])

    far1 = Fraction(int(fars_n[cross - 1]), n_f)
    frr1 = Fraction(int(frrs_n[cross - 1]), n_r)
    far2 = Fraction(int(fars_n[cross]), n_f)
    frr2 = Fraction(int(frrs_n[cross]), n_r)
    d1 = frr1 - far1  # >= 0
    d2 = far2 - frr2  # >= 0
    if d1 + d2 == 0:
        lam = Fraction(0)
    else:
        lam = d1 / (d1 + d2)
    eer = far1 + lam * (far2 - far1)

    t1, t2 = thresholds[cross - 1], thresholds[cross]
    if np.isinf(t1) or np.isinf(t2):
        threshold = float(t2 if np.isinf(t1) else t1)
    else:
        threshold = float(Fraction(t1) + lam * (Fraction(t2) - Fraction(t1)))
    return float(eer), threshold


def compute_auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC of fake-vs-real, ties counted half.

    Computed from exact rank sums; the smaller side is rounded and the other
    reflected, so auc(s, y) + auc(s, 1 - y) == 1 holds exactly for tie-free
    inputs.
    """
    real, fake = _split_scores(scores, labels)
    n_r, n_f = len(real), len(fake)
    combined = np.concatenate([real, fake])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(len(combined), dtype=np.float64)
    sorted_scores = combined[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum_fake = float(ranks[n_r:].sum())
    numer = rank_sum_fake - n_f * (n_f + 1) / 2.0  # Mann-Whitney U of fakes
    denom = float(n_f) * float(n_r)
    if 2.0 * numer <= denom:
        return numer / denom
    return 1.0 - (denom - numer) / denom


@dataclass
class EvalReport:
    eer_overall: float
    auc: float
    threshold_at_eer: float
    per_domain_eer: dict[str, float]
    seen_avg_eer: float
    unseen_avg_eer: float
    far_at_threshold: float
    frr_at_threshold: float
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "eer_overall": self.eer_overall,
            "auc": self.auc,
            "threshold_at_eer": self.threshold_at_eer,
            "per_domain_eer": self.per_domain_eer,
            "seen_avg_eer": self.seen_avg_eer,
            "unseen_avg_eer": self.unseen_avg_eer,
            "far_at_threshold": self.far_at_threshold,
            "frr_at_threshold": self.frr_at_threshold,
            "warnings": self.warnings,
        }

    def to_json(self, path: Path | str | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def report_from_scores(
    scores: np.ndarray,
    labels: np.ndarray,
    domain_names: list[str],
    seen_flags: dict[str, int],
    expected_domains: list[str] | None = None,
) -> EvalReport:
    """Assemble the per-domain/seen/unseen report from precomputed scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    names = np.asarray(domain_names)

    eer, thr = compute_eer(scores, labels)
    auc = compute_auc(scores, labels)
    far, frr = far_frr(scores, labels, thr)

    real_mask = labels == 0
    per_domain: dict[str, float] = {}
    warnings: list[str] = []
    fake_domains = sorted({str(d) for d in names[~real_mask]})
    for dom in expected_domains or []:
        if dom != "real" and dom not in fake_domains:
            warnings.append(f"domain {dom} has no clips in this split; skipped")
    for dom in fake_domains:
        dom_mask = (names == dom) & ~real_mask
        if not dom_mask.any():
            warnings.append(f"domain {dom} has no clips; skipped")
            continue
        pool_scores = np.concatenate([scores[real_mask], scores[dom_mask]])
        pool_labels = np.concatenate([np.zeros(real_mask.sum(), dtype=np.int64), np.ones(dom_mask.sum(), dtype=np.int64)])
        per_domain[dom], _ = compute_eer(pool_scores, pool_labels)

    seen = [v for d, v in per_domain.items() if seen_flags.get(d, 1) == 1]
    unseen = [v for d, v in per_domain.items() if seen_flags.get(d, 1) == 0]
    return EvalReport(
        eer_overall=eer,
        auc=auc,
        threshold_at_eer=thr,
        per_domain_eer=per_domain,
        seen_avg_eer=float(np.mean(seen)) if seen else float("nan"),
        unseen_avg_eer=float(np.mean(unseen)) if unseen else float("nan"),
        far_at_threshold=far,
        frr_at_threshold=frr,
        warnings=warnings,
    )


def score_dataset(model, dataset: ClipDataset, batch_size: int = 64) -> np.ndarray:
    scores = np.empty(len(dataset.labels), dtype=np.float64)
    for start in range(0, len(scores), batch_size):
        scores[start : start + batch_size] = score_batch(model, dataset.waveforms[start : start + batch_size])
    return scores


def evaluate(model, manifest: Manifest, split: str, batch_size: int = 64) -> EvalReport:
    """Score one split and report overall, per-domain, and seen/unseen EER."""
    dataset = ClipDataset.from_manifest(manifest, split, model.config.input_len)
    scores = score_dataset(model, dataset, batch_size)
    names = [dataset.domain_vocabulary[d] for d in dataset.domains]
    return report_from_scores(
        scores, dataset.labels, names, manifest.seen_flags(), expected_domains=manifest.domain_vocabulary
    )


def export_features(model, manifest: Manifest, split: str, out_path: Path | str, batch_size: int = 64) -> Path:
    """Write per-clip content and artifact embeddings as CSV for external
    projection tools; one row per clip in manifest order."""
    from .backbone import encode

    dataset = ClipDataset.from_manifest(manifest, split, model.config.input_len)
    d, d_a = model.config.embed_dim, model.config.artifact_proj_dim
    out_path = Path(out_path)
    header = (
        ["clip_id", "label", "domain"]
        + [f"c{i}" for i in range(d)]
        + [f"as{i}" for i in range(d_a)]
        + [f"ag{i}" for i in range(d_a)]
    )
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for start in range(0, len(dataset.labels), batch_size):
            stop = min(start + batch_size, len(dataset.labels))
            with torch.no_grad():
                c, a_s, a_g = encode(model, dataset.waveforms[start:stop])
            for i in range(stop - start):
                row = [
                    dataset.clip_ids[start + i],
                    "real" if dataset.labels[start + i] == 0 else "fake",
                    dataset.domain_vocabulary[dataset.domains[start + i]],
                ]
                row += [f"{v:.8e}" for v in c[i].tolist()]
                row += [f"{v:.8e}" for v in a_s[i].tolist()]
                row += [f"{v:.8e}" for v in a_g[i].tolist()]
                writer.writerow(row)
    return out_path


@dataclass
class LandscapeGrid:
    values: np.ndarray  # (2k+1, 2k+1)
    radius: float
    grid_k: int
    direction_seed: int

    def value_range(self) -> float:
        finite = self.values[np.isfinite(self.values)]
        return float(finite.max() - finite.min()) if len(finite) else float("nan")


def landscape_slice(
    model,
    loss_fn,
    radius: float,
    grid_k: int,
    direction_seed: int,
) -> LandscapeGrid:
    """Loss surface on a 2-D slice through the current weights.

    Two random directions are drawn per parameter tensor and rescaled to
    match that tensor's norm (filter normalization), then the loss is
    evaluated on the (2k+1)^2 grid over [-radius, radius]^2. Weights are
    restored bitwise afterwards; non-finite losses are recorded as +inf.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    params = [p for p in model.parameters() if p.requires_grad]
    originals = [p.detach().clone() for p in params]

    gen = torch.Generator()
    gen.manual_seed(direction_seed & 0x7FFFFFFFFFFFFFFF)
    directions = []
    for _ in range(2):
        d = []
        for p in params:
            v = torch.empty_like(p).normal_(generator=gen)
            pnorm = p.detach().norm()
            vnorm = v.norm()
            if float(vnorm) > 0:
                v = v * (pnorm / vnorm)
            else:
                v = torch.zeros_like(p)
            d.append(v)
        directions.append(d)

    coords = np.linspace(-radius, radius, 2 * grid_k + 1)
    values = np.empty((2 * grid_k + 1, 2 * grid_k + 1), dtype=np.float64)
    try:
        with torch.no_grad():
            for i, alpha in enumerate(coords):
                for j, beta in enumerate(coords):
                    for p, orig, d1, d2 in zip(params, originals, directions[0], directions[1]):
                        if alpha == 0.0 and beta == 0.0:
                            p.copy_(orig)
                        else:
                            p.copy_(orig + float(alpha) * d1 + float(beta) * d2)
                    try:
                        loss = float(loss_fn())
                    except FloatingPointError:
                        loss = float("inf")
                    values[i, j] = loss if np.isfinite(loss) else float("inf")
    finally:
        with torch.no_grad():
            for p, orig in zip(params, originals):
                p.copy_(orig)
    return LandscapeGrid(values=values, radius=radius, grid_k=grid_k, direction_seed=direction_seed)


def save_landscape(grid: LandscapeGrid, out_dir: Path | str, stem: str = "landscape") -> tuple[Path, Path]:
    """CSV matrix plus a JSON sidecar describing the slice."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in grid.values:
            writer.writerow([f"{v:.12e}" if np.isfinite(v) else "inf" for v in row])
    meta_path = out_dir / f"{stem}.json"
    meta_path.write_text(
        json.dumps(
            {"radius": grid.radius, "grid_k": grid.grid_k, "direction_seed": grid.direction_seed},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return csv_path, meta_path
