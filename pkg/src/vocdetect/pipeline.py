"""End-to-end training loop.

Each step samples a real/fake pair batch, encodes both sides, computes the
enabled loss terms (cross-reconstruction swaps artifact features between
pair partners), and takes one sharpness-aware step. The dev split is scored
periodically and the checkpoint with the lowest dev EER is retained.

All randomness is derived from ``(seed, epoch)`` for the pair shuffle and
``(seed, global_step)`` for triplet mining, so runs are reproducible from
the config alone and training can resume from any step checkpoint exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .backbone import BackboneConfig, DetectorModel, init_model
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import ClipDataset, Manifest, PairSampler, _rng_for, load_manifest
from .decoder import DecoderConfig
from .losses import LossReport, LossWeights
from .metrics import compute_auc, compute_eer, score_dataset
from .sam import SamConfig, sam_step


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_checkpoint: Path | None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class Toggles:
    rec: bool = True
    cls: bool = True
    con: bool = True
    mi: bool = True
    sam: bool = True

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 2e-4
    seed: int = 0
    eval_every: int = 0  # 0 = at each epoch end
    save_every: int = 0  # 0 = no periodic step checkpoints
    max_steps: int = 0  # 0 = run all epochs; otherwise stop after N steps
    precision: str = "32"
    weights: LossWeights = field(default_factory=LossWeights)
    sam: SamConfig = field(default_factory=SamConfig)
    toggles: Toggles = field(default_factory=Toggles)
    model: BackboneConfig = field(default_factory=BackboneConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (the MI bound needs mismatched pairs)")
        if self.precision not in ("32", "64"):
            raise ValueError("precision must be '32' or '64'")
        self.weights.validate()
        self.sam.validate()

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "64" else torch.float32


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    metrics_path: Path
    best_dev_eer: float
    global_steps: int


def _step_fn(model: DetectorModel, cfg: TrainConfig, x, labels, domains, triples_s, triples_g):
    """Loss closure for one batch; deterministic across repeated calls."""
    t = cfg.toggles
    w = cfg.weights
    lam1 = w.lambda1 if t.cls else 1.0
    batch = x.shape[0]
    perm = torch.cat([torch.arange(batch // 2, batch), torch.arange(0, batch // 2)])

    def fn():
        zero = x.new_zeros(())
        a_emb = model.artifact_encoder(x)
        a_g = model.proj_g(a_emb)
        need_a_s = t.cls or t.con or t.rec
        a_s = model.proj_s(a_emb) if need_a_s else None
        need_c = t.rec or t.mi
        c = model.content_encoder(x) if need_c else None

        if t.cls:
            l_cls = L.classification_loss(model.head_domain(a_s), domains, model.head_auth(a_g), labels, lam1)
        else:
            l_cls = lam1 * torch.nn.functional.cross_entropy(model.head_auth(a_g), labels)

        l_con_s = L.triplet_contrastive_term(a_s, triples_s, w.margin_b) if t.con else zero
        l_con_g = L.triplet_contrastive_term(a_g, triples_g, w.margin_b) if t.con else zero

        if t.rec:
            x_self = model.decoder(c, a_s, a_g)
            x_cross = model.decoder(c, a_s[perm], a_g[perm])
            l_rec = L.reconstruction_loss(x, x_self, x_cross)
        else:
            l_rec = zero

        l_mi = L.mi_lower_bound(model.mi_proj_c(c), model.mi_proj_a(a_g)) if t.mi else zero

        total = L.total_loss(l_cls, l_con_s, l_con_g, l_rec, l_mi, w)
        report = LossReport(
            l_cls=float(l_cls.detach()),
            l_con_s=float(l_con_s.detach()),
            l_con_g=float(l_con_g.detach()),
            l_rec=float(l_rec.detach()),
            l_mi=float(l_mi.detach()),
            total=float(total.detach()),
        )
        return total, report

    return fn


def _evaluate_dev(model: DetectorModel, dev: ClipDataset) -> tuple[float, float]:
    scores = score_dataset(model, dev)
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("model produced non-finite dev scores")
    eer, _ = compute_eer(scores, dev.labels)
    auc = compute_auc(scores, dev.labels)
    return eer, auc


def train_on_datasets(
    config: TrainConfig,
    train_ds: ClipDataset,
    dev_ds: ClipDataset,
    out_dir: Path | str,
    resume_from: Path | str | None = None,
) -> TrainResult:
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"

    prev_threads = torch.get_num_threads()
    if config.precision == "64":
        # single-threaded 64-bit mode guarantees bitwise reproducibility
        torch.set_num_threads(1)

    bcfg = BackboneConfig(**{**config.model.to_dict(), "num_domains": len(train_ds.domain_vocabulary)})
    dcfg = DecoderConfig(**{**config.decoder.to_dict(), "output_len": bcfg.input_len})

    start_epoch, start_step, global_step = 0, 0, 0
    best_eer = float("inf")
    if resume_from is None:
        model = init_model(bcfg, config.seed, dcfg, dtype=config.dtype)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        log_mode = "w"
    else:
        model, opt_state, meta = load_checkpoint(resume_from)
        if meta["domain_vocabulary"] != train_ds.domain_vocabulary:
            raise ValueError("checkpoint domain vocabulary does not match the dataset")
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        if opt_state is not None:
            optimizer.load_state_dict(opt_state)
        start_epoch = meta["rng"]["next_epoch"]
        start_step = meta["rng"]["next_step_in_epoch"]
        global_step = meta["rng"]["global_step"]
        best_eer = meta["best_dev_eer"]
        log_mode = "a"

    sampler = PairSampler(train_ds, config.batch_size, config.seed)
    steps_per_epoch = sampler.steps_per_epoch
    sam_cfg = SamConfig(
        gamma=config.sam.gamma,
        rule=config.sam.rule,
        enabled=config.sam.enabled and config.toggles.sam,
    )

    def checkpoint_meta(next_epoch: int, next_step: int) -> dict:
        return {
            "domain_vocabulary": train_ds.domain_vocabulary,
            "best_dev_eer": best_eer,
            "rng": {
                "scheme": "derived-from-counters",
                "seed": config.seed,
                "next_epoch": next_epoch,
                "next_step_in_epoch": next_step,
                "global_step": global_step,
            },
        }

    log = metrics_path.open(log_mode)

    def write(record: dict) -> None:
        log.write(json.dumps(record, sort_keys=True) + "\n")
        log.flush()

    last_saved: Path | None = last_path if last_path.exists() else None
    stop = False
    try:
        for epoch in range(start_epoch, config.epochs):
            if stop:
                break
            first_step = start_step if epoch == start_epoch else 0
            for step in range(first_step, steps_per_epoch):
                batch = sampler.batch(epoch, step)
                x = torch.as_tensor(
                    np.concatenate([batch.x_i, batch.x_j], axis=0), dtype=config.dtype
                )
                labels = torch.as_tensor(np.concatenate([batch.labels_i, batch.labels_j]))
                domains = torch.as_tensor(np.concatenate([batch.domains_i, batch.domains_j]))

                mine_rng = _rng_for(config.seed, "mine", global_step)
                triples_s = L.mine_triplet_indices(domains.numpy(), mine_rng) if config.toggles.con else []
                triples_g = L.mine_triplet_indices(labels.numpy(), mine_rng) if config.toggles.con else []

                fn = _step_fn(model, config, x, labels, domains, triples_s, triples_g)
                try:
                    result = sam_step(model, fn, optimizer, sam_cfg)
                except FloatingPointError as exc:
                    write({"kind": "divergence", "step": global_step, "epoch": epoch, "error": str(exc)})
                    raise TrainingDiverged(str(exc), last_saved) from exc

                report: LossReport = result.aux
                record = {"kind": "step", "step": global_step, "epoch": epoch, **report.to_dict()}
                if result.loss_perturbed is not None:
                    record["total_perturbed"] = result.loss_perturbed
                write(record)
                global_step += 1

                next_epoch, next_step = (epoch, step + 1) if step + 1 < steps_per_epoch else (epoch + 1, 0)
                if config.save_every > 0 and global_step % config.save_every == 0:
                    last_saved = save_checkpoint(
                        out_dir / f"step_{global_step:06d}.ckpt", model, optimizer, checkpoint_meta(next_epoch, next_step)
                    )

                if config.max_steps > 0 and global_step >= config.max_steps:
                    stop = True
                end_of_epoch = step + 1 == steps_per_epoch
                due = (
                    global_step % config.eval_every == 0
                    if config.eval_every > 0
                    else end_of_epoch
                )
                if due or stop or (epoch + 1 == config.epochs and end_of_epoch):
                    try:
                        dev_eer, dev_auc = _evaluate_dev(model, dev_ds)
                    except FloatingPointError as exc:
                        write({"kind": "divergence", "step": global_step, "epoch": epoch, "error": str(exc)})
                        raise TrainingDiverged(str(exc), last_saved) from exc
                    meta = checkpoint_meta(next_epoch, next_step)
                    # ties go to the later checkpoint: dev EER saturates
                    # quickly at this scale and longer-trained minimizers
                    # generalize better to unseen domains
                    if dev_eer <= best_eer:
                        best_eer = dev_eer
                        meta["best_dev_eer"] = best_eer
                        save_checkpoint(best_path, model, optimizer, meta)
                    save_checkpoint(last_path, model, optimizer, meta)
                    last_saved = last_path
                    write(
                        {
                            "kind": "eval",
                            "step": global_step,
                            "epoch": epoch,
                            "dev_eer": dev_eer,
                            "dev_auc": dev_auc,
                            "best_dev_eer": best_eer,
                            "checkpoint": last_path.name,
                        }
                    )
                if stop:
                    break
    finally:
        log.close()
        torch.set_num_threads(prev_threads)

    if not best_path.exists():  # no eval point improved on +inf (degenerate)
        save_checkpoint(best_path, model, optimizer, checkpoint_meta(config.epochs, 0))
    return TrainResult(
        best_checkpoint=best_path,
        last_checkpoint=last_path,
        metrics_path=metrics_path,
        best_dev_eer=best_eer,
        global_steps=global_step,
    )


def train(
    config: TrainConfig,
    manifest: Manifest | Path | str,
    out_dir: Path | str,
    resume_from: Path | str | None = None,
) -> TrainResult:
    """Train from a manifest's train/dev splits; see train_on_datasets."""
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    train_ds = ClipDataset.from_manifest(manifest, "train", config.model.input_len)
    dev_ds = ClipDataset.from_manifest(manifest, "dev", config.model.input_len)
    return train_on_datasets(config, train_ds, dev_ds, out_dir, resume_from)
