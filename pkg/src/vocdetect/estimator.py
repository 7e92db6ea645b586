"""Scikit-learn style front door for the detector.

``VocoderArtifactDetector`` wraps corpus preparation, training, and scoring
behind the usual fit/predict surface so the detector composes with sklearn
pipelines, ``clone``, and grid search. X is a (n_clips, n_samples) float
array of waveforms; y uses 0/"real" and 1/"fake".
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .backbone import BackboneConfig, score_batch
from .corpus import ClipDataset, _rng_for, preprocess_waveform
from .decoder import DecoderConfig
from .losses import LossWeights
from .pipeline import Toggles, TrainConfig, train_on_datasets
from .sam import SamConfig
from .validation import check_binary_labels, check_domain_names, check_waveform_batch


class VocoderArtifactDetector(BaseEstimator, ClassifierMixin):
    """Synthesized-voice detector with disentangled artifact features.

    Parameters mirror the training configuration; see the README for the
    config-file equivalents. ``input_len`` fixes the waveform length clips
    are cropped or tile-padded to (default: length of the training clips).
    """

    def __init__(
        self,
        epochs: int = 5,
        batch_size: int = 16,
        learning_rate: float = 2e-4,
        seed: int = 0,
        input_len: int | None = None,
        dev_fraction: float = 0.15,
        lambda1: float = 0.1,
        lambda2: float = 0.3,
        lambda3: float = 0.05,
        lambda4: float = 0.03,
        margin_b: float = 3.0,
        sam_gamma: float = 0.07,
        sam_rule: str = "sign",
        use_rec: bool = True,
        use_cls: bool = True,
        use_con: bool = True,
        use_mi: bool = True,
        use_sam: bool = True,
        num_filters: int = 20,
        num_res_blocks: int = 4,
        channels: int = 24,
        embed_dim: int = 64,
        artifact_proj_dim: int = 32,
        precision: str = "32",
        work_dir: str | None = None,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.input_len = input_len
        self.dev_fraction = dev_fraction
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.lambda4 = lambda4
        self.margin_b = margin_b
        self.sam_gamma = sam_gamma
        self.sam_rule = sam_rule
        self.use_rec = use_rec
        self.use_cls = use_cls
        self.use_con = use_con
        self.use_mi = use_mi
        self.use_sam = use_sam
        self.num_filters = num_filters
        self.num_res_blocks = num_res_blocks
        self.channels = channels
        self.embed_dim = embed_dim
        self.artifact_proj_dim = artifact_proj_dim
        self.precision = precision
        self.work_dir = work_dir

    # ------------------------------------------------------------------

    def _train_config(self, input_len: int, grid: tuple[int, int]) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            precision=self.precision,
            weights=LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.margin_b),
            sam=SamConfig(gamma=self.sam_gamma, rule=self.sam_rule, enabled=self.use_sam),
            toggles=Toggles(self.use_rec, self.use_cls, self.use_con, self.use_mi, self.use_sam),
            model=BackboneConfig(
                num_filters=self.num_filters,
                num_res_blocks=self.num_res_blocks,
                channels=self.channels,
                embed_dim=self.embed_dim,
                recurrent_dim=self.embed_dim,
                artifact_proj_dim=self.artifact_proj_dim,
                input_len=input_len,
            ),
            decoder=DecoderConfig(grid_h=grid[0], grid_w=grid[1], output_len=input_len),
        )

    @staticmethod
    def _grid_for(embed_dim: int) -> tuple[int, int]:
        side = 1
        for cand in (8, 4, 2, 1):
            if embed_dim % (cand * cand) == 0:
                side = cand
                break
        return side, side

    def fit(self, X, y, domains=None):
        X = check_waveform_batch(X)
        y = check_binary_labels(y, X.shape[0])
        if domains is None:
            names = ["real" if v == 0 else "synthetic" for v in y]
        else:
            names = check_domain_names(domains, y)
        if (y == 0).sum() == 0 or (y == 1).sum() == 0:
            raise ValueError("fit needs both real and fake clips")

        input_len = self.input_len or X.shape[1]
        waves = np.stack([preprocess_waveform(row, input_len) for row in X]).astype(np.float32)
        vocab = ["real"] + sorted(set(names) - {"real"})
        dom_idx = np.array([vocab.index(n) for n in names], dtype=np.int64)

        rng = _rng_for(self.seed, "estimator-split")
        order = rng.permutation(len(y))
        n_dev = max(2, int(round(self.dev_fraction * len(y))))
        dev_sel = order[:n_dev]
        train_sel = order[n_dev:]
        # dev needs both classes for EER; fall back to the full set when the
        # draw (or a tiny corpus) leaves a side single-class
        def both_classes(sel):
            return len(sel) >= 2 and len(np.unique(y[sel])) == 2

        if not both_classes(dev_sel) or not both_classes(train_sel):
            dev_sel = train_sel = np.arange(len(y))

        def subset(sel) -> ClipDataset:
            return ClipDataset(
                waveforms=waves[sel],
                labels=y[sel],
                domains=dom_idx[sel],
                domain_vocabulary=vocab,
                clip_ids=[f"clip_{i:05d}" for i in sel],
                sample_rate=16000,
            )

        config = self._train_config(input_len, self._grid_for(self.embed_dim))
        work = Path(self.work_dir) if self.work_dir else Path(tempfile.mkdtemp(prefix="vocdetect_"))
        result = train_on_datasets(config, subset(train_sel), subset(dev_sel), work)

        from .checkpoint import load_checkpoint

        self.model_, _, _ = load_checkpoint(result.best_checkpoint)
        self.classes_ = np.array([0, 1])
        self.domain_vocabulary_ = vocab
        self.input_len_ = input_len
        self.train_result_ = result
        return self

    # ------------------------------------------------------------------

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise RuntimeError("this VocoderArtifactDetector instance is not fitted yet")

    def _scores(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_waveform_batch(X)
        waves = np.stack([preprocess_waveform(row, self.input_len_) for row in X]).astype(np.float32)
        return score_batch(self.model_, waves)

    def decision_function(self, X) -> np.ndarray:
        """P(fake) per clip."""
        return self._scores(X)

    def predict_proba(self, X) -> np.ndarray:
        p_fake = self._scores(X)
        return np.column_stack([1.0 - p_fake, p_fake])

    def predict(self, X) -> np.ndarray:
        return (self._scores(X) >= 0.5).astype(np.int64)
