"""Corpus handling: manifests, waveform preprocessing, synthetic clip
generation with controllable vocoder-style artifacts, and real/fake pair
sampling for training.

Audio is stored as mono 32-bit float WAV. Manifests are CSV files with the
header ``path,label,domain,split,seen``; paths are relative to the manifest's
directory. The domain vocabulary always puts ``"real"`` at index 0 followed
by the remaining domains in lexicographic order.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.io import wavfile

REAL_DOMAIN = "real"
LABELS = ("real", "fake")
SPLITS = ("train", "dev", "test")

ARTIFACT_FAMILIES = (
    "comb_notch",
    "quantize",
    "alias_resample",
    "harmonic_hum",
    "band_phase_scramble",
    "frame_smear",
)


class CorpusError(ValueError):
    """Raised for malformed manifests, corpus configs, or audio inputs."""


@dataclass
class AudioClip:
    """A fixed-length waveform with authenticity and domain labels."""

    samples: np.ndarray
    sample_rate: int
    label: str
    domain: str
    clip_id: str

    def validate(self, target_len: int | None = None) -> None:
        if self.label not in LABELS:
            raise CorpusError(f"bad label {self.label!r}")
        if (self.label == "real") != (self.domain == REAL_DOMAIN):
            raise CorpusError(
                f"clip {self.clip_id}: label {self.label!r} inconsistent with "
                f"domain {self.domain!r}"
            )
        if target_len is not None and len(self.samples) != target_len:
            raise CorpusError(
                f"clip {self.clip_id}: length {len(self.samples)} != {target_len}"
            )
        peak = float(np.max(np.abs(self.samples))) if len(self.samples) else 0.0
        if peak > 1.0 + 1e-6:
            raise CorpusError(f"clip {self.clip_id}: peak {peak} exceeds 1.0")


@dataclass
class ManifestRow:
    path: str
    label: str
    domain: str
    split: str
    seen: int | None = None  # populated for test rows only


@dataclass
class Manifest:
    rows: list[ManifestRow]
    domain_vocabulary: list[str]
    root: Path | None = None

    def split_rows(self, split: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == split]

    def domain_index(self, domain: str) -> int:
        return self.domain_vocabulary.index(domain)

    def fake_domains(self) -> list[str]:
        return [d for d in self.domain_vocabulary if d != REAL_DOMAIN]

    def seen_flags(self) -> dict[str, int]:
        """Map each domain to its seen flag, derived from test rows.

        Real rows and domains absent from the test split count as seen.
        """
        flags = {d: 1 for d in self.domain_vocabulary}
        for r in self.rows:
            if r.split == "test" and r.seen is not None:
                flags[r.domain] = r.seen
        return flags


@dataclass(frozen=True)
class SyntheticVocoderSpec:
    """One synthetic artifact family applied at a given strength."""

    family: str
    strength: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in ARTIFACT_FAMILIES:
            raise CorpusError(f"unknown artifact family {self.family!r}")
        if not 0.0 < self.strength <= 1.0:
            raise CorpusError(f"strength must be in (0, 1], got {self.strength}")


@dataclass
class PairBatch:
    """One real and one fake clip per batch element."""

    x_i: np.ndarray  # (B, L)
    x_j: np.ndarray  # (B, L)
    labels_i: np.ndarray
    labels_j: np.ndarray
    domains_i: np.ndarray
    domains_j: np.ndarray


# ---------------------------------------------------------------------------
# WAV i/o


def write_wav(path: Path | str, samples: np.ndarray, sample_rate: int) -> None:
    wavfile.write(str(path), sample_rate, np.asarray(samples, dtype=np.float32))


def read_wav(path: Path | str) -> tuple[np.ndarray, int]:
    sample_rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise CorpusError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype != np.float32:
        raise CorpusError(f"{path}: expected float32 PCM, got {data.dtype}")
    return data, int(sample_rate)


# ---------------------------------------------------------------------------
# Manifest i/o

_HEADER = ["path", "label", "domain", "split", "seen"]


def load_manifest(path: Path | str) -> Manifest:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError(f"{path}: empty manifest file") from None
        if header != _HEADER:
            raise CorpusError(f"{path}: bad header {header!r}, expected {_HEADER!r}")
        rows: list[ManifestRow] = []
        seen_paths: set[str] = set()
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(_HEADER):
                raise CorpusError(f"{path}:{lineno}: expected {len(_HEADER)} fields, got {len(rec)}")
            p, label, domain, split, seen = rec
            if label not in LABELS:
                raise CorpusError(f"{path}:{lineno}: bad label {label!r}")
            if split not in SPLITS:
                raise CorpusError(f"{path}:{lineno}: unknown split {split!r}")
            if (label == "real") != (domain == REAL_DOMAIN):
                raise CorpusError(f"{path}:{lineno}: label {label!r} inconsistent with domain {domain!r}")
            if p in seen_paths:
                raise CorpusError(f"{path}:{lineno}: duplicate path {p!r}")
            seen_paths.add(p)
            seen_val: int | None
            if seen == "":
                seen_val = None
            elif seen in ("0", "1"):
                seen_val = int(seen)
            else:
                raise CorpusError(f"{path}:{lineno}: bad seen flag {seen!r}")
            rows.append(ManifestRow(p, label, domain, split, seen_val))
    if not rows:
        raise CorpusError(f"{path}: manifest has no rows; domain vocabulary would be empty")
    domains = sorted({r.domain for r in rows} - {REAL_DOMAIN})
    vocab = ([REAL_DOMAIN] if any(r.domain == REAL_DOMAIN for r in rows) else []) + domains
    if vocab and vocab[0] != REAL_DOMAIN:
        vocab = [REAL_DOMAIN] + domains
    return Manifest(rows=rows, domain_vocabulary=vocab, root=path.parent)


def save_manifest(manifest: Manifest, path: Path | str) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for r in manifest.rows:
            seen = "" if r.seen is None else str(r.seen)
            writer.writerow([r.path, r.label, r.domain, r.split, seen])


# ---------------------------------------------------------------------------
# Preprocessing


def preprocess_waveform(raw: Sequence[float] | np.ndarray, target_len: int) -> np.ndarray:
    """Crop to ``target_len`` or tile-repeat the signal until it fits.

    Matches the usual raw-waveform detector front end: long inputs keep their
    first ``target_len`` samples; short inputs are repeated end-to-end and
    truncated. Amplitudes are untouched, so the op is idempotent.
    """
    x = np.asarray(raw)
    if x.size == 0:
        raise CorpusError("cannot preprocess an empty waveform")
    if target_len <= 0:
        raise CorpusError(f"target_len must be positive, got {target_len}")
    if x.shape[0] >= target_len:
        return x[:target_len].copy()
    reps = int(math.ceil(target_len / x.shape[0]))
    return np.tile(x, reps)[:target_len]


# ---------------------------------------------------------------------------
# Synthetic clip generation


def _rng_for(seed: int, *scope: object) -> np.random.Generator:
    """Deterministic per-scope generator; scope parts are hashed so names and
    indices mix into independent streams."""
    h = hashlib.blake2s(repr((int(seed),) + tuple(scope)).encode())
    entropy = int.from_bytes(h.digest()[:16], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy))


def synth_clean_voice(seed: int, length: int, sample_rate: int) -> np.ndarray:
    """Pseudo-speech: drifting-f0 harmonic stack under a syllable-rate
    envelope plus low-level broadband noise, peak-normalized to 0.95."""
    if length <= 0:
        raise CorpusError(f"length must be positive, got {length}")
    rng = _rng_for(seed, "clean")
    t = np.arange(length, dtype=np.float64) / sample_rate

    f0_base = rng.uniform(80.0, 300.0)
    drift_rate = rng.uniform(0.2, 1.0)
    drift_depth = rng.uniform(0.02, 0.08)
    f0 = f0_base * (1.0 + drift_depth * np.sin(2 * np.pi * drift_rate * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    n_harm = int(rng.integers(3, 9))
    rolloff = rng.uniform(0.5, 1.5)
    sig = np.zeros(length, dtype=np.float64)
    for h in range(1, n_harm + 1):
        amp = 1.0 / h**rolloff
        sig += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    syllable_rate = rng.uniform(2.0, 5.0)
    env_shape = rng.uniform(1.0, 2.0)
    env = 0.2 + 0.8 * (0.5 + 0.5 * np.sin(2 * np.pi * syllable_rate * t + rng.uniform(0, 2 * np.pi))) ** env_shape
    sig *= env

    # noise 30 dB below the voiced signal's RMS keeps SNR comfortably >= 20 dB
    rms = float(np.sqrt(np.mean(sig**2)))
    noise = rng.standard_normal(length) * (rms * 10 ** (-30 / 20))
    sig += noise

    sig *= 0.95 / float(np.max(np.abs(sig)))
    return sig


def _comb_notch(x: np.ndarray, strength: float) -> np.ndarray:
    spec = np.fft.rfft(x)
    m = np.arange(spec.shape[0])
    period = 32
    width = max(1, int(round(strength * 16)))
    spec[(m % period) < width] = 0.0
    return np.fft.irfft(spec, n=x.shape[0])


def comb_notch_bins(n_samples: int, strength: float) -> np.ndarray:
    """Indices of the rfft bins zeroed by the comb_notch family."""
    m = np.arange(n_samples // 2 + 1)
    width = max(1, int(round(strength * 16)))
    return np.nonzero((m % 32) < width)[0]


def quantize_amplitude(x: np.ndarray, levels: float) -> np.ndarray:
    """Uniform mid-tread quantization of [-1, 1] amplitudes to ``levels``
    steps; error is bounded by half a step."""
    step = 2.0 / levels
    return np.round(x / step) * step


def _alias_resample(x: np.ndarray, strength: float) -> np.ndarray:
    factor = int(round(2 + 2 * strength))
    down = x[::factor]
    up = np.repeat(down, factor)[: x.shape[0]]
    if up.shape[0] < x.shape[0]:
        up = np.pad(up, (0, x.shape[0] - up.shape[0]), mode="edge")
    return up


_HUM_FREQS = (120.0, 240.0, 480.0, 960.0, 1920.0, 3840.0)


def _harmonic_hum(x: np.ndarray, strength: float, sample_rate: int) -> np.ndarray:
    level_db = -(30.0 * (1.0 - strength))
    rms = float(np.sqrt(np.mean(x**2)))
    amp = rms * 10 ** (level_db / 20.0) / math.sqrt(len(_HUM_FREQS))
    t = np.arange(x.shape[0], dtype=np.float64) / sample_rate
    hum = np.zeros_like(x)
    for f in _HUM_FREQS:
        if f < sample_rate / 2:
            hum += amp * np.sin(2 * np.pi * f * t)
    return x + hum


def _band_phase_scramble(x: np.ndarray, strength: float, sample_rate: int, seed: int) -> np.ndarray:
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.shape[0], d=1.0 / sample_rate)
    lo, hi = 0.1 * sample_rate / 2, 0.75 * sample_rate / 2
    band = (freqs >= lo) & (freqs <= hi)
    rng = _rng_for(seed, "phase_scramble")
    phases = rng.uniform(0, 2 * np.pi, size=int(band.sum()))
    mag = np.abs(spec[band])
    # strength blends original and scrambled phase
    orig = np.angle(spec[band])
    mixed = (1.0 - strength) * orig + strength * phases
    spec[band] = mag * np.exp(1j * mixed)
    return np.fft.irfft(spec, n=x.shape[0])


def _frame_smear(x: np.ndarray, strength: float) -> np.ndarray:
    frame, hop = 1024, 512
    n = x.shape[0]
    analysis = np.hanning(frame)
    synthesis = (1.0 - strength) * analysis + strength * np.ones(frame)
    out = np.zeros(n + frame, dtype=np.float64)
    norm = np.zeros(n + frame, dtype=np.float64)
    for start in range(0, n, hop):
        seg = x[start : start + frame]
        w_a = analysis[: seg.shape[0]]
        w_s = synthesis[: seg.shape[0]]
        out[start : start + seg.shape[0]] += seg * w_a * w_s
        norm[start : start + seg.shape[0]] += analysis[: seg.shape[0]] ** 2
    norm[norm < 1e-8] = 1.0
    return (out / norm)[:n]


def apply_vocoder_artifact(clean: np.ndarray, spec: SyntheticVocoderSpec, sample_rate: int = 16000) -> np.ndarray:
    """Apply one artifact family; same length out, deterministic given spec."""
    x = np.asarray(clean, dtype=np.float64)
    if spec.family == "comb_notch":
        y = _comb_notch(x, spec.strength)
    elif spec.family == "quantize":
        y = quantize_amplitude(x, 2.0 ** (8.0 * (1.0 - spec.strength)))
    elif spec.family == "alias_resample":
        y = _alias_resample(x, spec.strength)
    elif spec.family == "harmonic_hum":
        y = _harmonic_hum(x, spec.strength, sample_rate)
    elif spec.family == "band_phase_scramble":
        y = _band_phase_scramble(x, spec.strength, sample_rate, spec.seed)
    elif spec.family == "frame_smear":
        y = _frame_smear(x, spec.strength)
    else:  # pragma: no cover - guarded by SyntheticVocoderSpec
        raise CorpusError(f"unknown artifact family {spec.family!r}")
    peak = float(np.max(np.abs(y)))
    if peak > 1.0:
        # rescaling (rather than clipping) preserves spectral signatures
        y = y / peak
    return y


# ---------------------------------------------------------------------------
# Corpus generation


@dataclass
class CorpusConfig:
    seed: int = 0
    sample_rate: int = 16000
    clip_len: int = 16384
    clips_per_domain: int = 200
    seen_families: tuple[str, ...] = ("comb_notch", "quantize", "harmonic_hum", "frame_smear")
    unseen_families: tuple[str, ...] = ("alias_resample", "band_phase_scramble")
    strength: float = 0.5

    def validate(self) -> None:
        overlap = set(self.seen_families) & set(self.unseen_families)
        if overlap:
            raise CorpusError(f"seen/unseen families overlap: {sorted(overlap)}")
        for fam in self.seen_families + self.unseen_families:
            if fam not in ARTIFACT_FAMILIES:
                raise CorpusError(f"unknown artifact family {fam!r}")
        if not self.seen_families:
            raise CorpusError("at least one seen family is required")
        if self.clips_per_domain < 2:
            raise CorpusError("clips_per_domain must be >= 2")
        if self.clip_len <= 0 or self.sample_rate <= 0:
            raise CorpusError("clip_len and sample_rate must be positive")


def _seen_split_counts(n: int) -> tuple[int, int, int]:
    train = int(round(0.7 * n))
    dev = int(round(0.15 * n))
    return train, dev, n - train - dev


def generate_corpus(config: CorpusConfig, out_dir: Path | str) -> Manifest:
    """Write a balanced real/fake synthetic corpus and its manifest.

    Seen families are split across train/dev/test; unseen families are
    test-only (at half volume). Real clips mirror the per-split fake counts,
    so every split is label-balanced. Fully deterministic in ``config.seed``.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows: list[ManifestRow] = []
    fake_counts = {"train": 0, "dev": 0, "test": 0}

    def clip_seed(domain: str, idx: int) -> int:
        h = hashlib.blake2s(f"{config.seed}/{domain}/{idx}".encode()).digest()
        return int.from_bytes(h[:8], "little")

    def emit(domain: str, idx: int, split: str, seen: int | None, samples: np.ndarray) -> None:
        rel = f"wav/{domain}/{domain}_{idx:04d}.wav"
        dest = out_dir / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_wav(dest, samples.astype(np.float32), config.sample_rate)
        label = "real" if domain == REAL_DOMAIN else "fake"
        rows.append(ManifestRow(rel, label, domain, split, seen if split == "test" else None))

    for fam in sorted(config.seen_families):
        n = config.clips_per_domain
        tr, dv, te = _seen_split_counts(n)
        splits = ["train"] * tr + ["dev"] * dv + ["test"] * te
        for idx in range(n):
            cs = clip_seed(fam, idx)
            clean = synth_clean_voice(cs, config.clip_len, config.sample_rate)
            spec = SyntheticVocoderSpec(fam, config.strength, seed=cs)
            fake = apply_vocoder_artifact(clean, spec, config.sample_rate)
            emit(fam, idx, splits[idx], 1, fake)
            fake_counts[splits[idx]] += 1

    for fam in sorted(config.unseen_families):
        n = max(1, config.clips_per_domain // 2)
        for idx in range(n):
            cs = clip_seed(fam, idx)
            clean = synth_clean_voice(cs, config.clip_len, config.sample_rate)
            spec = SyntheticVocoderSpec(fam, config.strength, seed=cs)
            fake = apply_vocoder_artifact(clean, spec, config.sample_rate)
            emit(fam, idx, "test", 0, fake)
            fake_counts["test"] += 1

    idx = 0
    for split in SPLITS:
        for _ in range(fake_counts[split]):
            cs = clip_seed(REAL_DOMAIN, idx)
            clean = synth_clean_voice(cs, config.clip_len, config.sample_rate)
            emit(REAL_DOMAIN, idx, split, 1, clean)
            idx += 1

    domains = sorted({r.domain for r in rows} - {REAL_DOMAIN})
    manifest = Manifest(rows=rows, domain_vocabulary=[REAL_DOMAIN] + domains, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest


# ---------------------------------------------------------------------------
# In-memory dataset + pair sampling


@dataclass
class ClipDataset:
    """A split's clips held in memory for training and scoring."""

    waveforms: np.ndarray  # (N, L)
    labels: np.ndarray  # (N,) 0=real 1=fake
    domains: np.ndarray  # (N,) indices into domain_vocabulary
    domain_vocabulary: list[str]
    clip_ids: list[str]
    sample_rate: int

    @classmethod
    def from_manifest(
        cls,
        manifest: Manifest,
        split: str,
        target_len: int,
    ) -> "ClipDataset":
        if manifest.root is None:
            raise CorpusError("manifest has no root directory; load it from disk")
        rows = manifest.split_rows(split)
        if not rows:
            raise CorpusError(f"split {split!r} has no rows")
        waves = np.empty((len(rows), target_len), dtype=np.float32)
        labels = np.empty(len(rows), dtype=np.int64)
        domains = np.empty(len(rows), dtype=np.int64)
        ids = []
        sr = 0
        for i, r in enumerate(rows):
            data, sr = read_wav(manifest.root / r.path)
            waves[i] = preprocess_waveform(data, target_len)
            labels[i] = 0 if r.label == "real" else 1
            domains[i] = manifest.domain_index(r.domain)
            ids.append(Path(r.path).stem)
        return cls(waves, labels, domains, list(manifest.domain_vocabulary), ids, sr)


class PairSampler:
    """Deterministic real/fake pair stream.

    Each epoch shuffles the real clips with a generator derived from
    ``(seed, epoch)`` and draws one fake partner per real, with the fake
    domain chosen uniformly before the clip. The whole epoch's pairing is
    materialized up front so training can resume mid-epoch exactly.
    """

    def __init__(self, dataset: ClipDataset, batch_size: int, rng_seed: int):
        self.dataset = dataset
        self.batch_size = batch_size
        self.rng_seed = rng_seed
        self.real_idx = np.nonzero(dataset.labels == 0)[0]
        self.fake_idx = np.nonzero(dataset.labels == 1)[0]
        if len(self.real_idx) == 0 or len(self.fake_idx) == 0:
            raise CorpusError("pair sampling needs both real and fake clips in the split")
        fake_domains = sorted(set(dataset.domains[self.fake_idx].tolist()))
        self.by_domain = {d: self.fake_idx[dataset.domains[self.fake_idx] == d] for d in fake_domains}
        self.steps_per_epoch = max(1, len(self.real_idx) // batch_size)
        self._cache: tuple[int, tuple[np.ndarray, np.ndarray]] | None = None

    def epoch_pairs(self, epoch: int) -> tuple[np.ndarray, np.ndarray]:
        """Index arrays (reals, fakes) covering the whole epoch."""
        if self._cache is not None and self._cache[0] == epoch:
            return self._cache[1]
        rng = _rng_for(self.rng_seed, "pairs", epoch)
        reals = self.real_idx.copy()
        rng.shuffle(reals)
        n = self.steps_per_epoch * self.batch_size
        reals = reals[:n]
        if len(reals) < n:
            reals = np.resize(reals, n)
        doms = list(self.by_domain)
        picks = rng.integers(0, len(doms), size=n)
        fakes = np.array(
            [self.by_domain[doms[d]][rng.integers(0, len(self.by_domain[doms[d]]))] for d in picks],
            dtype=np.int64,
        )
        self._cache = (epoch, (reals, fakes))
        return reals, fakes

    def batch(self, epoch: int, step: int) -> PairBatch:
        reals, fakes = self.epoch_pairs(epoch)
        sl = slice(step * self.batch_size, (step + 1) * self.batch_size)
        ds = self.dataset
        ri, fi = reals[sl], fakes[sl]
        return PairBatch(
            x_i=ds.waveforms[ri],
            x_j=ds.waveforms[fi],
            labels_i=ds.labels[ri],
            labels_j=ds.labels[fi],
            domains_i=ds.domains[ri],
            domains_j=ds.domains[fi],
        )


def sample_pairs(
    dataset: "ClipDataset | Manifest",
    batch_size: int,
    rng_seed: int,
    split: str = "train",
) -> Iterator[PairBatch]:
    """Endless stream of PairBatches, one seeded shuffle per epoch.

    Accepts either an in-memory ClipDataset or a Manifest (whose clips are
    loaded from disk at their stored length).
    """
    if isinstance(dataset, Manifest):
        rows = dataset.split_rows(split)
        if not rows:
            raise CorpusError(f"split {split!r} has no rows")
        first, _ = read_wav(dataset.root / rows[0].path)
        dataset = ClipDataset.from_manifest(dataset, split, len(first))
    sampler = PairSampler(dataset, batch_size, rng_seed)
    epoch = 0
    while True:
        for step in range(sampler.steps_per_epoch):
            yield sampler.batch(epoch, step)
        epoch += 1
