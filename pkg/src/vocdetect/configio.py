"""Flat key=value config files with dotted keys and --set overrides.

Every key has a default; unknown keys are rejected by name. The resolved
(defaults + file + overrides) mapping can be written back out as a snapshot
so any run is reproducible from its output directory.
"""

from __future__ import annotations

from pathlib import Path

from .backbone import BackboneConfig
from .corpus import CorpusConfig
from .decoder import DecoderConfig
from .losses import LossWeights
from .sam import SamConfig


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or malformed config files."""


def _parse_bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("true", "1", "yes"):
        return True
    if s in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _parse_list(v: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in v.split(",") if s.strip())


CORPUS_DEFAULTS: dict[str, object] = {
    "seed": 0,
    "sample_rate": 16000,
    "clip_len": 16384,
    "clips_per_domain": 200,
    "seen_families": ("comb_notch", "quantize", "harmonic_hum", "frame_smear"),
    "unseen_families": ("alias_resample", "band_phase_scramble"),
    "strength": 0.5,
}

TRAIN_DEFAULTS: dict[str, object] = {
    "epochs": 20,
    "batch_size": 16,
    "learning_rate": 0.0002,
    "seed": 0,
    "eval_every": 0,  # 0 = evaluate at each epoch end
    "save_every": 0,  # 0 = no periodic step checkpoints
    "max_steps": 0,  # 0 = run all epochs
    "precision": "32",
    "weights.lambda1": 0.1,
    "weights.lambda2": 0.3,
    "weights.lambda3": 0.05,
    "weights.lambda4": 0.03,
    "weights.margin_b": 3.0,
    "weights.mi_sign": -1.0,
    "sam.enabled": True,
    "sam.gamma": 0.07,
    "sam.rule": "sign",
    "toggles.rec": True,
    "toggles.cls": True,
    "toggles.con": True,
    "toggles.mi": True,
    "toggles.sam": True,
    "model.num_filters": 20,
    "model.num_res_blocks": 4,
    "model.channels": 24,
    "model.recurrent_dim": 64,
    "model.embed_dim": 64,
    "model.artifact_proj_dim": 32,
    "model.input_len": 16384,
    "model.frontend_kernel": 65,
    "model.frontend_stride": 8,
    "decoder.grid_h": 8,
    "decoder.grid_w": 8,
    "decoder.channels": 16,
    "decoder.num_upsample_stages": 2,
}


def _coerce(key: str, raw: str, default: object) -> object:
    try:
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return _parse_list(raw)
        return raw.strip()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def parse_kv_file(path: Path | str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def resolve(
    defaults: dict[str, object],
    file_path: Path | str | None = None,
    overrides: list[str] | None = None,
) -> dict[str, object]:
    resolved = dict(defaults)

    def apply(key: str, raw: str, origin: str) -> None:
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r} ({origin})")
        resolved[key] = _coerce(key, raw, defaults[key])

    if file_path is not None:
        for key, raw in parse_kv_file(file_path).items():
            apply(key, raw, f"from {file_path}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        apply(key.strip(), raw.strip(), "from --set")
    return resolved


def snapshot_text(resolved: dict[str, object]) -> str:
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if isinstance(value, tuple):
            value = ",".join(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def corpus_config_from(resolved: dict[str, object]) -> CorpusConfig:
    cfg = CorpusConfig(
        seed=int(resolved["seed"]),
        sample_rate=int(resolved["sample_rate"]),
        clip_len=int(resolved["clip_len"]),
        clips_per_domain=int(resolved["clips_per_domain"]),
        seen_families=tuple(resolved["seen_families"]),
        unseen_families=tuple(resolved["unseen_families"]),
        strength=float(resolved["strength"]),
    )
    cfg.validate()
    return cfg


def train_config_from(resolved: dict[str, object]):
    from .pipeline import Toggles, TrainConfig

    weights = LossWeights(
        lambda1=float(resolved["weights.lambda1"]),
        lambda2=float(resolved["weights.lambda2"]),
        lambda3=float(resolved["weights.lambda3"]),
        lambda4=float(resolved["weights.lambda4"]),
        margin_b=float(resolved["weights.margin_b"]),
        mi_sign=float(resolved["weights.mi_sign"]),
    )
    sam = SamConfig(
        gamma=float(resolved["sam.gamma"]),
        rule=str(resolved["sam.rule"]),
        enabled=bool(resolved["sam.enabled"]),
    )
    toggles = Toggles(
        rec=bool(resolved["toggles.rec"]),
        cls=bool(resolved["toggles.cls"]),
        con=bool(resolved["toggles.con"]),
        mi=bool(resolved["toggles.mi"]),
        sam=bool(resolved["toggles.sam"]),
    )
    model = BackboneConfig(
        num_filters=int(resolved["model.num_filters"]),
        num_res_blocks=int(resolved["model.num_res_blocks"]),
        channels=int(resolved["model.channels"]),
        recurrent_dim=int(resolved["model.recurrent_dim"]),
        embed_dim=int(resolved["model.embed_dim"]),
        artifact_proj_dim=int(resolved["model.artifact_proj_dim"]),
        input_len=int(resolved["model.input_len"]),
        frontend_kernel=int(resolved["model.frontend_kernel"]),
        frontend_stride=int(resolved["model.frontend_stride"]),
    )
    decoder = DecoderConfig(
        grid_h=int(resolved["decoder.grid_h"]),
        grid_w=int(resolved["decoder.grid_w"]),
        channels=int(resolved["decoder.channels"]),
        num_upsample_stages=int(resolved["decoder.num_upsample_stages"]),
        output_len=int(resolved["model.input_len"]),
    )
    precision = str(resolved["precision"])
    if precision not in ("32", "64"):
        raise ConfigError(f"precision must be '32' or '64', got {precision!r}")
    return TrainConfig(
        epochs=int(resolved["epochs"]),
        batch_size=int(resolved["batch_size"]),
        learning_rate=float(resolved["learning_rate"]),
        seed=int(resolved["seed"]),
        eval_every=int(resolved["eval_every"]),
        save_every=int(resolved["save_every"]),
        max_steps=int(resolved["max_steps"]),
        precision=precision,
        weights=weights,
        sam=sam,
        toggles=toggles,
        model=model,
        decoder=decoder,
    )
