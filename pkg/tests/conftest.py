import numpy as np
import pytest
import torch

from vocdetect.backbone import BackboneConfig
from vocdetect.corpus import CorpusConfig, generate_corpus, load_manifest
from vocdetect.decoder import DecoderConfig
from vocdetect.pipeline import TrainConfig


def tiny_backbone(num_domains: int = 3, input_len: int = 256) -> BackboneConfig:
    """Smallest config that exercises every code path (d=8, d_a=8)."""
    return BackboneConfig(
        num_filters=4,
        num_res_blocks=2,
        channels=6,
        recurrent_dim=8,
        embed_dim=8,
        artifact_proj_dim=8,
        num_domains=num_domains,
        input_len=input_len,
        frontend_kernel=17,
        frontend_stride=4,
    )


def tiny_decoder(output_len: int = 256) -> DecoderConfig:
    return DecoderConfig(grid_h=2, grid_w=2, channels=4, num_upsample_stages=2, output_len=output_len)


def micro_train_config(**kw) -> TrainConfig:
    defaults = dict(
        epochs=2,
        batch_size=4,
        learning_rate=1e-3,
        seed=0,
        precision="64",
        model=BackboneConfig(
            num_filters=6,
            num_res_blocks=2,
            channels=8,
            recurrent_dim=16,
            embed_dim=16,
            artifact_proj_dim=8,
            input_len=2048,
            frontend_kernel=33,
            frontend_stride=4,
        ),
        decoder=DecoderConfig(grid_h=4, grid_w=4, channels=4, output_len=2048),
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    """64-training-clip corpus for fast pipeline tests."""
    out = tmp_path_factory.mktemp("micro_corpus")
    cfg = CorpusConfig(
        seed=5,
        sample_rate=8000,
        clip_len=2048,
        clips_per_domain=16,
        seen_families=("quantize", "harmonic_hum"),
        unseen_families=("alias_resample",),
    )
    generate_corpus(cfg, out)
    return load_manifest(out / "manifest.csv")


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """The default 2000-clip corpus used by the acceptance experiments."""
    out = tmp_path_factory.mktemp("desk_corpus")
    generate_corpus(CorpusConfig(), out)
    return load_manifest(out / "manifest.csv")


def fd_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def fd_param_grad(loss_fn, param: torch.Tensor, indices, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a closure w.r.t. chosen parameter
    coordinates; the parameter is restored exactly afterwards."""

    def evaluate() -> float:
        value = loss_fn()
        return float(value.detach()) if torch.is_tensor(value) else float(value)

    out = []
    flat = param.data.view(-1)
    for idx in indices:
        orig = flat[idx].item()
        with torch.no_grad():
            flat[idx] = orig + eps
        fp = evaluate()
        with torch.no_grad():
            flat[idx] = orig - eps
        fm = evaluate()
        with torch.no_grad():
            flat[idx] = orig
        out.append((fp - fm) / (2 * eps))
    return np.array(out)


def assert_close(actual, expected, rtol: float, atol: float = 1e-10, label: str = ""):
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    err = np.abs(actual - expected)
    tol = atol + rtol * np.abs(expected)
    worst = (err - tol).max()
    assert np.all(err <= tol), f"{label}: worst excess {worst:.3e}\nactual={actual}\nexpected={expected}"
