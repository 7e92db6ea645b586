import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vocdetect.corpus import (
    ARTIFACT_FAMILIES,
    ClipDataset,
    CorpusConfig,
    CorpusError,
    PairSampler,
    SyntheticVocoderSpec,
    apply_vocoder_artifact,
    comb_notch_bins,
    generate_corpus,
    load_manifest,
    preprocess_waveform,
    quantize_amplitude,
    sample_pairs,
    save_manifest,
    synth_clean_voice,
)


def write_manifest(tmp_path, lines):
    path = tmp_path / "manifest.csv"
    path.write_text("path,label,domain,split,seen\n" + "".join(l + "\n" for l in lines))
    return path


class TestManifest:
    def test_minimal_wellformed(self, tmp_path):
        path = write_manifest(
            tmp_path,
            [
                "wav/r0.wav,real,real,train,",
                "wav/r1.wav,real,real,test,1",
                "wav/f0.wav,fake,vocoder_A,train,",
                "wav/f1.wav,fake,vocoder_A,test,1",
            ],
        )
        m = load_manifest(path)
        assert len(m.rows) == 4
        assert m.domain_vocabulary == ["real", "vocoder_A"]

    def test_vocabulary_order_real_first_then_lexicographic(self, tmp_path):
        path = write_manifest(
            tmp_path,
            [
                "a.wav,fake,zeta,train,",
                "b.wav,fake,alpha,train,",
                "c.wav,real,real,train,",
            ],
        )
        assert load_manifest(path).domain_vocabulary == ["real", "alpha", "zeta"]

    def test_duplicate_path_rejected(self, tmp_path):
        path = write_manifest(tmp_path, ["a.wav,real,real,train,", "a.wav,fake,v,train,"])
        with pytest.raises(CorpusError, match="duplicate"):
            load_manifest(path)

    def test_header_only_rejected(self, tmp_path):
        path = write_manifest(tmp_path, [])
        with pytest.raises(CorpusError, match="no rows"):
            load_manifest(path)

    def test_unknown_split_rejected(self, tmp_path):
        path = write_manifest(tmp_path, ["a.wav,real,real,validation,"])
        with pytest.raises(CorpusError, match="split"):
            load_manifest(path)

    def test_malformed_row_names_line(self, tmp_path):
        path = write_manifest(tmp_path, ["a.wav,real,real,train,", "b.wav,real,real"])
        with pytest.raises(CorpusError, match=":3:"):
            load_manifest(path)

    def test_label_domain_consistency(self, tmp_path):
        path = write_manifest(tmp_path, ["a.wav,real,vocoder_A,train,"])
        with pytest.raises(CorpusError, match="inconsistent"):
            load_manifest(path)

    def test_save_load_roundtrip(self, tmp_path):
        path = write_manifest(
            tmp_path,
            ["a.wav,real,real,train,", "b.wav,fake,v,test,0"],
        )
        m = load_manifest(path)
        out = tmp_path / "copy.csv"
        save_manifest(m, out)
        assert load_manifest(out).rows == m.rows

    def test_seen_flags(self, tmp_path):
        path = write_manifest(
            tmp_path,
            [
                "a.wav,real,real,train,",
                "b.wav,fake,seen_v,test,1",
                "c.wav,fake,unseen_v,test,0",
            ],
        )
        flags = load_manifest(path).seen_flags()
        assert flags["seen_v"] == 1 and flags["unseen_v"] == 0 and flags["real"] == 1


class TestPreprocess:
    def test_identity_when_exact_length(self):
        x = np.linspace(-1, 1, 128)
        assert np.array_equal(preprocess_waveform(x, 128), x)

    def test_tile_repeat_rule(self):
        # hand application of the tile-repeat rule
        out = preprocess_waveform(np.array([0.1, -0.2]), 5)
        assert np.allclose(out, [0.1, -0.2, 0.1, -0.2, 0.1])

    def test_crop_long_input(self):
        x = np.arange(10.0)
        assert np.array_equal(preprocess_waveform(x, 4), x[:4])

    def test_empty_rejected(self):
        with pytest.raises(CorpusError):
            preprocess_waveform(np.array([]), 8)

    @given(st.integers(1, 50), st.integers(1, 80), st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_idempotent(self, n_in, target, seed):
        x = np.random.default_rng(seed).uniform(-1, 1, n_in)
        once = preprocess_waveform(x, target)
        twice = preprocess_waveform(once, target)
        assert np.array_equal(once, twice)
        assert len(once) == target


class TestSynthCleanVoice:
    def test_deterministic(self):
        a = synth_clean_voice(7, 4096, 16000)
        b = synth_clean_voice(7, 4096, 16000)
        assert np.array_equal(a, b)

    def test_seed_sensitivity(self):
        a = synth_clean_voice(1, 4096, 16000)
        b = synth_clean_voice(2, 4096, 16000)
        assert np.linalg.norm(a - b) > 0

    def test_peak_normalized(self):
        x = synth_clean_voice(3, 4096, 16000)
        assert np.max(np.abs(x)) == pytest.approx(0.95, rel=1e-9)

    def test_energy_below_quarter_rate(self):
        # FFT oracle: harmonics top out well below sample_rate / 4
        sr = 16000
        x = synth_clean_voice(11, 16384, sr)
        spec = np.abs(np.fft.rfft(x)) ** 2
        freqs = np.fft.rfftfreq(len(x), 1 / sr)
        assert spec[freqs < sr / 4].sum() / spec.sum() > 0.9

    def test_bad_length(self):
        with pytest.raises(CorpusError):
            synth_clean_voice(0, 0, 16000)


@pytest.fixture(scope="module")
def clean():
    return synth_clean_voice(42, 4096, 16000)


class TestArtifacts:
    def test_quantizer_vanishing_limit(self, clean):
        # with >= 16-bit levels the quantizer is within half a step of input
        out = quantize_amplitude(clean, 2.0**16)
        assert np.max(np.abs(out - clean)) < 2.0**-15

    def test_quantize_strength_mapping(self, clean):
        out = apply_vocoder_artifact(clean, SyntheticVocoderSpec("quantize", 0.5, 0))
        levels = 2.0 ** (8 * 0.5)
        vals = np.unique(np.round(out / (2.0 / levels)))
        assert len(vals) <= levels + 1

    def test_comb_notch_zeroes_bins(self, clean):
        out = apply_vocoder_artifact(clean, SyntheticVocoderSpec("comb_notch", 0.5, 0))
        spec = np.abs(np.fft.rfft(out))
        notched = comb_notch_bins(len(out), 0.5)
        assert spec[notched].max() < 1e-9 * spec.max()

    def test_deterministic(self, clean):
        spec = SyntheticVocoderSpec("band_phase_scramble", 0.5, seed=9)
        a = apply_vocoder_artifact(clean, spec)
        b = apply_vocoder_artifact(clean, spec)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("family", ARTIFACT_FAMILIES)
    def test_every_family_changes_signal(self, clean, family):
        out = apply_vocoder_artifact(clean, SyntheticVocoderSpec(family, 0.5, 3))
        assert out.shape == clean.shape
        assert np.linalg.norm(out - clean) > 0
        assert np.max(np.abs(out)) <= 1.0 + 1e-12

    def test_unknown_family_rejected(self):
        with pytest.raises(CorpusError, match="unknown artifact family"):
            SyntheticVocoderSpec("reverb", 0.5, 0)

    def test_strength_bounds(self):
        with pytest.raises(CorpusError):
            SyntheticVocoderSpec("quantize", 0.0, 0)
        with pytest.raises(CorpusError):
            SyntheticVocoderSpec("quantize", 1.5, 0)


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus_small")
    cfg = CorpusConfig(
        seed=1,
        sample_rate=8000,
        clip_len=1024,
        clips_per_domain=10,
        seen_families=("comb_notch", "quantize", "harmonic_hum", "frame_smear"),
        unseen_families=("alias_resample", "band_phase_scramble"),
    )
    return generate_corpus(cfg, out), out


class TestGenerateCorpus:
    def test_structure(self, small):
        manifest, _ = small
        fake_domains = set(manifest.fake_domains())
        assert len(fake_domains) == 6
        test_domains = {r.domain for r in manifest.split_rows("test")}
        assert fake_domains <= test_domains

    def test_unseen_absent_from_train_dev(self, small):
        manifest, _ = small
        unseen = {"alias_resample", "band_phase_scramble"}
        for split in ("train", "dev"):
            assert not unseen & {r.domain for r in manifest.split_rows(split)}

    def test_split_balance(self, small):
        manifest, _ = small
        for split in ("train", "dev", "test"):
            rows = manifest.split_rows(split)
            assert sum(r.label == "real" for r in rows) == sum(r.label == "fake" for r in rows)

    def test_seen_flag_only_on_test_rows(self, small):
        manifest, _ = small
        for r in manifest.rows:
            assert (r.seen is not None) == (r.split == "test")

    def test_deterministic_manifests(self, tmp_path):
        cfg = CorpusConfig(seed=2, sample_rate=8000, clip_len=512, clips_per_domain=4,
                           seen_families=("quantize",), unseen_families=())
        generate_corpus(cfg, tmp_path / "a")
        generate_corpus(cfg, tmp_path / "b")
        assert (tmp_path / "a/manifest.csv").read_bytes() == (tmp_path / "b/manifest.csv").read_bytes()

    def test_overlap_rejected(self, tmp_path):
        cfg = CorpusConfig(seen_families=("quantize",), unseen_families=("quantize",))
        with pytest.raises(CorpusError, match="overlap"):
            generate_corpus(cfg, tmp_path)

    @pytest.mark.slow
    def test_default_config_yields_2000_clips(self, desk_corpus):
        assert len(desk_corpus.rows) == 2000


@pytest.mark.slow
class TestDefaultCorpusSeparability:
    def test_linear_probe_pairwise(self, desk_corpus):
        """Families must stay pairwise separable by a linear probe on
        averaged log power spectra (>= 95% held-out accuracy)."""
        ds = ClipDataset.from_manifest(desk_corpus, "train", 16384)
        dev = ClipDataset.from_manifest(desk_corpus, "dev", 16384)
        fams = [d for d in ds.domain_vocabulary if d != "real"]
        seen = [f for f in fams if any(ds.domain_vocabulary[d] == f for d in ds.domains)]

        def spectra(dataset):
            segs = dataset.waveforms.reshape(len(dataset.labels), 8, 2048)
            p = np.abs(np.fft.rfft(segs * np.hanning(2048), axis=2)) ** 2
            return np.log(p.mean(axis=1) + 1e-12)

        Xtr, Xdv = spectra(ds), spectra(dev)
        for fa, fb in itertools.combinations(seen, 2):
            ia, ib = ds.domain_vocabulary.index(fa), ds.domain_vocabulary.index(fb)
            tr_mask = np.isin(ds.domains, [ia, ib])
            dv_mask = np.isin(dev.domains, [ia, ib])
            A = Xtr[tr_mask]
            ytr = np.where(ds.domains[tr_mask] == ia, 1.0, -1.0)
            mu, sd = A.mean(0), A.std(0) + 1e-9
            w, *_ = np.linalg.lstsq(np.c_[(A - mu) / sd, np.ones(len(A))], ytr, rcond=None)
            B = Xdv[dv_mask]
            ydv = np.where(dev.domains[dv_mask] == ia, 1.0, -1.0)
            acc = (np.sign(np.c_[(B - mu) / sd, np.ones(len(B))] @ w) == ydv).mean()
            assert acc >= 0.95, f"{fa} vs {fb}: probe accuracy {acc:.3f}"


class TestWavIO:
    def test_float32_roundtrip(self, tmp_path):
        from vocdetect.corpus import read_wav, write_wav

        x = np.linspace(-0.9, 0.9, 321).astype(np.float32)
        write_wav(tmp_path / "x.wav", x, 8000)
        y, sr = read_wav(tmp_path / "x.wav")
        assert sr == 8000 and np.array_equal(x, y)

    def test_integer_pcm_rejected(self, tmp_path):
        from scipy.io import wavfile

        from vocdetect.corpus import read_wav

        wavfile.write(tmp_path / "i.wav", 8000, np.zeros(64, dtype=np.int16))
        with pytest.raises(CorpusError, match="float32"):
            read_wav(tmp_path / "i.wav")


class TestAudioClip:
    def test_consistency_enforced(self):
        from vocdetect.corpus import AudioClip

        clip = AudioClip(np.zeros(64, np.float32), 8000, "real", "real", "c0")
        clip.validate(target_len=64)
        bad = AudioClip(np.zeros(64, np.float32), 8000, "real", "vocoder", "c1")
        with pytest.raises(CorpusError, match="inconsistent"):
            bad.validate()
        loud = AudioClip(np.full(64, 1.5, np.float32), 8000, "fake", "vocoder", "c2")
        with pytest.raises(CorpusError, match="peak"):
            loud.validate()
        short = AudioClip(np.zeros(32, np.float32), 8000, "real", "real", "c3")
        with pytest.raises(CorpusError, match="length"):
            short.validate(target_len=64)


class TestPairSampling:
    def test_batches_pair_real_with_fake(self, micro_corpus):
        ds = ClipDataset.from_manifest(micro_corpus, "train", 2048)
        stream = sample_pairs(ds, 4, rng_seed=0)
        for _ in range(6):
            batch = next(stream)
            assert batch.x_i.shape == (4, 2048)
            assert np.all(batch.labels_i != batch.labels_j)

    def test_accepts_manifest_directly(self, micro_corpus):
        batch = next(sample_pairs(micro_corpus, 4, rng_seed=0))
        assert batch.x_i.shape == (4, 2048)
        assert np.all(batch.labels_i != batch.labels_j)

    def test_deterministic(self, micro_corpus):
        ds = ClipDataset.from_manifest(micro_corpus, "train", 2048)
        s1 = PairSampler(ds, 4, rng_seed=3)
        s2 = PairSampler(ds, 4, rng_seed=3)
        r1, f1 = s1.epoch_pairs(0)
        r2, f2 = s2.epoch_pairs(0)
        assert np.array_equal(r1, r2) and np.array_equal(f1, f2)

    def test_epochs_shuffle_differently(self, micro_corpus):
        ds = ClipDataset.from_manifest(micro_corpus, "train", 2048)
        s = PairSampler(ds, 4, rng_seed=3)
        assert not np.array_equal(s.epoch_pairs(0)[0], s.epoch_pairs(1)[0])

    def test_fake_domains_covered(self, micro_corpus):
        ds = ClipDataset.from_manifest(micro_corpus, "train", 2048)
        s = PairSampler(ds, 4, rng_seed=0)
        _, fakes = s.epoch_pairs(0)
        assert len(set(ds.domains[fakes].tolist())) == len(s.by_domain)

    def test_single_label_split_rejected(self, micro_corpus):
        ds = ClipDataset.from_manifest(micro_corpus, "train", 2048)
        reals_only = ClipDataset(
            waveforms=ds.waveforms[ds.labels == 0],
            labels=ds.labels[ds.labels == 0],
            domains=ds.domains[ds.labels == 0],
            domain_vocabulary=ds.domain_vocabulary,
            clip_ids=["x"] * int((ds.labels == 0).sum()),
            sample_rate=ds.sample_rate,
        )
        with pytest.raises(CorpusError):
            PairSampler(reals_only, 4, rng_seed=0)
