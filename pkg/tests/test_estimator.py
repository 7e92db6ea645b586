import numpy as np
import pytest
from sklearn.base import clone

from vocdetect.corpus import ClipDataset
from vocdetect.estimator import VocoderArtifactDetector


def small_estimator(**kw):
    params = dict(
        epochs=1,
        batch_size=4,
        num_filters=6,
        num_res_blocks=2,
        channels=8,
        embed_dim=16,
        artifact_proj_dim=8,
        seed=0,
    )
    params.update(kw)
    return VocoderArtifactDetector(**params)


@pytest.fixture(scope="module")
def fitted(micro_corpus):
    ds = ClipDataset.from_manifest(micro_corpus, "train", 2048)
    names = [ds.domain_vocabulary[d] for d in ds.domains]
    est = small_estimator(epochs=2)
    est.fit(ds.waveforms, ds.labels, domains=names)
    return est, ds


class TestSklearnProtocol:
    def test_get_set_params_roundtrip(self):
        est = small_estimator()
        params = est.get_params()
        assert params["epochs"] == 1 and params["sam_gamma"] == 0.07
        est.set_params(epochs=3, lambda4=0.1)
        assert est.epochs == 3 and est.lambda4 == 0.1

    def test_clone_preserves_params(self):
        est = small_estimator(lambda2=0.7)
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_unfitted_predict_raises(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            small_estimator().predict(np.zeros((2, 128)))


class TestFitPredict:
    def test_fit_returns_self_and_sets_attrs(self, fitted):
        est, _ = fitted
        assert hasattr(est, "model_")
        assert list(est.classes_) == [0, 1]
        assert est.domain_vocabulary_[0] == "real"

    def test_predict_shapes_and_values(self, fitted):
        est, ds = fitted
        x = ds.waveforms[:6]
        proba = est.predict_proba(x)
        assert proba.shape == (6, 2)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-6)
        scores = est.decision_function(x)
        assert np.all((scores >= 0) & (scores <= 1))
        labels = est.predict(x)
        assert set(labels) <= {0, 1}
        assert np.array_equal(labels, (scores >= 0.5).astype(np.int64))

    def test_variable_length_inputs_are_repadded(self, fitted):
        est, ds = fitted
        short = ds.waveforms[:2, :800]
        assert est.predict_proba(short).shape == (2, 2)

    def test_string_labels_accepted(self, micro_corpus):
        ds = ClipDataset.from_manifest(micro_corpus, "train", 2048)
        sel = np.concatenate([np.nonzero(ds.labels == 0)[0][:8], np.nonzero(ds.labels == 1)[0][:8]])
        y = np.array(["real" if v == 0 else "fake" for v in ds.labels[sel]])
        est = small_estimator()
        est.fit(ds.waveforms[sel], y)
        assert hasattr(est, "model_")

    def test_single_class_rejected(self):
        X = np.zeros((6, 256), dtype=np.float32)
        with pytest.raises(ValueError, match="both real and fake"):
            small_estimator().fit(X, np.zeros(6, dtype=np.int64))

    def test_domain_label_consistency_enforced(self):
        X = np.zeros((4, 256), dtype=np.float32)
        y = np.array([0, 0, 1, 1])
        with pytest.raises(ValueError, match="inconsistent"):
            small_estimator().fit(X, y, domains=["real", "vocoder", "vocoder", "vocoder"])

    def test_nonfinite_input_rejected(self, fitted):
        est, _ = fitted
        bad = np.full((1, 2048), np.nan, dtype=np.float32)
        with pytest.raises(ValueError, match="non-finite"):
            est.predict(bad)

    def test_trained_estimator_separates_micro_corpus(self, fitted, micro_corpus):
        est, _ = fitted
        test = ClipDataset.from_manifest(micro_corpus, "test", 2048)
        scores = est.decision_function(test.waveforms)
        assert scores[test.labels == 1].mean() > scores[test.labels == 0].mean()
