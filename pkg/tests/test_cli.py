import json

import pytest

from vocdetect import configio
from vocdetect.cli import run
from vocdetect.configio import ConfigError, parse_kv_file, resolve, snapshot_text


class TestConfigIO:
    def test_parse_kv_file(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# comment\nseed=3\n\nclip_len = 2048\n")
        assert parse_kv_file(path) == {"seed": "3", "clip_len": "2048"}

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("seed=1\nbad line\n")
        with pytest.raises(ConfigError, match=":2:"):
            parse_kv_file(path)

    def test_resolve_defaults_and_overrides(self):
        resolved = resolve(configio.CORPUS_DEFAULTS, None, ["seed=9", "seen_families=quantize,comb_notch"])
        assert resolved["seed"] == 9
        assert resolved["seen_families"] == ("quantize", "comb_notch")

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="bogus"):
            resolve(configio.TRAIN_DEFAULTS, None, ["bogus=1"])

    def test_bool_coercion(self):
        resolved = resolve(configio.TRAIN_DEFAULTS, None, ["sam.enabled=false", "toggles.mi=0"])
        assert resolved["sam.enabled"] is False and resolved["toggles.mi"] is False
        with pytest.raises(ConfigError):
            resolve(configio.TRAIN_DEFAULTS, None, ["sam.enabled=maybe"])

    def test_bad_number_reported(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            resolve(configio.TRAIN_DEFAULTS, None, ["learning_rate=fast"])

    def test_snapshot_roundtrip(self, tmp_path):
        resolved = resolve(configio.CORPUS_DEFAULTS, None, ["seed=4"])
        text = snapshot_text(resolved)
        path = tmp_path / "snap.cfg"
        path.write_text(text)
        again = resolve(configio.CORPUS_DEFAULTS, path, [])
        assert again == resolved

    def test_train_config_construction(self):
        resolved = resolve(configio.TRAIN_DEFAULTS, None, ["weights.lambda4=0.1", "sam.rule=l2_normalized"])
        cfg = configio.train_config_from(resolved)
        assert cfg.weights.lambda4 == 0.1
        assert cfg.sam.rule == "l2_normalized"
        cfg.validate()


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_corpus")
    code = run(
        [
            "gen-data",
            "--set", "sample_rate=8000",
            "--set", "clip_len=2048",
            "--set", "clips_per_domain=10",
            "--set", "seen_families=quantize,harmonic_hum",
            "--set", "unseen_families=alias_resample",
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def cli_run(cli_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_train")
    overrides = [
        "epochs=1", "batch_size=4",
        "model.num_filters=6", "model.num_res_blocks=2", "model.channels=8",
        "model.recurrent_dim=16", "model.embed_dim=16", "model.artifact_proj_dim=8",
        "model.input_len=2048", "model.frontend_kernel=33", "model.frontend_stride=4",
        "decoder.grid_h=4", "decoder.grid_w=4", "decoder.channels=4",
    ]
    args = ["train", "--manifest", str(cli_corpus / "manifest.csv"), "--out", str(out)]
    for o in overrides:
        args += ["--set", o]
    assert run(args) == 0
    return out


class TestCli:
    def test_gen_data_outputs(self, cli_corpus):
        assert (cli_corpus / "manifest.csv").exists()
        assert (cli_corpus / "resolved_config.txt").exists()
        snapshot = (cli_corpus / "resolved_config.txt").read_text()
        assert "clips_per_domain=10" in snapshot
        assert "seed=0" in snapshot  # defaults included

    def test_train_outputs(self, cli_run):
        assert (cli_run / "best.ckpt").exists()
        assert (cli_run / "metrics.jsonl").exists()
        assert "sam.gamma=0.07" in (cli_run / "resolved_config.txt").read_text()

    def test_eval_writes_report(self, cli_corpus, cli_run, tmp_path):
        out = tmp_path / "eval"
        code = run(
            ["eval", "--ckpt", str(cli_run / "best.ckpt"), "--manifest", str(cli_corpus / "manifest.csv"),
             "--split", "test", "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "eval_report.json").read_text())
        assert set(report["per_domain_eer"]) == {"quantize", "harmonic_hum", "alias_resample"}

    def test_export_features(self, cli_corpus, cli_run, tmp_path):
        out = tmp_path / "feats"
        code = run(
            ["export-features", "--ckpt", str(cli_run / "best.ckpt"),
             "--manifest", str(cli_corpus / "manifest.csv"), "--split", "dev", "--out", str(out)]
        )
        assert code == 0
        lines = (out / "features_dev.csv").read_text().splitlines()
        assert len(lines[0].split(",")) == 3 + 16 + 2 * 8

    def test_landscape(self, cli_corpus, cli_run, tmp_path):
        out = tmp_path / "land"
        code = run(
            ["landscape", "--ckpt", str(cli_run / "best.ckpt"), "--manifest", str(cli_corpus / "manifest.csv"),
             "--radius", "0.2", "--grid-k", "2", "--out", str(out)]
        )
        assert code == 0
        rows = (out / "landscape.csv").read_text().splitlines()
        assert len(rows) == 5

    def test_unknown_override_key_exits_1(self, tmp_path):
        assert run(["gen-data", "--set", "nonsense=1", "--out", str(tmp_path / "x")]) == 1

    def test_missing_checkpoint_exits_1(self, cli_corpus, tmp_path):
        code = run(
            ["eval", "--ckpt", str(tmp_path / "absent.ckpt"), "--manifest", str(cli_corpus / "manifest.csv"),
             "--out", str(tmp_path / "out")]
        )
        assert code == 1

    def test_inputs_not_mutated_by_eval(self, cli_corpus, cli_run, tmp_path):
        manifest_bytes = (cli_corpus / "manifest.csv").read_bytes()
        ckpt_bytes = (cli_run / "best.ckpt").read_bytes()
        run(["eval", "--ckpt", str(cli_run / "best.ckpt"), "--manifest", str(cli_corpus / "manifest.csv"),
             "--out", str(tmp_path / "o")])
        assert (cli_corpus / "manifest.csv").read_bytes() == manifest_bytes
        assert (cli_run / "best.ckpt").read_bytes() == ckpt_bytes
