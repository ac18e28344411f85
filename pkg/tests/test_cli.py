"""End-to-end CLI tests: subcommands, exit codes, config round-trips."""

import json
import os

import numpy as np
import pytest

from corpus_utils import write_corpus, write_two_tone_corpus
from fundusdl import cli
from fundusdl import imgproc as I
from fundusdl.serialize import load_model


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture()
def tone_corpora(tmp_path):
    train = write_two_tone_corpus(tmp_path / "train", 8, seed=1)
    valid = write_two_tone_corpus(tmp_path / "valid", 2, seed=2)
    test = write_two_tone_corpus(tmp_path / "test", 3, seed=3)
    return train, valid, test


def tiny_run_config(tmp_path, train, valid, test, seed=5):
    return {
        "seed": seed,
        "train_dir": str(train),
        "valid_dir": str(valid),
        "test_dir": str(test),
        "model_out": str(tmp_path / "model.fdl"),
        "out_dir": str(tmp_path / "run"),
        "architecture": "functional-v2",
        "input_shape": [24, 24, 3],
        "train": {"epochs": 2, "batch_size": 4, "optimizer": "adam",
                  "lr": 0.002, "patience": 2},
        "augment": {"rotation_range": 0, "zoom_range": 0, "width_shift": 0,
                    "height_shift": 0, "shear_range": 0, "horizontal_flip": False},
    }


def write_config(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


class TestPreprocess:
    def test_no_flags_copies_bytes(self, tmp_path):
        src = write_corpus(tmp_path / "in", {"nonPdr": 2, "pdr": 1})
        out = tmp_path / "out"
        assert run_cli("preprocess", str(src), str(out)) == 0
        for cls in ("nonPdr", "pdr"):
            for f in os.listdir(src / cls):
                assert (out / cls / f).read_bytes() == (src / cls / f).read_bytes()

    def test_clahe_flag_applies_clahe(self, tmp_path):
        src = write_two_tone_corpus(tmp_path / "in", 1, size=(16, 16))
        out = tmp_path / "out"
        assert run_cli("preprocess", str(src), str(out), "--clahe", "--clip", "40",
                       "--grid", "2", "2") == 0
        name = os.listdir(src / "pdr")[0]
        got = I.Image.load(out / "pdr" / name)
        want = I.clahe(I.Image.load(src / "pdr" / name), clip_limit=40.0, grid=(2, 2))
        assert got == want

    def test_blur_sigma_applies_enhancement(self, tmp_path):
        src = write_two_tone_corpus(tmp_path / "in", 1, size=(12, 12))
        out = tmp_path / "out"
        assert run_cli("preprocess", str(src), str(out), "--blur-sigma", "1.5") == 0
        name = os.listdir(src / "nonPdr")[0]
        orig = I.Image.load(src / "nonPdr" / name)
        want = I.weighted_add(orig, 4.0, I.gaussian_blur(orig, 1.5), -4.0, 128.0)
        assert I.Image.load(out / "nonPdr" / name) == want

    def test_rerun_is_idempotent(self, tmp_path):
        src = write_two_tone_corpus(tmp_path / "in", 2, size=(12, 12))
        out = tmp_path / "out"
        run_cli("preprocess", str(src), str(out), "--clahe")
        first = {f: (out / "pdr" / f).read_bytes() for f in os.listdir(out / "pdr")}
        run_cli("preprocess", str(src), str(out), "--clahe")
        second = {f: (out / "pdr" / f).read_bytes() for f in os.listdir(out / "pdr")}
        assert first == second

    def test_missing_input_dir_is_data_error(self, tmp_path):
        assert run_cli("preprocess", str(tmp_path / "nope"), str(tmp_path / "out")) == 2


class TestTrain:
    def test_smoke_train_writes_loadable_artifact(self, tmp_path, tone_corpora):
        train, valid, test = tone_corpora
        cfg_path = write_config(tmp_path, tiny_run_config(tmp_path, train, valid, test))
        assert run_cli("train", "--config", str(cfg_path)) == 0
        graph, stats = load_model(tmp_path / "model.fdl")
        assert stats is not None
        assert (tmp_path / "run" / "history.log").exists()
        assert (tmp_path / "run" / "history.json").exists()

    def test_same_seed_gives_byte_identical_history(self, tmp_path, tone_corpora):
        train, valid, test = tone_corpora
        cfg = tiny_run_config(tmp_path, train, valid, test)
        logs = []
        for run_dir in ("runA", "runB"):
            cfg["out_dir"] = str(tmp_path / run_dir)
            cfg["model_out"] = str(tmp_path / f"{run_dir}.fdl")
            cfg_path = write_config(tmp_path, cfg, f"{run_dir}.json")
            assert run_cli("train", "--config", str(cfg_path)) == 0
            logs.append((tmp_path / run_dir / "history.log").read_bytes())
        assert logs[0] == logs[1]

    def test_effective_config_echo_reproduces_run(self, tmp_path, tone_corpora):
        train, valid, test = tone_corpora
        cfg_path = write_config(tmp_path, tiny_run_config(tmp_path, train, valid, test))
        assert run_cli("train", "--config", str(cfg_path)) == 0
        first_log = (tmp_path / "run" / "history.log").read_bytes()
        first_model = (tmp_path / "model.fdl").read_bytes()

        echo = tmp_path / "run" / "effective_config.json"
        assert echo.exists()
        assert run_cli("train", "--config", str(echo)) == 0
        assert (tmp_path / "run" / "history.log").read_bytes() == first_log
        assert (tmp_path / "model.fdl").read_bytes() == first_model

    def test_seed_flag_overrides_config(self, tmp_path, tone_corpora):
        train, valid, test = tone_corpora
        cfg = tiny_run_config(tmp_path, train, valid, test, seed=5)
        cfg_path = write_config(tmp_path, cfg)
        assert run_cli("train", "--config", str(cfg_path), "--seed", "5") == 0
        log_a = (tmp_path / "run" / "history.log").read_bytes()
        assert run_cli("train", "--config", str(cfg_path), "--seed", "6") == 0
        log_b = (tmp_path / "run" / "history.log").read_bytes()
        assert log_a != log_b
        echo = json.loads((tmp_path / "run" / "effective_config.json").read_text())
        assert echo["seed"] == 6

    def test_env_var_supplies_config_path(self, tmp_path, tone_corpora, monkeypatch):
        train, valid, test = tone_corpora
        cfg_path = write_config(tmp_path, tiny_run_config(tmp_path, train, valid, test))
        monkeypatch.setenv(cli.CONFIG_ENV_VAR, str(cfg_path))
        assert run_cli("train") == 0

    def test_missing_config_is_usage_error(self, monkeypatch):
        monkeypatch.delenv(cli.CONFIG_ENV_VAR, raising=False)
        assert run_cli("train") == 1

    def test_unknown_config_field_named(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, {"architecture": "functional-v2", "bogus_key": 1})
        assert run_cli("train", "--config", str(cfg_path)) == 1
        assert "bogus_key" in capsys.readouterr().err

    def test_unknown_architecture_is_config_error(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, {"architecture": "resnet-50"})
        assert run_cli("train", "--config", str(cfg_path)) == 1
        assert "architecture" in capsys.readouterr().err

    def test_paper_shaped_defaults(self):
        cfg = cli.RunConfig()
        assert cfg.architecture == "vgg16-transfer"
        assert cfg.train.epochs == 10
        assert cfg.train.batch_size == 32
        assert cfg.train.optimizer == "adam"
        assert cfg.train.lr == 1e-4
        assert cfg.train.patience == 0
        assert cfg.augment.rotation_range == 30
        assert cfg.augment.zoom_range == 0.15
        assert cfg.augment.horizontal_flip is True
        assert cfg.freeze_value == "block4_pool"
        assert cfg.preprocess.enabled is False


class TestEvaluatePredict:
    @pytest.fixture()
    def trained(self, tmp_path, tone_corpora):
        train, valid, test = tone_corpora
        cfg = tiny_run_config(tmp_path, train, valid, test)
        cfg["train"]["epochs"] = 4
        cfg["train"]["lr"] = 0.01
        cfg_path = write_config(tmp_path, cfg)
        assert run_cli("train", "--config", str(cfg_path)) == 0
        return tmp_path / "model.fdl", test

    def test_evaluate_report_format_and_exit(self, trained, tmp_path, capsys):
        model, test_dir = trained
        out_json = tmp_path / "report.json"
        code = run_cli("evaluate", "--model", str(model), "--test-dir", str(test_dir),
                       "--out", str(out_json))
        assert code == 0
        text = capsys.readouterr().out
        assert "Number of retinas with PDR:" in text
        assert "Number of retinas without PDR:" in text
        assert ">>>" in text
        payload = json.loads(out_json.read_text())
        assert "predicted_counts" in payload

    def test_missing_model_exits_3(self, tmp_path, tone_corpora):
        _, _, test = tone_corpora
        assert run_cli("evaluate", "--model", str(tmp_path / "nope.fdl"),
                       "--test-dir", str(test)) == 3

    def test_predict_prints_bracketed_score(self, trained, capsys):
        model, test_dir = trained
        img = os.path.join(test_dir, "pdr", sorted(os.listdir(test_dir / "pdr"))[0])
        assert run_cli("predict", "--model", str(model), "--image", img) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].endswith(os.path.basename(img))
        assert out[0].split(" >>> ")[0] in ("PDR", "NONPDR")
        assert out[1].startswith("[[") and out[1].endswith("]]")

    def test_predict_unreadable_image_exits_2_with_path(self, trained, tmp_path, capsys):
        model, _ = trained
        bad = tmp_path / "broken.png"
        bad.write_bytes(b"junk")
        assert run_cli("predict", "--model", str(model), "--image", str(bad)) == 2
        assert "broken.png" in capsys.readouterr().err

    def test_usage_error_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli("predict")  # missing required args
        assert exc.value.code == 1


class TestCorruptArtifactExitCode:
    def test_corrupt_model_exits_3(self, tmp_path, tone_corpora, capsys):
        train, valid, test = tone_corpora
        cfg_path = write_config(tmp_path, tiny_run_config(tmp_path, train, valid, test))
        assert run_cli("train", "--config", str(cfg_path)) == 0
        blob = bytearray((tmp_path / "model.fdl").read_bytes())
        blob[-2] ^= 0x01
        (tmp_path / "model.fdl").write_bytes(bytes(blob))
        assert run_cli("evaluate", "--model", str(tmp_path / "model.fdl"),
                       "--test-dir", str(test)) == 3
