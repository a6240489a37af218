import json

import numpy as np
import pytest

from ddgan import cli
from ddgan.data import Dataset, load_features
from ddgan.networks import ModelBundle, NetworkConfig, save_checkpoint

NETWORK = {"latent_dim": 6, "encoder_hidden": [8, 8], "mapper_hidden": [8, 8],
           "generator_hidden": [8, 8], "discriminator_hidden": [8, 4]}


@pytest.fixture
def data_dir(tmp_path):
    assert cli.main(["gen-data", "--out", str(tmp_path / "d"), "--classes", "5", "--per-class", "6",
                     "--dim", "8", "--unseen", "2", "--embed-dim", "7", "--seed", "1"]) == 0
    return tmp_path / "d"


@pytest.fixture
def run_config(tmp_path, data_dir):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "features": str(data_dir / "features.csv"), "embeddings": str(data_dir / "embeddings.txt"),
        "split": str(data_dir / "split.json"), "out_dir": str(tmp_path / "r"), "network": NETWORK,
        "batch_size": 8, "unseen_samples_per_class_per_domain": 10,
    }))
    return path


def outputs(tmp_path):
    return {p.name: p.read_bytes() for p in sorted(tmp_path.iterdir()) if not p.name.endswith("manifest.json")}


class TestGenData:
    def test_row_count(self, tmp_path, capsys):
        assert cli.main(["gen-data", "--out", str(tmp_path), "--classes", "12", "--per-class", "20",
                         "--dim", "64", "--seed", "7"]) == 0
        assert len(load_features(tmp_path / "features.csv", 64)) == 480
        assert "480 feature rows" in capsys.readouterr().out

    @pytest.mark.parametrize("flags", [["--classes", "0"], ["--per-class", "0"], ["--unseen", "12"]])
    def test_validation(self, tmp_path, flags):
        assert cli.main(["gen-data", "--out", str(tmp_path)] + flags) == 2

    def test_bad_flag_is_usage_error(self, tmp_path):
        assert cli.main(["gen-data", "--out", str(tmp_path), "--classes", "many"]) == 2
        assert cli.main([]) == 2

    def test_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert cli.main(["gen-data", "--out", str(tmp_path / name), "--classes", "4", "--dim", "5",
                             "--per-class", "3", "--seed", "2", "--unseen", "1"]) == 0
        assert outputs(tmp_path / "a") == outputs(tmp_path / "b")
        manifest = json.loads((tmp_path / "a" / "gen-data.manifest.json").read_text())
        assert set(manifest["outputs"]) == {"features.csv", "embeddings.txt", "split.json"}
        assert "unix_time" in manifest["created"]


class TestPipeline:
    def test_stages(self, tmp_path, run_config, data_dir):
        r = tmp_path / "r"
        assert cli.main(["train", "--config", str(run_config), "--epochs", "1"]) == 0
        assert (r / "phase1.ckpt").exists()
        assert len((r / "phase1_history.csv").read_text().splitlines()) == 2

        assert cli.main(["synthesize-unseen", "--config", str(run_config), "--checkpoint", str(r / "phase1.ckpt")]) == 0
        assert len(load_features(r / "synthetic_unseen.csv", 8)) == 40

        assert cli.main(["retrain", "--config", str(run_config), "--checkpoint", str(r / "phase1.ckpt"),
                         "--synthetic", str(r / "synthetic_unseen.csv"), "--epochs", "0"]) == 0
        assert (r / "phase2.ckpt").read_bytes() == (r / "phase1.ckpt").read_bytes()

        assert cli.main(["retrain", "--config", str(run_config), "--checkpoint", str(r / "phase1.ckpt"),
                         "--synthetic", str(r / "synthetic_unseen.csv"), "--epochs", "1"]) == 0
        assert (r / "phase2.ckpt").read_bytes() != (r / "phase1.ckpt").read_bytes()

        ev = tmp_path / "ev"
        assert cli.main(["evaluate", "--checkpoint", str(r / "phase2.ckpt"), "--queries", str(data_dir / "features.csv"),
                         "--gallery", str(data_dir / "features.csv"), "--split", str(data_dir / "split.json"),
                         "--unseen-only", "--out", str(ev)]) == 0
        assert (ev / "metrics.csv").read_text().splitlines()[0] == "NN,FT,ST,E,DCG,mAP"
        report = json.loads((ev / "metrics.json").read_text())
        assert len(report["pr_curve"]) == 11 and report["n_queries"] == 12

        assert cli.main(["export-embeddings", "--checkpoint", str(r / "phase2.ckpt"),
                         "--features", str(data_dir / "features.csv"), "--out", str(ev / "emb.csv")]) == 0
        assert len((ev / "emb.csv").read_text().splitlines()) == 61

    def test_train_is_idempotent(self, tmp_path, run_config):
        for name in ("x", "y"):
            assert cli.main(["train", "--config", str(run_config), "--epochs", "1", "--out", str(tmp_path / name)]) == 0
        assert outputs(tmp_path / "x") == outputs(tmp_path / "y")
        mx = json.loads((tmp_path / "x" / "train.manifest.json").read_text())
        my = json.loads((tmp_path / "y" / "train.manifest.json").read_text())
        mx.pop("created"), my.pop("created")
        mx["config"].pop("out_dir"), my["config"].pop("out_dir")
        assert mx == my

    def test_flags_override_config(self, tmp_path, run_config):
        assert cli.main(["train", "--config", str(run_config), "--epochs", "1", "--mode", "inductive",
                         "--seed", "5", "--out", str(tmp_path / "o")]) == 0
        manifest = json.loads((tmp_path / "o" / "train.manifest.json").read_text())
        resolved = manifest["config"]["resolved"]
        assert resolved["transductive"] is False and resolved["seed"] == 5 and resolved["batch_size"] == 8
        row = (tmp_path / "o" / "phase1_history.csv").read_text().splitlines()[1].split(",")
        assert row[6:8] == ["", ""]

    def test_unknown_config_key(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"learning_rat": 0.1}')
        assert cli.main(["train", "--config", str(bad)]) == 2
        bad.write_text('{"network": {"depth": 4}}')
        assert cli.main(["train", "--config", str(bad)]) == 2
        bad.write_text('{not json')
        assert cli.main(["train", "--config", str(bad)]) == 2

    def test_missing_file_is_io_error(self, tmp_path, run_config, caplog):
        assert cli.main(["train", "--config", str(run_config), "--features", str(tmp_path / "nope.csv")]) == 4
        assert "nope.csv" in caplog.text
        assert cli.main(["train", "--config", str(tmp_path / "absent.json")]) == 4

    def test_numerical_failure_exit_code(self, tmp_path, run_config, monkeypatch):
        from ddgan import training, tensor as T
        monkeypatch.setattr(training.L, "total_loss", lambda *a, **k: T.constant(float("nan")))
        assert cli.main(["train", "--config", str(run_config), "--epochs", "1"]) == 3


class TestEvaluate:
    def test_perfect_features_give_full_map(self, tmp_path, data_dir):
        """Identity encoders over one-hot class features rank perfectly."""
        records = load_features(data_dir / "features.csv", 8)
        cfg = NetworkConfig(feature_dim=8, latent_dim=8, embed_dim=7, encoder_hidden=(8, 8), mapper_hidden=(8, 8),
                            generator_hidden=(8, 8), discriminator_hidden=(8, 4))
        model = ModelBundle(cfg, seed=0)
        ds = Dataset(records)
        labels = sorted(ds.label_set())
        onehot = {lab: np.eye(8)[i] for i, lab in enumerate(labels)}
        for net in (model.ei_a, model.ei_b):
            for w, b in net.layers:
                w.value[...] = np.eye(*w.shape)
                b.value[...] = 0.0
        forced = [r.__class__(r.id, r.domain, r.label, onehot[r.label]) for r in records]
        from ddgan.data import save_features
        save_features(forced, tmp_path / "forced.csv")
        save_checkpoint(model, tmp_path / "m.ckpt")
        assert cli.main(["evaluate", "--checkpoint", str(tmp_path / "m.ckpt"), "--queries", str(tmp_path / "forced.csv"),
                         "--gallery", str(tmp_path / "forced.csv"), "--out", str(tmp_path / "ev")]) == 0
        assert json.loads((tmp_path / "ev" / "metrics.json").read_text())["mAP"] == 1.0

    def test_unseen_only_with_empty_unseen_set(self, tmp_path, data_dir):
        split = tmp_path / "s.json"
        split.write_text(json.dumps({"seen": sorted(Dataset(load_features(data_dir / "features.csv", 8)).label_set()),
                                     "unseen": []}))
        model = ModelBundle(NetworkConfig(feature_dim=8, **{k: tuple(v) if isinstance(v, list) else v
                                                            for k, v in NETWORK.items()}), seed=0)
        save_checkpoint(model, tmp_path / "m.ckpt")
        code = cli.main(["evaluate", "--checkpoint", str(tmp_path / "m.ckpt"), "--queries", str(data_dir / "features.csv"),
                         "--gallery", str(data_dir / "features.csv"), "--split", str(split), "--unseen-only",
                         "--out", str(tmp_path / "ev")])
        assert code == 2

    def test_unseen_only_needs_split(self, tmp_path, data_dir):
        model = ModelBundle(NetworkConfig(feature_dim=8, latent_dim=4, encoder_hidden=(2, 2), mapper_hidden=(2, 2),
                                          generator_hidden=(2, 2), discriminator_hidden=(2, 2)), seed=0)
        save_checkpoint(model, tmp_path / "m.ckpt")
        assert cli.main(["evaluate", "--checkpoint", str(tmp_path / "m.ckpt"), "--queries", str(data_dir / "features.csv"),
                         "--gallery", str(data_dir / "features.csv"), "--unseen-only", "--out", str(tmp_path)]) == 2
