import json

import numpy as np
import pytest

from mmgat.cli import main
from mmgat.config import ConfigError, RunConfig
from mmgat.synthetic import load_dataset
from mmgat.train import load_checkpoint

SMALL = ["--set", "grid=4", "--set", "patch=2", "--set", "num_modalities=2",
         "--set", "num_classes=3", "--set", "num_samples=2", "--set", "eval_samples=2",
         "--set", "enc_hidden=3", "--set", "dec_hidden=4", "--set", "steps=4",
         "--set", "log_every=1"]


class TestRunConfig:
    def test_round_trip(self, tmp_path):
        cfg = RunConfig(grid=8, noise=0.3, no_virtual=True, ablate_seeds="4,5")
        cfg.save(tmp_path / "c.json")
        assert RunConfig.load(tmp_path / "c.json") == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            RunConfig.from_dict({"gird": 16})

    @pytest.mark.parametrize("data", [{"steps": 1.5}, {"no_virtual": 1}, {"noise": "x"},
                                      {"mask_mode": 3}, {"grid": True}])
    def test_type_checks(self, data):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(data)

    @pytest.mark.parametrize("data", [{"grid": 6, "patch": 4}, {"mask_mode": "fuzzy"},
                                      {"ablate_variants": "full,nope"}, {"eval_samples": 0},
                                      {"num_classes": 7}])
    def test_value_checks(self, data):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(data)

    def test_int_accepted_for_float(self):
        assert RunConfig.from_dict({"noise": 1}).noise == 1.0

    def test_derived_configs(self):
        cfg = RunConfig(no_virtual=True, homogeneous_weights=True, static_full_graph=True)
        assert cfg.model_config().virtual_per_modality == 0
        assert cfg.model_config().gat.homogeneous
        assert cfg.train_config().static_graph
        assert cfg.variant("full").no_virtual
        assert RunConfig().variant("no_virtual").model_config().virtual_per_modality == 0
        assert RunConfig().lengths() == [0, 1, 2, 4]

    def test_bad_config_file(self, tmp_path):
        (tmp_path / "c.json").write_text("[1, 2]")
        with pytest.raises(ConfigError):
            RunConfig.load(tmp_path / "c.json")
        with pytest.raises(ConfigError):
            RunConfig.load(tmp_path / "missing.json")


class TestGenData:
    def test_deterministic_and_force(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen-data", "--out", str(a), "--seed", "3", "--num-samples", "2"] + SMALL) == 0
        assert main(["gen-data", "--out", str(b), "--seed", "3", "--num-samples", "2"] + SMALL) == 0
        for name in ("sample_00000.bin", "sample_00001.bin", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert load_dataset(a).config.seed == 3
        assert main(["gen-data", "--out", str(a)] + SMALL) == 1
        assert "not empty" in capsys.readouterr().err
        assert main(["gen-data", "--out", str(a), "--force", "--noise", "0.5"] + SMALL) == 0
        assert load_dataset(a).config.noise == 0.5

    def test_config_file_and_errors(self, tmp_path):
        RunConfig(grid=4, patch=2, num_modalities=2, num_classes=3, num_samples=1).save(
            tmp_path / "c.json")
        assert main(["gen-data", "--config", str(tmp_path / "c.json"),
                     "--out", str(tmp_path / "d")]) == 0
        assert load_dataset(tmp_path / "d").config.grid == 4
        assert main(["gen-data", "--out", str(tmp_path / "e"), "--set", "grid"]) == 1
        assert main(["gen-data", "--out", str(tmp_path / "e"), "--set", "nope=1"]) == 1


class TestVerifyAdjacency:
    def test_pass(self, capsys):
        assert main(["verify-adjacency", "--n", "3", "--c", "2", "--cp", "2"]) == 0
        assert capsys.readouterr().out.startswith("PASS")

    def test_corruption_detected(self, capsys):
        assert main(["verify-adjacency", "--corrupt", "3,5"]) == 3
        out = capsys.readouterr().out
        assert out.startswith("FAIL") and "(3, 5)" in out

    def test_range(self):
        assert main(["verify-adjacency", "--n", "9"]) == 1


class TestGradcheck:
    def test_exit_codes(self, capsys):
        assert main(["gradcheck", "--mask-mode", "hard", "--cp", "0"]) == 0
        out = capsys.readouterr().out
        for group in ("W", "a", "enc", "dec_s", "dec_mm"):
            assert f"hard {group:7s} max rel err" in out
        assert main(["gradcheck", "--mask-mode", "hard", "--cp", "0", "--tol", "1e-14"]) == 3


class TestTrainEval:
    def test_train_then_eval(self, tmp_path, capsys):
        run = tmp_path / "run"
        assert main(["train", "--out", str(run)] + SMALL) == 0
        params, opt = load_checkpoint(run / "final")
        assert opt.step == 4
        assert RunConfig.load(run / "config.json").grid == 4
        assert len((run / "metrics.jsonl").read_text().splitlines()) >= 4
        assert main(["eval", "--checkpoint", str(run), "--out", str(tmp_path / "ev")]) == 0
        report = json.loads((tmp_path / "ev" / "report.json").read_text())
        assert [r["mask"] for r in report["rows"]] == ["10", "01", "11"]
        assert report["classes"] == ["class1", "class2"]
        assert all(0.0 <= d <= 1.0 for r in report["rows"] for d in r["dice"])
        csv = (tmp_path / "ev" / "report.csv").read_text().splitlines()
        assert csv[0] == "m0,m1,class1,class2,mean" and csv[-1].startswith("mean,")
        assert "●○" in capsys.readouterr().out

    def test_train_on_saved_data(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path / "d")] + SMALL) == 0
        assert main(["train", "--out", str(tmp_path / "r"), "--data", str(tmp_path / "d")]
                    + SMALL) == 0
        # a dataset that does not fit the configured model is refused
        assert main(["train", "--out", str(tmp_path / "r2"), "--data", str(tmp_path / "d")]) == 1

    def test_eval_rejects_mismatched_checkpoint(self, tmp_path):
        run = tmp_path / "run"
        assert main(["train", "--out", str(run)] + SMALL) == 0
        cfg = RunConfig.load(run / "config.json")
        RunConfig.from_dict({**cfg.to_dict(), "heads": 3}).save(run / "config.json")
        assert main(["eval", "--checkpoint", str(run), "--out", str(tmp_path / "ev")]) == 1

    def test_eval_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "nothing")]) == 1

    def test_numerical_failure_exit_code(self, tmp_path):
        with np.errstate(over="ignore"):
            code = main(["train", "--out", str(tmp_path / "r")] + SMALL + ["--set", "lr0=1e300"])
        assert code == 2


class TestAblate:
    def test_variants(self, tmp_path):
        out = tmp_path / "ab"
        assert main(["ablate", "--out", str(out), "--set", "ablate_seeds=0"] + SMALL) == 0
        summary = json.loads((out / "ablation.json").read_text())
        assert set(summary["variants"]) == {"full", "no_virtual"}
        assert summary["full_ge_no_virtual_seeds"] in (0, 1)
        assert (out / "full" / "seed_0" / "report.json").exists()
        assert (out / "ablation.csv").read_text().startswith("variant,seed,missing_mean")

    def test_length_sweep(self, tmp_path):
        out = tmp_path / "len"
        assert main(["ablate", "--mode", "length", "--out", str(out),
                     "--set", "ablate_seeds=0", "--set", "sweep_lengths=0,2"] + SMALL) == 0
        summary = json.loads((out / "ablation.json").read_text())
        assert set(summary["variants"]) == {"length_0", "length_2"}
        assert isinstance(summary["best_not_largest"], bool)
