import numpy as np
import pytest
import yaml

from vbop import dataset as dsm
from vbop.cli import main
from vbop.prediction import nmse


def write_cfg(path, doc):
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh)
    return str(path)


SMOKE = {
    "problem": "ad-desk",
    "seed": 11,
    "dataset": {"n_train": 20, "m_train": 5, "n_test": 10},
    "train": {"epochs": 5, "n_tilde": 2},
    "predict": {"samples": 12, "pdf_realizations": 200, "pdf_samples": 6,
                "ci_realizations": 2},
}


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    cfg = write_cfg(root / "cfg.yaml", SMOKE)
    out = root / "run"
    assert main(["gen-data", "--config", cfg, "--out", str(out)]) == 0
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    return cfg, out


class TestGenData:
    def test_ad_preset_row_count(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.yaml", {"problem": "ad"})
        out = tmp_path / "run"
        rc = main(["gen-data", "--config", str(cfg), "--out", str(out),
                   "-O", "dataset.n_test=2"])
        assert rc == 0
        assert dsm.load(out / "train.vbds").rows == 3000 * 20

    def test_dr_preset_row_count(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.yaml", {"problem": "dr"})
        out = tmp_path / "run"
        rc = main(["gen-data", "--config", str(cfg), "--out", str(out),
                   "-O", "dataset.n_test=2"])
        assert rc == 0
        ds = dsm.load(out / "train.vbds")
        assert ds.rows == 500 * 100
        assert ds.y_dim == 2

    def test_rerun_same_seed_identical_files(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.yaml", SMOKE)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["gen-data", "--config", cfg, "--out", str(out1)]) == 0
        assert main(["gen-data", "--config", cfg, "--out", str(out2)]) == 0
        for name in ("train.vbds", "test.vbds"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_manifest_written(self, smoke_run):
        _, out = smoke_run
        assert (out / "manifest.json").exists()
        assert (out / "resolved_config.yaml").exists()


class TestTrain:
    def test_trace_row_per_epoch(self, smoke_run):
        _, out = smoke_run
        lines = (out / "trace.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,total_loss,kl,nll,seconds"
        assert len(lines) == 1 + SMOKE["train"]["epochs"]

    def test_single_epoch_smoke(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.yaml", {**SMOKE, "train": {"epochs": 1}})
        out = tmp_path / "run"
        assert main(["gen-data", "--config", cfg, "--out", str(out)]) == 0
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "trace.csv").read_text().strip().splitlines()
        assert len(lines) == 2

    def test_baseline_mode_flag(self, tmp_path, smoke_run):
        cfg, data_run = smoke_run
        out = tmp_path / "baseline"
        rc = main(["train", "--config", cfg, "--out", str(out), "--baseline",
                   "--data", str(data_run / "train.vbds")])
        assert rc == 0
        assert "mode: baseline" in (out / "summary.txt").read_text()
        from vbop.checkpoint import load_checkpoint

        ck = load_checkpoint(out / "checkpoint.vbck")
        assert ck.baseline
        assert np.all(ck.params.delta == -50.0)

    def test_invalid_preset_exits_2(self, tmp_path):
        assert main(["train", "--preset", "bogus", "--out",
                     str(tmp_path / "x")]) == 2

    def test_resume_command(self, tmp_path, smoke_run):
        cfg, data_run = smoke_run
        out = tmp_path / "steps"
        rc = main(["train", "--config", cfg, "--out", str(out), "--data",
                   str(data_run / "train.vbds"), "-O", "train.epochs=3"])
        assert rc == 0
        rc = main(["resume", "--config", cfg, "--out", str(out), "--data",
                   str(data_run / "train.vbds"),
                   "--checkpoint", str(out / "checkpoint.vbck"),
                   "-O", "train.epochs=5"])
        assert rc == 0
        from vbop.checkpoint import load_checkpoint

        assert load_checkpoint(out / "checkpoint.vbck").epoch == 5


class TestEvaluate:
    def test_metrics_and_monotone_coverage(self, tmp_path, smoke_run):
        cfg, run = smoke_run
        out = tmp_path / "eval"
        rc = main(["evaluate", "--config", cfg, "--out", str(out),
                   "--checkpoint", str(run / "checkpoint.vbck"),
                   "--data", str(run / "test.vbds")])
        assert rc == 0
        text = (out / "summary.csv").read_text()
        rows = dict(line.split(",") for line in text.strip().splitlines()[1:])
        c = [float(rows[f"coverage_{k}"]) for k in (68, 95, 99)]
        assert c[0] <= c[1] <= c[2]
        assert float(rows["nmse"]) >= 0.0

    def test_field_grids_shape_for_pde(self, tmp_path):
        doc = {"problem": "dr", "seed": 2,
               "dataset": {"n_train": 5, "m_train": 6, "n_test": 2},
               "train": {"epochs": 1, "n_tilde": 1},
               "predict": {"samples": 4, "ci_realizations": 1}}
        cfg = write_cfg(tmp_path / "c.yaml", doc)
        out = tmp_path / "run"
        assert main(["gen-data", "--config", cfg, "--out", str(out)]) == 0
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        rc = main(["evaluate", "--config", cfg, "--out", str(out / "eval"),
                   "--checkpoint", str(out / "checkpoint.vbck"),
                   "--data", str(out / "test.vbds")])
        assert rc == 0
        for name in ("field_mean.csv", "field_abs_error.csv", "field_std.csv"):
            table = np.loadtxt(out / "eval" / name, delimiter=",")
            assert table.shape == (100, 100)

    def test_identity_sanity_nmse_zero(self, smoke_run):
        _, run = smoke_run
        test = dsm.load(run / "test.vbds")
        assert nmse(test.s, test.s) == 0.0

    def test_corrupt_checkpoint_exits_4(self, tmp_path, smoke_run):
        cfg, run = smoke_run
        bad = tmp_path / "bad.vbck"
        blob = bytearray((run / "checkpoint.vbck").read_bytes())
        blob[50] ^= 0xFF
        bad.write_bytes(bytes(blob))
        rc = main(["evaluate", "--config", cfg, "--out", str(tmp_path / "e"),
                   "--checkpoint", str(bad), "--data", str(run / "test.vbds")])
        assert rc == 4


class TestPdf:
    def test_curve_file_and_normalization(self, tmp_path, smoke_run):
        cfg, run = smoke_run
        out = tmp_path / "pdf"
        rc = main(["pdf", "--config", cfg, "--out", str(out),
                   "--checkpoint", str(run / "checkpoint.vbck"),
                   "--t-index", "7"])
        assert rc == 0
        path = out / "pdf_t7.csv"
        assert path.exists()
        table = np.loadtxt(path, delimiter=",", skiprows=1)
        support, mean_density = table[:, 0], table[:, 1]
        total = np.trapezoid(mean_density, support)
        assert abs(total - 1.0) < 1e-3

    def test_out_of_range_index_exits_2(self, tmp_path, smoke_run):
        cfg, run = smoke_run
        rc = main(["pdf", "--config", cfg, "--out", str(tmp_path / "p"),
                   "--checkpoint", str(run / "checkpoint.vbck"),
                   "--t-index", "200"])
        assert rc == 2


class TestReport:
    def test_report_renders_figures(self, tmp_path, smoke_run):
        cfg, run = smoke_run
        main(["evaluate", "--config", cfg, "--out", str(run / "eval"),
              "--checkpoint", str(run / "checkpoint.vbck"),
              "--data", str(run / "test.vbds")])
        rc = main(["report", "--run", str(run)])
        assert rc == 0
        figures = list((run / "figures").glob("*.png"))
        assert any(f.name == "trace.png" for f in figures)
        assert all(f.stat().st_size > 0 for f in figures)
        assert (run / "comparison.csv").exists()


class TestExitCodes:
    def test_usage_error_is_2(self):
        assert main(["train"]) in (0, 2)  # missing config -> ConfigError
        assert main(["no-such-command"]) == 2

    def test_unreadable_data_is_4(self, tmp_path, smoke_run):
        cfg, run = smoke_run
        rc = main(["train", "--config", cfg, "--out", str(tmp_path / "t"),
                   "--data", str(tmp_path / "missing.vbds")])
        assert rc == 4
