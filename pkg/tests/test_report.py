import numpy as np
import pytest

from vbop import report
from vbop.prediction import write_summary_csv


@pytest.fixture()
def fake_run(tmp_path):
    run = tmp_path / "run"
    (run / "eval_vb").mkdir(parents=True)
    (run / "eval_baseline").mkdir()
    with open(run / "trace.csv", "w") as fh:
        fh.write("epoch,total_loss,kl,nll,seconds\n")
        for e in range(1, 21):
            fh.write(f"{e},{100.0 / e},{50.0 / e},{50.0 / e},{e * 0.1:.3f}\n")
    write_summary_csv(run / "eval_vb" / "summary.csv", 0.004,
                      {0.68: 0.7, 0.95: 0.96, 0.99: 0.99})
    write_summary_csv(run / "eval_baseline" / "summary.csv", 0.009,
                      {0.68: 0.0, 0.95: 0.0, 0.99: 0.0})
    y = np.linspace(0, 1, 30)
    table = np.column_stack([y, np.sin(y), np.sin(y) + 0.01, 0.1 * np.ones(30),
                             0.05 * np.ones(30), 0.05 * np.ones(30),
                             np.sin(y) - 0.2, np.sin(y) + 0.2])
    np.savetxt(run / "eval_vb" / "realization_000.csv", table, delimiter=",",
               header="y_1,truth,mean,std_total,std_epistemic,std_aleatoric,"
                      "ci_lo,ci_hi", comments="")
    rng = np.random.default_rng(0)
    for name in ("field_mean.csv", "field_abs_error.csv", "field_std.csv"):
        np.savetxt(run / "eval_vb" / name, rng.random((20, 20)), delimiter=",")
    s = np.linspace(-3, 3, 50)
    dens = np.exp(-0.5 * s ** 2) / np.sqrt(2 * np.pi)
    np.savetxt(run / "pdf_t7.csv",
               np.column_stack([s, dens, 0.9 * dens, 1.1 * dens]),
               delimiter=",", header="support,mean_density,band_lo,band_hi",
               comments="")
    np.savetxt(run / "pdf_t7_truth.csv", np.column_stack([s, dens]),
               delimiter=",", header="support,density", comments="")
    return run


class TestReport:
    def test_collect_summaries_labels(self, fake_run):
        found = report.collect_summaries(fake_run)
        assert set(found) == {"eval_vb", "eval_baseline"}
        assert found["eval_vb"]["nmse"] == 0.004

    def test_comparison_table_side_by_side(self, fake_run, tmp_path):
        found = report.collect_summaries(fake_run)
        out = tmp_path / "comparison.csv"
        report.write_comparison(found, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("label,")
        assert len(lines) == 3
        text = out.read_text()
        assert "0.004" in text and "0.009" in text

    def test_generate_report_renders_everything(self, fake_run):
        written = report.generate_report(fake_run)
        names = {p.name for p in written}
        assert "trace.png" in names
        assert "comparison.csv" in names
        assert "eval_vb_fields.png" in names
        assert "pdf_t7.png" in names
        assert all(p.stat().st_size > 0 for p in written)

    def test_report_into_separate_out_dir(self, fake_run, tmp_path):
        out = tmp_path / "elsewhere"
        written = report.generate_report(fake_run, out)
        assert all(str(p).startswith(str(out)) for p in written)
