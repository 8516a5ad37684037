import numpy as np
import pytest

from cfpl.data import load_manifest
from cfpl.protocol import (SWEEP_DEPTHS, SWEEP_LENGTHS, leave_one_out,
                           parse_protocol_spec, sweep)

from conftest import micro_config


class TestSpecParsing:
    def test_synth_spec_parses(self, synth3):
        spec = parse_protocol_spec(synth3["protocol"])
        assert spec.domains == ["d0", "d1", "d2"]
        assert set(spec.manifests) == {"d0", "d1", "d2"}
        for path in spec.manifests.values():
            assert path.is_file()

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parse_protocol_spec(tmp_path / "nope.cfg")

    def test_single_domain_rejected(self, tmp_path):
        p = tmp_path / "p.cfg"
        p.write_text("domains = a\nmanifest.a = a.csv\n")
        with pytest.raises(ValueError, match="2 domains"):
            parse_protocol_spec(p)

    def test_missing_manifest_key(self, tmp_path):
        p = tmp_path / "p.cfg"
        p.write_text("domains = a,b\nmanifest.a = a.csv\n")
        with pytest.raises(ValueError, match="\\['b'\\]"):
            parse_protocol_spec(p)

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "p.cfg"
        p.write_text("domains = a,b\nmanifest.a = x\nmanifest.b = y\nwhat = z\n")
        with pytest.raises(ValueError, match="unknown key"):
            parse_protocol_spec(p)

    def test_config_reference(self, tmp_path):
        (tmp_path / "run.cfg").write_text("seed = 3\n")
        p = tmp_path / "p.cfg"
        p.write_text("domains = a,b\nmanifest.a = x\nmanifest.b = y\nconfig = run.cfg\n")
        spec = parse_protocol_spec(p)
        assert spec.config_path == (tmp_path / "run.cfg").resolve()


@pytest.fixture(scope="module")
def loo_report(synth3):
    spec = parse_protocol_spec(synth3["protocol"])
    cfg = micro_config(max_steps=6, seed=7)
    return leave_one_out(spec, cfg)


class TestLeaveOneOut:
    @pytest.fixture
    def report(self, loo_report):
        return loo_report

    def test_one_row_per_domain(self, report):
        assert [r.target for r in report.rows] == ["d0", "d1", "d2"]

    def test_averages_are_arithmetic_means(self, report):
        avg = report.averages()
        assert avg.hter == pytest.approx(np.mean([r.hter for r in report.rows]), abs=1e-12)
        assert avg.auc == pytest.approx(np.mean([r.auc for r in report.rows]), abs=1e-12)
        assert avg.tpr_at_fpr1 == pytest.approx(
            np.mean([r.tpr_at_fpr1 for r in report.rows]), abs=1e-12)

    def test_csv_shape(self, report):
        lines = report.to_csv().strip().splitlines()
        assert lines[0] == "target,hter,auc,tpr_at_fpr1,threshold_policy,seed"
        assert len(lines) == 5  # header + 3 targets + avg
        assert lines[-1].startswith("avg,")
        assert lines[1].endswith(",eer,7")

    def test_metrics_in_range(self, report):
        for r in report.rows:
            assert 0.0 <= r.hter <= 1.0
            assert 0.0 <= r.auc <= 1.0
            assert 0.0 <= r.tpr_at_fpr1 <= 1.0

    def test_deterministic_rerun(self, synth3, report):
        spec = parse_protocol_spec(synth3["protocol"])
        again = leave_one_out(spec, micro_config(max_steps=6, seed=7))
        assert again.to_csv() == report.to_csv()

    def test_table_renders_percent(self, report):
        table = report.to_table()
        assert "HTER%" in table and "avg" in table


class TestSweep:
    def test_grid_axes_and_shape(self, synth2):
        train_rows = load_manifest(synth2["domains"]["d0"])
        eval_rows = load_manifest(synth2["domains"]["d1"])
        cfg = micro_config(max_steps=1)
        result = sweep(cfg, train_rows, eval_rows, lengths=(2, 4), depths=(1, 2))
        assert result.hter_grid.shape == (2, 2)
        csv = result.to_csv().strip().splitlines()
        assert csv[0] == "depth,length_2,length_4"
        assert csv[1].startswith("1,") and csv[2].startswith("2,")

    def test_default_axes_match_published_sweep(self):
        assert SWEEP_LENGTHS == (8, 16, 32, 64)
        assert SWEEP_DEPTHS == (1, 4, 8, 12)
