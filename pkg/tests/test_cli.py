import json

import pytest

from laserphm import cli
from laserphm.config import ConfigError, load_config
from laserphm.degradation_sim import (
    DegradationMode,
    generate_sequence,
    read_sequences_csv,
    sample_scenario,
    write_sequences_csv,
)

SMALL = """\
# tiny run for CLI plumbing tests
count_normal = 6
count_sudden = 6
count_gradual = 6
detector.epochs = 2
detector.batch_size = 8
rul_sudden.epochs = 1
rul_gradual.epochs = 1
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL)
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("small")
    cfg = base / "run.cfg"
    cfg.write_text(SMALL)
    assert cli.main(["pipeline", "--config", str(cfg), "--seed", "7", "--out", str(base)]) == 0
    return base, cfg


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.seed == 42 and cfg.counts == (200, 200, 200)
        assert cfg.detector.epochs == 30 and cfg.rul_gradual.epochs == 50
        assert cfg.tau_fraction == 0.6 and cfg.sg_spec.window_length == 11

    def test_file_and_override(self, small_config):
        cfg = load_config(small_config, seed=9)
        assert cfg.seed == 9 and cfg.counts == (6, 6, 6) and cfg.detector.batch_size == 8

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("colour = blue\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("tau_fraction = 1.5\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_paths_distinct(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("model_dir = data\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestGenerate:
    def test_manifest_and_files(self, small_run):
        base, _ = small_run
        manifest = json.loads((base / "data" / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["counts"] == {"normal": 6, "sudden": 6, "gradual": 6}
        seqs = read_sequences_csv(base / "data" / "gradual.csv")
        assert len(seqs) == 6 and all(s.mode is DegradationMode.GRADUAL for s in seqs)
        assert (base / "data" / "resolved_config.txt").exists()

    def test_rerun_identical(self, small_run, small_config, tmp_path):
        base, _ = small_run
        assert cli.main(["generate", "--config", str(small_config), "--seed", "7",
                         "--out", str(tmp_path)]) == 0
        for name in ("normal.csv", "sudden.csv", "gradual.csv", "manifest.json"):
            assert (tmp_path / "data" / name).read_bytes() == (base / "data" / name).read_bytes()

    def test_zero_count_header_only(self, tmp_path):
        cfg = tmp_path / "z.cfg"
        cfg.write_text("count_normal = 2\ncount_sudden = 0\ncount_gradual = 1\n")
        assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        assert len((tmp_path / "data" / "sudden.csv").read_text().splitlines()) == 1


class TestPipelineOutputs:
    def test_models_and_reports(self, small_run):
        base, _ = small_run
        for purpose in ("fault-detector", "rul-sudden", "rul-gradual"):
            data = json.loads((base / "models" / f"{purpose}.json").read_text())
            assert data["purpose"] == purpose
            log = (base / "models" / f"train_log_{purpose}.csv").read_text().splitlines()
            assert log[0] == "epoch,train_loss,holdout_metric"
        for name in ("confusion.csv", "metrics.csv", "trajectories.csv"):
            assert (base / "reports" / name).exists()
        split = (base / "models" / "split.csv").read_text().splitlines()
        assert split[0] == "window_id,subset" and len(split) == 19

    def test_preprocess(self, small_run):
        base, cfg = small_run
        assert cli.main(["preprocess", "--config", str(cfg), "--out", str(base)]) == 0
        lines = (base / "data" / "features.csv").read_text().splitlines()
        assert lines[0] == "window_id,step,current_norm,T_norm,P_norm,lambda_norm,rul_label,mode_label"
        assert len(lines) == 1 + 18 * 100
        normal_row = next(l for l in lines[1:] if l.endswith(",normal"))
        assert normal_row.split(",")[6] == ""


class TestExitCodes:
    def test_config_error(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense = 1\n")
        assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_missing_data(self, tmp_path):
        assert cli.main(["train", "--out", str(tmp_path)]) == 3

    def test_missing_models(self, small_run, tmp_path):
        base, cfg = small_run
        assert cli.main(["evaluate", "--config", str(cfg), "--out", str(tmp_path)]) == 3

    def test_malformed_csv(self, small_run, tmp_path):
        base, cfg = small_run
        bad = tmp_path / "bad.csv"
        bad.write_text("sequence_id,mode_label,t_hours,current_mA,temperature_K,power_mW,"
                       "wavelength_nm,threshold_current_mA,failure_time_hours\n"
                       "x,normal,0.0,20.0,300,2,1550,20,\n"
                       "x,normal,oops,20.0,300,2,1550,20,\n")
        code = cli.main(["diagnose", "--config", str(cfg), "--out", str(base),
                         "--input", str(bad)])
        assert code == 3


def write_single(tmp_path, mode, seed, strip_failure=False):
    seq = generate_sequence(sample_scenario(mode, seed))
    seq.sequence_id = f"probe-{mode.label}"
    if strip_failure:
        seq.failure_time = None
    path = tmp_path / f"{mode.label}.csv"
    write_sequences_csv(path, [seq])
    return path


@pytest.mark.slow
class TestDiagnose:
    def test_normal_has_no_rul_and_loads_no_rul_model(self, acceptance_run, tmp_path, monkeypatch):
        base, _ = acceptance_run

        def forbidden(*args, **kwargs):
            raise AssertionError("RUL model loaded for a normal laser")

        monkeypatch.setattr(cli, "load_rul_predictor", forbidden)
        path = write_single(tmp_path, DegradationMode.NORMAL, 123)
        record = cli.cmd_diagnose(load_config(out_dir=base), path, output=tmp_path / "d.json")
        assert record["mode"] == "normal"
        assert not any(k.startswith("rul") for k in record) and "model_used" not in record
        assert json.loads((tmp_path / "d.json").read_text()) == record

    def test_gradual_end_of_life(self, acceptance_run, tmp_path):
        base, _ = acceptance_run
        path = write_single(tmp_path, DegradationMode.GRADUAL, 321)
        record = cli.cmd_diagnose(load_config(out_dir=base), path, output=tmp_path / "d.json")
        assert record["mode"] == "gradual"
        assert record["model_used"] == "rul-gradual"
        assert record["rul_fraction"] < 0.2
        assert record["rul_hours"] >= 0
        assert abs(sum(record["probabilities"].values()) - 1) < 1e-12

    def test_sudden_routed_to_sudden_model(self, acceptance_run, tmp_path):
        base, _ = acceptance_run
        path = write_single(tmp_path, DegradationMode.SUDDEN, 555, strip_failure=True)
        code = cli.main(["diagnose", "--out", str(base), "--input", str(path),
                         "--output", str(tmp_path / "d.json")])
        assert code == 0
        record = json.loads((tmp_path / "d.json").read_text())
        assert record["mode"] == "sudden" and record["model_used"] == "rul-sudden"
        assert record["rul_hours_basis"] == "estimated from elapsed time"

    def test_multi_sequence_needs_id(self, small_run, tmp_path):
        base, cfg = small_run
        csv_path = base / "data" / "gradual.csv"
        assert cli.main(["diagnose", "--config", str(cfg), "--out", str(base),
                         "--input", str(csv_path), "--output", str(tmp_path / "x.json")]) == 3
        assert cli.main(["diagnose", "--config", str(cfg), "--out", str(base),
                         "--input", str(csv_path), "--sequence-id", "gradual-0002",
                         "--output", str(tmp_path / "x.json")]) == 0
