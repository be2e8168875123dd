import csv
import io
import json
import math
import time

import pytest

from dicycle import cli
from dicycle.data import SyntheticSpec, generate_synthetic, ingest

TINY_SPEC = "n_users = 50\nhorizon_days = 20.0\nseed = 3\n"


def tiny_config(tmp_path, **extra):
    (tmp_path / "spec.toml").write_text(TINY_SPEC)
    values = {"synthetic_spec": "spec.toml", "d": 8, "hidden": [8, 4], "epochs": 2, "batch_size": 64, **extra}
    lines = [f"{k} = {json.dumps(v)}" for k, v in values.items()]
    path = tmp_path / "config.toml"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = tiny_config(root)
    assert cli.main(["train", "--config", cfg, "--out", str(root / "out")]) == 0
    return root


class TestGenerate:
    def test_outputs_and_determinism(self, tmp_path):
        spec_path = tmp_path / "spec.toml"
        spec_path.write_text(TINY_SPEC)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(["generate", "--config", str(spec_path), "--out", str(a)]) == 0
        assert cli.main(["generate", "--config", str(spec_path), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.truth.json").read_bytes() == (tmp_path / "b.truth.json").read_bytes()
        hourly = read_csv(tmp_path / "a.hourly.csv")
        assert sum(int(r["count"]) for r in hourly) == len(ingest(a))

    def test_count_within_three_sigma(self, tmp_path):
        spec = SyntheticSpec(n_users=50, horizon_days=20.0, seed=3)
        _, truth = generate_synthetic(spec)
        out = tmp_path / "log.csv"
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec.to_dict()))
        assert cli.main(["generate", "--config", str(spec_path), "--out", str(out)]) == 0
        log = ingest(out)
        expected = truth.expected_count(log)
        assert abs(len(log) - expected) < 3 * math.sqrt(expected)

    def test_refuses_to_overwrite(self, tmp_path, capsys):
        out = tmp_path / "log.csv"
        out.write_text("keep me")
        assert cli.main(["generate", "--out", str(out)]) == 2
        assert "--force" in capsys.readouterr().err
        assert out.read_text() == "keep me"

    def test_seed_override_changes_log(self, tmp_path):
        spec_path = tmp_path / "spec.toml"
        spec_path.write_text(TINY_SPEC)
        cli.main(["generate", "--config", str(spec_path), "--out", str(tmp_path / "a.csv")])
        cli.main(["generate", "--config", str(spec_path), "--out", str(tmp_path / "b.csv"), "--seed", "4"])
        assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "b.csv").read_bytes()


class TestTrain:
    def test_tiny_run_is_fast_and_complete(self, tmp_path):
        cfg = tiny_config(tmp_path)
        started = time.time()
        assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        assert time.time() - started < 300
        out = tmp_path / "out"
        for name in (cli.CONFIG_FILE, cli.CHECKPOINT_FILE, cli.HISTORY_FILE, cli.REPORT_FILE, cli.METADATA_FILE):
            assert (out / name).is_file(), name
        assert not (out / cli.FAILED_FILE).exists()
        [row] = read_csv(out / cli.REPORT_FILE)
        assert 0.0 <= float(row["auc"]) <= 1.0

    def test_rerun_is_byte_identical(self, tmp_path, trained_run):
        cfg = tiny_config(tmp_path)
        assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
        for name in (cli.CHECKPOINT_FILE, cli.HISTORY_FILE, cli.REPORT_FILE):
            assert (tmp_path / "again" / name).read_bytes() == (trained_run / "out" / name).read_bytes(), name

    def test_existing_dir_needs_force(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path, epochs=1)
        out = tmp_path / "out"
        assert cli.main(["train", "--config", cfg, "--out", str(out)]) == 0
        assert cli.main(["train", "--config", cfg, "--out", str(out)]) == 2
        assert "exists" in capsys.readouterr().err
        assert cli.main(["train", "--config", cfg, "--out", str(out), "--force"]) == 0

    def test_lr_variant_smoke(self, tmp_path):
        cfg = tiny_config(tmp_path, epochs=1)
        assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "lr"), "--variant", "LR"]) == 0
        assert read_csv(tmp_path / "lr" / cli.REPORT_FILE)[0]["name"] == "LR"

    def test_failure_leaves_marker(self, tmp_path):
        cfg = tiny_config(tmp_path, data_path="missing.csv")
        out = tmp_path / "out"
        assert cli.main(["train", "--config", cfg, "--out", str(out)]) == 2
        assert (out / cli.FAILED_FILE).is_file()
        assert not (out / cli.METADATA_FILE).exists()


class TestEvalAndProbe:
    def test_eval_matches_training_report(self, trained_run, capsys):
        assert cli.main(["eval", "--run", str(trained_run / "out")]) == 0
        assert capsys.readouterr().out == (trained_run / "out" / cli.REPORT_FILE).read_text()

    def test_probe_rows_and_range(self, trained_run, capsys):
        assert cli.main(["probe", "--run", str(trained_run / "out"), "--horizon", "72"]) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert len(rows) == 73
        assert [float(r["offset_hours"]) for r in rows[:3]] == [0.0, 1.0, 2.0]
        assert all(0.0 < float(r["score"]) < 1.0 for r in rows)

    def test_probe_unknown_user(self, trained_run, capsys):
        assert cli.main(["probe", "--run", str(trained_run / "out"), "--user", "nobody"]) == 2
        assert "unknown user" in capsys.readouterr().err

    @pytest.mark.parametrize("command", ["eval", "probe"])
    def test_missing_checkpoint_fails(self, tmp_path, command, capsys):
        assert cli.main([command, "--run", str(tmp_path)]) != 0
        assert "no checkpoint" in capsys.readouterr().err


class TestAblate:
    def test_four_rows_valid_csv(self, tmp_path):
        cfg = tiny_config(tmp_path, epochs=1)
        out = tmp_path / "abl"
        assert cli.main(["ablate", "--config", cfg, "--out", str(out)]) == 0
        text = (out / "ablation.csv").read_text(encoding="utf-8")
        assert "\r" not in text
        rows = list(csv.DictReader(io.StringIO(text)))
        assert [r["variant"] for r in rows] == ["DiCycle", "NoAbsoluteTime", "NoRelativeTime", "NoTimeCycleModule"]
        assert float(rows[0]["dicycle_auc_rela_impr_pct"]) == 0.0
        meta = json.loads((out / cli.METADATA_FILE).read_text())
        assert set(meta["seconds_per_variant"]) == {r["variant"] for r in rows}
