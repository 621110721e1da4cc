import csv
import json

import numpy as np
import pytest

from prunekit import __version__
from prunekit.cli import main
from prunekit.harness import (
    ConfigError,
    ExperimentConfig,
    RunManifest,
    run,
    seed_stream,
    write_csv,
)
from prunekit.schedules import CyclicalSchedule, ScheduleSpec

SAWTOOTH = {
    "kind": "schedule_dump",
    "params": {
        "total_iters": 100,
        "sparsity": CyclicalSchedule(ScheduleSpec("cubic", 25, s_t=0.9), 4, 100, later_cycle_s_init=0.45).to_dict(),
        "lr": {"type": "spec", "kind": "constant", "total_iters": 100, "base_value": 0.1},
    },
}


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestSeedStream:
    def test_deterministic(self):
        assert seed_stream(7, 3) == seed_stream(7, 3)

    def test_no_collisions(self):
        children = {seed_stream(0, i) for i in range(10_001)}
        assert len(children) == 10_001

    def test_masters_differ(self):
        assert len({seed_stream(m, 0) for m in range(100)}) == 100

    def test_fits_numpy_seed(self):
        np.random.default_rng(seed_stream(2**40, 2**40))


class TestConfig:
    def test_round_trip(self):
        cfg = ExperimentConfig.from_dict(SAWTOOTH)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("data", [
        {"kind": "nope"},
        {"kind": "linear_sim", "params": {"trials": 0}},
        {"kind": "linear_sim", "params": {"bogus": 1}},
        {"kind": "linear_sim", "jobs": 0},
        {"kind": "prune_train", "params": {"method": ["magic"]}},
        {"kind": "ablate", "params": {"k": 1}},
        {"kind": "schedule_dump", "params": {"total_iters": 10}},
        {"kind": "schedule_dump", "extra": 1},
        {"seed": 1},
    ])
    def test_invalid(self, data, tmp_path):
        out = tmp_path / "out"
        with pytest.raises(ConfigError):
            run({**data, "out_dir": str(out)})
        assert not out.exists()


class TestCsv:
    def test_format(self, tmp_path):
        path = tmp_path / "x.csv"
        write_csv(path, ["a", "b"], [[0.1, 2], [1e-20, np.float64(1 / 3)]])
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw == b"a,b\n0.1,2\n1e-20,0.3333333333333333\n"

    def test_append_writes_header_once(self, tmp_path):
        path = tmp_path / "x.csv"
        write_csv(path, ["a"], [[1]], append=True)
        write_csv(path, ["a"], [[2]], append=True)
        assert path.read_text() == "a\n1\n2\n"


class TestRun:
    def test_schedule_dump_sawtooth(self, tmp_path):
        manifest = run({**SAWTOOTH, "out_dir": str(tmp_path)})
        rows = read_csv(tmp_path / "schedule.csv")
        s = np.array([float(r["sparsity"]) for r in rows])
        assert [int(r["t"]) for r in rows] == list(range(101))
        drops = [t for t in range(1, 101) if s[t] < s[t - 1]]
        assert drops == [25, 50, 75]
        assert s[0] == 0.0 and all(s[b] == 0.45 for b in drops)
        assert s[100] == 0.9
        for a, b in zip([0, 25, 50, 75], [25, 50, 75, 101]):
            assert np.all(np.diff(s[a:b]) >= 0)
        assert {float(r["lr"]) for r in rows} == {0.1}
        assert manifest.outputs == ["schedule.csv"]

    def test_manifest_round_trip(self, tmp_path):
        run({**SAWTOOTH, "out_dir": str(tmp_path), "seed": 4})
        data = json.loads((tmp_path / "manifest.json").read_text())
        m = RunManifest(**data)
        assert m.status == "ok" and m.version == __version__ and m.error is None
        cfg = m.experiment_config()
        assert cfg.seed == 4 and cfg.params == json.loads(json.dumps(SAWTOOTH["params"]))
        assert not list(tmp_path.glob(".manifest-*"))

    def test_regenerate_from_manifest(self, tmp_path):
        first = tmp_path / "a"
        run({"kind": "linear_sim", "out_dir": str(first), "seed": 3,
             "params": {"n": [2, 4], "alpha_mode": ["random", "adversarial"], "trials": 20}})
        cfg = RunManifest(**json.loads((first / "manifest.json").read_text())).experiment_config()
        cfg.out_dir = str(tmp_path / "b")
        run(cfg)
        assert (first / "linear_sim.csv").read_bytes() == (tmp_path / "b" / "linear_sim.csv").read_bytes()
        assert len(read_csv(first / "linear_sim.csv")) == 4

    def test_rerun_does_not_duplicate_rows(self, tmp_path):
        cfg = {"kind": "linear_sim", "out_dir": str(tmp_path), "params": {"trials": 5}}
        run(cfg)
        run(cfg)
        assert len(read_csv(tmp_path / "linear_sim.csv")) == 1

    def test_parallel_matches_serial(self, tmp_path):
        base = {"kind": "linear_sim", "params": {"n": 4, "alpha_mode": "adversarial", "trials": 24}}
        run({**base, "out_dir": str(tmp_path / "s")})
        run({**base, "out_dir": str(tmp_path / "p"), "jobs": 3})
        assert (tmp_path / "s" / "linear_sim.csv").read_bytes() == (tmp_path / "p" / "linear_sim.csv").read_bytes()

    def test_linear_columns(self, tmp_path):
        run({"kind": "linear_sim", "out_dir": str(tmp_path), "params": {"trials": 10, "n": 10}})
        row = read_csv(tmp_path / "linear_sim.csv")[0]
        assert list(row) == ["d", "n", "alpha_mode", "trials", "p_oneshot", "p_pgd", "ci_oneshot", "ci_pgd"]
        assert row["n"] == "10" and 0 <= float(row["ci_pgd"]) <= 0.5

    def test_prune_train_outputs(self, tmp_path):
        run({"kind": "prune_train", "out_dir": str(tmp_path),
             "params": {"method": ["one_shot", "cyclical"], "seeds": [0], "s_t": 0.9,
                        "recipe": {"total_iters": 100, "k": 2}, "pretrain": {"iters": 50}}})
        table = read_csv(tmp_path / "prune_train.csv")
        assert [r["method"] for r in table] == ["one_shot", "cyclical"]
        trace = read_csv(tmp_path / "trace_cyclical_seed0.csv")
        assert list(trace[0]) == ["t", "loss", "sparsity", "lr", "regrown_fraction"]
        assert len(trace) == 100

    def test_ablate_outputs(self, tmp_path):
        run({"kind": "ablate", "out_dir": str(tmp_path),
             "params": {"kind": ["finetune_only"], "k": 2, "recipe": {"total_iters": 80}, "pretrain": {"iters": 50}}})
        rows = read_csv(tmp_path / "ablation_finetune_only.csv")
        assert [r["cycle"] for r in rows] == ["1", "2"]
        assert {r["mask_jaccard"] for r in rows} == {"0.0"}

    def test_runtime_failure_writes_manifest(self, tmp_path):
        with pytest.raises(TypeError):
            run({"kind": "prune_train", "out_dir": str(tmp_path),
                 "params": {"seeds": [0], "recipe": {"total_iters": 10}, "pretrain": {"bogus": 1}}})
        data = json.loads((tmp_path / "manifest.json").read_text())
        assert data["status"] == "failed" and "TypeError" in data["error"]


class TestCli:
    def test_schedule_dump(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(SAWTOOTH))
        assert main(["schedule-dump", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
        assert json.loads(capsys.readouterr().out)["status"] == "ok"
        assert (tmp_path / "o" / "schedule.csv").exists()

    def test_flags_override(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"kind": "linear_sim", "params": {"trials": 1000, "n": 10}}))
        assert main(["linear-sim", "--config", str(cfg), "--trials", "6", "--n", "2",
                     "--out-dir", str(tmp_path / "o")]) == 0
        row = read_csv(tmp_path / "o" / "linear_sim.csv")[0]
        assert row["trials"] == "6" and row["n"] == "2"

    def test_config_error_exit_code(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["linear-sim", "--trials", "0", "--out-dir", str(out)]) == 2
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith("error: config:")
        assert not out.exists()

    def test_kind_mismatch(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(SAWTOOTH))
        assert main(["linear-sim", "--config", str(cfg)]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["ablate", "--config", str(tmp_path / "missing.json")]) == 2

    def test_runtime_error_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"kind": "prune_train", "params": {"seeds": [0], "pretrain": {"bogus": 1}}}))
        assert main(["prune-train", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 1
        assert capsys.readouterr().err.startswith("error: runtime:")
