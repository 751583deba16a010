import json

import pandas as pd
import pytest

from apps.cli.main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
import torch

from packages.engines import bench, nnet, orchestrate, records


def _job(tmp_path, **extra):
    """Small SPM-truth job: short episodes, coarse steps, a couple of PPO rollouts."""
    job = {
        "env": {"episode_length": 3, "truth": {"model": "spm"}, "protocol": {"dt": 30.0}},
        "ppo": {"episodes_per_update": 2, "minibatch": 4, "epochs": 2, "hidden": [8, 8], "checkpoint_every": 1},
        **extra,
    }
    path = tmp_path / "job.json"
    path.write_text(json.dumps(job))
    return str(path)


def _run(*argv):
    return main(list(argv) + ["--quiet"])


class TestTrain:
    def test_zero_iterations_writes_checkpoint(self, tmp_path):
        out = tmp_path / "train"
        assert _run("train", "--config", _job(tmp_path), "--iters", "0", "--out", str(out)) == EXIT_OK
        blob = nnet.load_checkpoint(out / "checkpoints" / "final.pt")
        assert (blob["obs_dim"], blob["act_dim"], blob["variant"]) == (4, 2, "with-lam")
        init = nnet.ActorCritic(4, 2, hidden=(8, 8), action_bounds=[0.1, 0.005], seed=0)
        restored = nnet.model_from_checkpoint(blob)
        assert (nnet.flatten_params(restored) == nnet.flatten_params(init)).all()
        manifest = json.loads((out / "manifest.json").read_text())
        assert "checkpoints/final.pt" in manifest["files"]
        assert manifest["command"] == "train"

    def test_blind_variant_dimensions(self, tmp_path):
        out = tmp_path / "blind"
        code = _run("train", "--config", _job(tmp_path), "--iters", "0", "--variant", "without-lam", "--out", str(out))
        assert code == EXIT_OK
        assert nnet.load_checkpoint(out / "checkpoints" / "final.pt")["obs_dim"] == 2

    def test_same_seed_gives_identical_logs(self, tmp_path):
        job = _job(tmp_path)
        for name in ("a", "b"):
            assert _run("train", "--config", job, "--iters", "1", "--seed", "5", "--out", str(tmp_path / name)) == EXIT_OK
        first = (tmp_path / "a" / "training_log.csv").read_bytes()
        assert first == (tmp_path / "b" / "training_log.csv").read_bytes()
        assert list(pd.read_csv(tmp_path / "a" / "training_log.csv")["iteration"]) == [1]

    def test_trace_covers_training_cycles(self, tmp_path):
        out = tmp_path / "train"
        code = _run("train", "--config", _job(tmp_path), "--iters", "1", "--trace", str(out / "trace.csv"), "--out", str(out))
        assert code == EXIT_OK
        trace = pd.read_csv(out / "trace.csv")
        assert list(trace.columns) == list(records.TRACE_COLUMNS)
        assert {"discharge", "rest", "cc", "cv"} <= set(trace["phase"])
        assert "trace.csv" in json.loads((out / "manifest.json").read_text())["files"]

    def test_missing_resume(self, tmp_path, capsys):
        code = _run("train", "--config", _job(tmp_path), "--resume", str(tmp_path / "gone.pt"), "--out", str(tmp_path))
        assert code == EXIT_USAGE
        assert "gone.pt" in capsys.readouterr().err


class TestEvaluate:
    def test_cccv_baseline(self, tmp_path, capsys):
        out = tmp_path / "eval"
        assert _run("evaluate", "--config", _job(tmp_path), "--cccv", "1.5", "--out", str(out)) == EXIT_OK
        report = bench.EvaluationReport.read(out / "report_cccv_fixed_s0.csv")
        assert report.n_cycles == 3
        assert (report.frame["c_rate"] == 1.5).all()
        assert (out / "episodes_cccv_fixed_s0.jsonl").exists()
        assert "cccv_fixed seed 0" in capsys.readouterr().out

    def test_checkpoint_variant_is_inferred(self, tmp_path):
        job = _job(tmp_path)
        assert _run("train", "--config", job, "--iters", "0", "--variant", "without-lam", "--out", str(tmp_path / "t")) == EXIT_OK
        ckpt = tmp_path / "t" / "checkpoints" / "final.pt"
        out = tmp_path / "e"
        assert _run("evaluate", "--config", job, "--ckpt", str(ckpt), "--seeds", "2", "--out", str(out)) == EXIT_OK
        summary = json.loads((out / "evaluation_rl_without_lam.json").read_text())
        assert summary["seeds"] == [0, 1]

    def test_missing_checkpoint_names_path(self, tmp_path, capsys):
        code = _run("evaluate", "--config", _job(tmp_path), "--ckpt", "missing.bin", "--out", str(tmp_path))
        assert code != EXIT_OK
        assert "missing.bin" in capsys.readouterr().err

    def test_needs_a_framework(self, tmp_path):
        assert _run("evaluate", "--out", str(tmp_path)) == EXIT_USAGE

    def test_fixed_rate_outside_window(self, tmp_path, capsys):
        assert _run("evaluate", "--config", _job(tmp_path), "--cccv", "5", "--out", str(tmp_path / "e")) == EXIT_RUNTIME
        assert "outside" in capsys.readouterr().err

    def test_corrupt_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.pt"
        bad.write_bytes(b"not a checkpoint")
        assert _run("evaluate", "--config", _job(tmp_path), "--ckpt", str(bad), "--out", str(tmp_path / "e")) == EXIT_RUNTIME

    def test_unknown_checkpoint_variant(self, tmp_path, capsys):
        job = _job(tmp_path)
        assert _run("train", "--config", job, "--iters", "0", "--out", str(tmp_path / "t")) == EXIT_OK
        ckpt = tmp_path / "t" / "checkpoints" / "final.pt"
        blob = nnet.load_checkpoint(ckpt)
        blob["variant"] = "sideways"
        torch.save(blob, ckpt)
        assert _run("evaluate", "--config", job, "--ckpt", str(ckpt), "--out", str(tmp_path / "e")) == EXIT_RUNTIME
        assert "sideways" in capsys.readouterr().err

    def test_trace_per_seed(self, tmp_path):
        out = tmp_path / "e"
        argv = ["evaluate", "--config", _job(tmp_path), "--cccv", "1.5", "--seeds", "2"]
        code = _run(*argv, "--trace", str(out / "t.csv"), "--out", str(out))
        assert code == EXIT_OK
        for seed in (0, 1):
            trace = pd.read_csv(out / f"t_s{seed}.csv")
            assert sorted(trace["cycle"].unique()) == [1, 2, 3]


class TestCompare:
    def _reports(self, tmp_path):
        paths = []
        for name, fade in (("rl_with_lam", 8.5), ("cccv_fixed", 9.6), ("rl_without_lam", 10.3)):
            frame = pd.DataFrame(
                {
                    "framework": name,
                    "seed": 0,
                    "episode": 0,
                    "cycle": [1, 2],
                    "c_rate": 1.5,
                    "q_now": 4.5,
                    "q_loss": [fade / 2, fade],
                    "eps_pos_true": 0.6,
                    "eps_estimate": 0.6,
                    "reward": 0.0,
                    "penalty": False,
                    "charge_duration_s": 3000.0,
                },
                columns=list(bench.REPORT_COLUMNS),
            )
            paths.append(str(bench.EvaluationReport(name, 0, frame).write(tmp_path / f"{name}.csv")))
        return paths

    def test_three_reports(self, tmp_path, capsys):
        out = tmp_path / "cmp"
        assert _run("compare", *self._reports(tmp_path), "--out", str(out)) == EXIT_OK
        printed = capsys.readouterr().out.splitlines()
        assert printed[-1] == "rl_with_lam < cccv_fixed < rl_without_lam"
        summary = json.loads((out / "comparison.json").read_text())
        assert summary["verdict"] == bench.ordering_verdict(summary["framework_mean_fade"])
        assert (out / "comparison.csv").exists() and (out / "comparison_long.csv").exists()

    def test_one_report_is_a_usage_error(self, tmp_path):
        assert _run("compare", self._reports(tmp_path)[0], "--out", str(tmp_path / "x")) == EXIT_USAGE

    def test_missing_report(self, tmp_path):
        reports = self._reports(tmp_path)
        assert _run("compare", reports[0], str(tmp_path / "nope.csv"), "--out", str(tmp_path / "x")) == EXIT_USAGE


class TestSimulate:
    def test_snapshot_and_trace(self, tmp_path):
        out = tmp_path / "sim"
        argv = ["simulate", "--truth", "spm", "--dt", "30", "--cycles", "3", "--c-rate", "2.0", "--snapshot", "1,3"]
        assert _run(*argv, "--trace", str(out / "trace.csv"), "--out", str(out)) == EXIT_OK
        assert sorted(p.name for p in (out / "cycles").iterdir()) == ["cycle_0001.csv", "cycle_0003.csv"]
        summaries = json.loads((out / "cycles.json").read_text())
        assert [s["cycle_index"] for s in summaries] == [1, 2, 3]
        trace = pd.read_csv(out / "trace.csv")
        assert {"discharge", "rest", "cc", "cv"} <= set(trace["phase"])
        assert trace["time_s"].is_monotonic_increasing
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["simulation"]["snapshot"] == [1, 3]
        assert "trace.csv" in manifest["files"]

    def test_dfn_trace_has_concentration_extrema(self, tmp_path):
        job = _job(tmp_path, env={"truth": {"model": "dfn", "n_x": 5, "n_r": 5}, "protocol": {"dt": 30.0}})
        trace_path = tmp_path / "elsewhere" / "dfn_trace.csv"
        code = _run("simulate", "--config", job, "--cycles", "1", "--trace", str(trace_path), "--out", str(tmp_path / "sim"))
        assert code == EXIT_OK
        trace = pd.read_csv(trace_path)
        assert list(trace.columns) == list(records.TRACE_COLUMNS)
        cc = trace[trace["phase"] == "cc"]
        for side in ("neg", "pos"):
            assert (cc[f"c_e_min_{side}"] < cc[f"c_e_max_{side}"]).all()
            assert (trace[f"c_s_min_{side}"] <= trace[f"c_s_max_{side}"]).all()
        assert (trace["c_e_min_neg"] > 0).all()
        manifest = json.loads((tmp_path / "sim" / "manifest.json").read_text())
        assert str(trace_path.resolve()) in manifest["files"]

    def test_bad_snapshot(self, tmp_path):
        assert _run("simulate", "--snapshot", "1,x", "--out", str(tmp_path)) == EXIT_USAGE

    def test_invalid_config_value(self, tmp_path):
        assert _run("simulate", "--config", _job(tmp_path, simulation={"cycles": 0}), "--out", str(tmp_path)) == EXIT_USAGE


def test_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("LAMCHARGE_OUT", str(tmp_path / "from-env"))
    assert _run("simulate", "--truth", "spm", "--dt", "30", "--cycles", "1") == EXIT_OK
    assert (tmp_path / "from-env" / "cycles.json").exists()


def test_unexpected_failure_is_a_runtime_error(tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise RuntimeError("solver blew up")

    monkeypatch.setattr(orchestrate, "run_simulate", boom)
    assert _run("simulate", "--out", str(tmp_path)) == EXIT_RUNTIME
    assert "RuntimeError: solver blew up" in capsys.readouterr().err


def test_unknown_command():
    assert main(["fly"]) == EXIT_USAGE


def test_full_length_evaluation(tmp_path):
    job = _job(tmp_path, env={"episode_length": 100, "truth": {"model": "spm"}, "protocol": {"dt": 30.0}})
    out = tmp_path / "eval"
    assert _run("evaluate", "--config", job, "--cccv", "1.5", "--out", str(out)) == EXIT_OK
    frame = pd.read_csv(out / "report_cccv_fixed_s0.csv")
    assert len(frame) == 100
    assert list(frame["cycle"]) == list(range(1, 101))


@pytest.mark.slow
class TestEndToEnd:
    """Shipped job presets on the DFN truth: 150 PPO iterations, three evaluation seeds (hours)."""

    @pytest.fixture(scope="class")
    def runs(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("e2e")
        for variant in ("with-lam", "without-lam"):
            job = f"jobs/rl-{variant}.json"
            assert _run("train", "--config", job, "--iters", "150", "--out", str(root / variant)) == EXIT_OK
        reports = []
        for job, flag, value, kind in (
            ("jobs/rl-with-lam.json", "--ckpt", str(root / "with-lam" / "checkpoints" / "final.pt"), "rl_with_lam"),
            ("jobs/cccv-baseline.json", "--cccv", "1.5", "cccv_fixed"),
            ("jobs/rl-without-lam.json", "--ckpt", str(root / "without-lam" / "checkpoints" / "final.pt"), "rl_without_lam"),
        ):
            out = root / f"eval-{kind}"
            assert _run("evaluate", "--config", job, flag, value, "--seeds", "3", "--out", str(out)) == EXIT_OK
            reports += [str(out / f"report_{kind}_s{seed}.csv") for seed in range(3)]
        assert _run("compare", *reports, "--out", str(root / "cmp")) == EXIT_OK
        return root

    def test_fade_ordering_in_most_seeds(self, runs):
        summary = json.loads((runs / "cmp" / "comparison.json").read_text())
        assert summary["seeds_total"] == 3
        assert summary["seeds_ordering_holds"] >= 2

    def test_estimate_tracks_true_eps(self, runs, params):
        for seed in range(3):
            frame = pd.read_csv(runs / "eval-rl_with_lam" / f"report_rl_with_lam_s{seed}.csv")
            tail = frame.tail(20)
            drift = (tail["eps_estimate"] - tail["eps_pos_true"]).abs().mean()
            assert drift < 0.05 * params.positive.active_fraction
