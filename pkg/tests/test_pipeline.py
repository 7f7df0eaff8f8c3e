import numpy as np
import pytest

from bdfm.cli import main
from bdfm.core import NetworkSpec
from bdfm.exceptions import StageError
from bdfm.io import RunConfig, export_flows, read_table
from bdfm.pipeline import run_pipeline
from bdfm.simgen import ScenarioSpec, simulate


@pytest.fixture(scope="module")
def flow_file(tmp_path_factory):
    spec = ScenarioSpec(NetworkSpec(3), 30, inflow_rates=np.full(3, 25.0),
                        transition_rates=np.array([[3, 6, 2, 4], [5, 1, 6, 3], [2, 4, 4, 5.0]]),
                        n0=[0, 60, 60, 60], seed=8)
    sim = simulate(spec)
    path = tmp_path_factory.mktemp("data") / "flows.txt"
    export_flows(path, sim.frames, spec.network, spec.n0)
    return path


def _config(flow_file, out, **kw):
    base = dict(input=str(flow_file), out=str(out), draws=300, warmup=5, seed=1, sample_draws=3)
    base.update(kw)
    return RunConfig(**base)


def test_full_run_exports(flow_file, tmp_path):
    res = run_pipeline(_config(flow_file, tmp_path))
    assert set(res.files) >= {"filtered", "monitor", "discount", "smoothed", "theta", "dgm", "credible", "samples"}
    _, header, rows = read_table(tmp_path / "theta.csv", "theta")
    means = np.array([float(r[header.index("mean")]) for r in rows])
    assert np.all((means >= 0) & (means <= 1))
    _, _, mon = read_table(tmp_path / "monitor.csv", "monitor")
    assert len(mon) == len(res.model.events())
    assert (tmp_path / "manifest.json").exists()


def test_samples_reconstruct_rates(flow_file, tmp_path):
    run_pipeline(_config(flow_file, tmp_path))
    _, header, rows = read_table(tmp_path / "samples.csv", "samples")
    vals = np.array([[float(v) for v in r[4:]] for r in rows])
    phi, h, a, b, g = vals.T
    np.testing.assert_allclose(np.exp(h + a + b + g), phi, rtol=1e-12)


def test_monitoring_without_signals_is_transparent(flow_file, tmp_path):
    quiet = _config(flow_file, tmp_path / "a", tau=1e-300, run_length=10**9)
    off = _config(flow_file, tmp_path / "b", monitor_enabled=False)
    a = run_pipeline(quiet, stages=("select", "filter", "smooth"))
    b = run_pipeline(off, stages=("select", "filter", "smooth"))
    assert not a.model.events()
    for key in ("mean", "lo", "hi"):
        np.testing.assert_array_equal(a.smoothed[key], b.smoothed[key])


def test_stage_errors_are_annotated(tmp_path):
    with pytest.raises(StageError) as err:
        run_pipeline(RunConfig(input=str(tmp_path / "missing.txt"), out=str(tmp_path)))
    assert err.value.stage == "ingest"


def test_emulate_reports_empty_mask(flow_file, tmp_path):
    cfg = _config(flow_file, tmp_path, d_sparse=10**6)
    with pytest.raises(StageError) as err:
        run_pipeline(cfg, stages=("filter", "emulate"))
    assert err.value.stage == "smooth"


def test_cli_subcommands(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["--seed", "3", "simulate", "--out", str(out), "--nodes", "2", "--ticks", "25"]) == 0
    flows = out / "flows.txt"
    assert flows.exists() and (out / "truth.npz").exists()
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"input = {flows}\ndraws = 100\nwarmup = 4\n")
    for cmd in ("select-discount", "filter", "smooth", "emulate", "run"):
        dest = tmp_path / cmd
        assert main(["--config", str(cfg), cmd, "--out", str(dest), "--seed", "2"]) == 0
        assert (dest / "manifest.json").exists()
    assert (tmp_path / "filter" / "snapshot.json").exists()
    assert main(["monitor-report", "--snapshot", str(tmp_path / "filter" / "snapshot.json")]) == 0
    assert "intervention" in capsys.readouterr().out
    assert main(["monitor-report", "--config", str(cfg), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "monitor.csv").exists()


def test_cli_reports_errors(tmp_path, capsys):
    assert main(["run", "--input", str(tmp_path / "nope.txt"), "--out", str(tmp_path)]) == 1
    assert "ingest" in capsys.readouterr().err
