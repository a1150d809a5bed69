import os

import numpy as np
import pytest

import clockmesh as cm
from clockmesh.cli import main
from clockmesh.config import ConfigError, load_config

CONFIG_STABLE = """
[topology]
nodes = 2
edges = [[2, 1, 0.7]]

[params]
kappa1 = 1.1
kappa2 = 1.0
p = 0.99
tau = 1.0

[noise]
seed = 9

[scenario]
steps = 400
"""

CONFIG_LOOP_UNSTABLE = """
[topology]
nodes = 3
edges = [[2, 1, 0.35], [3, 1, 0.35], [2, 3, 0.35], [3, 2, 0.35]]

[params]
kappa1 = 1.1
kappa2 = 1.0
p = 0.99
tau = 1.0
"""

CONFIG_SINGLE = """
[topology]
nodes = 1
edges = []

[params]
kappa1 = 1.1
kappa2 = 1.0
p = 0.99
tau = 1.0
"""

CONFIG_FULL = """
[topology]
nodes = 3
skews = [1.0, 1.0001, 0.9999]
edges = [[2, 1, 0.35], [3, 1, 0.35], [2, 3, 0.35], [3, 2, 0.35]]
gw = [1.0, 1.0, 1.0, 1.0]
gd = [0.0, 1.0, 1.0]

[params]
kappa1 = 1.1
kappa2 = 1.0
p = 0.99
tau = 0.5

[noise]
seed = 31
wander_sigma = 1e-7

[noise.jitter]
model = "uniform-grid"
max_value = 1e-3
grid = 1e-6

[[noise.jitter_edges]]
edge = [2, 3]
model = "gaussian"
sigma = 2e-6

[initial]
x = [0.0, 1e-3, -1e-3]

[scenario]
steps = 300
warmup = 0.25

[[scenario.events]]
step = 100
type = "inject-offset"
node = 3
seconds = 2e-3

[[scenario.events]]
step = 150
type = "inject-bias"
edge = [2, 1]
seconds = 1e-5

[optimize]
rho_star = 0.995
max_iter = 12
"""


def _write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_load_config_round_trip(tmp_path):
    cfg = load_config(_write(tmp_path, CONFIG_FULL))
    assert cfg.topo.n == 3
    assert cfg.topo.edges[0] == (1, 0, 0.35)  # ids shifted to 0-based
    assert cfg.params.tau == 0.5
    assert cfg.noise.jitter.kind == "uniform-grid"
    assert cfg.noise.jitter_edges[(1, 2)].kind == "gaussian"
    assert cfg.noise.seed == 31
    assert cfg.steps == 300 and cfg.warmup == 0.25
    assert cfg.events[0].kind == "inject-offset" and cfg.events[0].node == 2
    assert cfg.events[1].edge == (1, 0)
    assert cfg.optimize.rho_star == 0.995
    scenario = cfg.scenario()
    tr = cm.run(scenario)
    assert tr.steps == 300


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="topology"):
        load_config(_write(tmp_path, "[params]\nkappa1 = 1.0\n"))
    with pytest.raises(ConfigError, match="node id 5"):
        load_config(_write(tmp_path, CONFIG_STABLE.replace("[[2, 1, 0.7]]", "[[5, 1, 0.7]]")))
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "not toml ==="))
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "missing.toml"))


def test_analyze_exit_codes(tmp_path, capsys):
    assert main(["analyze", "--config", _write(tmp_path, CONFIG_STABLE)]) == 0
    out = capsys.readouterr().out
    assert "verdict: stable" in out
    assert "tau_max: 1.27172" in out
    assert "x_star" in out

    assert main(["analyze", "--config", _write(tmp_path, CONFIG_LOOP_UNSTABLE, "b.toml")]) == 2
    out = capsys.readouterr().out
    assert "verdict: unstable" in out
    assert "(iii)" in out

    assert main(["analyze", "--config", _write(tmp_path, CONFIG_SINGLE, "c.toml")]) == 0
    assert main(["analyze", "--config", str(tmp_path / "nope.toml")]) == 1


def test_analyze_disconnected_graph(tmp_path):
    cfg = CONFIG_STABLE.replace("nodes = 2", "nodes = 3")
    assert main(["analyze", "--config", _write(tmp_path, cfg)]) == 2


def test_analyze_marginal_exit_code(tmp_path, capsys):
    # poll interval pinned to the admissible boundary puts a mode on the
    # unit circle: |rho - 1| falls inside the marginal band
    cfg = CONFIG_STABLE.replace("tau = 1.0", "tau = 1.27172670343785")
    assert main(["analyze", "--config", _write(tmp_path, cfg)]) == 3
    assert "marginal" in capsys.readouterr().out


def test_simulate_writes_deterministic_csv(tmp_path):
    cfg = _write(tmp_path, CONFIG_FULL)
    out1, out2, out3 = (str(tmp_path / d) for d in ("o1", "o2", "o3"))
    assert main(["simulate", "--config", cfg, "--out", out1]) == 0
    assert main(["simulate", "--config", cfg, "--out", out2]) == 0
    trace1 = open(os.path.join(out1, "trace.csv"), "rb").read()
    trace2 = open(os.path.join(out2, "trace.csv"), "rb").read()
    assert trace1 == trace2
    header = trace1.decode().splitlines()[0]
    assert header == "step,node,offset_us,skew,xtilde,stilde,ytilde"
    metrics = open(os.path.join(out1, "metrics.csv")).read().splitlines()
    assert metrics[0] == "sqrtSn_us,CI99_us,CI100_us,drift_fit"
    assert len(metrics) == 2
    # numbers carry 12 significant digits
    assert all(len(v.split("e")[0].replace("-", "").replace(".", "")) == 12
               for v in metrics[1].split(","))
    # a different seed changes the bytes
    assert main(["simulate", "--config", cfg, "--seed", "99", "--out", out3]) == 0
    assert open(os.path.join(out3, "trace.csv"), "rb").read() != trace1


def test_simulate_presets_and_overrides(tmp_path):
    for preset in ("exp1", "wheel-jitter", "leader-loss"):
        out = str(tmp_path / preset)
        code = main(["simulate", "--preset", preset, "--steps", "80", "--out", out])
        assert code == 0
        assert os.path.exists(os.path.join(out, "trace.csv"))
    assert main(["simulate", "--preset", "nope", "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--out", str(tmp_path)]) == 1


def test_optimize_writes_log(tmp_path):
    cfg = _write(tmp_path, CONFIG_FULL)
    out = str(tmp_path / "opt")
    assert main(["optimize", "--config", cfg, "--out", out]) == 0
    lines = open(os.path.join(out, "opt_log.csv")).read().splitlines()
    assert lines[0] == "iter,f,rho,kappa1,kappa2,p"
    fs = [float(line.split(",")[1]) for line in lines[1:]]
    assert all(fs[i + 1] <= fs[i] for i in range(len(fs) - 1))
    rhos = [float(line.split(",")[2]) for line in lines[1:]]
    assert all(r <= 0.995 + 1e-12 for r in rhos)


def test_optimize_preset_and_infeasible(tmp_path):
    out = str(tmp_path / "optj")
    assert main(["optimize", "--preset", "jitter", "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "opt_log.csv"))
    bad = CONFIG_STABLE.replace("kappa1 = 1.1", "kappa1 = 0.9")
    assert main(["optimize", "--config", _write(tmp_path, bad, "bad.toml"),
                 "--out", str(tmp_path)]) == 2
