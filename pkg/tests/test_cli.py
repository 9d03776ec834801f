import csv
import json

import jsonschema
import numpy as np
import pytest

from epsmooth import (
    SECTION4_X0,
    NoiseSpec,
    encode_constraint_family,
    eps_smooth,
    eps_smooth_constrained,
    h2_smooth,
    section4_model,
    section4_noise,
    section4_weights,
    simulate_saturated,
)
from epsmooth.cli import dumps, load_schema, main, read_measurements

BENCH = {
    "model": {"A": [[1, 1], [-0.2, 0.4]], "B": [[0.5], [2]], "C": [[1, 0]], "xbar0": [0, 0]},
    "weights": {"P": [[1, 0], [0, 1]], "Q": [[1]], "R": [[1]]},
    "eps": 5,
    "constraints": [{"kind": "state_bound", "params": {"L": [[0, 1]], "upper": 4}}],
    "simulation": {"x0": [-1, 1], "steps": 20, "saturation": {"index": 1, "upper": 4}},
}

SCALAR = {
    "model": {"A": [[1]], "B": [[1]], "C": [[1]], "xbar0": [0]},
    "weights": {"P": [[1]], "Q": [[1]], "R": [[1]]},
    "eps": 0.5,
}


def run(tmp_path, cfg, *args, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return main(["--config", str(path), *map(str, args)])


def read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def bench_truth(seed):
    w, v = section4_noise(NoiseSpec(seed=seed), 20)
    return simulate_saturated(section4_model(), SECTION4_X0, w, v, 1, 4.0)


def test_schema_is_valid():
    jsonschema.Draft202012Validator.check_schema(load_schema())


def test_compare_mode(tmp_path, capsys):
    cfg = dict(BENCH, mode="compare", seed=11, output="out.json")
    assert run(tmp_path, cfg, "--plot-table", tmp_path / "plot.csv") == 0
    doc = json.loads((tmp_path / "out.json").read_text())
    assert set(doc["estimates"]) == {"h2", "eps", "constrained"}
    for est in doc["estimates"].values():
        assert len(est["xhat"]) == 21
    rows = read_table(tmp_path / "plot.csv")
    assert [int(r["k"]) for r in rows] == list(range(21))
    assert rows[0]["y1"] == ""
    # the MAE table equals the in-memory pipeline
    tr = bench_truth(11)
    m, w = section4_model(), section4_weights()
    cons = encode_constraint_family("state_bound", {"L": [[0, 1]], "upper": 4}, m, 20)
    ref = {
        "h2": h2_smooth(m, w, tr.measurements),
        "eps": eps_smooth(m, w, tr.measurements),
        "constrained": eps_smooth_constrained(m, w, tr.measurements, cons),
    }
    for name, res in ref.items():
        assert doc["mae"][name] == np.mean(np.abs(res.xhat - tr.states), axis=0).tolist()
    out = capsys.readouterr().out
    assert "h2" in out and "constrained" in out


def test_simulate_zero_noise(tmp_path):
    noise = {"gauss_scale_w": 0, "sin_amp_w": 0, "gauss_scale_v": 0, "sin_amp_v": 0, "bias_v": 0}
    cfg = dict(BENCH, mode="simulate", simulation={"x0": [-1, 1], "steps": 6, "noise": noise},
               measurements_out="y.csv")
    assert run(tmp_path, cfg) == 0
    y = read_measurements(tmp_path / "y.csv", 1)
    m = section4_model()
    for k in range(1, 7):
        assert np.allclose(y[k - 1], m.C @ np.linalg.matrix_power(m.A, k) @ [-1, 1], atol=1e-14)


def test_smooth_eps_handcrafted_csv(tmp_path):
    (tmp_path / "y.csv").write_text("k,y1\n1,1\n2,1\n")
    cfg = dict(SCALAR, mode="smooth-eps", input="y.csv", output="out.json")
    assert run(tmp_path, cfg) == 0
    est = json.loads((tmp_path / "out.json").read_text())["estimate"]
    assert np.allclose(np.ravel(est["xhat"]), [0.1875, 0.375, 0.4375], atol=1e-10)
    assert np.allclose(est["dual"]["Theta"], [0.125, 0.0625], atol=1e-10)
    assert est["kkt"]["passed"] is True


def test_round_trip_bitwise(tmp_path):
    sim = dict(BENCH, mode="simulate", seed=5, measurements_out="y.csv")
    assert run(tmp_path, sim, name="sim.json") == 0
    est = dict(BENCH, mode="estimate-constrained", input="y.csv", output="est.json")
    assert run(tmp_path, est, name="est_cfg.json") == 0
    doc = json.loads((tmp_path / "est.json").read_text())["estimate"]

    tr = bench_truth(5)
    m, w = section4_model(), section4_weights()
    assert np.array_equal(read_measurements(tmp_path / "y.csv", 1), tr.measurements)
    cons = encode_constraint_family("state_bound", {"L": [[0, 1]], "upper": 4}, m, 20)
    ref = eps_smooth_constrained(m, w, tr.measurements, cons)
    assert np.array_equal(np.array(doc["xhat"]), ref.xhat)
    assert np.array_equal(np.array(doc["dual"]["xi"]), ref.dual.xi)
    assert doc["primal_objective"] == ref.primal_objective


def test_output_is_deterministic(tmp_path):
    cfg = dict(BENCH, mode="smooth-eps", seed=3, output="a.json")
    assert run(tmp_path, cfg) == 0
    first = (tmp_path / "a.json").read_bytes()
    assert run(tmp_path, cfg) == 0
    assert (tmp_path / "a.json").read_bytes() == first
    assert run(tmp_path, cfg, "--seed", 4) == 0
    assert (tmp_path / "a.json").read_bytes() != first


def test_floats_have_17_digits():
    x = 0.1 + 0.2
    text = dumps({"v": [x, 1.0 / 3.0]})
    assert "0.30000000000000004" in text
    assert "0.33333333333333331" in text
    assert json.loads(text)["v"] == [x, 1.0 / 3.0]


@pytest.mark.parametrize("mode, extra", [("predict", {"j": 2}), ("moving-horizon", {"window": 10, "j": 1})])
def test_prediction_modes(tmp_path, mode, extra):
    cfg = dict(BENCH, mode=mode, seed=2, output="out.json", **extra)
    assert run(tmp_path, cfg, "--plot-table", tmp_path / "p.csv") == 0
    doc = json.loads((tmp_path / "out.json").read_text())
    if mode == "predict":
        assert len(doc["estimate"]["xhat"]) == 23
    else:
        assert [s["time"] for s in doc["steps"]] == list(range(10, 21))
        assert "pred_x1" in read_table(tmp_path / "p.csv")[0]


def test_bad_config_exit_1(tmp_path, capsys):
    cfg = dict(BENCH, mode="smooth-eps", output="out.json", eps="wide")
    assert run(tmp_path, cfg) == 1
    assert "config" in capsys.readouterr().err
    assert not (tmp_path / "out.json").exists()


def test_missing_config_exit_1(tmp_path):
    assert main(["--config", str(tmp_path / "nope.json")]) == 1


def test_not_pd_exit_1(tmp_path):
    cfg = dict(BENCH, mode="smooth-eps", output="out.json", weights={"P": [[1, 0], [0, 1]], "Q": [[1]], "R": [[0]]})
    assert run(tmp_path, cfg) == 1


@pytest.mark.parametrize("body", ["k,y1\n1,1\n3,1\n", "k,y2\n1,1\n", "k,y1\n1,abc\n", "k,y1\n"])
def test_bad_csv_exit_1(tmp_path, body):
    (tmp_path / "y.csv").write_text(body)
    cfg = dict(SCALAR, mode="smooth-eps", input="y.csv", output="out.json")
    assert run(tmp_path, cfg) == 1
    assert not (tmp_path / "out.json").exists()


def test_predict_without_lead_exit_1(tmp_path):
    assert run(tmp_path, dict(BENCH, mode="predict", output="o.json")) == 1


def test_nonconvergence_exit_2(tmp_path, capsys):
    cfg = dict(BENCH, mode="smooth-eps", seed=1, output="out.json", max_iter=2)
    assert run(tmp_path, cfg, "--tol", 1e-14, "--plot-table", tmp_path / "p.csv") == 2
    assert "smooth-eps" in capsys.readouterr().err
    assert not (tmp_path / "out.json").exists()
    assert not (tmp_path / "p.csv").exists()


def test_infeasible_exit_3(tmp_path, capsys):
    rows = [
        {"kind": "state_bound", "params": {"L": [0, 1], "upper": -1, "steps": [2]}},
        {"kind": "state_bound", "params": {"L": [0, 1], "lower": 1, "steps": [2]}},
    ]
    cfg = dict(BENCH, mode="estimate-constrained", constraints=rows, output="out.json")
    assert run(tmp_path, cfg) == 3
    assert "estimate-constrained" in capsys.readouterr().err
    assert not (tmp_path / "out.json").exists()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".out")]


def test_multichannel_simulation(tmp_path):
    cfg = {
        "mode": "smooth-eps",
        "model": {"A": [[0.9, 0.1], [0, 0.8]], "B": [[1, 0], [0, 1]], "C": [[1, 0], [0, 1]]},
        "weights": {"P": [[1, 0], [0, 1]], "Q": [[1, 0], [0, 1]], "R": [[1, 0], [0, 1]]},
        "eps": [1, 2],
        "simulation": {"x0": [0, 0], "steps": 6},
        "output": "out.json",
    }
    assert run(tmp_path, cfg) == 0
    doc = json.loads((tmp_path / "out.json").read_text())
    assert np.array(doc["truth"]["measurements"]).shape == (6, 2)
    assert doc["estimate"]["kkt"]["passed"]
