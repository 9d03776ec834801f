"""Command-line front end.

    epsmooth --config run.json [--mode MODE] [--seed U64] [--tol TOL] [--plot-table PATH]

The configuration is a JSON document validated against ``config_schema.json``
(shipped inside the package). Measurements come either from a CSV file
(``input``; header ``k,y1,...,ym``, ``k`` running 1, 2, ..., N) or from a
seeded simulation (``simulation`` block). Results go to ``output`` as JSON;
``--plot-table`` adds a flat CSV with one row per time index.

Exit status: 0 success, 1 bad configuration or I/O, 2 solver did not
converge, 3 infeasible constraints. Nothing is written unless the whole run
succeeds.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import EpsmoothError, InfeasibleConstraints, MissingDual, SolverError
from .estimators import (
    EstimateResult,
    eps_predict,
    eps_smooth,
    eps_smooth_constrained,
    h2_smooth,
    moving_horizon,
)
from .model import NoiseSpec, SystemModel, Trajectory, WeightSpec, section4_noise, simulate, simulate_saturated
from .model import standard_normals, validate_model
from .operators import combine_constraints, encode_constraint_family
from .qpcore import DEFAULT_MAX_ITER, DEFAULT_TOL
from .verify import check_kkt

MODES = ("simulate", "smooth-h2", "smooth-eps", "estimate-constrained", "predict", "moving-horizon", "compare")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CONVERGENCE = 2
EXIT_INFEASIBLE = 3


class RunError(Exception):
    def __init__(self, code: int, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.code = code
        self.stage = stage


def load_schema() -> dict:
    text = resources.files(__package__).joinpath("config_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass
class RunConfig:
    mode: str
    model: SystemModel
    weights: WeightSpec
    constraints: list = field(default_factory=list)
    simulation: Optional[dict] = None
    j: Optional[int] = None
    window: Optional[int] = None
    seed: int = 0
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    input: Optional[Path] = None
    output: Optional[Path] = None
    measurements_out: Optional[Path] = None
    plot_table: Optional[Path] = None

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> "RunConfig":
        """Validate ``doc`` and build a config; relative paths resolve against ``base``."""
        try:
            jsonschema.validate(doc, load_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise RunError(EXIT_CONFIG, "config", f"{where}: {exc.message}") from None

        m, w = doc["model"], doc["weights"]
        A = np.atleast_2d(np.asarray(m["A"], dtype=float))
        n = A.shape[0]
        try:
            model = SystemModel(A, m["B"], m["C"], m.get("xbar0", np.zeros(n)))
            weights = WeightSpec(w["P"], w["Q"], w["R"], doc.get("eps", 1.0))
            model, weights = validate_model(model, weights, strict_eps=False)
        except (EpsmoothError, ValueError) as exc:
            raise RunError(EXIT_CONFIG, "config", str(exc)) from None

        def path(key):
            return None if doc.get(key) is None else base / doc[key]

        return cls(
            mode=doc.get("mode", "smooth-eps"),
            model=model,
            weights=weights,
            constraints=list(doc.get("constraints", [])),
            simulation=doc.get("simulation"),
            j=doc.get("j"),
            window=doc.get("window"),
            seed=int(doc.get("seed", 0)),
            tol=float(doc.get("tol", DEFAULT_TOL)),
            max_iter=int(doc.get("max_iter", DEFAULT_MAX_ITER)),
            input=path("input"),
            output=path("output"),
            measurements_out=path("measurements_out"),
            plot_table=path("plot_table"),
        )

    def check(self) -> None:
        if self.mode not in MODES:
            raise RunError(EXIT_CONFIG, "config", f"unknown mode {self.mode!r}")
        if self.mode == "predict" and (self.j is None or self.j < 1):
            raise RunError(EXIT_CONFIG, "config", "predict mode needs j >= 1")
        if self.mode == "moving-horizon" and (self.window is None or self.window < 1):
            raise RunError(EXIT_CONFIG, "config", "moving-horizon mode needs window >= 1")
        if self.mode == "simulate" and self.simulation is None:
            raise RunError(EXIT_CONFIG, "config", "simulate mode needs a simulation block")
        if self.mode == "compare" and self.simulation is None:
            raise RunError(EXIT_CONFIG, "config", "compare mode needs a simulation block for the true states")
        if self.mode != "simulate" and self.input is None and self.simulation is None:
            raise RunError(EXIT_CONFIG, "config", "no measurements: give 'input' or a 'simulation' block")
        if self.output is None and self.plot_table is None and self.measurements_out is None:
            raise RunError(EXIT_CONFIG, "config", "nothing to write: set 'output' or --plot-table")
        if self.mode != "smooth-h2" and self.mode != "simulate" and np.any(self.weights.eps <= 0):
            raise RunError(EXIT_CONFIG, "config", "eps must be strictly positive for dual-route modes")


# -- serialization ---------------------------------------------------------

def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _emit(obj, out: list, indent: int):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for i, (k, v) in enumerate(items):
            out.append(f"{pad}  {json.dumps(str(k))}: ")
            _emit(v, out, indent + 1)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            out.append("[" + ", ".join(_scalar(v) for v in obj) + "]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad + "  ")
            _emit(v, out, indent + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "]")
    else:
        out.append(_scalar(obj))


def _scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v) if math.isfinite(v) else "null"
    return json.dumps(str(v))


def dumps(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    out: list = []
    _emit(_plain(obj), out, 0)
    return "".join(out) + "\n"


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def write_all(files: dict) -> None:
    """Write every file to a temporary sibling first, then rename them all,
    so a failure leaves no partial output behind."""
    staged = []
    try:
        for path, text in files.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
            staged.append((tmp, path))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        for tmp, path in staged:
            os.replace(tmp, path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def measurements_csv(y: np.ndarray) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["k"] + [f"y{i + 1}" for i in range(y.shape[1])])
    for k, row in enumerate(y, start=1):
        wr.writerow([k] + [format_float(v) for v in row])
    return buf.getvalue()


def read_measurements(path: Path, m: int) -> np.ndarray:
    """Parse a measurement CSV; ``k`` must run 1, 2, ..., N with no gaps."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise RunError(EXIT_CONFIG, "input", f"cannot read {path}: {exc.strerror}") from None
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise RunError(EXIT_CONFIG, "input", f"{path} is empty")
    header = [c.strip() for c in rows[0]]
    want = ["k"] + [f"y{i + 1}" for i in range(m)]
    if header != want:
        raise RunError(EXIT_CONFIG, "input", f"header must be {','.join(want)}, got {','.join(header)}")
    if len(rows) < 2:
        raise RunError(EXIT_CONFIG, "input", "no measurement rows")
    y = np.empty((len(rows) - 1, m))
    for i, r in enumerate(rows[1:], start=1):
        if len(r) != m + 1:
            raise RunError(EXIT_CONFIG, "input", f"line {i + 1}: expected {m + 1} fields, got {len(r)}")
        try:
            k = int(r[0])
            y[i - 1] = [float(c) for c in r[1:]]
        except ValueError:
            raise RunError(EXIT_CONFIG, "input", f"line {i + 1}: not a number") from None
        if k != i:
            raise RunError(EXIT_CONFIG, "input", f"line {i + 1}: expected k={i}, got k={k}")
        if not np.all(np.isfinite(y[i - 1])):
            raise RunError(EXIT_CONFIG, "input", f"line {i + 1}: non-finite measurement")
    return y


# -- running ---------------------------------------------------------------

def _simulate(cfg: RunConfig) -> Trajectory:
    sim = cfg.simulation
    K = int(sim["steps"])
    model = cfg.model
    noise = NoiseSpec(seed=cfg.seed, **sim.get("noise", {}))
    if model.l == 1 and model.m == 1:
        w, v = section4_noise(noise, K)
    else:
        # same generator, one stream per channel block
        r = standard_normals(cfg.seed, K * (model.l + model.m))
        k = np.arange(K)
        sw = np.array([0.0, 1.0, 0.0, -1.0])[k % 4][:, None]
        sv = np.array([0.0, 1.0, 0.0, -1.0])[(k + 1) % 4][:, None]
        w = noise.gauss_scale_w * r[: K * model.l].reshape(K, model.l) + noise.sin_amp_w * sw
        v = noise.gauss_scale_v * r[K * model.l :].reshape(K, model.m) + noise.sin_amp_v * sv + noise.bias_v
    try:
        if sim.get("saturation"):
            s = sim["saturation"]
            if not 0 <= s["index"] < model.n:
                raise RunError(EXIT_CONFIG, "simulate", f"saturation index {s['index']} out of range")
            return simulate_saturated(model, sim["x0"], w, v, s["index"], s["upper"])
        return simulate(model, sim["x0"], w, v)
    except EpsmoothError as exc:
        raise RunError(EXIT_CONFIG, "simulate", str(exc)) from None


def _build_constraints(cfg: RunConfig, model: SystemModel, y: np.ndarray, horizon: int):
    if not cfg.constraints:
        return None
    sets = []
    for spec in cfg.constraints:
        params = dict(spec["params"])
        params.setdefault("y", y)
        try:
            sets.append(encode_constraint_family(spec["kind"], params, model, horizon))
        except (KeyError, ValueError, EpsmoothError) as exc:
            raise RunError(EXIT_CONFIG, "constraints", f"{spec['kind']}: {exc}") from None
    return combine_constraints(model, horizon, *sets)


def _result_doc(cfg, y, cons, res: EstimateResult) -> dict:
    doc = {
        "N": res.N,
        "horizon": res.horizon,
        "xhat": res.xhat,
        "what": res.what,
        "eta": res.eta,
        "lambda": res.lam,
        "vhat": res.vhat,
        "primal_objective": res.primal_objective,
        "dual": None,
        "kkt": None,
    }
    if res.dual is not None:
        d = res.dual
        diag = d.diagnostics
        doc["dual"] = {
            "Theta": d.Theta,
            "gamma": d.gamma,
            "beta": d.beta,
            "xi": d.xi,
            "dual_objective": d.dual_objective,
            "status": diag.status if diag else None,
            "iterations": diag.iterations if diag else None,
            "kkt_residual": diag.kkt_residual if diag else None,
        }
        try:
            rep = check_kkt(cfg.model, cfg.weights, y, cons, res)
        except MissingDual:
            rep = None
        if rep is not None:
            doc["kkt"] = {
                "passed": rep.passed,
                "stationarity": rep.stationarity_residuals,
                "complementary_slackness_max": rep.complementary_slackness_max,
                "primal_feasibility_max": rep.primal_feasibility_max,
                "dual_feasibility_min": rep.dual_feasibility_min,
                "split_residual": rep.split_residual,
            }
    return doc


def _guard(res: EstimateResult, label: str) -> EstimateResult:
    if not res.converged:
        d = res.dual.diagnostics
        raise RunError(
            EXIT_CONVERGENCE, label,
            f"dual QP not converged after {d.iterations} iterations (KKT residual {d.kkt_residual:.3g})",
        )
    return res


def _estimate(cfg: RunConfig, kind: str, y: np.ndarray):
    """Run one estimator; returns ``(result, constraints)``."""
    model, weights = cfg.model, cfg.weights
    opts = dict(tol=cfg.tol, max_iter=cfg.max_iter)
    N = y.shape[0]
    try:
        if kind == "smooth-h2":
            return h2_smooth(model, weights, y), None
        if kind == "smooth-eps":
            return _guard(eps_smooth(model, weights, y, **opts), kind), None
        if kind == "estimate-constrained":
            cons = _build_constraints(cfg, model, y, N)
            if cons is None:
                cons = combine_constraints(model, N)
            return _guard(eps_smooth_constrained(model, weights, y, cons, **opts), kind), cons
        if kind == "predict":
            cons = _build_constraints(cfg, model, y, N + cfg.j)
            return _guard(eps_predict(model, weights, y, cons, cfg.j, **opts), kind), cons
    except InfeasibleConstraints as exc:
        raise RunError(EXIT_INFEASIBLE, kind, str(exc)) from None
    except SolverError as exc:
        raise RunError(EXIT_CONVERGENCE, kind, str(exc)) from None
    except EpsmoothError as exc:
        raise RunError(EXIT_CONFIG, kind, str(exc)) from None
    raise AssertionError(kind)


def _table(columns: dict, length: int) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(list(columns))
    for i in range(length):
        row = []
        for col in columns.values():
            v = col[i] if i < len(col) else None
            row.append("" if v is None or (isinstance(v, float) and math.isnan(v)) else format_float(v))
        wr.writerow(row)
    return buf.getvalue()


def _state_columns(prefix: str, x: np.ndarray) -> dict:
    return {f"{prefix}x{i + 1}": list(x[:, i]) for i in range(x.shape[1])}


def _y_columns(y: np.ndarray) -> dict:
    # y_0 does not exist; the table starts at k = 0
    return {f"y{i + 1}": [None] + list(y[:, i]) for i in range(y.shape[1])}


def execute(cfg: RunConfig) -> dict:
    """Run the configured job and return ``{path: text}`` for every output file.

    Raises :class:`RunError` on failure; nothing is written here.
    """
    cfg.check()
    truth = None
    if cfg.input is not None and cfg.mode != "simulate":
        y = read_measurements(cfg.input, cfg.model.m)
    else:
        truth = _simulate(cfg)
        y = truth.measurements
    N = y.shape[0]
    doc: dict = {"mode": cfg.mode, "seed": cfg.seed if truth is not None else None, "N": N}
    plot: dict = {}
    rows = N + 1

    if truth is not None:
        doc["truth"] = {
            "states": truth.states,
            "measurements": truth.measurements,
            "disturbances": truth.disturbances,
            "noises": truth.noises,
            "saturated": truth.saturated,
        }

    if cfg.mode == "simulate":
        plot = {"k": list(range(rows)), **_y_columns(y), **_state_columns("true_", truth.states)}
    elif cfg.mode in ("smooth-h2", "smooth-eps", "estimate-constrained", "predict"):
        res, cons = _estimate(cfg, cfg.mode, y)
        doc["estimate"] = _result_doc(cfg, y, cons, res)
        rows = res.horizon + 1
        plot = {"k": list(range(rows)), **_y_columns(y)}
        if truth is not None:
            plot.update(_state_columns("true_", truth.states))
        plot.update(_state_columns("est_", res.xhat))
    elif cfg.mode == "moving-horizon":
        def builder(start, yw, horizon):
            return _build_constraints(cfg, cfg.model, yw, horizon)
        try:
            steps = moving_horizon(cfg.model, cfg.weights, y, cfg.window, builder, j=cfg.j,
                                   tol=cfg.tol, max_iter=cfg.max_iter)
        except InfeasibleConstraints as exc:
            raise RunError(EXIT_INFEASIBLE, "moving-horizon", str(exc)) from None
        except SolverError as exc:
            raise RunError(EXIT_CONVERGENCE, "moving-horizon", str(exc)) from None
        for s in steps:
            _guard(s.result, f"moving-horizon t={s.time}")
        doc["steps"] = [
            {"time": s.time, "filtered": s.filtered, "predicted": s.predicted} for s in steps
        ]
        times = [s.time for s in steps]
        rows = len(steps)
        plot = {"k": times}
        plot.update({f"y{i + 1}": [y[t - 1, i] for t in times] for i in range(y.shape[1])})
        if truth is not None:
            plot.update(_state_columns("true_", truth.states[times]))
        plot.update(_state_columns("filt_", np.array([s.filtered for s in steps])))
        if cfg.j:
            plot.update(_state_columns("pred_", np.array([s.predicted for s in steps])))
    elif cfg.mode == "compare":
        results = {
            "h2": _estimate(cfg, "smooth-h2", y),
            "eps": _estimate(cfg, "smooth-eps", y),
            "constrained": _estimate(cfg, "estimate-constrained", y),
        }
        doc["estimates"] = {name: _result_doc(cfg, y, cons, res) for name, (res, cons) in results.items()}
        doc["mae"] = {
            name: np.mean(np.abs(res.xhat - truth.states), axis=0) for name, (res, _) in results.items()
        }
        plot = {"k": list(range(rows)), **_y_columns(y), **_state_columns("true_", truth.states)}
        for name, (res, _) in results.items():
            plot.update(_state_columns(f"{name}_", res.xhat))

    files = {}
    if cfg.output is not None:
        files[cfg.output] = dumps(doc)
    if cfg.plot_table is not None:
        files[cfg.plot_table] = _table(plot, rows)
    if cfg.measurements_out is not None:
        files[cfg.measurements_out] = measurements_csv(y)
    return files


def mae_table(doc: dict) -> str:
    """Plain-text per-state MAE table of a compare-mode result document."""
    mae = doc["mae"]
    n = len(next(iter(mae.values())))
    head = "estimator     " + "".join(f"{'x' + str(i + 1):>12}" for i in range(n))
    lines = [head]
    for name, vals in mae.items():
        lines.append(f"{name:<14}" + "".join(f"{float(v):12.4f}" for v in vals))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epsmooth", description="Epsilon-insensitive smoothing, filtering and prediction.")
    p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    p.add_argument("--mode", choices=MODES, help="override the configured mode")
    p.add_argument("--seed", type=int, help="override the simulation seed (unsigned 64-bit)")
    p.add_argument("--tol", type=float, help="override the dual QP KKT tolerance")
    p.add_argument("--plot-table", type=Path, help="write a CSV plot table to this path")
    p.add_argument("--output", type=Path, help="override the JSON result path")
    p.add_argument("--input", type=Path, help="override the measurement CSV path")
    return p


def load_config(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise RunError(EXIT_CONFIG, "config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise RunError(EXIT_CONFIG, "config", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise RunError(EXIT_CONFIG, "config", "seed must be an unsigned 64-bit integer")
            doc["seed"] = args.seed
        if args.tol is not None:
            if not args.tol > 0:
                raise RunError(EXIT_CONFIG, "config", "tol must be positive")
            doc["tol"] = args.tol
        if args.mode is not None:
            doc["mode"] = args.mode
        cfg = RunConfig.from_dict(doc, base=args.config.parent)
        # command-line paths are relative to the working directory
        if args.plot_table is not None:
            cfg.plot_table = args.plot_table
        if args.output is not None:
            cfg.output = args.output
        if args.input is not None:
            cfg.input = args.input
        files = execute(cfg)
        try:
            write_all(files)
        except OSError as exc:
            raise RunError(EXIT_CONFIG, "output", f"cannot write {exc.filename}: {exc.strerror}") from None
    except RunError as exc:
        print(f"epsmooth: error in {exc}", file=sys.stderr)
        return exc.code
    if cfg.mode == "compare" and cfg.output is not None:
        print(mae_table(json.loads(files[cfg.output])))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
