"""``momlab`` command line: one subcommand per experiment, CSV artifacts plus a gate summary.

Config files are INI style (``[section]`` headers, ``key = value`` lines).
Command-line ``section.key=value`` pairs override file values.  Lists are
comma separated; a step size may be written ``2^-6`` and a dyadic range
``2^-4..2^-10``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, flows, manifold, schemes, toynet
from .objective import derivative_bounds, make_diagonal_quadratic, make_quadratic, make_trigonometric

SUBCOMMANDS = ("trajectories", "rates", "visco", "manifold", "constants", "toynet")

EXIT_OK, EXIT_GATE, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


def _parse_float(text: str) -> float:
    text = text.strip()
    m = re.fullmatch(r"2\^(-?\d+)", text)
    if m:
        return 2.0 ** int(m.group(1))
    return float(text)


def _parse_float_list(text: str) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        m = re.fullmatch(r"2\^(-?\d+)\.\.2\^(-?\d+)", item)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            step = -1 if hi < lo else 1
            out.extend(2.0 ** k for k in range(lo, hi + step, step))
        else:
            out.append(_parse_float(item))
    return out


def _parse_str_list(text: str) -> list:
    return [s.strip() for s in text.split(",") if s.strip()]


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


PARSERS = {
    "float": _parse_float,
    "int": lambda s: int(s.strip()),
    "str": lambda s: s.strip(),
    "floats": _parse_float_list,
    "strs": _parse_str_list,
    "bool": _parse_bool,
}

SCHEMA = {
    "objective": {
        "kind": ("str", "quadratic"),
        "kappa": ("float", 20.0),
        "dimension": ("int", 2),
        "diag": ("floats", []),
        "amplitudes": ("floats", [1.0]),
    },
    "scheme": {
        "lambda": ("float", 0.9),
        "a": ("float", 0.0),
        "methods": ("strs", ["HB", "NAG"]),
        "mu": ("float", 1.0),
    },
    "run": {
        "h": ("floats", [2.0 ** -4, 2.0 ** -5, 2.0 ** -6]),
        "kappas": ("floats", []),
        "T": ("float", 5.0),
        "u0": ("floats", [1.0, 1.0]),
        "reference": ("str", "rgf"),
        "target": ("floats", [0.8, 1.2]),
        "transient_T": ("float", 0.5),
        "transient_h": ("float", 2.0 ** -4),
        "transient_kappa": ("float", 20.0),
        "steps": ("int", 200),
        "decay_steps": ("int", 400),
        "decay_threshold": ("float", 1e-8),
        "tol_outer": ("float", 1e-12),
        "grid_res": ("int", 17),
        "box": ("floats", []),
        "c_choice": ("str", "stated"),
        "beta_choice": ("str", "stated"),
        "rtol": ("float", 1e-10),
    },
    "toynet": {
        "methods": ("strs", list(toynet.METHODS)),
        "n_samples": ("int", 512),
        "dimension": ("int", 8),
        "layers": ("floats", [8, 4, 2, 4, 8]),
        "batch_size": ("int", 20),
        "epochs": ("int", 50),
        "rate_h": ("floats", _parse_float_list("2^-6..2^-12")),
        "rate_T": ("float", 1.0),
        "table_h": ("floats", _parse_float_list("2^0..2^-7")),
        "history_h": ("float", 2.0 ** -5),
        "rate_target": ("floats", [0.6, 1.4]),
        "mu_rate_target": ("floats", [0.3, 0.7]),
    },
}


def _format(kind: str, value) -> str:
    if kind in ("floats",):
        return ", ".join(repr(float(v)) for v in value)
    if kind == "strs":
        return ", ".join(value)
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


@dataclass
class ExperimentConfig:
    subcommand: str
    values: dict = field(default_factory=dict)
    seed: int = 0

    def get(self, section: str, key: str):
        return self.values[section][key]

    def canonical(self) -> str:
        """Every key, sorted, in the same INI grammar the loader accepts."""
        lines = [f"# subcommand = {self.subcommand}", f"# seed = {self.seed}"]
        for section in sorted(SCHEMA):
            lines.append(f"[{section}]")
            for key in sorted(SCHEMA[section]):
                lines.append(f"{key} = {_format(SCHEMA[section][key][0], self.values[section][key])}")
        return "\n".join(lines) + "\n"


def load_config(subcommand: str, text: str = "", overrides=(), seed: int = 0) -> ExperimentConfig:
    """Parse INI text plus ``section.key=value`` overrides; unknown keys are rejected."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        raw.setdefault(section, {})[key] = value
    values = {}
    for section, keys in SCHEMA.items():
        given = raw.pop(section, {})
        values[section] = {}
        for key, (kind, default) in keys.items():
            if key in given:
                text_value = given.pop(key)
                try:
                    values[section][key] = PARSERS[kind](text_value)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {section}.{key}: {text_value!r} ({exc})") from exc
            else:
                values[section][key] = default
        if given:
            raise ConfigError(f"unknown key {section}.{sorted(given)[0]}")
    if raw:
        raise ConfigError(f"unknown section [{sorted(raw)[0]}]")
    cfg = ExperimentConfig(subcommand, values, seed)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    run = cfg.values["run"]
    if not run["h"]:
        raise ConfigError("run.h must list at least one step size")
    if any(h <= 0 for h in run["h"]):
        raise ConfigError("run.h entries must be positive")
    lam = cfg.get("scheme", "lambda")
    if not 0 < lam < 1:
        raise ConfigError("scheme.lambda must lie in (0, 1)")
    for m in cfg.get("scheme", "methods"):
        if m not in ("HB", "NAG", "general"):
            raise ConfigError(f"scheme.methods: unknown method {m!r}")
    if run["reference"] not in ("rgf", "visco", "modified"):
        raise ConfigError("run.reference must be rgf, visco or modified")
    for key in ("c_choice", "beta_choice"):
        if run[key] not in ("stated", "matched"):
            raise ConfigError(f"run.{key} must be stated or matched")
    if len(run["target"]) != 2:
        raise ConfigError("run.target needs two numbers")
    for m in cfg.get("toynet", "methods"):
        if m not in toynet.METHODS:
            raise ConfigError(f"toynet.methods: unknown method {m!r}")


def child_seed(seed: int, *path: int) -> int:
    """Independent 32-bit stream seed derived from the run seed and a fixed spawn path."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(path))
    return int(ss.generate_state(1)[0])


@dataclass
class Gate:
    name: str
    passed: bool
    detail: str = ""
    value: float = math.nan


def _objective(cfg: ExperimentConfig, kappa: float | None = None):
    o = cfg.values["objective"]
    kind = o["kind"]
    if kind == "quadratic":
        return make_quadratic(o["kappa"] if kappa is None else kappa, o["dimension"])
    if kind == "diagonal":
        if not o["diag"]:
            raise ConfigError("objective.diag is required for kind = diagonal")
        return make_diagonal_quadratic(o["diag"])
    if kind == "trigonometric":
        amps = o["amplitudes"]
        return make_trigonometric(o["dimension"], amps if len(amps) > 1 else amps[0])
    raise ConfigError(f"objective.kind: unknown kind {kind!r}")


def _method_a(name: str, cfg: ExperimentConfig) -> float:
    lam = cfg.get("scheme", "lambda")
    return {"HB": 0.0, "NAG": lam}.get(name, cfg.get("scheme", "a"))


def _kappas(cfg):
    if cfg.get("objective", "kind") != "quadratic":
        return [None]
    return cfg.get("run", "kappas") or [cfg.get("objective", "kappa")]


def _ktag(kappa) -> str:
    return "" if kappa is None else f"_k{kappa:g}"


def _tag(h: float) -> str:
    k = -math.log2(h)
    return f"2m{int(round(k))}" if abs(k - round(k)) < 1e-12 else f"{h:.6g}"


def _reference(kind: str, obj, lam, a, h, u0, T, cfg):
    rtol = cfg.get("run", "rtol")
    if kind == "rgf":
        return flows.solve_rgf(obj, lam, u0, T, rtol=rtol)
    if kind == "visco":
        return flows.solve_visco(obj, lam, a, h, u0, _beta(cfg), T=T, rtol=rtol)
    c = None if cfg.get("run", "c_choice") == "stated" else flows.c_coefficient_matched(lam, a)
    return flows.solve_modified_flow(obj, lam, a, h, u0, T, rtol=rtol, c=c)


def _beta(cfg) -> str:
    return "beta-default" if cfg.get("run", "beta_choice") == "stated" else "beta-matched"


def cmd_trajectories(cfg: ExperimentConfig, out: Path) -> list:
    lam, T, u0 = cfg.get("scheme", "lambda"), cfg.get("run", "T"), cfg.get("run", "u0")
    ref_kind = cfg.get("run", "reference")
    gates = []
    for kappa in _kappas(cfg):
        obj = _objective(cfg, kappa)
        for method in cfg.get("scheme", "methods"):
            a = _method_a(method, cfg)
            for h in cfg.get("run", "h"):
                n = int(round(T / h))
                stem = f"{method}{_ktag(kappa)}_h{_tag(h)}"
                try:
                    traj = schemes.run_two_form(obj, schemes.MomentumParams(lam, a, h), u0, None, n)
                except schemes.DivergenceError as exc:
                    gates.append(Gate(f"{stem} finite", False, str(exc)))
                    continue
                traj.to_csv(out / f"traj_{stem}.csv")
                ref = _reference(ref_kind, obj, lam, a, h, u0, T, cfg)
                schemes.write_trajectory_csv(out / f"ref_{ref_kind}_{stem}.csv", traj.times,
                                             ref.sample(traj.times))
                gates.append(Gate(f"{stem} finite", True))
    return gates


def rate_table(cfg: ExperimentConfig, ref_kind: str, out: Path | None = None) -> list:
    lam, T, u0 = cfg.get("scheme", "lambda"), cfg.get("run", "T"), cfg.get("run", "u0")
    target = tuple(cfg.get("run", "target"))
    h_list = cfg.get("run", "h")
    reports = []
    for kappa in _kappas(cfg):
        obj = _objective(cfg, kappa)
        for method in cfg.get("scheme", "methods"):
            a = _method_a(method, cfg)
            runner = (_on_manifold_runner(cfg, obj, lam, a, u0, T) if ref_kind == "modified" else
                      lambda h: schemes.run_general(obj, schemes.MomentumParams(lam, a, h), u0,
                                                    int(math.floor(T / h + 1e-9))))
            rep = analysis.rate_sweep(runner, lambda h: _reference(ref_kind, obj, lam, a, h, u0, T, cfg),
                                      h_list, T, target)
            rep.meta.update(method=method, kappa=kappa, reference=ref_kind)
            if out is not None:
                rep.to_csv(out / f"rates_{ref_kind}_{method}{_ktag(kappa)}.csv")
            reports.append(rep)
    return reports


def _on_manifold_runner(cfg, obj, lam, a, u0, T):
    """Start each run on the solved graph: v0 = lam_bar f(u0) + h g(u0)."""
    if not cfg.get("run", "box"):
        raise ConfigError("run.box is required for reference = modified")
    box = np.asarray(cfg.get("run", "box"), dtype=float).reshape(obj.dimension, 2)

    def runner(h):
        params = schemes.MomentumParams(lam, a, h)
        g = manifold.solve_manifold_g(obj, params, box, cfg.get("run", "grid_res"),
                                      cfg.get("run", "tol_outer"))
        x0 = np.asarray(u0, dtype=float)
        v0 = params.lambda_bar * obj.force(x0) + h * g(x0)
        return schemes.run_two_form(obj, params, x0, v0, int(math.floor(T / h + 1e-9)))

    return runner


def _rate_gates(reports) -> list:
    return [Gate(f"{r.meta['method']}{_ktag(r.meta['kappa']).replace('_k', ' k=')} vs {r.meta['reference']}",
                 r.passed,
                 r.summary(), r.fitted_order) for r in reports]


def cmd_rates(cfg: ExperimentConfig, out: Path) -> list:
    return _rate_gates(rate_table(cfg, cfg.get("run", "reference"), out))


def transient_comparison(cfg: ExperimentConfig) -> tuple:
    """HB sup-error against the visco and rgf solutions over the early window."""
    lam, u0 = cfg.get("scheme", "lambda"), cfg.get("run", "u0")
    h, Tt = cfg.get("run", "transient_h"), cfg.get("run", "transient_T")
    obj = _objective(cfg, cfg.get("run", "transient_kappa"))
    traj = schemes.run_hb(obj, lam, h, u0, int(math.ceil(Tt / h)))
    e_visco = analysis.sup_error(traj, flows.solve_visco(obj, lam, 0.0, h, u0, _beta(cfg), T=Tt), Tt)
    e_rgf = analysis.sup_error(traj, flows.solve_rgf(obj, lam, u0, Tt), Tt)
    return e_visco, e_rgf


def cmd_visco(cfg: ExperimentConfig, out: Path) -> list:
    gates = _rate_gates(rate_table(cfg, "visco", out))
    e_visco, e_rgf = transient_comparison(cfg)
    with open(out / "transient.csv", "w") as fh:
        fh.write("reference,sup_error\n")
        fh.write(f"visco,{e_visco:.17g}\nrgf,{e_rgf:.17g}\n")
    gates.append(Gate("HB transient closer to visco than rgf", e_visco < e_rgf,
                      f"visco {e_visco:.3e} vs rgf {e_rgf:.3e}", e_visco))
    return gates


def manifold_run(cfg: ExperimentConfig, method: str) -> dict:
    """Off-manifold run from v0 = 0: e_n, the attraction bound and decay."""
    lam, u0 = cfg.get("scheme", "lambda"), cfg.get("run", "u0")
    h = cfg.get("run", "h")[0]
    a = _method_a(method, cfg)
    params = schemes.MomentumParams(lam, a, h)
    obj = _objective(cfg)
    n = max(cfg.get("run", "steps"), cfg.get("run", "decay_steps"))
    traj = schemes.run_two_form(obj, params, u0, None, n)
    e = manifold.manifold_distance(traj, obj, params)
    box = np.column_stack([traj.points.min(axis=0), traj.points.max(axis=0)])
    report = manifold.constants_report(derivative_bounds(obj, box), lam, a, h)
    ok, why = manifold.check_h_small(report)
    steps = cfg.get("run", "steps")
    if math.isfinite(report.delta):
        bound = report.attraction_factor ** np.arange(n + 1) * e[0]
        slack = 10 * cfg.get("run", "tol_outer")
        bound_ok = bool(np.all(e[: steps + 1] <= bound[: steps + 1] + slack))
    else:
        bound = np.full(n + 1, math.nan)
        bound_ok = False
    below = np.nonzero(e[: cfg.get("run", "decay_steps") + 1] < cfg.get("run", "decay_threshold"))[0]
    return {"method": method, "e": e, "bound": bound, "report": report, "assumption_ok": ok,
            "violation": why, "bound_ok": bound_ok,
            "first_below": int(below[0]) if below.size else None}


def cmd_manifold(cfg: ExperimentConfig, out: Path) -> list:
    gates = []
    for method in cfg.get("scheme", "methods"):
        res = manifold_run(cfg, method)
        with open(out / f"manifold_distance_{method}.csv", "w") as fh:
            fh.write("n,e_n,bound\n")
            for i, (e, b) in enumerate(zip(res["e"], res["bound"])):
                fh.write(f"{i},{e:.17g},{'n/a' if math.isnan(b) else f'{b:.17g}'}\n")
        with open(out / f"constants_{method}.json", "w") as fh:
            json.dump(_jsonable(res["report"].as_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        detail = "bound holds" if res["bound_ok"] else (
            f"no admissible delta ({res['violation']})" if not math.isfinite(res["report"].delta)
            else "bound violated")
        gates.append(Gate(f"{method} attraction bound", res["bound_ok"], detail))
        fb = res["first_below"]
        gates.append(Gate(f"{method} decay below {cfg.get('run', 'decay_threshold'):g}", fb is not None,
                          f"first step {fb}" if fb is not None
                          else f"min e_n = {res['e'][: cfg.get('run', 'decay_steps') + 1].min():.3e}"))
        if cfg.get("run", "box"):
            gates.extend(_solve_graph(cfg, method, out))
    return gates


def _solve_graph(cfg, method, out) -> list:
    lam, h = cfg.get("scheme", "lambda"), cfg.get("run", "h")[0]
    obj = _objective(cfg)
    box = np.asarray(cfg.get("run", "box"), dtype=float).reshape(obj.dimension, 2)
    params = schemes.MomentumParams(lam, _method_a(method, cfg), h)
    try:
        g = manifold.solve_manifold_g(obj, params, box, cfg.get("run", "grid_res"),
                                      cfg.get("run", "tol_outer"))
    except (manifold.AssumptionViolated, manifold.ConvergenceFailure) as exc:
        return [Gate(f"{method} graph solve", False, str(exc))]
    write_graph(g, out / f"graph_{method}.csv")
    return [Gate(f"{method} graph solve", True, f"{g.sweeps} sweeps, residual {g.residual:.2e}")]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(float(obj)) else float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_graph(g: manifold.ManifoldGraph, path: Path) -> None:
    """Node CSV ``node,p_*,g_*`` and a ``.json`` sidecar with box, resolution and constants."""
    path = Path(path)
    d = g.dimension
    nodes, vals = g.nodes, g.node_values()
    with open(path, "w") as fh:
        fh.write(",".join(["node"] + [f"p_{i}" for i in range(d)] + [f"g_{i}" for i in range(d)]) + "\n")
        for k, (p, v) in enumerate(zip(nodes, vals)):
            fh.write(",".join([str(k)] + [f"{x:.17g}" for x in p] + [f"{x:.17g}" for x in v]) + "\n")
    meta = {"box": g.box.tolist(), "inner_box": g.inner_box.tolist(), "margin": g.margin,
            "resolution": list(g.resolution), "residual": g.residual, "sweeps": g.sweeps,
            "clamped_evaluations": g.clamped_evals,
            "constants": g.report.as_dict() if g.report is not None else None}
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")


CONSTANT_COLUMNS = ("h", "gamma", "delta", "K1", "K2", "K3", "alpha2", "alpha1", "alpha0", "c_inner",
                    "Q1", "Q2", "Q3", "contraction_factor", "attraction_factor")


def constants_sweep(cfg: ExperimentConfig):
    obj = _objective(cfg)
    lam, a = cfg.get("scheme", "lambda"), cfg.get("scheme", "a")
    box = cfg.get("run", "box")
    bounds = derivative_bounds(obj, np.asarray(box).reshape(obj.dimension, 2) if box else "global",
                               seed=child_seed(cfg.seed, 0))
    threshold = manifold.h_threshold(bounds, lam, a)
    rows = [manifold.constants_report(bounds, lam, a, h) for h in cfg.get("run", "h")]
    return bounds, threshold, rows


def cmd_constants(cfg: ExperimentConfig, out: Path) -> list:
    bounds, threshold, rows = constants_sweep(cfg)
    with open(out / "constants.csv", "w") as fh:
        fh.write(",".join(CONSTANT_COLUMNS + ("passed", "first_violation")) + "\n")
        for r in rows:
            ok, why = manifold.check_h_small(r)
            vals = [f"{getattr(r, c):.17g}" for c in CONSTANT_COLUMNS]
            fh.write(",".join(vals + [str(ok).lower(), (why or "").split(":")[0]]) + "\n")
    with open(out / "threshold.txt", "w") as fh:
        fh.write(f"B0={bounds.B0:.17g} B1={bounds.B1:.17g} B2={bounds.B2:.17g}\n")
        fh.write(f"h_threshold={threshold:.17g}\n")
    agree = all(r.passed == (r.h <= threshold) for r in rows)
    bracket = (manifold.constants_report(bounds, r.lam, r.a, threshold).passed
               and not manifold.constants_report(bounds, r.lam, r.a, 2 * threshold).passed) if rows else False
    return [Gate("passes below threshold and fails above", agree, f"h_threshold={threshold:.6g}", threshold),
            Gate("threshold bracketed within a factor 2", bracket, f"h_threshold={threshold:.6g}")]


def toynet_experiment(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    t = cfg.values["toynet"]
    lam, mu = cfg.get("scheme", "lambda"), cfg.get("scheme", "mu")
    data = toynet.make_synthetic_dataset(child_seed(cfg.seed, 1), t["n_samples"], t["dimension"])
    net = toynet.MLPAutoencoder(tuple(int(x) for x in t["layers"]), seed=child_seed(cfg.seed, 2))
    rates = {}
    for m in ("HB", "NAG", "HB-mu", "NAG-mu"):
        target = tuple(t["mu_rate_target"] if m.endswith("-mu") else t["rate_target"])
        rates[m] = toynet.param_rate(m, t["rate_h"], net, data, t["rate_T"], lam, mu,
                                     t["batch_size"], target)
    methods = t["methods"]
    table = toynet.loss_table(net, data, methods, t["table_h"], t["epochs"], lam, mu, t["batch_size"])
    histories = {m: toynet.train(net, data, toynet.TrainConfig(m, t["history_h"], lam=lam, mu=mu,
                                                               batch_size=t["batch_size"],
                                                               epochs=t["epochs"]))
                 for m in methods}
    if out is not None:
        for m, rep in rates.items():
            rep.to_csv(out / f"param_rate_{m}.csv")
        toynet.write_final_table(out / "final_table.csv", table, methods, t["table_h"])
        for m, res in histories.items():
            toynet.write_loss_history(out / f"loss_history_{m}.csv", res)
    stable = [h for h in t["table_h"] if not math.isnan(toynet.max_gap(table, methods, h))]
    gf_big = toynet.train(net, data, toynet.TrainConfig("GF", 1.0, lam=lam, epochs=1))
    return {"rates": rates, "table": table, "stable_h": stable, "gf_h1_diverged": gf_big.diverged,
            "methods": methods, "table_h": t["table_h"]}


def cmd_toynet(cfg: ExperimentConfig, out: Path) -> list:
    res = toynet_experiment(cfg, out)
    gates = [Gate(f"{m} parameter rate", r.passed, r.summary(), r.fitted_order)
             for m, r in res["rates"].items()]
    gates.append(Gate("GF at h=1 diverges (n/a)", res["gf_h1_diverged"]))
    if res["stable_h"]:
        big, small = res["stable_h"][0], res["table_h"][-1]
        g_big = toynet.max_gap(res["table"], res["methods"], big)
        g_small = toynet.max_gap(res["table"], res["methods"], small)
        gates.append(Gate("final losses draw together as h shrinks", g_small < g_big,
                          f"gap {g_big:.3e} at h={big:g}, {g_small:.3e} at h={small:g}"))
    else:
        gates.append(Gate("final losses draw together as h shrinks", False, "no stable h"))
    return gates


COMMANDS = {
    "trajectories": cmd_trajectories,
    "rates": cmd_rates,
    "visco": cmd_visco,
    "manifold": cmd_manifold,
    "constants": cmd_constants,
    "toynet": cmd_toynet,
}


def write_summary(out: Path, cfg: ExperimentConfig, gates) -> bool:
    ok = all(g.passed for g in gates)
    with open(out / "summary.txt", "w") as fh:
        fh.write(f"{cfg.subcommand}: {'PASS' if ok else 'FAIL'}\n")
        for g in gates:
            fh.write(f"[{'PASS' if g.passed else 'FAIL'}] {g.name}" + (f": {g.detail}" if g.detail else "") + "\n")
    return ok


def run(cfg: ExperimentConfig, out) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.canonical())
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    try:
        gates = COMMANDS[cfg.subcommand](cfg, out)
    except ConfigError:
        raise
    except Exception as exc:  # surface module errors, keep partial outputs
        marker.write_text(f"{type(exc).__name__}: {exc}\n")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GATE
    ok = write_summary(out, cfg, gates)
    print((out / "summary.txt").read_text(), end="")
    if not ok:
        marker.write_text("one or more gates failed; see summary.txt\n")
    return EXIT_OK if ok else EXIT_GATE


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="momlab", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="INI config file")
    ap.add_argument("--out", default="momlab_out", help="output directory")
    ap.add_argument("--seed", type=int, default=0, help="unsigned 64-bit seed")
    ap.add_argument("overrides", nargs="*", help="section.key=value overrides")
    args = ap.parse_intermixed_args(argv)
    try:
        text = Path(args.config).read_text()
        cfg = load_config(args.subcommand, text, args.overrides, args.seed)
        return run(cfg, args.out)
    except (ConfigError, OSError) as exc:
        print(f"momlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
