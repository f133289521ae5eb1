"""Command-line front end.

    probscale calc --eps 0.05 --delta 1e-6 --nxi 25
    probscale scale config.json
    probscale smpc config.json --mode bench

Exit codes: 0 success, 2 config or validation error, 3 runtime error
(the message carries a ``[stage]`` tag).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from probscale.config import ScaleConfig, SmpcConfig
from probscale.errors import ProbScaleError, StageError
from probscale.polytope import HPolytope
from probscale.sas import design_norm_sas, design_sampled_poly
from probscale.scaling import (
    LEARNING_EPS_MAX,
    ScalingConfig,
    discard_index,
    estimate_violation,
    learning_sample_size,
    probabilistic_scale,
    sample_scaled_points,
    scaling_sample_size,
)
from probscale.uncertainty import CallbackSystem, SampleStream, ScenarioSet, draw

log = logging.getLogger("probscale")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUTPUT_ENV = "PROBSCALE_OUTPUT_DIR"
# wall-clock fields, the only outputs that differ between identical runs
TIMING_KEYS = ("t_max", "t_avg", "t_max_os", "t_avg_os", "t_max_ps", "t_avg_ps", "speedup_avg")


class ConfigError(Exception):
    pass


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _load(path, model):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _output_dir(cfg_dir, flag):
    return Path(flag or os.environ.get(OUTPUT_ENV) or cfg_dir)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (ProbScaleError, ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# calc


def cmd_calc(args):
    eps, delta = args.eps, args.delta
    if not (0.0 < eps < 1.0 and 0.0 < delta < 1.0):
        print(f"error: need eps, delta in (0, 1); got eps={eps}, delta={delta}", file=sys.stderr)
        return EXIT_CONFIG
    if args.nxi < 1 or args.p < 1:
        print("error: --nxi and --p must be positive", file=sys.stderr)
        return EXIT_CONFIG

    rows = []
    learning_ok = eps < LEARNING_EPS_MAX
    if learning_ok:
        rows.append((f"N_LT (n_xi={args.nxi}, p={args.p})",
                     learning_sample_size(args.nxi, eps, delta, args.p)))
    for mode in ("exact", "conservative"):
        n = scaling_sample_size(eps, delta, mode)
        rows.append((f"N_gamma ({mode})", n))
        rows.append((f"r ({mode})", discard_index(eps, n)))
    width = max(len(k) for k, _ in rows)
    print(f"eps={eps:g} delta={delta:g}")
    for k, v in rows:
        print(f"{k:<{width}}  {v}")
    if not learning_ok:
        print(f"warning: learning bound needs eps < {LEARNING_EPS_MAX}; N_LT not computed",
              file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


# ---------------------------------------------------------------------------
# scale


def scale_run(cfg: ScaleConfig, k: int):
    """One design / scale / validate pass; returns ``(scaled, report)``."""
    sys_, spec = cfg.build_system()
    if cfg.problem.type == "affine":
        aff = sys_
        sys_ = CallbackSystem(aff.n_xi, aff.p, lambda Q: aff.realize_batch(spec.effective(Q)))
    m, ex = cfg.method, cfg.execution
    root = SampleStream(ex.seed).child("run", k)
    n = cfg.n_xi
    box = None if m.box is None else HPolytope.box(-np.full(n, m.box), np.full(n, m.box))

    def design():
        stream = root.child("design")
        Q = draw(spec, stream, m.n_design)
        F, g = sys_.realize_batch(Q)
        scen = ScenarioSet(F, g, ex.seed, stream.path)
        if m.sas_kind == "sampled":
            center = "chebyshev" if m.center == "auto" else m.center
            return design_sampled_poly(scen, box, center=center)
        A, b = scen.stacked()
        D = HPolytope(A, b)
        if box is not None:
            D = D.intersect(box)
        fixed = None
        if m.center == "origin":
            fixed = np.zeros(n)
        elif isinstance(m.center, list):
            fixed = np.asarray(m.center, dtype=float)
        return design_norm_sas(D, 1 if m.sas_kind == "l1" else np.inf, m.shape_mode, center=fixed)

    candidate = _stage("design", design)
    scfg = ScalingConfig(m.eps, m.delta, m.constant_mode, ex.seed)
    scaled = _stage("scaling", probabilistic_scale, candidate, sys_, spec, scfg,
                    root.child("scaling"), ex.precheck_samples)

    def validate():
        pts = sample_scaled_points(scaled, ex.n_interior, root.child("points"))
        return estimate_violation(pts, sys_, spec, ex.n_test, root.child("validation"))

    report = _stage("validation", validate)
    return scaled, report


def cmd_scale(args):
    cfg = _load(args.config, ScaleConfig)
    out = _output_dir(cfg.execution.output_dir, args.output_dir)
    resolved = cfg.model_dump(mode="json")
    _write(out / "resolved_config.json", _dump_json(resolved))

    rows = []
    for k in range(cfg.execution.repeats):
        scaled, report = scale_run(cfg, k)
        run_dir = out if cfg.execution.repeats == 1 else out / f"run_{k:03d}"
        sas = scaled.to_dict()
        sas["sas_kind"] = cfg.method.sas_kind
        sas["n_design"] = cfg.method.n_design
        _write(run_dir / "sas.json", _dump_json(sas))
        _write(run_dir / "gammas.csv", scaled.gammas_csv())
        rep = {"schema_version": 1, "eps": cfg.method.eps, **report.to_dict(),
               "passes_3sigma": bool(report.passes(cfg.method.eps))}
        _write(run_dir / "violation_report.json", _dump_json(rep))
        rows.append({"run": k, "gamma": scaled.gamma, "max_rate": report.max_rate,
                     "stderr": report.stderr, "passes_3sigma": rep["passes_3sigma"]})
        log.info("run %d: gamma=%.6g max violation=%.4f", k, scaled.gamma, report.max_rate)

    summary = {"schema_version": 1, "runs": rows,
               "gamma_mean": float(np.mean([r["gamma"] for r in rows])),
               "n_pass": int(sum(r["passes_3sigma"] for r in rows))}
    _write(out / "summary.json", _dump_json(summary))
    print(f"{len(rows)} run(s), mean gamma {summary['gamma_mean']:.6g}, "
          f"{summary['n_pass']}/{len(rows)} within eps + 3 stderr -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# smpc


def _build_cache(cfg, mode):
    """Constraint sets do not depend on the run index; build them once."""
    from probscale import smpc

    prob, x0 = cfg.build_problem()
    m, ex = cfg.method, cfg.execution
    root = SampleStream(ex.seed)
    S = _stage("cost", smpc.estimate_cost_matrix, prob, m.n_cost, root.child("cost"))
    info = {}
    if mode == "os":
        cm = _stage("os-build", smpc.build_os_constraints, prob, root.child("os"))
        online = smpc.OnlineConstraints.from_matrix(cm)
    else:
        scfg = ScalingConfig(float(np.min(prob.eps)), m.delta, m.constant_mode, ex.seed)
        build = smpc.build_ps_constraints(prob, m.n_design, m.sas_kind, scfg, root.child("ps"),
                                          box=m.box, shape_mode=m.shape_mode, center=m.center,
                                          precheck_samples=ex.precheck_samples)
        online = build.online
        info = {"gamma": build.scaled.gamma, "design_rows": build.design_rows,
                "design_rows_with_box": build.design_rows_with_box}
    return prob, x0, S, online, info


def _summary_csv(rows, keys):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def cmd_smpc(args):
    from probscale import smpc

    cfg = _load(args.config, SmpcConfig)
    try:
        resolved = cfg.resolved()
    except (ValueError, ProbScaleError) as exc:
        raise ConfigError(str(exc)) from exc
    if args.mode in ("os", "bench") and np.max(cfg.method.eps) >= LEARNING_EPS_MAX:
        raise ConfigError(f"the OS pipeline needs every eps < {LEARNING_EPS_MAX}")
    out = _output_dir(cfg.execution.output_dir, args.output_dir)
    _write(out / "resolved_config.json", _dump_json(resolved))

    modes = ("os", "ps") if args.mode == "bench" else (args.mode,)
    built = {mode: _build_cache(cfg, mode) for mode in modes}
    summary = {"schema_version": 1, "mode": args.mode, "runs": []}
    for mode in modes:
        prob, _, _, online, info = built[mode]
        summary[f"online_rows_{mode}"] = online.n_rows
        summary[f"online_aux_{mode}"] = online.n_aux
        if info:
            summary.update({f"{k}_{mode}": v for k, v in info.items()})

    rows = []
    for run in range(cfg.execution.runs):
        row = {"run": run}
        for mode in modes:
            prob, x0, S, online, _ = built[mode]
            traj = _stage("simulate", smpc.simulate_closed_loop, prob, S, online, x0,
                          cfg.execution.steps, SampleStream(cfg.execution.seed).child("sim", run))
            _write(out / f"trajectory_{mode}_run{run:03d}.csv", traj.to_csv())
            s = traj.summary()
            row.update({f"t_max_{mode}": s["t_max"], f"t_avg_{mode}": s["t_avg"],
                        f"violation_rate_{mode}": s["violation_rate"],
                        f"n_infeasible_{mode}": s["n_infeasible"],
                        f"rows_{mode}": online.n_rows})
        rows.append(row)
    summary["runs"] = rows
    for mode in modes:
        summary[f"violation_rate_{mode}"] = float(np.mean([r[f"violation_rate_{mode}"] for r in rows]))
        summary[f"t_avg_{mode}"] = float(np.mean([r[f"t_avg_{mode}"] for r in rows]))
        summary[f"t_max_{mode}"] = float(np.max([r[f"t_max_{mode}"] for r in rows]))
    if args.mode == "bench":
        summary["speedup_avg"] = summary["t_avg_os"] / summary["t_avg_ps"]
        summary["row_ratio"] = summary["online_rows_os"] / summary["online_rows_ps"]

    keys = ["run"]
    for mode in modes:
        keys += [f"t_max_{mode}", f"t_avg_{mode}", f"violation_rate_{mode}",
                 f"n_infeasible_{mode}", f"rows_{mode}"]
    _write(out / "summary.json", _dump_json(summary))
    _write(out / "summary.csv", _summary_csv(rows, keys))
    for mode in modes:
        print(f"{mode}: {summary[f'online_rows_{mode}']} online rows, "
              f"t_avg {summary[f't_avg_{mode}'] * 1e3:.3f} ms, "
              f"t_max {summary[f't_max_{mode}'] * 1e3:.3f} ms, "
              f"violation rate {summary[f'violation_rate_{mode}']:.4f}")
    if args.mode == "bench":
        print(f"average solve-time ratio OS/PS: {summary['speedup_avg']:.1f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="probscale", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calc", help="sample-size calculators")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--nxi", type=int, required=True, help="dimension of the decision vector")
    p.add_argument("--p", type=int, default=1, help="rows per boolean constraint")
    p.set_defaults(func=cmd_calc)

    p = sub.add_parser("scale", help="design, scale and validate a SAS")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("smpc", help="closed-loop SMPC simulation")
    p.add_argument("config")
    p.add_argument("--mode", choices=("os", "ps", "bench"), default="bench")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_smpc)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ProbScaleError, RuntimeError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: [run] {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
