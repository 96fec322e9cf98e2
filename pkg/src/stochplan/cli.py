"""Command-line interface: ``stochplan {solve,verify,simulate,report}``.

Exit codes: 0 ok, 2 configuration or missing-artifact error, 3 numerical
refusal (CFL), 4 verification failure. Errors are also written as JSON to
``<out>/error.json`` and to stderr.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from . import __version__, kernels
from .config import ConfigError, build_problem, load_config
from .hjb import CFLError, boundary_audit, solve_chain, superlevel_set
from .io import (read_field_csv, sha256, write_csv, write_field_csv, write_json, write_pgm)
from .motion import PhaseTracker, event_indicator, sequential_exit_times
from .policy import _decimate, closed_loop_verify, extract_policy, load_policy, sample_nodes, save_policy
from .sde import ConstantPolicy, simulate_paths

log = logging.getLogger("stochplan")

OUTPUT_ROOT_ENV = "STOCHPLAN_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_CFL, EXIT_VERIFY = 0, 2, 3, 4


class MissingArtifacts(ConfigError):
    pass


def _tool() -> dict:
    return {"name": "stochplan", "version": __version__}


def _slice_name(k: int, t: float) -> str:
    return f"V{k}_t{t:011.4f}"


def _rel(out, path):
    return os.path.relpath(path, out).replace(os.sep, "/")


# -- solve -------------------------------------------------------------------


def cmd_solve(cfg: dict, out: str, threads: int = 1) -> int:
    prob, extra = build_problem(cfg)
    log.info("solving %s on grid %s", cfg.get("name"), prob.grid.nodes)
    sol = solve_chain(prob)
    audit = boundary_audit(sol)
    s = cfg["solver"]
    files = []
    d = prob.grid.dim
    for k, snaps in enumerate(sol.fields, start=1):
        for snap in _decimate(snaps, s.get("export_every")):
            base = _slice_name(k, snap.t)
            p = os.path.join(out, "fields", base + ".csv")
            write_field_csv(p, snap)
            files.append(p)
            if d == 2:
                p = os.path.join(out, "heatmaps", base + ".pgm")
                write_pgm(p, snap.values, comment=f"V{k} t={snap.t:.6g} range [0,1]")
                files.append(p)
    v1 = sol.initial(1)
    p = os.path.join(out, "fields", "V1_initial.csv")
    write_field_csv(p, v1)
    files.append(p)
    levels = []
    for lvl in s["superlevels"]:
        region = superlevel_set(v1, lvl)
        tag = f"{lvl:.3f}"
        p = os.path.join(out, "masks", f"superlevel_p{tag}.csv")
        X = prob.grid.flat_points()
        write_csv(p, [f"x{i + 1}" for i in range(d)] + ["inside"],
                  ((*X[n], int(m)) for n, m in enumerate(region.mask.reshape(-1))))
        files.append(p)
        if d == 2:
            p = os.path.join(out, "masks", f"superlevel_p{tag}.pgm")
            write_pgm(p, region.mask.astype(float), comment=f"V1(0,x) > {lvl}")
            files.append(p)
        levels.append({"p": lvl, "n_nodes": int(region.mask.sum())})
    pol = extract_policy(sol, every=s.get("policy_every"))
    p = os.path.join(out, "policy", "policy.csv")
    save_policy(pol, p)
    files += [p, os.path.splitext(p)[0] + ".meta.json"]
    manifest = {
        "tool": _tool(),
        "config": cfg,
        "grid": prob.grid.to_dict(),
        "eps": prob.eps,
        "payoff_mode": prob.payoff_mode,
        "method": prob.generator.mode,
        "kernel_backend": kernels.BACKEND,
        "dt_pde": sol.dt,
        "cfl_bound": sol.cfl_bound,
        "cfl_number": sol.cfl_number,
        "phase_end": sol.phase_end,
        "seed": cfg["seed"],
        "boundary_audit": {k: v for k, v in audit.items() if k != "failures"},
        "superlevels": levels,
        "value_summary": {f"V{k}": {"t": snaps[0].t, "min": float(snaps[0].values.min()),
                                    "max": float(snaps[0].values.max())}
                          for k, snaps in enumerate(sol.fields, start=1)},
        "files": {_rel(out, f): sha256(f) for f in sorted(files)},
    }
    if extra:
        manifest["model_info"] = extra
    write_json(os.path.join(out, "manifest.json"), manifest)
    log.info("wrote %d files to %s", len(files) + 1, out)
    return EXIT_OK


# -- verify ------------------------------------------------------------------


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifacts(f"missing artifact {path}; run 'stochplan solve' first", "<artifacts>")
    return path


def cmd_verify(cfg: dict, out: str, threads: int = 1) -> int:
    _require(os.path.join(out, "manifest.json"))
    field = read_field_csv(_require(os.path.join(out, "fields", "V1_initial.csv")))
    prob, _ = build_problem(cfg)
    v = cfg["verify"]
    if v["policy"] == "extracted":
        policy = load_policy(_require(os.path.join(out, "policy", "policy.csv")))
    else:
        policy = ConstantPolicy(prob.model.control_lo)
    if field.grid.nodes != prob.grid.nodes:
        raise MissingArtifacts("stored field does not match the configured grid", "grid")
    nodes = sample_nodes(field, v["n_nodes"], v["node_seed"], *v["value_range"], mask=prob.masks[0])
    rep = closed_loop_verify(policy, prob.model, prob.spec, nodes, field, v["n_paths"], v["dt"], cfg["seed"],
                             mode=v["mode"], eps=prob.eps, tol=v["tolerance"], threads=threads)
    gap = rep.gap
    if v["check"] == "two_sided":
        ok = bool(np.all(np.abs(gap) <= v["tolerance"]))
        worst = int(np.argmax(np.abs(gap)))
    else:
        ok = rep.passed
        worst = int(np.argmin(gap))
    summary = rep.summary()
    summary.update({"passed": ok, "check": v["check"], "mode": v["mode"], "policy": v["policy"],
                    "worst_node": int(nodes[worst]), "worst_point": rep.points[worst].tolist(),
                    "worst_gap": float(gap[worst])})
    report = {"tool": _tool(), "summary": summary,
              "nodes": [{"node": int(n), "x": rep.points[i].tolist(), "v_pde": float(rep.v_pde[i]),
                         "p_mc": float(rep.p_mc[i]), "ci_halfwidth": float(rep.ci[i]), "gap": float(gap[i])}
                        for i, n in enumerate(nodes)]}
    write_json(os.path.join(out, "verify", "report.json"), report)
    d = prob.grid.dim
    write_csv(os.path.join(out, "verify", "nodes.csv"),
              ["node"] + [f"x{i + 1}" for i in range(d)] + ["v_pde", "p_mc", "ci_halfwidth", "gap"],
              ((int(n), *rep.points[i], rep.v_pde[i], rep.p_mc[i], rep.ci[i], gap[i]) for i, n in enumerate(nodes)))
    if not ok:
        log.error("verification failed: worst gap %.4g at %s (tolerance %g)", gap[worst],
                  rep.points[worst].tolist(), v["tolerance"])
        return EXIT_VERIFY
    log.info("verification passed at %d nodes (max |gap| %.4g)", len(nodes), float(np.abs(gap).max()))
    return EXIT_OK


# -- simulate ----------------------------------------------------------------


def cmd_simulate(cfg: dict, out: str, threads: int = 1) -> int:
    prob, _ = build_problem(cfg)
    sm = cfg["simulate"]
    model, spec, grid = prob.model, prob.spec, prob.grid
    x0 = np.asarray(sm.get("x0", [0.5 * (l + h) for l, h in zip(grid.lo, grid.hi)]), float)
    if x0.size != model.state_dim:
        raise ConfigError("simulate/x0 has the wrong dimension", "simulate/x0")
    if sm["policy"] == "extracted":
        policy = load_policy(_require(os.path.join(out, "policy", "policy.csv")))
    else:
        u = sm.get("control", list(model.control_lo))
        if len(u) != model.control_dim or not model.in_box(u):
            raise ConfigError("simulate/control must lie in the control box", "simulate/control")
        policy = ConstantPolicy(u)
    t0, dt, P = float(sm["t0"]), float(sm["dt"]), int(sm["n_paths"])
    box = sm.get("sim_box")
    tracker = PhaseTracker.from_spec(spec, t0, dt, P)
    trajs = simulate_paths(model, policy, t0, x0, max(spec.final_time, t0), dt, cfg["seed"], P,
                           sim_box=(box["lo"], box["hi"]) if box else None, tracker=tracker)
    n, d, m = spec.n, model.state_dim, model.control_dim
    exit_sets = [ph.exit_set for ph in spec.runtime_phases("indicator")]

    def traj_rows():
        for p, tr in enumerate(trajs):
            ts = tr.times
            for j in range(tr.states.shape[0]):
                u = tr.controls[j] if j < tr.controls.shape[0] else np.full(m, np.nan)
                yield (p, j, ts[j], *tr.states[j], *u)

    write_csv(os.path.join(out, "simulate", "trajectories.csv"),
              ["path", "step", "t"] + [f"x{i + 1}" for i in range(d)] + [f"u{j + 1}" for j in range(m)],
              traj_rows())
    rows = []
    for p, tr in enumerate(trajs):
        theta = sequential_exit_times(tr, exit_sets).theta
        verdict = event_indicator(tr, spec) if spec.kind != "general" else int(tracker.prod[p] > 0.5)
        rows.append((p, *theta, *tracker.tau[p], verdict, int(tracker.prod[p] > 0.5), int(tr.truncated)))
    write_csv(os.path.join(out, "simulate", "verdicts.csv"),
              ["path"] + [f"theta_{i + 1}" for i in range(n)] + [f"tau_{i + 1}" for i in range(n)]
              + ["verdict", "tracker_verdict", "truncated"], rows)
    log.info("simulated %d paths; %d successes", P, sum(r[-3] for r in rows))
    return EXIT_OK


# -- report ------------------------------------------------------------------


def cmd_report(cfg: dict, out: str, threads: int = 1) -> int:
    paths = sorted(glob.glob(os.path.join(out, "fields", "V*.csv")))
    if not paths:
        raise MissingArtifacts(f"no field CSVs under {out}/fields; run 'stochplan solve' first", "<artifacts>")
    index = []
    for p in paths:
        f = read_field_csv(p)
        entry = {"csv": _rel(out, p), "min": float(f.values.min()), "max": float(f.values.max()),
                 "mean": float(f.values.mean())}
        if f.grid.dim == 2:
            img = os.path.join(out, "report", os.path.splitext(os.path.basename(p))[0] + ".pgm")
            write_pgm(img, f.values, comment=f"rendered from {entry['csv']}")
            entry["heatmap"] = _rel(out, img)
        index.append(entry)
    write_json(os.path.join(out, "report", "index.json"), {"tool": _tool(), "fields": index})
    log.info("rendered %d fields", len(index))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "simulate": cmd_simulate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochplan", description="Stochastic motion planning via HJB value chains.")
    ap.add_argument("--version", action="version", version=f"stochplan {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in [("solve", "solve the value-function chain and export fields, masks and policy"),
                           ("verify", "compare a solved field with closed-loop Monte Carlo"),
                           ("simulate", "simulate trajectories and score them against the motion specification"),
                           ("report", "render heatmaps from stored field CSVs")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON run config (or a run manifest)")
        p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<name>)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo")
        p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    return ap


def _out_dir(args, cfg) -> str:
    if args.out:
        return args.out
    if cfg and cfg.get("output"):
        return cfg["output"]
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    name = (cfg or {}).get("name") or os.path.splitext(os.path.basename(args.config))[0]
    return os.path.join(root, name)


def _emit_error(out, code: int, kind: str, message: str, where: str = "") -> int:
    err = {"error": kind, "message": message, "exit_code": code}
    if where:
        err["where"] = where
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    if out:
        try:
            write_json(os.path.join(out, "error.json"), err)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    out = args.out
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative", "seed")
            cfg["seed"] = int(args.seed)
        out = _out_dir(args, cfg)
        err_path = os.path.join(out, "error.json")
        if os.path.exists(err_path):
            os.unlink(err_path)
        return COMMANDS[args.command](cfg, out, max(1, args.threads))
    except CFLError as exc:
        return _emit_error(out, EXIT_CFL, "cfl_violation", str(exc), f"bound={exc.bound!r}")
    except ConfigError as exc:
        kind = "missing_artifacts" if isinstance(exc, MissingArtifacts) else "config_error"
        return _emit_error(out, EXIT_CONFIG, kind, str(exc), exc.path)


if __name__ == "__main__":
    sys.exit(main())
