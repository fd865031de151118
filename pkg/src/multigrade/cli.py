"""Command-line front end: construct | verify | train | oracle.

Every command writes its resolved configuration back into the output
directory (config.json) plus a provenance record (provenance.json, the one
file allowed to contain timestamps), so repeated runs with the same flags
are byte-identical everywhere else.

Exit codes: 0 pass, 1 invariant or experiment failure, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .contraction import eps_limit, default_eps
from .cutoff import Cube
from .network import load_network, save_network
from .oracles import (InstanceTooLarge, check_small, dense_superlevel,
                      finite_difference_lipschitz, norm_1d_linear,
                      overlap_count_bruteforce, quadrature_norm)
from .refine import REFINE_FACTOR, refine
from .targets import (TARGET_NAMES, VerificationGrid, load_grid_target,
                      named_target)
from .trainer import TrainConfig, fcnn_train, make_dataset, mgdl_train


class UsageError(Exception):
    pass


def _resolve_target(args):
    if args.target == "custom":
        if not args.csv or args.lipschitz is None:
            raise UsageError("--target custom requires --csv and --lipschitz")
        return load_grid_target(args.csv, args.lipschitz)
    return named_target(args.target, dim=args.d)


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _git_hash() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=5)
        return out.stdout.strip() if out.returncode == 0 else "unknown"
    except OSError:
        return "unknown"


def _emit_run_records(outdir: Path, args, command: str) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    _write_json(outdir / "config.json", cfg)
    _write_json(outdir / "provenance.json", {
        "command": command,
        "version": __version__,
        "git_hash": _git_hash(),
        "threads": args.threads,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    })


# ---------------------------------------------------------------------------
# construct
# ---------------------------------------------------------------------------

def cmd_construct(args) -> int:
    target = _resolve_target(args)
    d = target.dim
    eps = args.eps if args.eps is not None else default_eps(d)
    if not 0.0 < eps < eps_limit(d):
        raise UsageError(f"--eps must lie in (0, {eps_limit(d):.6g}) for d={d}")
    if (args.rounds is None) == (args.sup_tol is None):
        raise UsageError("give exactly one of --rounds / --sup-tol")
    outdir = Path(args.out)
    _emit_run_records(outdir, args, "construct")
    result = refine(target, eps,
                    rounds=args.rounds, sup_tol=args.sup_tol,
                    resolution=args.grid, r=args.r, form=args.form,
                    refine_factor=args.refine_factor,
                    max_rounds=args.max_rounds, max_points=args.max_points)
    save_network(result.network, outdir / "network.json")
    result.trace.write_grade_csv(outdir / "trace_grades.csv")
    result.trace.write_round_csv(outdir / "trace_rounds.csv")
    envelope = result.trace.envelope_check()
    summary = {
        "target": target.name,
        "dim": d,
        "eps": eps,
        "initial_sup": result.trace.initial_sup,
        "final_sup": (result.trace.rounds[-1].m_after if result.trace.rounds
                      else result.trace.initial_sup),
        "rounds": len(result.trace.rounds),
        "grades": result.network.grade_count,
        "round_boundaries": list(result.network.round_boundaries),
        "converged": result.converged,
        "diagnostic": result.diagnostic,
        "envelope": [
            {"j": j, "m_after": m, "bound": b, "ok": ok}
            for j, m, b, ok in envelope
        ],
        "domination_violations": int(sum(result.trace.grades.domination_violations)),
    }
    _write_json(outdir / "summary.json", summary)
    failures = [row for row in envelope if not row[3]]
    if failures:
        j, m, b, _ = failures[0]
        print(f"FAIL envelope at round {j}: sup {m:.6g} > bound {b:.6g}")
        return 1
    if summary["domination_violations"]:
        print(f"FAIL pointwise domination: {summary['domination_violations']} violations")
        return 1
    if not result.converged:
        print(f"FAIL {result.diagnostic}")
        return 1
    print(f"constructed {summary['grades']} grades in {summary['rounds']} rounds; "
          f"final sup {summary['final_sup']:.6g}")
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _verify_rows(net, target, resolution: int):
    d = target.dim
    grid = VerificationGrid(d, resolution)
    pts = grid.points()
    rows = []

    cap = 5 * d
    widths_ok = True
    for block in net.iter_grades():
        for aff, _ in block.hidden:
            widths_ok &= aff.rows <= cap and aff.cols <= cap
        widths_ok &= block.output.rows <= cap and block.output.cols <= cap
    rows.append(("width <= 5d", widths_ok, 0.0))

    bounds = list(net.round_boundaries)
    rows.append(("round boundaries strictly increasing",
                 all(b < c for b, c in zip(bounds, bounds[1:])), 0.0))

    carry_ok = True
    for block in net.iter_grades():
        h = block.hidden_values(pts[:32])
        carry_ok &= bool(np.array_equal(h[:, :d], pts[:32]))
    rows.append(("carry identity", carry_ok, 0.0))

    tol = 1e-9
    resid = target.evaluate(pts)
    dom_worst = 0.0
    l1_prev = float(np.mean(np.abs(resid)))
    l2_prev = float(np.mean(resid ** 2))
    lp_ok = True
    sup_seq_ok = True
    prev_sup = float(np.abs(resid).max())
    for block in net.iter_grades():
        out = block.evaluate(pts)
        new = resid - out
        dom_worst = max(dom_worst, float((np.abs(new) - np.abs(resid)).max()))
        l1_new = float(np.mean(np.abs(new)))
        l2_new = float(np.mean(new ** 2))
        if np.any(out != 0.0):
            lp_ok &= l1_new < l1_prev + tol and l2_new < l2_prev + tol
        sup_new = float(np.abs(new).max())
        sup_seq_ok &= sup_new <= prev_sup + tol
        resid, l1_prev, l2_prev, prev_sup = new, l1_new, l2_new, sup_new
    rows.append(("pointwise domination", dom_worst <= tol, dom_worst))
    rows.append(("L1/L2 monotone", lp_ok, 0.0))
    rows.append(("sup nonincreasing", sup_seq_ok, 0.0))
    return rows


def cmd_verify(args) -> int:
    target = _resolve_target(args)
    try:
        net = load_network(args.network)
    except (ValueError, AssertionError) as exc:
        print(f"parse error: {exc}")
        return 2
    if net.dim != target.dim:
        print(f"network dimension {net.dim} != target dimension {target.dim}")
        return 2
    resolution = args.grid or 257
    rows = _verify_rows(net, target, resolution)
    if args.out:
        outdir = Path(args.out)
        _emit_run_records(outdir, args, "verify")
        _write_json(outdir / "verify.json",
                    [{"check": n, "ok": ok, "measured": m} for n, ok, m in rows])
    failed = 0
    for name, ok, measured in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" +
              (f"  (measured {measured:.3e})" if measured else ""))
        failed += 0 if ok else 1
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    target = _resolve_target(args)
    outdir = Path(args.out)
    _emit_run_records(outdir, args, "train")
    base = TrainConfig()
    if args.grades == 4 and args.epochs == 2000:
        epochs = (125, 250, 500, 1125)
    else:
        cfg0 = base.with_grades(args.grades, args.epochs)
        epochs = cfg0.epochs_per_grade
    per_seed = []
    for seed in range(args.seeds):
        cfg = TrainConfig(grades=args.grades, width=args.width,
                          epochs_per_grade=epochs, batch_size=args.batch,
                          seed=seed)
        train = make_dataset(target, args.train_samples, seed=7000 + seed)
        test = make_dataset(target, args.test_samples, seed=9000 + seed)
        mg_model, mg_trace = mgdl_train(train, test, cfg)
        fc_model, fc_trace = fcnn_train(train, test, cfg)
        mg_trace.write_csv(outdir / f"mgdl_seed{seed}.csv")
        fc_trace.write_csv(outdir / f"fcnn_seed{seed}.csv")
        mg_final = mg_trace.per_epoch[-1].test_mse if mg_trace.per_epoch else math.nan
        fc_final = fc_trace.per_epoch[-1].test_mse if fc_trace.per_epoch else math.nan
        drops = grade_boundary_drops(mg_trace)
        per_seed.append({
            "seed": seed,
            "mgdl_test_mse": mg_final,
            "fcnn_test_mse": fc_final,
            "mgdl_beats_fcnn": bool(mg_final <= fc_final),
            "grade_drops": drops,
            "all_grades_drop": bool(all(drops)) if drops else True,
        })
    wins = sum(s["mgdl_beats_fcnn"] for s in per_seed)
    dropwins = sum(s["all_grades_drop"] for s in per_seed)
    needed = max(1, math.ceil(2 * args.seeds / 3))  # "2 of 3 seeds" rule
    summary = {
        "per_seed": per_seed,
        "mgdl_wins": wins,
        "drop_wins": dropwins,
        "seeds": args.seeds,
        "needed": needed,
        "verdict_comparison": wins >= needed,
        "verdict_drops": dropwins >= needed,
    }
    _write_json(outdir / "comparison.json", summary)
    print(f"MGDL <= FCNN in {wins}/{args.seeds} seeds; grade drops in "
          f"{dropwins}/{args.seeds} seeds")
    return 0 if summary["verdict_comparison"] and summary["verdict_drops"] else 1


def grade_boundary_drops(trace) -> list:
    """Whether each grade's training MSE drops below the previous grade's
    final value within the first 10% of the grade's epochs."""
    drops = []
    slices = trace.grade_slices()
    for g in range(1, len(slices)):
        s_prev = slices[g - 1]
        s_cur = slices[g]
        if s_cur[1] == s_cur[0] or s_prev[1] == s_prev[0]:
            continue
        prev_final = trace.per_epoch[s_prev[1] - 1].train_mse
        width = max(1, (s_cur[1] - s_cur[0]) // 10)
        early = min(rec.train_mse
                    for rec in trace.per_epoch[s_cur[0]:s_cur[0] + width])
        drops.append(early < prev_final)
    return drops


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def cmd_oracle(args) -> int:
    outdir = Path(args.out)
    _emit_run_records(outdir, args, "oracle")
    report = {}
    which = args.which or ["overlap", "superlevel", "norms", "lipschitz"]
    try:
        if "overlap" in which:
            entries = []
            for d in (1, 2, 3):
                check_small(d, args.grid or 33)
                cubes = [Cube.from_index(idx, 0.2)
                         for idx in np.ndindex(*(5,) * d)]
                rng = np.random.default_rng(0)
                pts = rng.uniform(0, 1, (1000, d))
                vertices = np.stack([g.reshape(-1) for g in np.meshgrid(
                    *([np.arange(1, 5) * 0.2] * d), indexing="ij")], axis=-1)
                for r in (1.1, 1.5, 1.9):
                    counts = overlap_count_bruteforce(cubes, r, np.vstack([pts, vertices]))
                    entries.append({"d": d, "r": r,
                                    "max_count": int(max(counts)),
                                    "bound": 2 ** d,
                                    "vertex_count": int(max(
                                        overlap_count_bruteforce(cubes, r, vertices)))})
            report["overlap"] = entries
        if "superlevel" in which:
            pts, mask, sup = dense_superlevel(
                lambda p: np.ones(len(p)), 1, 0.25, 1025)
            report["superlevel_constant"] = {
                "fraction": float(mask.mean()), "sup": sup}
        if "norms" in which:
            report["norms_linear"] = {
                "p1_closed_form": norm_1d_linear(1),
                "p1_quadrature": quadrature_norm(lambda p: p[:, 0], 1, 1, 4097),
                "p2_closed_form": norm_1d_linear(2),
                "p2_quadrature": quadrature_norm(lambda p: p[:, 0], 1, 2, 4097),
            }
        if "lipschitz" in which:
            target = _resolve_target(args)
            fd = finite_difference_lipschitz(target.evaluate, target.dim)
            report["lipschitz"] = {
                "target": target.name,
                "finite_difference": fd,
                "model_bound": float(target.modulus.bound(1.0)),
                "dominated": bool(fd <= target.modulus.bound(1.0)),
            }
    except InstanceTooLarge as exc:
        print(f"refused: {exc}")
        return 2
    _write_json(outdir / "oracle_report.json", report)
    ok = True
    for entry in report.get("overlap", []):
        ok &= entry["max_count"] <= entry["bound"]
        ok &= entry["vertex_count"] == entry["bound"]
    if "lipschitz" in report:
        ok &= report["lipschitz"]["dominated"]
    print("oracle report written;", "all checks pass" if ok else "CHECK FAILURES")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multigrade",
        description="grade-by-grade ReLU network construction and training")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--target", choices=list(TARGET_NAMES) + ["custom"],
                       default="constant")
        p.add_argument("--csv", help="grid-sample CSV for --target custom")
        p.add_argument("--lipschitz", type=float, default=None,
                       help="declared Lipschitz constant for --target custom")
        p.add_argument("--d", type=int, default=None, help="dimension (constant target)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker count recorded in provenance")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--config", default=None, help="JSON file with flag defaults")

    p = sub.add_parser("construct", help="run the constructive refinement")
    common(p)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--r", type=float, default=1.5)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--sup-tol", dest="sup_tol", type=float, default=None)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--form", choices=["clipped", "averaged"], default="clipped")
    p.add_argument("--refine-factor", type=int, default=REFINE_FACTOR)
    p.add_argument("--max-rounds", type=int, default=64)
    p.add_argument("--max-points", type=int, default=1 << 27)
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("verify", help="replay invariants against a network file")
    common(p)
    p.add_argument("network", help="network interchange file")
    p.add_argument("--grid", type=int, default=257)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="grade-wise vs end-to-end training comparison")
    common(p)
    p.add_argument("--grades", type=int, default=4)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--epochs", type=int, default=2000, help="total epoch budget")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--batch", type=int, default=400)
    p.add_argument("--train-samples", dest="train_samples", type=int, default=2000)
    p.add_argument("--test-samples", dest="test_samples", type=int, default=1000)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("oracle", help="brute-force oracle report for small instances")
    common(p)
    p.add_argument("--which", nargs="*", default=None,
                   choices=["overlap", "superlevel", "norms", "lipschitz"])
    p.add_argument("--grid", type=int, default=33)
    p.set_defaults(func=cmd_oracle)
    return parser


def _apply_config_file(args, argv) -> None:
    """Config-file values fill in flags not given on the command line."""
    if getattr(args, "config", None):
        with open(args.config) as fh:
            overrides = json.load(fh)
        given = {tok[2:].split("=")[0].replace("-", "_")
                 for tok in argv if tok.startswith("--")}
        for key, value in overrides.items():
            attr = key.replace("-", "_")
            if hasattr(args, attr) and attr not in given:
                setattr(args, attr, value)


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
