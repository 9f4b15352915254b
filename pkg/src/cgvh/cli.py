"""Command-line front end.

Subcommands: simulate, verify, train, classify, pdp, report. Exit codes:
0 success, 1 invariant failure, 2 usage/config error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import bound_chain, pdp_scan
from .baselines import MLPConfig, linear_readout, nonlinear_baseline
from .classify import (
    DetectorRegions,
    TrainConfig,
    _stack_patterns,
    default_regions,
    euclidean_classifier,
    predict_batch,
    train_phase_masks,
)
from .config import ExperimentConfig, check, load_config, substream
from .datasets import close_pair_task, load_manifest, synthetic_dataset
from .errors import CGVHError, DimensionCap, FormatError
from .field import AmplitudeField, intensity, l2_norm, normalize
from .formats import load_stack, read_field, save_stack, write_field, write_intensity
from .optics import (
    DiffractivePanel,
    OpticalStack,
    PropagationSpec,
    _forward_array,
    assemble_system_matrix,
    is_contraction,
    random_stack,
)
from .svg import line_chart

EXIT_OK, EXIT_INVARIANT, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class InvariantFailure(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _specs(cfg, spacings):
    return [
        PropagationSpec(
            spacing=float(s),
            wavelength=cfg.wavelength,
            pixel_pitch=cfg.pixel_pitch,
            evanescent_mode=cfg.evanescent_mode,
            pad_factor=cfg.pad_factor,
        )
        for s in spacings
    ]


def build_stack(cfg, stack_path=None):
    path = stack_path or cfg.layers.stack
    if path:
        stack = load_stack(cfg.resolve(path) if stack_path is None else Path(path))
        if stack.grid_side != cfg.grid_side:
            raise FormatError(f"stack grid {stack.grid_side} != config grid_side {cfg.grid_side}", path)
        return stack
    n = cfg.grid_side
    depth = len(cfg.layers.spacings) - 1
    rng = substream(cfg.seed, "init")
    panels = []
    for _ in range(depth):
        phase = np.zeros((n, n)) if cfg.layers.init == "zero" else rng.uniform(0, 2 * np.pi, (n, n))
        panels.append(DiffractivePanel(np.zeros((n, n)), phase))
    return OpticalStack(n, panels, _specs(cfg, cfg.layers.spacings))


def build_regions(cfg):
    r = cfg.regions
    if r.indices is not None:
        return DetectorRegions(cfg.grid_side, r.indices)
    return default_regions(cfg.grid_side, r.count, r.tile)


def load_data(cfg):
    d = cfg.dataset
    n = cfg.grid_side
    if d.kind == "synthetic":
        train = synthetic_dataset(substream(cfg.seed, "data", 0), n, d.samples_per_class, d.shapes, d.jitter)
        test = synthetic_dataset(substream(cfg.seed, "data", 1), n, d.test_per_class, d.shapes, d.jitter)
    elif d.kind == "close_pair":
        task = close_pair_task(
            substream(cfg.seed, "data"), n, d.epsilon, d.samples_per_class, d.test_per_class, d.subspace_dim
        )
        train, test = task.train, task.test
    else:
        train = load_manifest(cfg.resolve(d.path))
        test = load_manifest(cfg.resolve(d.test_path)) if d.test_path else train
    for p in train + test:
        if p.field.grid_side != n:
            raise FormatError(f"pattern grid {p.field.grid_side} != config grid_side {n}", d.path)
    return train, test


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_table(out_dir, name, header, rows, fmt):
    """Write ``rows`` as ``name.csv`` or ``name_rows.json`` (list of objects).

    The JSON suffix keeps tables apart from the per-command summaries.
    """
    if fmt == "json":
        path = out_dir / f"{name}_rows.json"
        objs = [dict(zip(header, (_plain(v) for v in row))) for row in rows]
        path.write_text(json.dumps(objs, indent=1) + "\n")
        return path
    path = out_dir / f"{name}.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def _plain(v):
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def write_summary(out_dir, name, summary):
    (out_dir / f"{name}.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_plain) + "\n")


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _random_fields(rng, count, n, unit=False):
    z = rng.standard_normal((count, n, n)) + 1j * rng.standard_normal((count, n, n))
    if unit:
        z /= np.linalg.norm(z.reshape(count, -1), axis=1)[:, None, None]
    return z


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg, args):
    if not args.input:
        raise FormatError("simulate needs --input FIELD.afld")
    field = read_field(args.input, cfg.pixel_pitch)
    if field.grid_side != cfg.grid_side:
        raise FormatError(f"input grid {field.grid_side} != config grid_side {cfg.grid_side}", args.input)
    stack = build_stack(cfg, args.stack)
    out_dir = _out_dir(cfg)
    out = field.with_data(_forward_array(stack, field.data))
    write_field(out_dir / "output.afld", out)
    write_intensity(out_dir / "output.aint", intensity(out))
    p_in = l2_norm(field) ** 2
    p_out = l2_norm(out) ** 2
    ratio = p_out / p_in if p_in > 0 else 0.0
    summary = {
        "command": "simulate",
        "grid_side": cfg.grid_side,
        "layers": stack.depth,
        "norm_in": l2_norm(field),
        "norm_out": l2_norm(out),
        "power_in": p_in,
        "power_out": p_out,
        "power_ratio": ratio,
        "power_loss": 1.0 - ratio,
    }
    write_summary(out_dir, "simulate", summary)
    print(f"power_in={p_in:.6g} power_out={p_out:.6g} ratio={ratio:.6g}")
    if ratio > 1 + 1e-9:
        raise InvariantFailure(f"power ratio {ratio!r} exceeds 1: stack is not passive")
    return EXIT_OK


def _verify_stack(cfg, rng, depth, max_absorption=1.0):
    return random_stack(
        rng,
        cfg.grid_side,
        depth,
        wavelength=cfg.wavelength,
        pixel_pitch=cfg.pixel_pitch,
        max_absorption=max_absorption,
        evanescent_mode=cfg.evanescent_mode,
        pad_factor=cfg.pad_factor,
    )


def _inject_gain(stack, gain):
    n = stack.grid_side
    bad = DiffractivePanel.unchecked(np.full((n, n), -gain), np.zeros((n, n)))
    if stack.depth == 0:
        return OpticalStack(n, [bad], stack.propagations + stack.propagations)
    return stack.with_panels((bad,) + stack.panels[1:])


def cmd_verify(cfg, args):
    v = cfg.verify
    n = cfg.grid_side
    if n * n > cfg.assembly_cap:
        raise DimensionCap(f"N^2 = {n * n} exceeds assembly cap {cfg.assembly_cap}")
    out_dir = _out_dir(cfg)
    threads = args.threads
    depths = v.depths

    def collapse(t):
        rng = substream(cfg.seed, "verify", 0, t)
        depth = depths[t % len(depths)]
        stack = _verify_stack(cfg, rng, depth)
        M = assemble_system_matrix(stack, cap=cfg.assembly_cap)
        X = _random_fields(rng, v.inputs_per_stack, n)
        seq = _forward_array(stack, X).reshape(len(X), -1)
        via_m = X.reshape(len(X), -1) @ M.entries.T
        err = float(np.max(np.linalg.norm(via_m - seq, axis=1) / np.linalg.norm(X.reshape(len(X), -1), axis=1)))
        return (t, depth, err, err <= v.collapse_tol)

    def contraction(t):
        rng = substream(cfg.seed, "verify", 1, t)
        depth = depths[t % len(depths)]
        if v.inject_gain is None:
            stack = _verify_stack(cfg, rng, depth)
        else:
            # lossless elsewhere, so the injected gain shows up undiluted in sv_max
            stack = _inject_gain(_verify_stack(cfg, rng, depth, max_absorption=0.0), v.inject_gain)
        rep = is_contraction(assemble_system_matrix(stack, cap=cfg.assembly_cap), v.contraction_tol)
        return ("random", t, stack.depth, rep.sv_max, rep.sv_min, rep.near_unity, rep.is_contraction)

    def bound(t):
        rng = substream(cfg.seed, "verify", 2, t)
        depth = depths[t % len(depths)]
        stack = _verify_stack(cfg, rng, depth)
        unit = t % 2 == 0
        X = _random_fields(rng, 2, n, unit=unit)
        if not unit:
            X *= rng.uniform(0.1, 10.0, (2, 1, 1))
        rep = bound_chain(stack, AmplitudeField(X[0]), AmplitudeField(X[1]))
        rel = rep.relative_slacks
        ok = rep.holds(v.slack_rtol)
        norm_err = None
        if unit:
            norm_err = abs(rep.triangle_rhs - rep.normalized_bound)
            ok = ok and norm_err <= 1e-12
        return (t, depth, unit, rep.tvd, rep.cauchy_schwarz_rhs, rep.linear_rhs,
                rep.contraction_rhs, rep.triangle_rhs, rel[0], rel[1], rel[2], norm_err, ok)

    col_rows = _map(collapse, range(v.collapse_trials), threads)
    con_rows = _map(contraction, range(v.contraction_trials), threads)
    # absorbing control: one panel of a = ln 10 everywhere
    ctrl_panel = DiffractivePanel(np.full((n, n), math.log(10.0)), np.zeros((n, n)))
    ctrl = OpticalStack(n, [ctrl_panel], _specs(cfg, [30.0, 30.0]))
    rep = is_contraction(assemble_system_matrix(ctrl, cap=cfg.assembly_cap), v.contraction_tol)
    con_rows.append(("absorbing_control", 0, 1, rep.sv_max, rep.sv_min, rep.near_unity,
                     rep.sv_max <= 0.1 + v.contraction_tol))
    bnd_rows = _map(bound, range(v.bound_trials), threads)

    fmt = args.format
    write_table(out_dir, "verify_collapse", ["trial", "depth", "max_rel_err", "pass"], col_rows, fmt)
    write_table(out_dir, "verify_contraction",
                ["kind", "trial", "depth", "sv_max", "sv_min", "near_unity", "pass"], con_rows, fmt)
    write_table(out_dir, "verify_bound",
                ["trial", "depth", "unit_inputs", "tvd", "cauchy_schwarz_rhs", "linear_rhs",
                 "contraction_rhs", "triangle_rhs", "rel_slack_cs", "rel_slack_contraction",
                 "rel_slack_triangle", "normalized_bound_err", "pass"], bnd_rows, fmt)

    failures = []
    if not all(r[-1] for r in col_rows):
        failures.append("layer_collapse")
    if not all(r[-1] for r in con_rows):
        failures.append("contraction")
    if not all(r[-1] for r in bnd_rows):
        failures.append("bound_chain")
    summary = {
        "command": "verify",
        "grid_side": n,
        "seed": cfg.seed,
        "collapse": {"trials": len(col_rows), "max_rel_err": max(r[2] for r in col_rows),
                     "failures": sum(not r[-1] for r in col_rows)},
        "contraction": {"trials": len(con_rows), "max_sv": max(r[3] for r in con_rows[:-1]),
                        "control_sv_max": con_rows[-1][3],
                        "failures": sum(not r[-1] for r in con_rows)},
        "bound_chain": {"trials": len(bnd_rows),
                        "min_rel_slack": {name: min(r[8 + i] for r in bnd_rows)
                                          for i, name in enumerate(("cauchy_schwarz", "contraction", "triangle"))},
                        "failures": sum(not r[-1] for r in bnd_rows)},
        "failed_invariants": failures,
        "passed": not failures,
    }
    write_summary(out_dir, "verify", summary)
    for name in ("layer_collapse", "contraction", "bound_chain"):
        print(f"{name}: {'FAIL' if name in failures else 'pass'}")
    if failures:
        raise InvariantFailure("failed invariants: " + ", ".join(failures))
    return EXIT_OK


def _train_config(cfg):
    t = cfg.train
    return TrainConfig(
        learning_rate=t.learning_rate,
        iterations=t.iterations,
        optimize_absorption=t.optimize_absorption,
        seed=cfg.seed,
        loss=t.loss,
        temperature=t.temperature,
        margin=t.margin,
    )


def cmd_train(cfg, args):
    regions = build_regions(cfg)
    train, _ = load_data(cfg)
    _stack_patterns(train, regions.count)
    stack = build_stack(cfg, args.stack)
    out_dir = _out_dir(cfg)
    trained, losses = train_phase_masks(stack, regions, train, _train_config(cfg))
    save_stack(trained, out_dir / "stack.json")
    write_table(out_dir, "loss", ["iteration", "loss"], list(enumerate(losses.tolist())), args.format)
    X, y = _stack_patterns(train)
    acc = float(np.mean(predict_batch(trained, regions, X)[0] == y))
    summary = {
        "command": "train",
        "iterations": len(losses),
        "initial_loss": float(losses[0]) if len(losses) else None,
        "final_loss": float(losses[-1]) if len(losses) else None,
        "train_accuracy": acc,
    }
    write_summary(out_dir, "train", summary)
    print(f"trained {len(losses)} iterations, train accuracy {acc:.4f}")
    return EXIT_OK


def cmd_classify(cfg, args):
    kind = args.classifier or cfg.baseline.kind
    regions = build_regions(cfg)
    train, test = load_data(cfg)
    n_classes = regions.count if kind == "diffractive" else int(max(p.label for p in train)) + 1
    _stack_patterns(train, n_classes)
    out_dir = _out_dir(cfg)
    Xt, yt = _stack_patterns(test)
    b = cfg.baseline
    if kind == "diffractive":
        stack = build_stack(cfg, args.stack)
        if not (args.stack or cfg.layers.stack):
            stack, _ = train_phase_masks(stack, regions, train, _train_config(cfg))
        repeats = b.noise_repeats if cfg.noise_sigma > 0 else 1
        seed = int(substream(cfg.seed, "noise").integers(2 ** 31))
        preds = predict_batch(stack, regions, Xt, cfg.noise_sigma, seed, repeats)
        truth = np.broadcast_to(yt, preds.shape)
    else:
        if kind == "euclidean":
            clf = euclidean_classifier(train, n_classes)
            preds = np.array([[clf.classify(p.field) for p in test]])
        else:
            mcfg = MLPConfig(activation="linear" if kind == "linear" else b.activation,
                             learning_rate=b.learning_rate, iterations=b.iterations,
                             weight_decay=b.weight_decay, seed=cfg.seed)
            clf = (nonlinear_baseline(train, b.arch, mcfg, n_classes) if kind == "nonlinear"
                   else linear_readout(train, mcfg, n_classes))
            preds = clf.predict(Xt)[None, :]
        truth = yt[None, :]
    k = max(n_classes, int(preds.max()) + 1)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (truth.ravel(), preds.ravel()), 1)
    acc = float(np.trace(confusion) / confusion.sum())
    write_table(out_dir, "confusion", ["true"] + [f"pred_{j}" for j in range(k)],
                [[i] + confusion[i].tolist() for i in range(k)], args.format)
    write_summary(out_dir, "classify", {"command": "classify", "classifier": kind,
                                         "accuracy": acc, "test_samples": int(confusion.sum()),
                                         "noise_sigma": cfg.noise_sigma})
    print(f"{kind} accuracy {acc:.4f}")
    return EXIT_OK


def cmd_pdp(cfg, args):
    regions = build_regions(cfg)
    stack = build_stack(cfg, args.stack)
    n = cfg.grid_side
    if args.input:
        base = normalize(read_field(args.input, cfg.pixel_pitch))
        if base.grid_side != n:
            raise FormatError(f"input grid {base.grid_side} != config grid_side {n}", args.input)
    else:
        train, _ = load_data(cfg)
        base = train[0].field
    out_dir = _out_dir(cfg)
    rng = substream(cfg.seed, "pdp")
    d = _random_fields(rng, 1, n)[0]
    d = d - np.vdot(base.data, d) * base.data
    direction = AmplitudeField(d / np.linalg.norm(d))
    rows = pdp_scan(stack, base, direction, cfg.pdp.epsilons, regions, cfg.noise_sigma,
                    cfg.pdp.trials, cfg.seed, cfg.pdp.threshold, args.threads)
    header = ["epsilon", "input_l2_distance", "tvd", "bound", "detect_fraction", "detectable"]
    table = [[r.epsilon, r.input_l2_distance, r.tvd, r.bound, r.detect_fraction, r.detectable] for r in rows]
    write_table(out_dir, "pdp", header, table, args.format)
    svg = line_chart(
        [r.epsilon for r in rows],
        {"TVD at detector": [r.tvd for r in rows], "bound 2||psi0-phi0||": [r.bound for r in rows]},
        title="Detector distance vs input perturbation",
        xlabel="epsilon",
        ylabel="distance",
    )
    (out_dir / "pdp.svg").write_text(svg)
    violations = sum(r.tvd > r.bound * (1 + 1e-12) for r in rows)
    write_summary(out_dir, "pdp", {"command": "pdp", "rows": len(rows), "noise_sigma": cfg.noise_sigma,
                                    "bound_violations": violations,
                                    "detectable_epsilons": [r.epsilon for r in rows if r.detectable]})
    print(f"pdp scan: {len(rows)} rows, {violations} bound violations")
    if violations:
        raise InvariantFailure("TVD exceeded its bound")
    return EXIT_OK


def cmd_report(cfg, args):
    out_dir = Path(cfg.output_dir)
    if not out_dir.is_dir():
        raise FileNotFoundError(f"no output directory {out_dir}")
    merged = {}
    for name in ("simulate", "verify", "train", "classify", "pdp"):
        p = out_dir / f"{name}.json"
        if p.exists():
            doc = json.loads(p.read_text())
            if isinstance(doc, dict):
                merged[name] = doc
    if args.format == "json":
        print(json.dumps(merged, indent=2, sort_keys=True))
    else:
        lines = [f"report for {out_dir}"]
        for name, doc in merged.items():
            lines.append(f"[{name}]")
            for key in sorted(doc):
                if key != "command":
                    lines.append(f"  {key}: {doc[key]}")
        print("\n".join(lines))
    (out_dir / "report.json").write_text(json.dumps(merged, indent=2, sort_keys=True) + "\n")
    failed = merged.get("verify", {}).get("passed") is False
    return EXIT_INVARIANT if failed else EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "train": cmd_train,
    "classify": cmd_classify,
    "pdp": cmd_pdp,
    "report": cmd_report,
}


def _out_dir(cfg):
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    common.add_argument("--stack", help="stack definition file (overrides config)")

    parser = argparse.ArgumentParser(prog="cgvh", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="propagate one field through the stack")
    p.add_argument("--input", help="input AFLD field")
    sub.add_parser("verify", parents=[common], help="collapse, contraction and bound-chain suites")
    sub.add_parser("train", parents=[common], help="train phase masks")
    p = sub.add_parser("classify", parents=[common], help="evaluate a classifier on the test split")
    p.add_argument("--classifier", choices=("diffractive", "euclidean", "nonlinear", "linear"))
    p = sub.add_parser("pdp", parents=[common], help="perturbation scan of detector distance")
    p.add_argument("--input", help="base AFLD field (default: first training pattern)")
    sub.add_parser("report", parents=[common], help="summarise JSON outputs in the output directory")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            cfg.output_dir = args.out
        elif args.config:
            cfg.output_dir = str(cfg.resolve(cfg.output_dir))
        if args.threads < 1:
            raise FormatError("--threads must be >= 1")
        check(cfg)
        return COMMANDS[args.command](cfg, args)
    except InvariantFailure as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CGVHError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
