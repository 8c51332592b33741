"""Command-line interface.

Subcommands: eval, forward, train-toy, gradcheck, inspect-gates.
Exit codes: 0 success, 1 usage errors (and failed gradchecks), 2 data or
parse errors. ACF_THREADS caps eval worker processes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from salfuse import data as datamod
from salfuse import pnm
from salfuse.errors import DatasetError, GeometryError, ParseError, ShapeError
from salfuse.fusion import (GATE_NAMES, GateMode, build_model, gates_csv_row,
                            resinres_forward)
from salfuse.gradcheck import elementwise_check, toy_network_check
from salfuse.metrics import ImageMetrics, aggregate, evaluate_pair
from salfuse.train import train_toy
from salfuse.weightsfile import load_weights

JSON_DECIMALS = 6


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the CLI contract reserves 2 for
    # data errors, so usage failures are remapped to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="salfuse",
                description="Gate-regulated RGB-D saliency: inference, toy "
                            "training and metric evaluation")
    sub = p.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("eval", parents=[], help="score predictions against GT")
    ev.add_argument("--pred", required=True, help="directory of .pgm predictions")
    ev.add_argument("--gt", required=True, help="directory of .pgm ground truths")
    ev.add_argument("--out", help="write the metric report JSON here "
                                  "(default: stdout)")
    ev.add_argument("--curves", help="write the 256-row PR curve CSV here")
    ev.add_argument("--jobs", type=int, default=1,
                    help="worker processes (capped by ACF_THREADS)")
    ev.set_defaults(func=_cmd_eval)

    fw = sub.add_parser("forward", help="run one RGB-D pair through the network")
    fw.add_argument("--rgb", required=True)
    fw.add_argument("--depth", required=True)
    fw.add_argument("--weights", required=True)
    fw.add_argument("--out", required=True, help="fused saliency map (.pgm)")
    fw.add_argument("--gates", help="force the six gates, comma-separated "
                                    f"({','.join(GATE_NAMES)}), each in [0,1]")
    fw.set_defaults(func=_cmd_forward)

    tr = sub.add_parser("train-toy", help="overfit the toy network on a tiny dataset")
    tr.add_argument("--data", required=True, help="root with RGB/, depth/, GT/")
    tr.add_argument("--epochs", type=int, required=True)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True, help="weights file to write")
    tr.set_defaults(func=_cmd_train_toy)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--coords", type=int, default=200,
                    help="coordinates to sample on the full network")
    gc.add_argument("--tol", type=float, default=1e-3)
    gc.set_defaults(func=_cmd_gradcheck)

    ig = sub.add_parser("inspect-gates", help="per-image gate values as CSV")
    ig.add_argument("--data", required=True, help="root with RGB/ and depth/")
    ig.add_argument("--weights", required=True)
    ig.add_argument("--out", required=True, help="CSV file to write")
    ig.add_argument("--tam", action="store_true",
                    help="also record the 15 attention branch gates")
    ig.set_defaults(func=_cmd_inspect_gates)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ParseError, DatasetError, GeometryError, ShapeError, OSError) as e:
        print(f"salfuse: error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"salfuse: error: {e}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# eval


def _eval_one(paths: tuple[str, Path, Path]) -> ImageMetrics:
    _, pred_path, gt_path = paths
    pred = pnm.load_gray(pred_path)
    gt = pnm.load_gray(gt_path)
    pred = datamod.resample_to(pred, gt.shape)
    return evaluate_pair(pred, gt)


def _worker_cap() -> int | None:
    cap = os.environ.get("ACF_THREADS")
    if cap is None:
        return None
    try:
        return max(1, int(cap))
    except ValueError:
        raise ValueError(f"ACF_THREADS must be an integer, got {cap!r}")


def format_report_json(summary: dict) -> str:
    rounded = {k: (round(v, JSON_DECIMALS) if isinstance(v, float) else v)
               for k, v in summary.items()}
    return json.dumps(rounded, indent=2) + "\n"


def _cmd_eval(args) -> int:
    pairs = datamod.discover_eval_pairs(args.pred, args.gt)
    jobs = args.jobs
    cap = _worker_cap()
    if cap is not None:
        jobs = min(jobs, cap)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_image = list(pool.map(_eval_one, pairs))
    else:
        per_image = [_eval_one(p) for p in pairs]
    report = aggregate(per_image)
    text = format_report_json(report.summary())
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.curves:
        lines = ["threshold,precision,recall"]
        for t in range(256):
            lines.append(f"{t / 255.0:.6f},{report.precision[t]:.6f},"
                         f"{report.recall[t]:.6f}")
        Path(args.curves).write_text("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# forward / inspect-gates


def _load_model(weights_path) -> "ParamStore":
    store = build_model(seed=0)
    store.load_arrays(load_weights(weights_path))
    return store


def _parse_forced_gates(text: str) -> GateMode:
    parts = text.split(",")
    try:
        values = [float(v) for v in parts]
    except ValueError:
        raise ValueError(f"--gates must be six comma-separated numbers, "
                         f"got {text!r}")
    return GateMode.forced(values)


def _cmd_forward(args) -> int:
    store = _load_model(args.weights)
    rgb, depth = datamod.load_input_tensors(args.rgb, args.depth)
    mode = _parse_forced_gates(args.gates) if args.gates else GateMode.learned()
    out = resinres_forward(rgb, depth, store, training=False, gate_mode=mode)
    pnm.save_pgm(args.out, out.sal_f.data[0, 0])
    print(",".join(GATE_NAMES))
    print(",".join(f"{v:.6f}" for v in out.gates.as_array()[0]))
    return 0


def _cmd_inspect_gates(args) -> int:
    store = _load_model(args.weights)
    pairs = datamod.discover_rgbd_pairs(args.data)
    header = ["filename"] + list(GATE_NAMES)
    if args.tam:
        header += [f"tam_{dec}_g{i}" for dec in ("r", "d", "f")
                   for i in range(1, 6)]
    rows = [",".join(header)]
    for pair in pairs:
        rgb, depth = datamod.load_input_tensors(pair.rgb, pair.depth)
        out = resinres_forward(rgb, depth, store, training=False)
        row = gates_csv_row(pair.stem, out.gates)
        if args.tam:
            tam_vals = [float(g.data[0]) for dec in ("r", "d", "f")
                        for g in out.tam_gates[dec]]
            row += "," + ",".join(f"{v:.6f}" for v in tam_vals)
        rows.append(row)
    Path(args.out).write_text("\n".join(rows) + "\n")
    return 0


# ---------------------------------------------------------------------------
# train-toy / gradcheck


def _cmd_train_toy(args) -> int:
    result = train_toy(args.data, args.epochs, args.seed, args.out,
                       log=lambda msg: print(msg, file=sys.stderr))
    if result.steps:
        print(f"trained {result.steps} steps, final loss "
              f"{result.final_loss:.4f}, weights -> {args.out}")
    else:
        print(f"saved seeded initialization -> {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    elem = elementwise_check(seed=args.seed, tol=1e-5)
    print(elem.describe("elementwise micro-net"))
    full = toy_network_check(seed=args.seed, n_coords=args.coords, tol=args.tol)
    print(full.describe("full toy network"))
    for report in (elem, full):
        for c in report.failures[:10]:
            print(f"  FAIL {c.param}[{c.index}]: analytic {c.analytic:.6e} "
                  f"numeric {c.numeric:.6e} rel {c.rel_err:.3e}")
    return 0 if (elem.passed and full.passed) else 1


if __name__ == "__main__":
    sys.exit(main())
