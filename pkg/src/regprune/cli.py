"""Command-line interface: ``regprune <command> ...``.

Exit status is 0 on success, 2 on usage errors and 1 on data errors.
"""

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .attn import ValidationError
from .bundle import BundleError, iter_bundle_dirs, read_bundle, write_bundle
from .calibrate import DEFAULT_MAX_ITERS, BudgetTarget, calibrate_lambda, lambda_sweep
from .costmodel import ModelShape, cost_report, fit_text_length, kv_bytes, MIB
from .register import RegisterNeuronSet, identify_register_neurons
from .stage1 import Stage1Config
from .stage2 import DEFAULT_LAYER, Stage2Config, run_pipeline
from .synth import CorpusConfig, SynthConfig, generate_sample, masking_stability_experiment, sink_absorption_report
from .tensorio import TensorFormatError

log = logging.getLogger("regprune")

DATA_ERRORS = (ValidationError, BundleError, TensorFormatError, OSError, json.JSONDecodeError, RuntimeError)


class UsageError(Exception):
    pass


def _csv_floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _points(text):
    out = []
    for part in text.split(","):
        try:
            k, mem = part.split(":")
            out.append((float(k), float(mem)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected K:MB pairs, got {part!r}") from None
    if len(out) != 2:
        raise argparse.ArgumentTypeError("expected exactly two K:MB points")
    return out


def _write_text(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _dump(obj):
    return json.dumps(obj, sort_keys=True) + "\n"


def _resolve_neurons(args, bundles):
    choice = args.neurons
    if choice == "auto":
        if all(b.encoder is not None for b in bundles):
            n_channels = bundles[0].activations.shape[1]
            neurons = identify_register_neurons([b.activations for b in bundles], min(args.k_reg, n_channels))
        else:
            neurons = RegisterNeuronSet.from_channels(bundles[0].register_channels)
    elif choice == "stored":
        neurons = RegisterNeuronSet.from_channels(bundles[0].register_channels)
    elif choice == "none":
        neurons = RegisterNeuronSet.empty()
    else:
        try:
            neurons = RegisterNeuronSet.from_channels(_csv_ints(choice))
        except argparse.ArgumentTypeError as exc:
            raise UsageError(str(exc)) from None
    log.info("register neurons: %s", list(neurons.channel_ids))
    return neurons


def _load(path):
    return [read_bundle(d) for d in iter_bundle_dirs(path)]


def _stage_cfgs(args):
    cfg1 = Stage1Config(args.lambda1, args.mode)
    cfg2 = Stage2Config(getattr(args, "lambda2", 0.0), args.layer, args.text_rows)
    return cfg1, cfg2


def cmd_synth(args):
    cfg_path = Path(args.config)
    raw = json.loads(cfg_path.read_text())
    out = Path(args.out)
    if "sink_channels" in raw or "template" in raw:
        raw = dict(raw, count=args.count)
        if args.seed is not None:
            raw["seed"] = args.seed
        corpus = CorpusConfig.from_dict(raw)
        configs = [corpus.sample_config(i) for i in range(args.count)]
    else:
        base = SynthConfig.from_dict(raw)
        seed = base.seed if args.seed is None else args.seed
        configs = [
            SynthConfig.from_dict({**base.to_dict(), "seed": seed + i, "sample_id": f"sample_{i:05d}"})
            for i in range(args.count)
        ]
    for cfg in configs:
        write_bundle(generate_sample(cfg), out / cfg.sample_id)
    log.info("wrote %d bundle(s) to %s", len(configs), out)
    return 0


def cmd_prune(args):
    bundles = _load(args.bundle)
    neurons = _resolve_neurons(args, bundles)
    cfg1, cfg2 = _stage_cfgs(args)
    lines = [run_pipeline(b, cfg1, cfg2, neurons).to_json() + "\n" for b in bundles]
    _write_text("".join(lines), args.report)
    return 0


def cmd_calibrate(args):
    bundles = _load(args.corpus)
    neurons = _resolve_neurons(args, bundles)
    cfg1, cfg2 = _stage_cfgs(args)
    target = BudgetTarget(args.target_k, args.tol)
    result = calibrate_lambda(
        bundles, target, cfg1, args.stage, (args.lo, args.hi), args.max_iters, neurons=neurons, cfg2=cfg2
    )
    _write_text(_dump(result.to_dict()), args.out)
    return 0


def cmd_sweep(args):
    bundles = _load(args.corpus)
    neurons = _resolve_neurons(args, bundles)
    cfg1, cfg2 = _stage_cfgs(args)
    rows = lambda_sweep(bundles, args.stage, args.lambdas, cfg1, neurons=neurons, cfg2=cfg2)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["lambda", "k_bar"])
    for lam, k in rows:
        writer.writerow([repr(lam), repr(k)])
    _write_text(buf.getvalue(), args.out)
    return 0


def cmd_analyze(args):
    bundles = _load(args.bundle)
    neurons = _resolve_neurons(args, bundles)
    lines = []
    for b in bundles:
        before, after = sink_absorption_report(b, neurons, args.mode)
        cos_top, cos_bottom = masking_stability_experiment(b, neurons, args.mask_fraction)
        lines.append(
            _dump(
                {
                    "sample_id": b.sample_id,
                    "register_channels": list(neurons.channel_ids),
                    "n_eff_before": before,
                    "n_eff_after": after,
                    "mask_fraction": args.mask_fraction,
                    "cos_top": cos_top,
                    "cos_bottom": cos_bottom,
                }
            )
        )
    _write_text("".join(lines), args.out)
    return 0


def cmd_cost(args):
    if args.action == "fit":
        if args.points is None:
            raise UsageError("cost fit requires --points K1:MB1,K2:MB2")
        (a, b) = args.points
        text_len, per_token = fit_text_length(a, b)
        out = {
            "text_len_M": text_len,
            "per_token_mib": per_token,
            "per_token_bytes": per_token * MIB,
            "points": [list(a), list(b)],
            "residuals": [(per_token * (k + text_len) - mem) / mem for k, mem in (a, b)],
        }
        _write_text(_dump(out), args.out)
        return 0
    missing = [f for f in ("layers", "heads", "head_dim") if getattr(args, f) is None]
    if missing:
        raise UsageError("cost requires --layers, --heads and --head-dim")
    shape = ModelShape(args.layers, args.heads, args.head_dim, args.bytes_per_elem)
    lines = [_dump({"seq_len": s, "kv_bytes": kv_bytes(shape, s)}) for s in (args.seq or [])]
    if args.n_visual is not None:
        if args.k_bar is None or args.text_len is None:
            raise UsageError("--n-visual needs --k-bar and --text-len")
        lines.append(_dump(cost_report(shape, args.n_visual, args.k_bar, args.text_len).to_dict()))
    if not lines:
        raise UsageError("nothing to report: pass --seq and/or --n-visual")
    _write_text("".join(lines), args.out)
    return 0


def _add_pipeline_flags(p, with_lambda2=True):
    p.add_argument("--lambda1", type=float, default=0.01)
    if with_lambda2:
        p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--mode", choices=("cls", "mutual"), default="cls")
    p.add_argument("--layer", type=int, default=DEFAULT_LAYER)
    p.add_argument("--text-rows", choices=("all", "query"), default="all")
    _add_neuron_flags(p)


def _add_neuron_flags(p):
    p.add_argument(
        "--neurons",
        default="auto",
        help="register channels: 'auto' (identify), 'stored', 'none', or comma-separated indices",
    )
    p.add_argument("--k-reg", type=int, default=10, help="channels to identify in auto mode")


def build_parser():
    parser = argparse.ArgumentParser(prog="regprune", description="Register-anchored visual token pruning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic bundles")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prune", help="run two-stage pruning, write JSON-lines reports")
    p.add_argument("--bundle", required=True)
    p.add_argument("--report", default="-")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("calibrate", help="match an average token budget")
    p.add_argument("--corpus", required=True)
    p.add_argument("--target-k", type=float, required=True)
    p.add_argument("--stage", choices=("one", "two"), default="two")
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    p.add_argument("--out", default="-")
    _add_pipeline_flags(p, with_lambda2=False)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="average retained count over a lambda grid (CSV)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--stage", choices=("one", "two"), default="two")
    p.add_argument("--lambdas", type=_csv_floats, required=True)
    p.add_argument("--out", default="-")
    _add_pipeline_flags(p, with_lambda2=False)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="sink absorption and masking stability")
    p.add_argument("--bundle", required=True)
    p.add_argument("--mask-fraction", type=float, default=0.5)
    p.add_argument("--mode", choices=("cls", "mutual"), default="cls")
    p.add_argument("--out", default="-")
    _add_neuron_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cost", help="KV-cache cost model; 'cost fit' inverts two memory points")
    p.add_argument("action", nargs="?", choices=("fit",))
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--head-dim", type=int)
    p.add_argument("--bytes-per-elem", type=int, default=2)
    p.add_argument("--seq", type=_csv_ints)
    p.add_argument("--n-visual", type=float)
    p.add_argument("--k-bar", type=float)
    p.add_argument("--text-len", type=float)
    p.add_argument("--points", type=_points)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_cost)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"regprune: error: {exc}", file=sys.stderr)
        return 2
    except DATA_ERRORS as exc:
        print(f"regprune: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
