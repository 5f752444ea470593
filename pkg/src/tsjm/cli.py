"""tsjm command line: gen, train, eval, match, gradcheck.

stdout carries only JSON/CSV payloads; diagnostics go to stderr.
Exit codes: 0 ok, 1 check failure, 2 usage, 3 I/O, 4 domain error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bgm, gradcheck, otm
from .episodic import EpisodeError, EvalConfig, FusionWeights, evaluate, nway_sweep
from .featurestore import FsetError, Modality, SynthConfig, gen_synthetic, load_store, save_store
from .mcl import load_adapters, save_adapters
from .presets import PRESETS, benchmark_store
from .simkernels import frame_distance_matrix, frame_similarity_matrix
from .trainer import TrainConfig, TrainingDiverged, train

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO, EXIT_DOMAIN = 0, 1, 2, 3, 4

log = logging.getLogger("tsjm")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _floats(text, n, flag):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{flag} expects {n} comma-separated numbers") from None
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"{flag} expects {n} comma-separated numbers")
    return tuple(vals)


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("--seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsjm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic FSET feature store")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--classes", type=int, default=SynthConfig.num_classes)
    g.add_argument("--per-class", type=int, default=SynthConfig.videos_per_class)
    g.add_argument("--frames", type=int, default=SynthConfig.frames)
    g.add_argument("--dim", type=int, default=SynthConfig.dim)
    g.add_argument("--subactions", type=int, default=SynthConfig.num_subactions)
    g.add_argument("--warp", type=lambda s: _floats(s, 2, "--warp"), default=SynthConfig.speed_warp_range)
    g.add_argument("--permute", action="store_true")
    g.add_argument("--noise", type=float, default=SynthConfig.noise_sigma)
    g.add_argument("--anchor-pool", type=int, default=0)
    g.add_argument("--seed", type=_u64, default=0)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train the modality adapters; prints the loss trajectory CSV")
    t.add_argument("--features", required=True)
    t.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    t.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    t.add_argument("--tau", type=float, default=TrainConfig.tau)
    t.add_argument("--lambda", dest="lambdas", type=lambda s: _floats(s, 3, "--lambda"), default=TrainConfig.lambdas)
    t.add_argument("--bottleneck", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    t.add_argument("--n-way", type=int, default=TrainConfig.n_way)
    t.add_argument("--seed", type=_u64, default=0)
    t.add_argument("--out-adapters")

    e = sub.add_parser("eval", help="episodic N-way K-shot evaluation; prints the report JSON")
    e.add_argument("--features", help="FSET store (default: the built-in benchmark store)")
    e.add_argument("--adapters", help="ADPT checkpoint applied before matching")
    e.add_argument("--n-way", type=int, default=5)
    e.add_argument("--k-shot", type=int, default=1)
    e.add_argument("--queries-per-class", type=int, default=1)
    e.add_argument("--episodes", type=int, default=10000)
    e.add_argument("--weights", type=lambda s: _floats(s, 4, "--weights"), default=(0.25, 0.25, 0.25, 0.25))
    e.add_argument("--report", choices=("json", "csv"), default="json")
    e.add_argument("--report-out", default="episodes.csv", help="per-episode CSV path for --report csv")
    e.add_argument("--plot-data", help="write an N-way (5..10) sweep CSV here")
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--seed", type=_u64, default=0)

    m = sub.add_parser("match", help="DTW / KM matching between two videos")
    m.add_argument("--features", required=True)
    m.add_argument("--a", type=int, required=True)
    m.add_argument("--b", type=int, required=True)
    m.add_argument("--method", choices=("dtw", "km", "joint"), default="joint")
    m.add_argument("--modality", choices=("rgb", "flow"), default="rgb")
    m.add_argument("--dump", help="CSV dump of the DTW path / KM matching")
    m.add_argument("--seed", type=_u64, default=0)

    c = sub.add_parser("gradcheck", help="finite-difference checks of all analytic gradients")
    c.add_argument("--eps", type=float, default=gradcheck.DEFAULT_EPS)
    c.add_argument("--tol", type=float, default=gradcheck.DEFAULT_TOL)
    c.add_argument("--instances", type=int, default=50)
    c.add_argument("--seed", type=_u64, default=0)
    return p


def _load(path):
    try:
        return load_store(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    except FsetError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}") from exc


def _emit(payload):
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")


def cmd_gen(args, parser):
    for flag, value, low in (
        ("--classes", args.classes, 1),
        ("--per-class", args.per_class, 1),
        ("--frames", args.frames, 1),
        ("--dim", args.dim, 1),
        ("--subactions", args.subactions, 1),
    ):
        if value < low:
            parser.error(f"{flag} must be >= {low}, got {value}")
    if args.preset:
        store = PRESETS[args.preset](args.seed)
    else:
        try:
            cfg = SynthConfig(
                num_classes=args.classes,
                videos_per_class=args.per_class,
                frames=args.frames,
                dim=args.dim,
                num_subactions=args.subactions,
                speed_warp_range=args.warp,
                permute_subactions=args.permute,
                noise_sigma=args.noise,
                seed=args.seed,
                anchor_pool=args.anchor_pool,
            )
        except ValueError as exc:
            parser.error(str(exc))
        store = gen_synthetic(cfg)
    try:
        save_store(store, args.out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}") from exc
    _emit({"out": args.out, "records": len(store), "classes": store.num_classes, "dim": store.dim})
    return EXIT_OK


def cmd_train(args, parser):
    store = _load(args.features)
    try:
        cfg = TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            tau=args.tau,
            lambdas=args.lambdas,
            bottleneck=args.bottleneck,
            n_way=args.n_way,
            seed=args.seed,
        )
    except ValueError as exc:
        parser.error(str(exc))
    try:
        result = train(store, cfg)
    except (EpisodeError, TrainingDiverged, ValueError) as exc:
        raise CliError(EXIT_DOMAIN, str(exc)) from exc
    if args.out_adapters:
        try:
            save_adapters(result.adapters, args.out_adapters)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {args.out_adapters}: {exc}") from exc
    sys.stdout.write(result.trajectory_csv())
    return EXIT_OK


def _sweep_csv(reports) -> str:
    rows = ["n_way,mean_accuracy,ci95,ota_rgb,ota_flow,km_rgb,km_flow"]
    for r in reports:
        b = r.branch_accuracies
        rows.append(
            f"{r.config['n_way']},{r.mean_accuracy!r},{r.ci95_halfwidth!r},"
            f"{b['ota_rgb']!r},{b['ota_flow']!r},{b['km_rgb']!r},{b['km_flow']!r}"
        )
    return "\n".join(rows) + "\n"


def cmd_eval(args, parser):
    if args.features:
        store = _load(args.features)
    else:
        log.info("no --features given, using the built-in benchmark store")
        store = benchmark_store(0)
    adapters = None
    if args.adapters:
        try:
            adapters = load_adapters(args.adapters)
        except (OSError, FsetError) as exc:
            raise CliError(EXIT_IO, f"cannot read {args.adapters}: {exc}") from exc
    try:
        cfg = EvalConfig(
            n_way=args.n_way,
            k_shot=args.k_shot,
            queries_per_class=args.queries_per_class,
            episodes=args.episodes,
            weights=FusionWeights(*args.weights),
            seed=args.seed,
            threads=args.threads,
        )
    except ValueError as exc:
        parser.error(str(exc))
    try:
        report = evaluate(store, cfg, adapters)
        sweep = nway_sweep(store, cfg, range(5, 11), adapters) if args.plot_data else None
    except EpisodeError as exc:
        raise CliError(EXIT_DOMAIN, str(exc)) from exc
    except ValueError as exc:
        raise CliError(EXIT_DOMAIN, str(exc)) from exc
    try:
        if args.report == "csv":
            Path(args.report_out).write_text(report.per_episode_csv())
        if sweep is not None:
            Path(args.plot_data).write_text(_sweep_csv(sweep))
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    _emit(report.to_json())
    return EXIT_OK


def _with_suffix(path: str, tag: str) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}.{tag}{p.suffix}"))


def cmd_match(args, parser):
    store = _load(args.features)
    try:
        a, b = store.get(args.a), store.get(args.b)
    except KeyError as exc:
        raise CliError(EXIT_DOMAIN, str(exc.args[0])) from exc
    out = {"a": args.a, "b": args.b, "method": args.method}
    dumps = []
    try:
        modalities = (Modality.RGB, Modality.FLOW) if args.method == "joint" else (Modality(args.modality),)
        for mod in modalities:
            S, Q = a.stream(mod), b.stream(mod)
            if args.method in ("dtw", "joint"):
                D = frame_distance_matrix(S, Q)
                path = otm.dtw(D)
                out[f"dtw_{mod.value}"] = path.total_cost
                if mod.value == args.modality:
                    dumps.append(("dtw", path.to_csv(D)))
            if args.method in ("km", "joint"):
                W = frame_similarity_matrix(S, Q)
                if W.shape[0] != W.shape[1]:
                    raise ValueError(f"perfect matching needs equal lengths, got {W.shape}")
                matching = bgm.km_match(W)
                out[f"km_{mod.value}"] = matching.total_weight
                if mod.value == args.modality:
                    dumps.append(("km", matching.to_csv(W)))
    except ValueError as exc:
        raise CliError(EXIT_DOMAIN, str(exc)) from exc
    if args.dump:
        try:
            for i, (tag, text) in enumerate(dumps):
                Path(args.dump if i == 0 else _with_suffix(args.dump, tag)).write_text(text)
        except OSError as exc:
            raise CliError(EXIT_IO, str(exc)) from exc
    _emit(out)
    return EXIT_OK


def cmd_gradcheck(args, parser):
    if not args.eps > 0:
        parser.error("--eps must be > 0")
    if args.instances < 1:
        parser.error("--instances must be >= 1")
    errors = gradcheck.run_suites(args.eps, args.instances, args.seed)
    failed = [name for name, err in errors.items() if not err < args.tol]
    for name in failed:
        print(f"gradcheck FAILED: {name} max relative error {errors[name]:.3e} >= tol {args.tol:g}", file=sys.stderr)
    _emit({"eps": args.eps, "tol": args.tol, "max_relative_error": errors, "failed": failed})
    return EXIT_CHECK if failed else EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "match": cmd_match, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return COMMANDS[args.command](args, sub)
    except CliError as exc:
        print(f"tsjm {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
