"""Command-line interface.

Every subcommand accepts ``--config FILE``: a flat ``key=value`` file whose
keys are option names (``tail=250``, ``pca-retention=0.95``). Options given
on the command line win over the file.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numeric or convergence error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import evm, io
from .core import NumericError, OpenSetError, validate_dataset
from .evaluation import (
    DEFAULT_FAR_TARGETS,
    ThresholdPolicy,
    cmc_curve,
    dir_at,
    dir_curve,
    far_at,
    roc_curve,
    threshold_for_far,
)
from .experiment import Context, RunConfig, StageError, fit_lda_subspace, run_experiment, run_grid
from .evm import EvmConfig, Fusion
from .protocol import ProbeSetId
from .scoring import Method, ScoringMethod, score_all
from .subspace import DEFAULT_RETENTION
from .synthetic import SyntheticSpec, generate_synthetic

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("openset")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers separated by commas, got {text!r}")


def read_config_file(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _add_model_options(p, *, method=True, fusion=True):
    if method:
        p.add_argument("--method", choices=[m.value for m in Method], default="cos")
    if fusion:
        p.add_argument("--fusion", choices=[f.value for f in Fusion], default="avg")
    p.add_argument("--alpha", type=float, default=evm.DEFAULT_ALPHA, help="EVM distance multiplier")
    p.add_argument("--tail", type=int, default=evm.DEFAULT_TAIL_SIZE, help="EVM tail size")
    p.add_argument(
        "--query-scaling",
        choices=["scaled", "unscaled"],
        default="scaled",
        help="apply the distance multiplier to probe distances too",
    )
    p.add_argument("--pca-retention", type=float, default=DEFAULT_RETENTION)


def _add_eval_options(p):
    p.add_argument("--rank", type=int, default=1)
    p.add_argument(
        "--far-targets",
        type=_float_list,
        default=",".join(str(t) for t in DEFAULT_FAR_TARGETS),
        help="comma-separated false alarm rates",
    )
    p.add_argument(
        "--threshold-policy", choices=[t.value for t in ThresholdPolicy], default="strict"
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file of option defaults")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="openset", description=__doc__.split("\n")[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", parents=[common], help="check a feature table")
    p.add_argument("features")

    p = sub.add_parser("protocol", parents=[common], help="build the open-set partition")
    p.add_argument("features")
    p.add_argument("--out", help="partition JSON (default: stdout)")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic feature table")
    p.add_argument("--out", required=True)
    p.add_argument("--dimension", type=int, default=64)
    p.add_argument("--known", type=int, default=50)
    p.add_argument("--known-images", type=int, default=6)
    p.add_argument("--known-unknown", type=int, default=50)
    p.add_argument("--known-unknown-images", type=int, default=2)
    p.add_argument("--unknown-unknown", type=int, default=100)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fit-subspace", parents=[common], help="fit PCA+LDA on the training set")
    p.add_argument("features")
    p.add_argument("--out", required=True)
    p.add_argument("--pca-retention", type=float, default=DEFAULT_RETENTION)

    p = sub.add_parser("fit-evm", parents=[common], help="fit EVM gallery models")
    p.add_argument("features")
    p.add_argument("--out", required=True)
    _add_model_options(p, method=False)

    p = sub.add_parser("score", parents=[common], help="score a probe set")
    p.add_argument("features")
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="subspace or EVM model JSON (lda/evm)")
    p.add_argument("--probe-set", choices=[s.value for s in ProbeSetId], default="O3")
    p.add_argument("--method", choices=[m.value for m in Method], default="cos")
    p.add_argument("--fusion", choices=[f.value for f in Fusion], default="avg")

    for name, help_ in [
        ("eval-cmc", "CMC curve on the known probes"),
        ("eval-roc", "verification ROC on the known probes"),
        ("eval-dir", "DIR vs FAR curve on an open probe set"),
    ]:
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--scores", required=True)
        p.add_argument("--partition", required=True)
        p.add_argument("--out", required=True)
        if name == "eval-dir":
            p.add_argument("--probe-set", choices=["O1", "O2", "O3"], default="O3")
            _add_eval_options(p)

    p = sub.add_parser("run", parents=[common], help="run the method x fusion x probe-set grid")
    p.add_argument("features")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--method", choices=["all"] + [m.value for m in Method], default="all")
    p.add_argument("--fusion", choices=["all"] + [f.value for f in Fusion], default="all")
    p.add_argument("--probe-set", choices=["all"] + [s.value for s in ProbeSetId], default="all")
    p.add_argument("--workers", type=int, help="worker threads (default: $OPENSET_WORKERS or 1)")
    _add_model_options(p, method=False, fusion=False)
    _add_eval_options(p)
    return parser


def _run_config(args, **overrides) -> RunConfig:
    return RunConfig(
        alpha=args.alpha,
        tail=args.tail,
        pca_retention=args.pca_retention,
        rank=getattr(args, "rank", 1),
        far_targets=getattr(args, "far_targets", DEFAULT_FAR_TARGETS),
        threshold_policy=getattr(args, "threshold_policy", "strict"),
        scale_query=args.query_scaling == "scaled",
        **overrides,
    )


def cmd_validate(args) -> int:
    try:
        d = io.parse_feature_table(Path(args.features).read_text(encoding="utf-8"), check=False)
    except io.ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_DATA
    problems = validate_dataset(d)
    for msg in problems:
        print(msg)
    if problems:
        print(f"{len(problems)} violation(s)", file=sys.stderr)
        return EXIT_DATA
    print(f"ok: {len(d)} records, dimension {d.dimension}")
    return EXIT_OK


def cmd_protocol(args) -> int:
    ctx = Context(io.read_feature_table(args.features))
    if args.out:
        io.write_partition(args.out, ctx.partition)
    else:
        sys.stdout.write(io.dumps(ctx.partition.to_dict()) + "\n")
    for k, v in ctx.partition.counts().items():
        print(f"{k}: {v}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        dimension=args.dimension,
        known=args.known,
        known_unknown=args.known_unknown,
        unknown_unknown=args.unknown_unknown,
        images_per_known=args.known_images,
        images_per_known_unknown=args.known_unknown_images,
        sigma=args.sigma,
        seed=args.seed,
    )
    io.write_feature_table(args.out, generate_synthetic(spec))
    return EXIT_OK


def cmd_fit_subspace(args) -> int:
    ctx = Context(io.read_feature_table(args.features))
    model = fit_lda_subspace(ctx, args.pca_retention)
    io.write_subspace(args.out, model)
    log.info("subspace %d -> %d dimensions", model.input_dim, model.output_dim)
    return EXIT_OK


def cmd_fit_evm(args) -> int:
    ctx = Context(io.read_feature_table(args.features))
    cfg = EvmConfig(args.alpha, args.tail, args.fusion, args.query_scaling == "scaled")
    model = evm.train(ctx.gallery, ctx.training, cfg)
    io.write_evm(args.out, model)
    clamped = sum(f.clamped for s in model.subjects for f in s.fits)
    log.info("%d Weibull fits (%d clamped to fewer than %d negatives)", model.fit_count, clamped, args.tail)
    return EXIT_OK


def cmd_score(args) -> int:
    ctx = Context(io.read_feature_table(args.features))
    method = Method(args.method)
    model = None
    if method is not Method.COS:
        if not args.model:
            raise UsageError(f"--model is required for method {method.value}")
        model = io.read_subspace(args.model) if method is Method.LDA else io.read_evm(args.model)
    scoring = ScoringMethod(method, args.fusion, model)
    probes = ctx.dataset.select(ctx.partition.probe_set(args.probe_set)).records
    io.write_score_matrix(args.out, score_all(scoring, ctx.gallery, probes))
    return EXIT_OK


def cmd_eval(args) -> int:
    scores = io.read_score_matrix(args.scores)
    partition = io.read_partition(args.partition)
    if args.command == "eval-cmc":
        curve = cmc_curve(scores, partition)
        io.write_cmc(args.out, curve)
        print(f"rank-1: {curve[0].y:.6f}")
    elif args.command == "eval-roc":
        io.write_roc(args.out, roc_curve(scores, partition))
    else:
        curve = dir_curve(scores, partition, args.probe_set, args.rank, args.threshold_policy)
        io.write_dir(args.out, curve)
        unknown = partition.unknown_keys(args.probe_set)
        for target in args.far_targets:
            theta = threshold_for_far(scores, unknown, target, args.threshold_policy)
            if theta is None:
                print(f"FAR {target:g}: no threshold (absent)")
            else:
                print(
                    f"FAR {target:g}: threshold {theta:.6g}, "
                    f"FAR {far_at(scores, unknown, theta):.6f}, "
                    f"DIR {dir_at(scores, partition, theta, args.rank):.6f}"
                )
    return EXIT_OK


def _cell_line(cell: dict) -> str:
    line = f"{cell['method']}/{cell['fusion']} {cell['probe_set']}: rank-1 {cell['rank1']:.4f}"
    for t in cell.get("far_targets", []):
        dir_ = "absent" if t["absent"] else f"{t['dir']:.4f}"
        line += f"  DIR@{t['far_target']:g}={dir_}"
    return line


def _partition_line(summary: dict) -> str:
    ids = summary["identities"]
    return (
        f"identities: {ids['known']} known, {ids['known_unknown']} known-unknown, "
        f"{ids['unknown_unknown']} unknown-unknown; "
        f"|T|={summary['training']} |S|={summary['S']} |K|={summary['K']} |U|={summary['U']}"
    )


def cmd_run(args) -> int:
    dataset = io.read_feature_table(args.features)
    if "all" not in (args.method, args.fusion, args.probe_set):
        cfg = _run_config(
            args,
            method=args.method,
            fusion=args.fusion,
            probe_set=args.probe_set,
            out_dir=Path(args.out_dir),
        )
        report = run_experiment(cfg, dataset)
        cells = [report]
    else:
        report = run_grid(
            dataset,
            args.out_dir,
            _run_config(args),
            methods=list(Method) if args.method == "all" else [args.method],
            fusions=list(Fusion) if args.fusion == "all" else [args.fusion],
            probe_sets=list(ProbeSetId) if args.probe_set == "all" else [args.probe_set],
            workers=args.workers,
        )
        cells = report["cells"]
    print(_partition_line(report["partition"]))
    for cell in cells:
        print(_cell_line(cell))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "protocol": cmd_protocol,
    "synth": cmd_synth,
    "fit-subspace": cmd_fit_subspace,
    "fit-evm": cmd_fit_evm,
    "score": cmd_score,
    "eval-cmc": cmd_eval,
    "eval-roc": cmd_eval,
    "eval-dir": cmd_eval,
    "run": cmd_run,
}


def _exit_code(exc: OpenSetError) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    return EXIT_NUMERIC if isinstance(exc, NumericError) else EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        config_path = _config_path(argv)
        if config_path:
            defaults = read_config_file(config_path)
            for action in parser._subparsers._group_actions:
                for sp in action.choices.values():
                    known = {a.dest for a in sp._actions}
                    sp.set_defaults(**{k: v for k, v in defaults.items() if k in known})
    except (OSError, UsageError) as exc:
        print(f"openset: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"openset: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"openset: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OpenSetError as exc:
        print(f"openset: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


def _config_path(argv) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


if __name__ == "__main__":
    sys.exit(main())
