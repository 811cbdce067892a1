"""Command-line entry point: generate / ingest / preprocess / train / report.

Exit codes: 0 success, 1 usage error, 2 invalid data, 3 training
divergence.  Diagnostics go to stderr; machine-readable outputs are
written only to paths named by ``--out`` (or the run directory).
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .dsp import CAUSAL, ZERO_PHASE, FilterSpec, preprocess, write_windows
from .errors import DataError, DivergenceError
from .figures import boxplot_svg, confusion_svg
from .harness import RunConfig, run_experiment, select_equidistant
from .ingest import load_catalog
from .syngen import export_catalog, synth_catalog

log = logging.getLogger("trajid")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_filter(text: str):
    parts = text.split(":")
    usage = f"filter must look like butter:4:7, got {text!r}"
    if len(parts) != 3 or parts[0] != "butter":
        raise argparse.ArgumentTypeError(usage)
    try:
        return int(parts[1]), float(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(usage) from None


def _parse_subset(text: str):
    if text.startswith("equidistant:"):
        try:
            return ("equidistant", int(text.partition(":")[2]))
        except ValueError:
            pass
    elif text.startswith("ids:"):
        try:
            ids = tuple(int(tok) for tok in text.partition(":")[2].split(","))
            return ("ids", ids)
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(
        f"subset must look like equidistant:9 or ids:0,4,8, got {text!r}"
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajid",
                     description="Subject identification from 3-D transport trajectories.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="per-epoch progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    gen = sub.add_parser("generate", help="write a synthetic trajectory catalog")
    gen.add_argument("--subjects", type=int, required=True)
    gen.add_argument("--trials-per-target", type=int, default=1)
    gen.add_argument("--separation", type=float, default=1.0,
                     help="0 = identical subjects, 1 = full signature spread")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, metavar="DIR")
    gen.set_defaults(func=_cmd_generate)

    ing = sub.add_parser("ingest", help="validate a catalog manifest")
    ing.add_argument("--manifest", required=True)
    ing.add_argument("--check", action="store_true",
                     help="validate only; print one OK line")
    ing.set_defaults(func=_cmd_ingest)

    pre = sub.add_parser("preprocess", help="filter, normalize, window a catalog")
    pre.add_argument("--manifest", required=True)
    pre.add_argument("--filter", type=_parse_filter, default=(4, 7.0), metavar="butter:N:HZ")
    pre.add_argument("--mode", choices=(ZERO_PHASE, CAUSAL), default=ZERO_PHASE)
    pre.add_argument("--window", type=int, default=7)
    pre.add_argument("--out", required=True, metavar="FILE")
    pre.set_defaults(func=_cmd_preprocess)

    trn = sub.add_parser("train", help="run cross-validated training")
    trn.add_argument("--manifest", required=True)
    trn.add_argument("--out", required=True, metavar="DIR")
    trn.add_argument("--config", metavar="JSON",
                     help="run-config file; explicit flags win over file values")
    trn.add_argument("--subset", type=_parse_subset, metavar="equidistant:N|ids:A,B")
    trn.add_argument("--folds", type=int)
    trn.add_argument("--epochs", type=int)
    trn.add_argument("--batch-size", type=int, dest="batch_size")
    trn.add_argument("--optimizer", choices=("adam", "sgd"))
    trn.add_argument("--lr", type=float)
    trn.add_argument("--seed", type=int)
    trn.add_argument("--window", type=int)
    trn.add_argument("--width-mult", type=float, dest="width_mult")
    trn.add_argument("--filter", type=_parse_filter, metavar="butter:N:HZ")
    trn.add_argument("--mode", choices=(ZERO_PHASE, CAUSAL))
    trn.add_argument("--leakage", choices=("trial", "window"))
    trn.add_argument("--jobs", type=int)
    trn.set_defaults(func=_cmd_train)

    rep = sub.add_parser("report", help="print (and render) a run's results")
    rep.add_argument("--run", required=True, metavar="DIR")
    rep.add_argument("--confusion", action="store_true")
    rep.add_argument("--per-target", action="store_true", dest="per_target")
    rep.add_argument("--svg", action="store_true",
                     help="write confusion.svg and boxplot.svg into the run dir")
    rep.set_defaults(func=_cmd_report)
    return parser


def _cmd_generate(args) -> int:
    catalog, signatures = synth_catalog(
        n_subjects=args.subjects,
        trials_per_target=args.trials_per_target,
        separation=args.separation,
        master_seed=args.seed,
    )
    manifest = export_catalog(catalog, signatures, args.out)
    log.info("wrote %d trials for %d subjects; manifest %s",
             len(catalog), args.subjects, manifest)
    return 0


def _cmd_ingest(args) -> int:
    catalog = load_catalog(args.manifest)
    participants = catalog.participants
    if args.check:
        print(f"OK {args.manifest}: {len(catalog)} trials, "
              f"{len(participants)} participants, fs {catalog.fs:g} Hz")
        return 0
    print(f"manifest:     {args.manifest}")
    print(f"trials:       {len(catalog)}")
    print(f"participants: {len(participants)} {list(participants)}")
    print(f"fs:           {catalog.fs:g} Hz")
    print(f"samples:      {sum(t.n_samples for t in catalog.trials)}")
    return 0


def _cmd_preprocess(args) -> int:
    catalog = load_catalog(args.manifest)
    order, cutoff = args.filter
    spec = FilterSpec(order=order, cutoff_hz=cutoff, fs_hz=catalog.fs, mode=args.mode)
    ws = preprocess(catalog, spec, args.window, catalog.trials)
    write_windows(ws, args.out)
    log.info("wrote %d windows of shape (%d, %d) to %s",
             len(ws), ws.shape[1], ws.shape[2], args.out)
    return 0


_TRAIN_SCALARS = ("folds", "epochs", "batch_size", "optimizer", "lr", "seed",
                  "window", "width_mult", "leakage", "jobs")


def _merged_run_config(args, catalog) -> RunConfig:
    file_data = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise DataError(f"missing config file: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
        if isinstance(data, dict) and isinstance(data.get("config"), dict):
            data = data["config"]  # accept a previous run.json for exact replay
        if not isinstance(data, dict):
            raise DataError(f"{path}: config must be a JSON object")
        file_data = data

    merged = dict(file_data)
    for name in _TRAIN_SCALARS:
        value = getattr(args, name)
        if value is None:
            continue
        if name in file_data and file_data[name] != value:
            log.info("config file %s=%r overridden by flag value %r",
                     name, file_data[name], value)
        merged[name] = value

    fdict = dict(file_data.get("filter_spec") or {})
    if args.filter is not None:
        order, cutoff = args.filter
        if fdict and (fdict.get("order"), fdict.get("cutoff_hz")) != (order, cutoff):
            log.info("config file filter_spec overridden by --filter")
        fdict["order"], fdict["cutoff_hz"] = order, cutoff
    if args.mode is not None:
        fdict["mode"] = args.mode
    fdict.setdefault("fs_hz", catalog.fs)
    merged["filter_spec"] = fdict

    if args.subset is not None:
        kind, value = args.subset
        if kind == "equidistant":
            ids = select_equidistant(catalog.n_participants, value)
        else:
            ids = list(value)
        if "subset" in file_data and list(file_data["subset"] or []) != ids:
            log.info("config file subset overridden by --subset")
        merged["subset"] = ids
    return RunConfig.from_dict(merged)


def _cmd_train(args) -> int:
    catalog = load_catalog(args.manifest)
    config = _merged_run_config(args, catalog)
    summary = run_experiment(catalog, config, args.out)
    log.info("mean window accuracy %.4f, mean trial accuracy %.4f",
             summary.window_accuracy["mean"], summary.trial_accuracy["mean"])
    return 0


def _read_run_dir(run_dir: Path):
    summary_path = run_dir / "summary.json"
    if not summary_path.is_file():
        raise DataError(f"{run_dir} is not a run directory (no summary.json)")
    summary = json.loads(summary_path.read_text())
    run_meta = {}
    run_path = run_dir / "run.json"
    if run_path.is_file():
        run_meta = json.loads(run_path.read_text())
    return summary, run_meta


def _cmd_report(args) -> int:
    run_dir = Path(args.run)
    summary, run_meta = _read_run_dir(run_dir)
    participants = run_meta.get("participants") or list(range(len(summary["confusion"])))

    print(f"run:    {run_dir}")
    print(f"folds:  {summary['n_folds']}")
    for name, key in (("window", "window_accuracy"), ("trial ", "trial_accuracy")):
        s = summary[key]
        print(f"{name} accuracy: mean {s['mean']:.4f}  median {s['median']:.4f}  "
              f"min {s['min']:.4f}  max {s['max']:.4f}")
    if args.confusion:
        print("\nconfusion (% of true-label windows):")
        header = "  true\\pred " + "".join(f"{p:>5}" for p in participants)
        print(header)
        for pid, row in zip(participants, summary["confusion_percent"]):
            print(f"  {pid:>9} " + "".join(f"{v:>5}" for v in row))
    if args.per_target:
        print("\nper-target window accuracy over folds:")
        for target, entry in enumerate(summary["per_target"]):
            if entry["median"] is None:
                print(f"  target {target}: absent")
            else:
                print(f"  target {target}: median {entry['median']:.4f} "
                      f"({len(entry['values'])} folds)")
    if args.svg:
        (run_dir / "confusion.svg").write_text(
            confusion_svg(summary["confusion_percent"], participants) + "\n")
        (run_dir / "boxplot.svg").write_text(boxplot_svg(summary["per_target"]) + "\n")
        log.info("wrote %s and %s", run_dir / "confusion.svg", run_dir / "boxplot.svg")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, usage errors exit 1
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"trajid: divergence: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"trajid: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
