"""Command-line pipeline: synth -> extract -> train -> eval / predict.

Heavy imports happen inside the subcommand handlers so BPLAB_THREADS can cap
the BLAS thread pools before numpy loads (0 or unset leaves it automatic).
A `--config file` of key=value lines overrides the corresponding flags.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys


def _apply_thread_cap() -> None:
    raw = os.environ.get("BPLAB_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"BPLAB_THREADS must be an integer, got {raw!r}") from None
    if n > 0:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(n))


def _apply_config_file(args: argparse.Namespace) -> None:
    """key=value lines override parsed flag values (keys use flag spelling
    with dashes or underscores)."""
    path = getattr(args, "config", None)
    if not path:
        return
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            attr = key.replace("-", "_")
            if not hasattr(args, attr) or attr in ("config", "command"):
                raise ValueError(f"{path}:{lineno}: unknown option {key!r}")
            current = getattr(args, attr)
            if isinstance(current, bool):
                setattr(args, attr, value.lower() in ("1", "true", "yes", "on"))
            elif isinstance(current, int):
                setattr(args, attr, int(value))
            elif isinstance(current, float):
                setattr(args, attr, float(value))
            else:
                setattr(args, attr, value)


def _ir_files(ir_dir: str) -> list[str]:
    files = sorted(glob.glob(os.path.join(ir_dir, "*.ir")))
    if not files:
        raise FileNotFoundError(f"no .ir files under {ir_dir}")
    return files


def _read_profile(path: str) -> dict[str, tuple[int, int]]:
    import csv

    profile: dict[str, tuple[int, int]] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["branch_id", "taken", "nottaken"]:
            raise ValueError(f"{path}: expected header branch_id,taken,nottaken")
        for row in reader:
            profile[row[0]] = (int(row[1]), int(row[2]))
    return profile


def cmd_synth(args) -> int:
    import csv

    from .irtext import module_to_text
    from .synth import SynthConfig, generate_corpus, profile_module

    config = SynthConfig(
        n_functions=args.functions,
        seed=args.seed,
        loop_prob=args.loop_prob,
        max_loop_depth=args.max_loop_depth,
        error_path_prob=args.error_path_prob,
        trip_count_mean=args.trip_mean,
        trials_per_function=args.trials,
        beta_shape=args.beta_shape,
        const_hint_prob=args.const_hint_prob,
        n_files=args.n_files,
        functions_per_module=args.functions_per_module,
    )
    config.validate()
    os.makedirs(args.out, exist_ok=True)

    n_functions = 0
    n_branches = 0
    n_modules = 0
    profile_path = os.path.join(args.out, "profile.csv")
    with open(profile_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["branch_id", "taken", "nottaken"])
        for module, gt in generate_corpus(config):
            counts = profile_module(module, gt, config.trials_per_function, config.seed)
            path = os.path.join(args.out, f"{module.name}.ir")
            with open(path, "w", encoding="utf-8", newline="\n") as mh:
                mh.write(module_to_text(module))
            for key in sorted(counts):
                taken, nottaken = counts[key]
                writer.writerow([key, taken, nottaken])
            n_modules += 1
            n_functions += len(module.functions)
            n_branches += len(counts)
    print(f"modules={n_modules} functions={n_functions} branches={n_branches} out={args.out}")
    return 0


def cmd_extract(args) -> int:
    from .dataset import dedup, generate_examples, write_csv
    from .heuristics import HeuristicConfig
    from .irtext import parse_module_text

    heur = HeuristicConfig(
        p_expect=args.heur_expect,
        p_backedge=args.heur_backedge,
        p_null_cmp_eq_true=args.heur_unlikely_cmp,
    )
    heur.validate()
    profile = _read_profile(args.profile)

    examples = []
    total_branches = 0
    for path in _ir_files(args.ir):
        with open(path, "r", encoding="utf-8") as fh:
            module, _ = parse_module_text(fh.read(), name=os.path.basename(path))
        total_branches += sum(1 for fn in module.functions for _ in fn.branch_blocks())
        examples.extend(
            generate_examples(module, profile, const_threshold=args.const_threshold,
                              heur_config=heur)
        )
    unique = dedup(examples)
    write_csv(unique, args.out)
    print(f"branches={total_branches} profiled={len(examples)} unique={len(unique)} out={args.out}")
    return 0


def cmd_train(args) -> int:
    from .dataset import read_csv, split, write_csv
    from .features import EmbedSpec
    from .model import ModelSpec, save_model, train

    spec = ModelSpec(
        hidden_layers=args.hidden_layers,
        hidden_width=args.hidden_width,
        embed=EmbedSpec(args.embed_callee_dim, args.embed_file_dim, args.min_count),
        loss=args.loss,
        batch_size=args.batch,
        epochs=args.epochs,
        learning_rate=args.lr,
        adagrad_epsilon=args.adagrad_eps,
        seed=args.seed,
        weight_by_count=args.weight_by_count,
    )
    spec.validate()

    examples = read_csv(args.data)
    train_set, test_set = split(examples, args.test_fraction, args.seed)
    model, history = train(spec, train_set, test_set, const_threshold=args.const_threshold)
    save_model(model, args.out)

    history_path = os.path.splitext(args.out)[0] + "_history.csv"
    with open(history_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,train_loss,valid_loss\n")
        for epoch, record in enumerate(history, start=1):
            fh.write(f"{epoch},{record['train_loss']:.6f},{record['valid_loss']:.6f}\n")

    # Persist the split next to the dataset so evaluation can reproduce the
    # exact held-out protocol.
    test_ids = {id(ex) for ex in test_set}
    marks = ["test" if id(ex) in test_ids else "train" for ex in examples]
    split_path = os.path.splitext(args.data)[0] + "_split.csv"
    write_csv(examples, split_path, split_marks=marks)

    if history:
        last = history[-1]
        print(
            f"trained epochs={len(history)} train_loss={last['train_loss']:.6f} "
            f"valid_loss={last['valid_loss']:.6f} model={args.out}"
        )
    else:
        print(f"trained epochs=0 model={args.out}")
    print(f"split={split_path} history={history_path}")
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from .dataset import read_csv_with_split
    from .evaluate import category_breakdown, compute_metrics, error_cdf, render_report
    from .model import load_model, predict_batch

    model = load_model(args.model)
    examples, marks = read_csv_with_split(args.data)
    if marks is not None:
        examples = [ex for ex, mark in zip(examples, marks) if mark == "test"]
    if not examples:
        raise ValueError("no evaluation rows (is the split column all train?)")

    labels = np.asarray([ex.label for ex in examples])
    heur_preds = np.asarray([ex.heuristic_prob for ex in examples])
    ml_preds = predict_batch(model, [ex.raw for ex in examples])

    ml_report, heur_report = compute_metrics(ml_preds, heur_preds, labels)
    ml_cdf = error_cdf(ml_preds, labels)
    heur_cdf = error_cdf(heur_preds, labels)
    breakdown = category_breakdown(heur_preds, labels)
    render_report((ml_report, heur_report), (ml_cdf, heur_cdf), breakdown, args.out)

    print(f"n={ml_report.n}")
    print(f"rmse ml={ml_report.rmse:.4f} heur={heur_report.rmse:.4f}")
    print(f"mae ml={ml_report.mae:.4f} heur={heur_report.mae:.4f}")
    print(f"cross_entropy ml={ml_report.mean_cross_entropy:.4f} heur={heur_report.mean_cross_entropy:.4f}")
    closeness_sum = ml_report.closeness + heur_report.closeness
    print(
        f"closeness ml={ml_report.closeness:.4f} heur={heur_report.closeness:.4f} "
        f"sum={closeness_sum:.4f}"
    )
    print(f"report={os.path.join(args.out, 'report.md')}")
    return 0


def cmd_predict(args) -> int:
    from .cfg import analyze_function
    from .dataset import probability_to_branch_weights
    from .features import extract_features
    from .irtext import annotate_ir_text, parse_module_text
    from .model import load_model, predict_batch

    model = load_model(args.model)
    os.makedirs(args.out, exist_ok=True)
    n_branches = 0
    for path in _ir_files(args.ir):
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        _, parsed = parse_module_text(text, name=os.path.basename(path))
        weights: dict[tuple[str, int], tuple[int, int]] = {}
        for pf in parsed:
            fn = pf.function
            branches = [b.id for b in fn.branch_blocks()]
            if not branches:
                continue
            analyses = analyze_function(fn)
            raws = [
                extract_features(fn, b, analyses, model.encoder.const_threshold)
                for b in branches
            ]
            probs = predict_batch(model, raws)
            to_text_id = {new: old for old, new in pf.block_id_map.items()}
            for b, p in zip(branches, probs):
                weights[(fn.name, to_text_id[b])] = probability_to_branch_weights(float(p))
            n_branches += len(branches)
        out_path = os.path.join(args.out, os.path.basename(path))
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(annotate_ir_text(text, weights, name=os.path.basename(path)))
    print(f"annotated branches={n_branches} out={args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bplab",
        description="Branch probability estimation: synthetic corpora, "
        "compiler-style heuristics, and a learned estimator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="key=value file overriding these flags")

    p = sub.add_parser("synth", help="generate a profiled IR corpus")
    add_config(p)
    p.add_argument("--out", required=True)
    p.add_argument("--functions", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--loop-prob", type=float, default=0.5)
    p.add_argument("--max-loop-depth", type=int, default=2)
    p.add_argument("--error-path-prob", type=float, default=0.3)
    p.add_argument("--trip-mean", type=float, default=6.0)
    p.add_argument("--beta-shape", type=float, default=0.4)
    p.add_argument("--const-hint-prob", type=float, default=0.85)
    p.add_argument("--n-files", type=int, default=24)
    p.add_argument("--functions-per-module", type=int, default=50)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="build a labeled dataset from IR + profile")
    add_config(p)
    p.add_argument("--ir", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--const-threshold", type=int, default=64)
    p.add_argument("--heur-backedge", type=float, default=0.875)
    p.add_argument("--heur-expect", type=float, default=0.99)
    p.add_argument("--heur-unlikely-cmp", type=float, default=0.375)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the estimator on a dataset CSV")
    add_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden-layers", type=int, default=5)
    p.add_argument("--hidden-width", type=int, default=64)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--loss", choices=("mae", "mse", "ce"), default="ce")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.10)
    p.add_argument("--adagrad-eps", type=float, default=1e-8)
    p.add_argument("--const-threshold", type=int, default=64)
    p.add_argument("--embed-callee-dim", type=int, default=8)
    p.add_argument("--embed-file-dim", type=int, default=8)
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--weight-by-count", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compare model and heuristic on a dataset")
    add_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="annotate IR branches with weights")
    add_config(p)
    p.add_argument("--ir", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
        args = build_parser().parse_args(argv)
        _apply_config_file(args)
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"bplab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
