"""Command-line surface: convert, train, eval, adapt, quantize, budget,
stream, report.

Every module error surfaces as a one-line diagnostic on stderr with its own
exit code (see EXIT_CODES); scores themselves are data, so `eval` exits 0
regardless of how good the model is.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import adapt as adapt_mod
from . import budget as budget_mod
from . import edf, epochs, kernels, metrics, model, quant, streaming, training

EXIT_CODES = [
    (edf.EdfError, 3),
    (epochs.StoreError, 5),
    (epochs.PipelineError, 4),
    (model.ModelFormatError, 6),
    (quant.QuantError, 7),
    (training.TrainingError, 8),
    (budget_mod.BudgetError, 9),
    (streaming.StreamGapError, 10),
    (metrics.MetricsError, 11),
    (kernels.KernelError, 12),
    (OSError, 13),
]


def _subject_epochs(store: list[epochs.LabeledEpoch], subject: int):
    return [e for e in store if e.subject_id == subject]


def cmd_convert(args) -> int:
    parsed = edf.parse_edf(args.psg)
    try:
        signal = edf.read_signal(parsed, args.channel)
        if args.hypnogram:
            hyp = edf.parse_edf(args.hypnogram)
            try:
                annotations = hyp.annotations()
            finally:
                hyp.close()
        else:
            annotations = epochs.parse_hypnogram_text(Path(args.hypnogram_txt).read_text())
    finally:
        parsed.close()
    night = epochs.segment_epochs(
        signal, annotations, subject_id=args.subject, night=args.night
    )
    night = epochs.trim_wake(night)
    out = list(night.epochs)
    if args.append and Path(args.out).exists():
        out = epochs.read_store(args.out) + out
    epochs.write_store(out, args.out)
    dist = epochs.class_distribution(out)
    print(f"wrote {len(out)} epochs to {args.out}")
    for name, count, frac in zip(epochs.STAGE_NAMES, dist.counts, dist.fractions):
        print(f"  {name:5s} {count:8d}  {frac:.2%}")
    return 0


def cmd_train(args) -> int:
    store = epochs.read_store(args.store)
    if not store:
        raise training.TrainingError("store holds no epochs")
    arch = model.ArchConfig(width_multiplier=args.width_multiplier)
    tc = training.TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        seed=args.seed,
    )
    subjects = sorted({e.subject_id for e in store})
    plan = training.make_folds(subjects, k=args.folds, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "folds.txt").write_text(
        "\n".join(
            f"fold{i}: {','.join(str(s) for s in fold)}" for i, fold in enumerate(plan.folds)
        )
        + "\n"
    )
    if args.fold is not None and not 0 <= args.fold < len(plan.folds):
        raise training.TrainingError(
            f"--fold {args.fold} out of range for {len(plan.folds)} folds"
        )
    fold_ids = [args.fold] if args.fold is not None else range(len(plan.folds))
    for i in fold_ids:
        params, history = training.train_fold(store, plan.test_subjects(i), arch, tc)
        model.save_model(params.astype(np.float32), arch, out_dir / f"model_fold{i}.slpm")
        (out_dir / f"history_fold{i}.csv").write_text(training.history_to_csv(history))
        last = history[-1]
        print(
            f"fold {i}: {len(history)} epochs trained, "
            f"final val_acc {last.val_acc:.3f} -> model_fold{i}.slpm"
        )
    return 0


def _evaluate_store(params, config, store):
    predictions = []
    labels = []
    for e in store:
        probs, _ = model.forward(params, epochs.standardize(e.samples), config)
        predictions.append(int(np.argmax(probs)))
        labels.append(int(e.stage))
    return metrics.class_metrics(metrics.confusion(predictions, labels))


def cmd_eval(args) -> int:
    store = epochs.read_store(args.store)
    if args.subjects:
        wanted = {int(s) for s in args.subjects.split(",")}
        store = [e for e in store if e.subject_id in wanted]
    if not store:
        raise epochs.StoreError("no epochs selected for evaluation")
    kind, obj, config = quant.load_any_model(args.model)
    params = obj.dequantize() if kind == "quant" else obj
    report = _evaluate_store(params, config, store)
    text = metrics.render_report(report, "text")
    print(text, end="")
    if args.out_prefix:
        prefix = Path(args.out_prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        Path(f"{prefix}.txt").write_text(text)
        Path(f"{prefix}.csv").write_text(metrics.render_report(report, "csv"))
        Path(f"{prefix}_counts.csv").write_text(metrics.counts_to_csv(report.confusion))
    return 0


def cmd_adapt(args) -> int:
    store = epochs.read_store(args.store)
    subject = _subject_epochs(store, args.subject)
    if not subject:
        raise training.TrainingError(f"store has no epochs for subject {args.subject}")
    params, config = model.load_model(args.model)
    adapt_set, holdout = adapt_mod.split_adapt(
        subject, fraction=args.fraction, stratified=args.stratified, seed=args.seed
    )
    print(
        f"subject {args.subject}: {len(adapt_set)} adaptation epochs "
        f"({len(adapt_set) / len(subject):.0%}), {len(holdout)} holdout"
    )
    before = _evaluate_store(params, config, holdout)
    tc = training.TrainConfig(max_epochs=args.epochs, seed=args.seed)
    tuned = adapt_mod.fine_tune(params, config, adapt_set, tc, scope=args.scope)
    after = _evaluate_store(tuned, config, holdout)
    print(f"holdout accuracy before {before.accuracy:.3f} -> after {after.accuracy:.3f}")
    print(metrics.render_report(after, "text"), end="")
    if args.out:
        model.save_model(tuned.astype(np.float32), config, args.out)
        print(f"adapted model written to {args.out}")
    return 0


def cmd_quantize(args) -> int:
    params, config = model.load_model(args.model)
    calibration = epochs.read_store(args.store)
    qm = quant.quantize_model(params, config, calibration)
    quant.save_quant_model(qm, args.out)
    before = Path(args.model).stat().st_size
    after = Path(args.out).stat().st_size
    print(f"quantized {before} B -> {after} B ({after / before:.1%})")
    return 0


def cmd_budget(args) -> int:
    config, _, _ = model.read_slpm(args.model)
    profile = budget_mod.resolve_profile(args.profile, args.profiles_file)
    report = budget_mod.check_fit(args.model, config, profile)
    if args.kv:
        print(budget_mod.render_report_kv(report), end="")
    else:
        print(budget_mod.render_report_text(report), end="")
        print(
            f"fits: flash {'yes' if report.fits_flash else 'no'}, "
            f"ram {'yes' if report.fits_ram else 'no'}"
        )
    return 0


def _stdin_samples(raw, args):
    """Yield float samples from a binary feed (float32 LE, or int16 with an
    explicit digital->physical scaling)."""
    if args.int16:
        for flag in ("dig_min", "dig_max", "phys_min", "phys_max"):
            if getattr(args, flag) is None:
                raise streaming.StreamGapError(f"--int16 requires --{flag.replace('_', '-')}")
        gain = (args.phys_max - args.phys_min) / (args.dig_max - args.dig_min)
        dtype = np.dtype("<i2")
        convert = lambda arr: (arr.astype(np.float64) - args.dig_min) * gain + args.phys_min
    else:
        dtype = np.dtype("<f4")
        convert = lambda arr: arr.astype(np.float64)
    carry = b""
    while True:
        chunk = raw.read(65536)
        if not chunk:
            break
        carry += chunk
        usable = len(carry) - len(carry) % dtype.itemsize
        if usable:
            yield from convert(np.frombuffer(carry[:usable], dtype=dtype))
            carry = carry[usable:]
    if carry:
        raise streaming.StreamGapError(f"{len(carry)} trailing bytes are not a whole sample")


def cmd_stream(args) -> int:
    if args.rate != epochs.SAMPLE_RATE:
        raise streaming.StreamGapError(
            f"only {epochs.SAMPLE_RATE} Hz feeds are supported, got {args.rate}"
        )
    _, obj, config = quant.load_any_model(args.model)
    predict = streaming.make_predictor(obj, config)

    def sink(decision):
        print(streaming.decision_line(decision), flush=True)

    frames = streaming.frames_from_values(_stdin_samples(sys.stdin.buffer, args))
    decisions, leftover = streaming.stream_classify(frames, predict, sink)
    print(f"stream ended: {decisions} decisions, {leftover} samples buffered", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    cm = metrics.counts_from_csv(Path(args.counts).read_text())
    report = metrics.class_metrics(cm)
    print(metrics.render_report(report, args.style), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgesleep",
        description="EEG sleep staging: dataset conversion, training, "
        "adaptation, quantization, deployment budgeting, and streaming inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="EDF + hypnogram -> epoch store")
    p.add_argument("psg", help="EDF recording with the EEG channel")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--hypnogram", help="EDF+ file carrying the stage annotations")
    group.add_argument("--hypnogram-txt", help="text sidecar: onset,duration,label lines")
    p.add_argument("--channel", default="EEG Fpz-Cz")
    p.add_argument("--subject", type=int, required=True)
    p.add_argument("--night", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--append", action="store_true", help="extend an existing store")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="k-fold training over a store")
    p.add_argument("--store", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fold", type=int, default=None, help="train only this fold index")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--width-multiplier", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="model + store -> metrics report")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--subjects", default=None, help="comma-separated subject filter")
    p.add_argument("--out-prefix", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("adapt", help="subject-specific fine-tuning")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--subject", type=int, required=True)
    p.add_argument("--fraction", type=float, default=0.10)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--scope", choices=("all", "classifier_only"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=adapt_mod.ADAPT_DEFAULT_EPOCHS)
    p.add_argument("--out", default=None, help="write the adapted model here")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("quantize", help="float model -> int8 model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--store", required=True, help="calibration epochs")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("budget", help="flash/RAM/latency feasibility report")
    p.add_argument("--model", required=True)
    p.add_argument("--profile", default="nano33ble")
    p.add_argument("--profiles-file", default=None)
    p.add_argument("--kv", action="store_true", help="machine-readable key=value block")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("stream", help="classify a raw sample feed from stdin")
    p.add_argument("--model", required=True)
    p.add_argument("--rate", type=int, default=epochs.SAMPLE_RATE)
    p.add_argument("--int16", action="store_true", help="feed is int16 digital samples")
    p.add_argument("--dig-min", type=int, default=None)
    p.add_argument("--dig-max", type=int, default=None)
    p.add_argument("--phys-min", type=float, default=None)
    p.add_argument("--phys-max", type=float, default=None)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("report", help="render a stored confusion-count CSV")
    p.add_argument("--counts", required=True)
    p.add_argument("--style", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single surface for exit codes
        for exc_type, code in EXIT_CODES:
            if isinstance(exc, exc_type):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
