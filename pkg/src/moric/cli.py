"""Command-line pipeline driver.

Subcommands cover every stage file-to-file (simulate, sanitize, decompose,
features), model lifecycle (train, eval, calibrate), and full experiments
(loso, report). Exit codes: 0 success, 2 validation error, 3 I/O or format
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from . import classifier, features, harness, sanitize, simulator
from .core import FormatError, read_csit, read_dvel, write_csit, write_dvel, write_feat
from .delay_doppler import DopplerParams, extract_velocity_set
from .harness import Manifest, PipelineConfig, Report, derive_seed


def _add_pipeline_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int, default=64, help="Doppler window length (frames)")
    p.add_argument("--hop", type=int, default=4, help="Doppler window hop (frames)")
    p.add_argument("--pad", type=int, default=512, help="FFT length for the PSD")
    p.add_argument(
        "--estimator", choices=["psd", "phase"], default="psd", help="velocity estimator"
    )
    p.add_argument("--snr-db", type=float, default=2.0, help="SNR gating threshold (dB)")
    p.add_argument("--skip-hampel", action="store_true", help="disable outlier filtering")
    p.add_argument("--kernel-seed", type=int, default=42)
    p.add_argument("--kernels", type=int, default=250, help="number of random kernels")
    p.add_argument("--biases", type=int, default=3, help="PPV biases per kernel")


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        doppler=DopplerParams(
            window_len=args.window,
            hop=args.hop,
            fft_pad=args.pad,
            estimator="psd_argmax" if args.estimator == "psd" else "phase_derivative",
        ),
        snr_threshold_db=args.snr_db,
        use_hampel=not args.skip_hampel,
        kernel_seed=args.kernel_seed,
        n_kernels=args.kernels,
        n_biases=args.biases,
    )


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--epochs", type=int, default=2500)
    p.add_argument("--patience", type=int, default=200)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--val-frac", type=float, default=0.15)
    p.add_argument("--heads", type=int, default=2)


def _train_config(args) -> classifier.TrainConfig:
    return classifier.TrainConfig(
        lr=args.lr,
        batch_size=args.batch,
        max_epochs=args.epochs,
        patience=args.patience,
        weight_decay=args.weight_decay,
        seed=args.seed,
        val_fraction=args.val_frac,
    )


def cmd_simulate(args) -> int:
    scene = simulator.Scene.from_json(Path(args.scene).read_text())
    frame, truth = simulator.synthesize_csi(scene, derive_seed(args.seed, "simulate"))
    write_csit(frame, args.out)
    if args.truth:
        doc = {
            "cluster_delay_bins": truth.cluster_delay_bins.tolist(),
            "cluster_delays_s": truth.cluster_delays_s.tolist(),
            "cluster_concentrations": truth.cluster_concentrations.tolist(),
            "cluster_mean_directions": truth.cluster_mean_directions.tolist(),
            "projected_velocity": truth.projected_velocity.tolist(),
        }
        Path(args.truth).write_text(json.dumps(doc, indent=2))
    print(f"wrote {args.out}: {frame.n_streams} streams x {frame.config.n_subcarriers} "
          f"subcarriers x {frame.n_time} frames")
    return 0


def cmd_sanitize(args) -> int:
    frame = read_csit(args.infile)
    clean = sanitize.sanitize_frame(
        frame,
        apply_hampel=not args.skip_hampel,
        hampel_window=args.window,
        hampel_sigmas=args.sigmas,
    )
    write_csit(clean, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_decompose(args) -> int:
    frame = read_csit(args.infile)
    params = DopplerParams(
        window_len=args.window,
        hop=args.hop,
        fft_pad=args.pad,
        estimator="psd_argmax" if args.estimator == "psd" else "phase_derivative",
    )
    vs = extract_velocity_set(
        frame,
        params=params,
        snr_threshold_db=args.snr_db,
        apply_normalize=not args.no_normalize,
    )
    write_dvel(vs, args.out)
    kept = sum(1 for v in vs.vectors if not v.gated)
    print(f"wrote {args.out}: {len(vs.vectors)} vectors ({kept} kept, "
          f"{len(vs.vectors) - kept} gated)")
    return 0


def cmd_features(args) -> int:
    vs = read_dvel(args.infile)
    bank = features.build_bank(args.kernel_seed, args.kernels, args.biases, vs.n_time)
    fset = harness.featurize_velocity_set(vs, bank, label=args.label)
    write_feat(fset, args.out)
    print(f"wrote {args.out}: {fset.n_rows} rows x {fset.dim} features")
    return 0


def cmd_train(args) -> int:
    manifest = Manifest.load(args.manifest)
    pcfg = _pipeline_config(args)
    tcfg = _train_config(args)
    samples = harness.build_feature_table(manifest, pcfg, threads=args.threads)
    labels = [s.label for s in samples]
    tr_idx, va_idx = harness.stratified_split(
        labels, tcfg.val_fraction, derive_seed(tcfg.seed, "split")
    )
    train_items = [(samples[i].feature_set, samples[i].label) for i in tr_idx]
    val_items = [(samples[i].feature_set, samples[i].label) for i in va_idx]
    bank = harness.get_kernel_bank(manifest, pcfg)
    model = classifier.train(
        train_items, val_items, tcfg, n_heads=args.heads, kernel_bank=bank
    )
    classifier.save_model(model, args.out)
    acc, _ = harness.evaluate_samples(model, [samples[i] for i in tr_idx])
    print(f"wrote {args.out}: train accuracy {acc:.3f} over {len(tr_idx)} samples")
    return 0


def cmd_eval(args) -> int:
    model = classifier.load_model(args.model)
    manifest = Manifest.load(args.manifest)
    pcfg = _pipeline_config(args)
    samples = harness.build_feature_table(manifest, pcfg, threads=args.threads)
    acc, counts = harness.evaluate_samples(model, samples, use_calibration=args.calibrated)
    print(f"accuracy {acc:.4f} over {len(samples)} samples")
    if args.report:
        out = Path(args.report)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(
            json.dumps(
                {
                    "accuracy": acc,
                    "n_samples": len(samples),
                    "class_labels": list(model.class_labels),
                    "confusion_counts": counts.tolist(),
                },
                indent=2,
                sort_keys=True,
            )
        )
        print(f"wrote {out / 'eval.json'}")
    return 0


def cmd_calibrate(args) -> int:
    model = classifier.load_model(args.model)
    manifest = Manifest.load(args.manifest)
    pcfg = _pipeline_config(args)
    samples = harness.build_feature_table(manifest, pcfg, threads=args.threads)
    if args.sweep:
        counts = [int(x) for x in args.sweep.split(",")]
        results = harness.run_calibration_sweep(
            samples, model, counts, n_draws=args.draws, seed=args.seed
        )
        text = json.dumps(results, indent=2, sort_keys=True)
        if args.out:
            Path(args.out).write_text(text)
        print(text)
        return 0
    if not args.out:
        raise ValueError("--out is required when fitting a calibration")
    items = [(s.feature_set, s.label) for s in samples]
    calibration = classifier.calibrate(model, items, steps=args.steps, lr=args.lr)
    calibrated = model.with_calibration(calibration)
    classifier.save_model(calibrated, args.out)
    print(f"wrote {args.out}: T={calibration.temperature:.4f}")
    return 0


def cmd_loso(args) -> int:
    manifest = Manifest.load(args.manifest)
    pcfg = _pipeline_config(args)
    tcfg = _train_config(args)
    report = harness.run_loso(
        manifest, pcfg, tcfg, threads=args.threads, n_heads=args.heads
    )
    files = harness.report_emit(report, args.report)
    print(
        f"LOSO accuracy {100 * report.mean_accuracy:.1f}% +- {100 * report.sd_accuracy:.1f}% "
        f"over {len(report.fold_subjects)} subjects"
    )
    for f in files:
        print(f"wrote {f}")
    return 0


def cmd_report(args) -> int:
    report = Report.from_dict(json.loads(Path(args.infile).read_text()))
    files = harness.report_emit(report, args.out)
    for f in files:
        print(f"wrote {f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moric",
        description="CSI delay-Doppler decomposition and activity classification pipeline",
    )
    parser.add_argument("--seed", type=int, default=0, help="root random seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for sample stages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize CSI from a scene description")
    p.add_argument("--scene", required=True, help="scene JSON file")
    p.add_argument("--out", required=True, help="output .csit path")
    p.add_argument("--truth", help="optional ground-truth JSON output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sanitize", help="compensate linear phase and filter outliers")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--skip-hampel", action="store_true")
    p.add_argument("--window", type=int, default=11, help="Hampel window")
    p.add_argument("--sigmas", type=float, default=3.0, help="Hampel threshold")
    p.set_defaults(func=cmd_sanitize)

    p = sub.add_parser("decompose", help="delay decomposition and velocity estimation")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=64)
    p.add_argument("--hop", type=int, default=4)
    p.add_argument("--pad", type=int, default=512)
    p.add_argument("--estimator", choices=["psd", "phase"], default="psd")
    p.add_argument("--snr-db", type=float, default=2.0)
    p.add_argument("--no-normalize", action="store_true")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("features", help="random-kernel features for a velocity set")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", dest="kernel_seed", type=int, default=42)
    p.add_argument("--kernels", type=int, default=250)
    p.add_argument("--biases", type=int, default=3)
    p.add_argument("--label", help="optional class label stored with the features")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a classifier from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_pipeline_args(p)
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", help="optional output directory")
    p.add_argument("--calibrated", action="store_true")
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="fit (or sweep) post-hoc calibration")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="output model path (fit) or JSON path (sweep)")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--sweep", help="comma-separated samples-per-class counts")
    p.add_argument("--draws", type=int, default=10)
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("loso", help="leave-one-subject-out evaluation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True, help="report output directory")
    _add_pipeline_args(p)
    _add_train_args(p)
    p.set_defaults(func=cmd_loso)

    p = sub.add_parser("report", help="re-emit CSV tables from a report JSON")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
