"""Command-line workflows: synth, train, detect, evaluate, snr, sweep.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .detector import (detect, read_events_csv, score_stream, smooth, write_events_csv,
                       write_scores_csv)
from .errors import DataError, NumericalError, UpcallError
from .evaluation import (Annotation, compute_metrics, match_events, percentile_summary, read_annotations,
                         snr_filtered_counts, sum_counts, threshold_sweep, write_annotations, write_curve_csv,
                         write_report_csv)
from .signal import SAMPLE_RATE, SEGMENT_S, AudioClip, compute_spectrogram, read_wav, resample, write_wav

log = logging.getLogger("upcall")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(UpcallError):
    exit_code = EXIT_USAGE


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------- config

def load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such config file: {path}")
    text = path.read_text()
    if not text.lstrip().startswith("["):
        text = "[DEFAULT]\n" + text
    cp.read_string(text, source=str(path))
    return cp


def resolve(args: argparse.Namespace, section: str, defaults: dict) -> dict:
    """Merge defaults < config file < explicit flags; flags left as None do not override."""
    values = dict(defaults)
    if getattr(args, "config", None):
        cp = load_config(args.config)
        sect = cp[section] if cp.has_section(section) else cp.defaults()
        for key, default in defaults.items():
            if key in sect:
                values[key] = _coerce(sect[key], default, key)
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    log.info("resolved %s config: %s", section, ", ".join(f"{k}={values[k]}" for k in sorted(values)))
    return values


def _coerce(text: str, default, key: str):
    try:
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"config value {key}={text!r} is not a valid {type(default).__name__}") from None
    return text.strip()


# ---------------------------------------------------------------- helpers

def load_audio(path) -> AudioClip:
    clip = read_wav(path)
    if clip.sample_rate != SAMPLE_RATE:
        clip = resample(clip, SAMPLE_RATE)
    return clip


def _audio_paths(items) -> list[Path]:
    out = []
    for item in items or []:
        p = Path(item)
        if p.is_dir():
            out.extend(sorted(p.glob("*.wav")))
        elif p.is_file():
            out.append(p)
        else:
            raise DataError(f"no such audio file or directory: {p}")
    return sorted(out, key=lambda p: p.stem)


def load_scorer(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such model file: {path}")
    magic = path.read_bytes()[:4]
    if magic == b"RNET":
        from .nnet import ResNetClassifier, load_model
        return ResNetClassifier(load_model(path))
    if magic == b"LDA1":
        from .lda import load_lda
        return load_lda(path)
    raise DataError(f"{path}: unrecognised model format {magic!r}")


def _parse_thresholds(text: str) -> list[float]:
    try:
        if ":" in text:
            lo, hi, step = (float(v) for v in text.split(":"))
            n = int(round((hi - lo) / step)) + 1
            return [round(lo + i * step, 10) for i in range(n) if lo + i * step <= hi + 1e-9]
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse thresholds {text!r}; use lo:hi:step or a comma list") from None


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- synth

SYNTH_DATASET_DEFAULTS = {"n_pos": 500, "n_neg": 500, "snr_lo": 5.0, "snr_hi": 15.0, "jitter_max": 0.5,
                          "white": 0.5, "tonal": 0.25, "transient": 0.25, "confuser_frac": 0.5, "seed": 0}
SYNTH_CONT_DEFAULTS = {"duration": 600.0, "calls": 30, "snr_lo": 5.0, "snr_hi": 15.0, "white": 1.0,
                       "tonal": 0.0, "transient": 0.0, "seed": 0, "source_id": "synth_cont"}


def cmd_synth(args) -> int:
    from .synth import SynthSpec, synth_continuous, synth_dataset_waveforms

    out = _out_dir(args.out)
    if args.kind == "dataset":
        if args.spec:
            args.config = args.spec
        cfg = resolve(args, "synth", SYNTH_DATASET_DEFAULTS)
        spec = SynthSpec(n_pos=int(cfg["n_pos"]), n_neg=int(cfg["n_neg"]),
                         snr_range=(float(cfg["snr_lo"]), float(cfg["snr_hi"])),
                         jitter_max=float(cfg["jitter_max"]),
                         noise_mix={k: float(cfg[k]) for k in ("white", "tonal", "transient")},
                         confuser_frac=float(cfg["confuser_frac"]), seed=int(cfg["seed"]))
        rows = []
        for i, (x, label, t, snr) in enumerate(synth_dataset_waveforms(spec)):
            name = f"seg{i:05d}.wav"
            write_wav(out / name, AudioClip(x, SAMPLE_RATE), bits=32)
            rows.append([name, label, f"{t:.3f}", "" if np.isnan(snr) else f"{snr:.6f}"])
        with (out / "labels.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["file", "label", "timestamp", "snr"])
            w.writerows(rows)
        print(f"wrote {len(rows)} segments and labels.csv to {out}")
    else:
        cfg = resolve(args, "synth", SYNTH_CONT_DEFAULTS)
        rng = np.random.default_rng(int(cfg["seed"]))
        duration, n_calls = float(cfg["duration"]), int(cfg["calls"])
        times = _spread_call_times(rng, duration, n_calls)
        snrs = rng.uniform(float(cfg["snr_lo"]), float(cfg["snr_hi"]), size=n_calls)
        mix = {k: float(cfg[k]) for k in ("white", "tonal", "transient")}
        clip, ann = synth_continuous(duration, times, snrs, mix, int(cfg["seed"]) + 1, cfg["source_id"])
        write_wav(out / f"{cfg['source_id']}.wav", clip, bits=32)
        write_annotations(out / f"{cfg['source_id']}_annotations.csv", ann)
        print(f"wrote {cfg['source_id']}.wav ({duration:.0f} s, {n_calls} calls) to {out}")
    return EXIT_OK


def _spread_call_times(rng, duration: float, n_calls: int, margin: float = 3.0) -> np.ndarray:
    """Call onsets jittered inside equal slots so calls never overlap."""
    if n_calls == 0:
        return np.zeros(0)
    slot = (duration - 2 * margin) / n_calls
    if slot < 2.0:
        raise DataError(f"{n_calls} calls do not fit in {duration} s")
    starts = margin + slot * np.arange(n_calls)
    return np.round(starts + rng.uniform(0, slot - 1.0, size=n_calls), 3)


# ---------------------------------------------------------------- train

TRAIN_DEFAULTS = {"model": "resnet", "net": "tiny", "epochs": 100, "batch_size": 128, "lr": 0.001,
                  "decay": 0.01, "seed": 0, "runs": 1, "cv": 0, "pca_dims": "16,32,64,128,256"}


def load_training_set(data_dir):
    from .evaluation import LabeledSample

    data_dir = Path(data_dir)
    labels = data_dir / "labels.csv"
    if not labels.is_file():
        raise DataError(f"{data_dir}: missing labels.csv")
    samples = []
    with labels.open(newline="") as fh:
        for line_no, row in enumerate(csv.DictReader(fh), start=2):
            try:
                clip = load_audio(data_dir / row["file"])
                label = int(row["label"])
                ts = float(row["timestamp"])
                snr = float(row["snr"]) if row.get("snr") else float("nan")
            except (KeyError, ValueError) as exc:
                raise DataError(f"{labels}:{line_no}: malformed row ({exc})") from None
            n = int(round(SEGMENT_S * SAMPLE_RATE))
            if len(clip) != n:
                raise DataError(f"{row['file']}: expected a {SEGMENT_S} s segment, got {clip.duration:.3f} s")
            samples.append(LabeledSample(compute_spectrogram(clip).values, label, ts, snr, clip.source_id))
    if not samples:
        raise DataError(f"{labels}: no samples")
    return samples


def cmd_train(args) -> int:
    cfg = resolve(args, "train", TRAIN_DEFAULTS)
    if cfg["model"] not in ("resnet", "lda"):
        raise UsageError(f"--model must be resnet or lda for training, got {cfg['model']!r}")
    if cfg["model"] == "lda" and (int(cfg["runs"]) > 1 or int(cfg["cv"]) > 0):
        raise UsageError("--runs and --cv apply to --model resnet only")
    samples = load_training_set(args.data)
    out = _out_dir(args.out)

    if cfg["model"] == "lda":
        from .lda import save_lda, train_lda
        dims = [int(d) for d in str(cfg["pca_dims"]).split(",")]
        model = train_lda(samples, dims, int(cfg["seed"]))
        save_lda(out / "model.bin", model)
        print(f"LDA model with {model.pca.d} PCA dimensions written to {out / 'model.bin'}")
        return EXIT_OK

    from .nnet import NetConfig, TrainConfig, ensemble_train, kfold_cv, save_model, write_history_csv
    net_cfg = {"tiny": NetConfig.tiny, "full": NetConfig.full}.get(cfg["net"])
    if net_cfg is None:
        raise UsageError(f"--net must be tiny or full, got {cfg['net']!r}")
    net_cfg = net_cfg()
    tc = TrainConfig(batch_size=int(cfg["batch_size"]), epochs=int(cfg["epochs"]), lr=float(cfg["lr"]),
                     decay=float(cfg["decay"]), seed=int(cfg["seed"]))

    if int(cfg["cv"]) > 0:
        cv = kfold_cv(samples, tc, net_cfg, int(cfg["cv"]))
        with (out / "cv.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "n_train", "n_val", "f1"])
            for i, (f1, ntr, nva) in enumerate(zip(cv.fold_f1, cv.train_sizes, cv.val_sizes)):
                w.writerow([i, ntr, nva, f"{f1:.6f}"])
        print(f"cross-validation F1 {cv.mean:.4f} +/- {cv.std:.4f} over {len(cv.fold_f1)} folds")

    runs = int(cfg["runs"])
    results = ensemble_train(samples, tc, runs, net_cfg)
    save_model(out / "model.bin", results[0].params)
    write_history_csv(out / "history.csv", results[0].history)
    if runs > 1:
        finals = []
        for r, res in enumerate(results):
            run_dir = _out_dir(out / f"run{r}")
            save_model(run_dir / "model.bin", res.params)
            write_history_csv(run_dir / "history.csv", res.history)
            finals.append(res.history[-1].f1)
        summary = percentile_summary(finals)
        with (out / "ensemble.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "seed", "final_f1"])
            for r, f1 in enumerate(finals):
                w.writerow([r, tc.seed + r, f"{f1:.6f}"])
            for key in ("mean", "p10", "p90"):
                w.writerow([key, "", f"{summary[key]:.6f}"])
    print(f"trained {runs} model(s); final training F1 {results[0].history[-1].f1:.4f}; output in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- detect / evaluate / sweep

DETECT_DEFAULTS = {"model": "", "threshold": 0.5}
EVALUATE_DEFAULTS = {"snr_min": float("nan"), "threshold": float("nan")}
SWEEP_DEFAULTS = {"model": "", "thresholds": "0.05:0.95:0.05", "snr_min": float("nan")}


def _unset(value) -> bool:
    return value == "" or (isinstance(value, float) and math.isnan(value))


def cmd_detect(args) -> int:
    cfg = resolve(args, "detect", DETECT_DEFAULTS)
    if _unset(cfg["model"]):
        raise UsageError("detect needs --model <file>")
    threshold = float(cfg["threshold"])
    if not 0 <= threshold <= 1:
        raise UsageError(f"--threshold must lie in [0, 1], got {threshold}")
    scorer = load_scorer(cfg["model"])
    events = []
    for path in _audio_paths(args.wav):
        clip = load_audio(path)
        found = detect(clip, scorer, threshold)
        log.info("%s: %d events", clip.source_id, len(found))
        events.extend(found)
    write_events_csv(args.out, events)
    print(f"{len(events)} detection events written to {args.out}")
    return EXIT_OK


def _durations(audio_items) -> dict[str, float]:
    from .signal import read_wav
    return {p.stem: read_wav(p).duration for p in _audio_paths(audio_items)}


def _check_sources(annotations, sources):
    for a in annotations:
        if a.source_id not in sources:
            raise DataError(f"annotation source_id {a.source_id!r} has no matching audio file")


def cmd_evaluate(args) -> int:
    cfg = resolve(args, "evaluate", EVALUATE_DEFAULTS)
    snr_min = None if _unset(cfg["snr_min"]) else float(cfg["snr_min"])
    threshold = None if _unset(cfg["threshold"]) else float(cfg["threshold"])
    annotations = read_annotations(args.annotations)
    events = read_events_csv(args.detections)
    durations = _durations(args.audio)
    _check_sources(annotations, durations)
    for e in events:
        if e.source_id not in durations:
            raise DataError(f"detection source_id {e.source_id!r} has no matching audio file")
    per_file = []
    retained = 0
    for sid in sorted(durations):
        ann = [a for a in annotations if a.source_id == sid]
        evt = [e for e in events if e.source_id == sid]
        if snr_min is None:
            per_file.append(match_events(ann, evt))
        else:
            counts, kept = snr_filtered_counts(ann, evt, snr_min)
            per_file.append(counts)
            retained += kept
    report = compute_metrics(sum_counts(per_file), sum(durations.values()) / 3600.0,
                             retained if snr_min is not None else None, threshold)
    write_report_csv(args.out, [report])
    print(report.summary())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = resolve(args, "sweep", SWEEP_DEFAULTS)
    if _unset(cfg["model"]):
        raise UsageError("sweep needs --model <file>")
    thresholds = _parse_thresholds(str(cfg["thresholds"]))
    snr_min = None if _unset(cfg["snr_min"]) else float(cfg["snr_min"])
    annotations = read_annotations(args.annotations)
    scorer = load_scorer(cfg["model"])
    paths = _audio_paths(args.wav)
    _check_sources(annotations, {p.stem for p in paths})
    out = _out_dir(args.out)
    per_threshold = [[] for _ in thresholds]
    retained = [0] * len(thresholds)
    total_h = 0.0
    for path in paths:
        clip = load_audio(path)
        series = smooth(score_stream(clip, scorer))
        write_scores_csv(out / f"{clip.source_id}_scores.csv", series)
        ann = [a for a in annotations if a.source_id == clip.source_id]
        reports = threshold_sweep(ann, series, thresholds, clip.duration / 3600.0, snr_min)
        for i, r in enumerate(reports):
            per_threshold[i].append(_counts_of(r))
            retained[i] += r.retained or 0
        total_h += clip.duration / 3600.0
    reports = [compute_metrics(sum_counts(c), total_h, retained[i] if snr_min is not None else None, thr)
               for i, (c, thr) in enumerate(zip(per_threshold, thresholds))]
    write_report_csv(out / "sweep.csv", reports)
    write_curve_csv(out / "pr_curve.csv", reports, "recall", "precision")
    write_curve_csv(out / "fpr_recall_curve.csv", reports, "fpr", "recall")
    write_curve_csv(out / "recall_threshold.csv", reports, "threshold", "recall")
    write_curve_csv(out / "precision_threshold.csv", reports, "threshold", "precision")
    print(f"swept {len(thresholds)} thresholds over {len(paths)} file(s); curves in {out}")
    return EXIT_OK


def _counts_of(report):
    from .evaluation import MatchCounts
    return MatchCounts(report.tp_ann, report.fn, report.tp_evt, report.fp)


# ---------------------------------------------------------------- snr

def segment_at(clip: AudioClip, t_start: float, length: float = SEGMENT_S) -> AudioClip:
    n = int(round(length * SAMPLE_RATE))
    i = int(round((t_start - clip.start_time) * SAMPLE_RATE))
    if i < 0 or i + n > len(clip):
        raise DataError(f"{length} s segment at {t_start} s falls outside {clip.source_id} "
                        f"({clip.duration:.3f} s)")
    return AudioClip(clip.samples[i:i + n], SAMPLE_RATE, t_start, clip.source_id)


def cmd_snr(args) -> int:
    from .snr import estimate_snr

    if args.annotations:
        annotations = read_annotations(args.annotations)
        clips = {p.stem: load_audio(p) for p in _audio_paths(args.audio or ([args.wav] if args.wav else []))}
        _check_sources(annotations, clips)
        out = []
        for a in annotations:
            clip = clips[a.source_id]
            mid = (a.t_start + a.t_end) / 2
            t0 = min(max(mid - SEGMENT_S / 2, 0.0), clip.duration - SEGMENT_S)
            snr = estimate_snr(compute_spectrogram(segment_at(clip, t0)))
            out.append(Annotation(a.source_id, a.t_start, a.t_end, round(snr, 6)))
        if args.out is None:
            raise UsageError("batch SNR mode needs --out <csv>")
        write_annotations(args.out, out)
        print(f"SNR appended for {len(out)} annotations in {args.out}")
        return EXIT_OK
    if args.wav is None or args.t_start is None:
        raise UsageError("snr needs <wav> <t_start>, or --annotations with --audio for batch mode")
    clip = load_audio(args.wav)
    print(f"{estimate_snr(compute_spectrogram(segment_at(clip, args.t_start))):.3f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="upcall", description="Right whale upcall detection toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress and resolved config to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate synthetic data")
    s.add_argument("kind", choices=["dataset", "continuous"])
    s.add_argument("--spec", help="key=value file for dataset generation")
    s.add_argument("--config", help="key=value config file ([synth] section)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--calls", type=int)
    s.add_argument("--n-pos", dest="n_pos", type=int)
    s.add_argument("--n-neg", dest="n_neg", type=int)
    s.add_argument("--snr-lo", dest="snr_lo", type=float)
    s.add_argument("--snr-hi", dest="snr_hi", type=float)
    s.add_argument("--source-id", dest="source_id")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a classifier on a labelled segment directory")
    t.add_argument("--data", required=True, help="directory with labels.csv and WAV segments")
    t.add_argument("--model", choices=["resnet", "lda"])
    t.add_argument("--net", choices=["tiny", "full"])
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--decay", type=float)
    t.add_argument("--runs", type=int)
    t.add_argument("--cv", type=int)
    t.add_argument("--pca-dims", dest="pca_dims")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="run the detector on continuous WAV files")
    d.add_argument("wav", nargs="+")
    d.add_argument("--model")
    d.add_argument("--threshold", type=float)
    d.add_argument("--out", required=True)
    d.add_argument("--config")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", help="score detections against annotations")
    e.add_argument("--annotations", required=True)
    e.add_argument("--detections", required=True)
    e.add_argument("--audio", nargs="+", required=True, help="WAV files or directories (durations, source ids)")
    e.add_argument("--snr-min", dest="snr_min", type=float)
    e.add_argument("--threshold", type=float, help="recorded in the report row")
    e.add_argument("--out", required=True)
    e.add_argument("--config")
    e.set_defaults(func=cmd_evaluate)

    n = sub.add_parser("snr", help="estimate SNR of a 3-s segment, or of every annotation")
    n.add_argument("wav", nargs="?")
    n.add_argument("t_start", nargs="?", type=float)
    n.add_argument("--annotations")
    n.add_argument("--audio", nargs="+")
    n.add_argument("--out")
    n.set_defaults(func=cmd_snr)

    w = sub.add_parser("sweep", help="recall/precision/FPR curves over thresholds")
    w.add_argument("wav", nargs="+")
    w.add_argument("--model")
    w.add_argument("--annotations", required=True)
    w.add_argument("--thresholds", help="lo:hi:step or a comma list (default 0.05:0.95:0.05)")
    w.add_argument("--snr-min", dest="snr_min", type=float)
    w.add_argument("--out", required=True)
    w.add_argument("--config")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"upcall: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"upcall: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"upcall: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
