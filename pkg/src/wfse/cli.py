"""Command-line entry point: the full workflow as subcommands.

Configuration is a flat key=value file with section.key dotted names;
precedence is defaults < config file < command-line overrides (--set).
Every numeric field is validated before any computation runs.

Exit codes: 0 success, 2 config/validation, 3 I/O, 4 numeric failure,
5 verification-suite failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dsp, metrics, neural, percept, pipeline
from .audio import load_wav, mix_at_snr, save_wav
from .errors import (
    ChecksumMismatch,
    ConfigError,
    CorruptHeader,
    FrameCountMismatch,
    IoFailure,
    LengthMismatch,
    NoActiveFrames,
    NonFiniteGradient,
    SampleRateMismatch,
    ShapeMismatch,
    SilentFrame,
    SingularAutocorrelation,
    StaleCache,
    TooFewExamples,
    UnsupportedFormat,
    VersionMismatch,
    WfseError,
    ZeroNoiseComponent,
    ZeroPowerClean,
    ZeroPowerNoise,
)

DEFAULTS = {
    "seed": 0,
    "threads": 1,  # reserved; >1 currently changes nothing
    "stft.frame_len": 256,
    "stft.hop": 128,
    "stft.fft_size": 256,
    "weight.variant": "amr",
    "weight.gamma1": 0.92,
    "weight.gamma2": 0.6,
    "weight.preemphasis": 0.68,
    "weight.order": 16,
    "train.lr": 5e-4,
    "train.batch_size": 128,
    "train.max_steps": 2000,
    "train.eval_every": 100,
    "topology.hidden": "1024,512,512,512,256",
    "topology.leaky_slope": 0.01,
    "topology.dropout_rate": 0.2,
    "topology.bn_epsilon": 1e-5,
    "topology.bn_momentum": 0.99,
    "ssdr.r_min": -10.0,
    "ssdr.r_max": 30.0,
    "ssdr.vad_threshold_db": 40.0,
    "ssdr.energy_floor": 1e-10,
}

_IO_ERRORS = (IoFailure, CorruptHeader, UnsupportedFormat, VersionMismatch,
              ChecksumMismatch)
_VALIDATION_ERRORS = (ConfigError, LengthMismatch, ShapeMismatch,
                      SampleRateMismatch, FrameCountMismatch, TooFewExamples)
_NUMERIC_ERRORS = (ZeroPowerClean, ZeroPowerNoise, SingularAutocorrelation,
                   SilentFrame, NonFiniteGradient, NoActiveFrames,
                   ZeroNoiseComponent, StaleCache)


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def load_config(config_path=None, overrides=()) -> dict:
    cfg = dict(DEFAULTS)

    def apply(key, raw, source):
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r} ({source})")
        cfg[key] = _coerce(key, raw.strip())

    if config_path:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read config {config_path}: {exc}") from exc
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{config_path}:{lineno}: expected key=value")
            apply(*line.split("=", 1), source=f"{config_path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        apply(*item.split("=", 1), source="--set")
    return cfg


def _build(cfg: dict):
    """Validated config objects; any invariant violation aborts up front."""
    try:
        stft_config = dsp.StftConfig(cfg["stft.frame_len"], cfg["stft.hop"],
                                     cfg["stft.fft_size"])
        weight = percept.WeightConfig(
            cfg["weight.variant"], cfg["weight.gamma1"], cfg["weight.gamma2"],
            cfg["weight.preemphasis"], cfg["weight.order"])
        weight.validate()
        train_config = pipeline.TrainConfig(
            cfg["train.lr"], cfg["train.batch_size"], cfg["train.max_steps"],
            cfg["train.eval_every"], weight, cfg["seed"])
        train_config.validate()
        hidden = tuple(int(h) for h in str(cfg["topology.hidden"]).split(",") if h)
        if not hidden or any(h < 1 for h in hidden):
            raise ValueError("topology.hidden must be positive widths")
        bins = stft_config.bins
        topology = neural.Topology(
            input_dim=(2 * pipeline.CONTEXT + 1) * bins, hidden=hidden,
            output_dim=bins, leaky_slope=cfg["topology.leaky_slope"],
            dropout_rate=cfg["topology.dropout_rate"],
            bn_epsilon=cfg["topology.bn_epsilon"],
            bn_momentum=cfg["topology.bn_momentum"])
        if not 0.0 <= topology.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        ssdr_config = metrics.SsdrConfig(
            cfg["ssdr.r_min"], cfg["ssdr.r_max"], cfg["ssdr.vad_threshold_db"],
            cfg["ssdr.energy_floor"])
        ssdr_config.validate()
        if cfg["threads"] < 1:
            raise ValueError("threads must be >= 1")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return stft_config, weight, train_config, topology, ssdr_config


# --- subcommands -----------------------------------------------------------------

def cmd_mix(args, cfg) -> int:
    stft_config, *_ = _build(cfg)
    rows = pipeline.read_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, row in enumerate(rows):
        _, mixture, _ = pipeline.mix_row(row)
        name = f"mix_{i:04d}_{Path(row.clean).stem}_{Path(row.noise).stem}.wav"
        save_wav(mixture, out_dir / name)
        row.mixture = str(out_dir / name)
    pipeline.write_manifest(rows, out_dir / "manifest.csv", with_mixture=True)
    print(f"wrote {len(rows)} mixtures to {out_dir}")
    return 0


def cmd_stats(args, cfg) -> int:
    stft_config, weight, *_ = _build(cfg)
    rows = [r for r in pipeline.read_manifest(args.manifest) if r.split == "train"]
    examples = pipeline.build_examples(rows, stft_config, weight)
    stats = pipeline.fit_stats(examples.inputs)
    pipeline.save_stats(stats, args.out)
    print(f"fitted {len(stats.mean)}-dim statistics over {len(examples)} examples")
    return 0


def cmd_train(args, cfg) -> int:
    stft_config, _, train_config, topology, _ = _build(cfg)
    rows = pipeline.read_manifest(args.manifest)
    model, stats, log = pipeline.train(rows, topology, train_config, stft_config)
    neural.save_model(model, args.model)
    pipeline.save_stats(stats, args.stats)
    if args.log:
        pipeline.write_metrics_log(log, args.log)
    step, train_loss, val_loss = log[-1]
    print(f"step {step}: train_loss={train_loss:.6g} val_loss={val_loss:.6g}")
    return 0


def _load_model_and_stats(model_path, stats_path):
    model = neural.load_model(model_path)
    stats = pipeline.load_stats(stats_path)
    if len(stats.mean) != model.topology.input_dim:
        raise ConfigError(
            f"stats dimension {len(stats.mean)} does not match model input "
            f"{model.topology.input_dim}")
    return model, stats


def cmd_enhance(args, cfg) -> int:
    stft_config, *_ = _build(cfg)
    model, stats = _load_model_and_stats(args.model, args.stats)
    noisy = load_wav(args.in_wav, role="mixture")
    enhanced, mask = pipeline.enhance(model, stats, noisy, stft_config)
    save_wav(enhanced, args.out_wav)
    if args.mask_trace:
        pipeline.save_mask_trace(mask, args.mask_trace)
    print(f"enhanced {args.in_wav} -> {args.out_wav} ({mask.shape[0]} frames)")
    return 0


def cmd_eval(args, cfg) -> int:
    stft_config, _, _, _, ssdr_config = _build(cfg)
    model, stats = _load_model_and_stats(args.model, args.stats)
    rows = [r for r in pipeline.read_manifest(args.manifest) if r.split == args.split]
    if not rows:
        raise ConfigError(f"manifest has no rows with split {args.split!r}")
    report_rows = []
    for row in rows:
        clean, mixture, scaled = pipeline.mix_row(row)
        _, mask = pipeline.enhance(model, stats, mixture, stft_config)
        pair = metrics.filter_components(clean.samples, scaled.samples, mask,
                                         stft_config)
        report_rows.append(metrics.ReportRow(
            condition=Path(row.noise).stem,
            snr_in_db=row.snr_db,
            delta_snr_db=metrics.delta_snr(clean.samples, scaled.samples, pair,
                                           row.snr_db),
            ssdr_db=metrics.ssdr(clean.samples, pair.s_tilde, ssdr_config,
                                 stft_config)))
    if args.report:
        metrics.write_report(report_rows, args.report)
    print(metrics.format_report(report_rows))
    return 0


def cmd_sweep(args, cfg) -> int:
    stft_config, _, train_config, topology, _ = _build(cfg)
    try:
        gammas = [float(g) for g in args.gamma1.split(",") if g]
    except ValueError as exc:
        raise ConfigError(f"bad --gamma1 list: {args.gamma1!r}") from exc
    if not gammas:
        raise ConfigError("--gamma1 list is empty")
    rows = pipeline.read_manifest(args.manifest)
    table = pipeline.sweep_gamma(rows, gammas, topology, train_config, stft_config)
    ranked = sorted(table, key=lambda r: r["val_loss"])
    lines = ["gamma1,val_loss,val_delta_snr_db,val_ssdr_db"]
    lines += [f"{r['gamma1']!r},{r['val_loss']!r},{r['val_delta_snr_db']!r},"
              f"{r['val_ssdr_db']!r}" for r in ranked]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_analyze(args, cfg) -> int:
    stft_config, weight, *_ = _build(cfg)
    clean = load_wav(args.clean_wav, role="clean")
    noise = load_wav(args.noise_wav, role="noise")
    if args.snr_db is not None:
        _, scaled = mix_at_snr(clean, noise, args.snr_db)
        noise = scaled

    lp_source = clean.samples
    if weight.variant == "amr_wb":
        lp_source = percept.preemphasize(lp_source, weight.preemphasis)
    lp_frames = dsp.windowed_frames(lp_source, stft_config)
    noise_mag = np.abs(dsp.stft(noise.samples[: len(clean.samples)], stft_config))
    if not 0 <= args.frame < len(lp_frames):
        raise ConfigError(f"--frame must be in [0, {len(lp_frames)})")
    curves = percept.analyze_frame(lp_frames[args.frame], noise_mag[args.frame],
                                   weight, stft_config.fft_size)

    lines = ["k,envelope_db,noise_db,shaped_noise_db"]
    for k in range(stft_config.bins):
        lines.append(f"{k},{curves['envelope_db'][k]!r},{curves['noise_db'][k]!r},"
                     f"{curves['shaped_noise_db'][k]!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_gradcheck(args, cfg) -> int:
    tolerance = 1e-4
    cases = [
        neural.Topology(input_dim=10, hidden=(8, 8), output_dim=5, dropout_rate=0.0),
        neural.Topology(input_dim=12, hidden=(9, 7, 7), output_dim=6, dropout_rate=0.0),
        neural.Topology(input_dim=6, hidden=(6,), output_dim=4, dropout_rate=0.0),
    ]
    worst = 0.0
    for i, topo in enumerate(cases):
        err = pipeline.gradient_check(seed=cfg["seed"] + i, topology=topo)
        worst = max(worst, err)
        print(f"topology {topo.hidden}: max relative gradient error {err:.3e}")
    if worst > tolerance:
        print(f"FAIL: {worst:.3e} exceeds {tolerance:g}")
        return 5
    print(f"OK: worst {worst:.3e} within {tolerance:g}")
    return 0


# --- argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wfse",
        description="Speech enhancement with a perceptual weighting filter loss")
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, help="override the global seed")
    parser.add_argument("--threads", type=int, help="worker threads (reserved)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix", help="materialize mixture WAVs from a manifest")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("stats", help="fit and persist input normalization statistics")
    p.add_argument("manifest")
    p.add_argument("out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a masking model")
    p.add_argument("manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one noisy WAV")
    p.add_argument("--model", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("in_wav")
    p.add_argument("out_wav")
    p.add_argument("--mask-trace", help="write the per-frame mask (WFM1)")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="component-filtered metrics over a manifest split")
    p.add_argument("manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--report", help="write the aggregated CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train one model per gamma1 and rank them")
    p.add_argument("manifest")
    p.add_argument("--gamma1", required=True, help="comma-separated gamma1 values")
    p.add_argument("--out", help="write the ranking CSV here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="per-frame noise-shaping curves as CSV")
    p.add_argument("clean_wav")
    p.add_argument("noise_wav")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--snr-db", type=float, help="scale the noise to this SNR first")
    p.add_argument("--out", help="write the CSV here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads is not None:
            cfg["threads"] = args.threads
        return args.func(args, cfg)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _IO_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except WfseError as exc:  # anything unmapped counts as numeric
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
