"""Dataset assembly, the training loop, and the enhancement path.

A training example is one frame: the 5-frame context of noisy spectral
amplitudes (645 values, edge frames replicated at utterance boundaries)
as input, the clean amplitudes of the center frame as target, the noisy
center amplitudes for the multiplicative mask, and the per-frame weight
table computed from the clean frame.

Training samples minibatches with replacement from a seeded generator,
steps Adam after every batch, and logs probe losses to a CSV-able list.
Everything is deterministic given (manifest, config, seed): two runs
produce bitwise-identical logs and model files.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import dsp, neural, percept
from .audio import Utterance, load_wav, mix_at_snr
from .binio import check_magic, digest64, read_file, split_checked, write_file
from .errors import (
    LengthMismatch,
    SampleRateMismatch,
    ShapeMismatch,
    TooFewExamples,
)

CONTEXT = 2  # frames of left and right context
_STATS_MAGIC = b"WFS1"
_TRACE_MAGIC = b"WFM1"
_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 128
    max_steps: int = 2000
    eval_every: int = 100
    weight: percept.WeightConfig = percept.WeightConfig()
    seed: int = 0

    def validate(self) -> None:
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        self.weight.validate()


@dataclass
class ManifestRow:
    clean: str
    noise: str
    snr_db: float
    split: str  # train | val | test
    seed: int
    mixture: str = ""


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray  # floored at 1e-8, strictly positive


@dataclass
class ExampleSet:
    inputs: np.ndarray        # (n, 5 * bins)
    targets: np.ndarray       # (n, bins) clean magnitudes
    noisy_center: np.ndarray  # (n, bins) noisy magnitudes of the center frame
    weights: np.ndarray       # (n, bins) strictly positive weight tables

    def __len__(self) -> int:
        return len(self.inputs)


def context_features(mag: np.ndarray) -> np.ndarray:
    """Stack each frame with two left/right neighbors, replicating edges."""
    n_frames = mag.shape[0]
    idx = np.clip(np.arange(n_frames)[:, None] + np.arange(-CONTEXT, CONTEXT + 1),
                  0, n_frames - 1)
    return mag[idx].reshape(n_frames, -1)


def extract_examples(clean: Utterance, mixture: Utterance,
                     stft_config: dsp.StftConfig = dsp.StftConfig(),
                     weight_config: percept.WeightConfig = percept.WeightConfig(),
                     ) -> ExampleSet:
    """Per-frame training examples for one clean/mixture pair."""
    s = np.asarray(clean.samples, dtype=np.float64)
    y = np.asarray(mixture.samples, dtype=np.float64)
    if len(s) != len(y):
        raise LengthMismatch("clean and mixture must have equal length")

    clean_spec = dsp.stft(s, stft_config)
    noisy_mag = np.abs(dsp.stft(y, stft_config))
    target = np.abs(clean_spec)

    # LP source frames: AMR-WB preemphasizes the whole utterance first,
    # with filter memory carried across frame boundaries.
    lp_source = s
    if weight_config.variant == "amr_wb":
        lp_source = percept.preemphasize(s, weight_config.preemphasis)
    lp_frames = dsp.windowed_frames(lp_source, stft_config)
    weights = np.stack([
        percept.frame_weight_table(f, weight_config, stft_config.fft_size)
        for f in lp_frames
    ])
    return ExampleSet(context_features(noisy_mag), target, noisy_mag, weights)


def concat_examples(sets) -> ExampleSet:
    sets = list(sets)
    return ExampleSet(
        np.concatenate([e.inputs for e in sets]),
        np.concatenate([e.targets for e in sets]),
        np.concatenate([e.noisy_center for e in sets]),
        np.concatenate([e.weights for e in sets]),
    )


def fit_stats(inputs: np.ndarray) -> FeatureStats:
    """Per-dimension mean and population std over all training inputs."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooFewExamples("need at least two examples to fit statistics")
    return FeatureStats(x.mean(axis=0), np.maximum(x.std(axis=0), _STD_FLOOR))


def normalize(inputs: np.ndarray, stats: FeatureStats) -> np.ndarray:
    return (np.asarray(inputs, dtype=np.float64) - stats.mean) / stats.std


# --- manifest and binary sidecar files ---------------------------------------

def read_manifest(path) -> list[ManifestRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ManifestRow(
                clean=rec["clean"], noise=rec["noise"],
                snr_db=float(rec["snr_db"]), split=rec["split"],
                seed=int(rec["seed"]), mixture=rec.get("mixture", "") or ""))
    return rows


def write_manifest(rows, path, with_mixture: bool = False) -> None:
    names = ["clean", "noise", "snr_db", "split", "seed"]
    if with_mixture:
        names.append("mixture")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(names)
        for r in rows:
            rec = [r.clean, r.noise, repr(float(r.snr_db)), r.split, r.seed]
            if with_mixture:
                rec.append(r.mixture)
            out.writerow(rec)


def save_stats(stats: FeatureStats, path) -> None:
    dim = len(stats.mean)
    payload = (stats.mean.astype("<f8").tobytes()
               + stats.std.astype("<f8").tobytes())
    write_file(path, _STATS_MAGIC + struct.pack("<I", dim) + payload
               + struct.pack("<Q", digest64(payload)))


def load_stats(path) -> FeatureStats:
    blob = read_file(path)
    check_magic(blob, _STATS_MAGIC, path)
    (dim,) = struct.unpack_from("<I", blob, 4)
    payload = split_checked(blob, 8, path)
    if len(payload) != 2 * dim * 8:
        raise ShapeMismatch(f"{path}: payload does not hold 2x{dim} float64")
    mean = np.frombuffer(payload, dtype="<f8", count=dim).copy()
    std = np.frombuffer(payload, dtype="<f8", count=dim, offset=dim * 8).copy()
    return FeatureStats(mean, std)


def save_mask_trace(mask: np.ndarray, path) -> None:
    m = np.asarray(mask, dtype=np.float32)
    payload = m.astype("<f4").tobytes(order="C")
    write_file(path, _TRACE_MAGIC + struct.pack("<II", *m.shape) + payload
               + struct.pack("<Q", digest64(payload)))


def load_mask_trace(path) -> np.ndarray:
    blob = read_file(path)
    check_magic(blob, _TRACE_MAGIC, path)
    frames, bins = struct.unpack_from("<II", blob, 4)
    payload = split_checked(blob, 12, path)
    if len(payload) != frames * bins * 4:
        raise ShapeMismatch(f"{path}: payload does not hold {frames}x{bins} float32")
    return np.frombuffer(payload, dtype="<f4").reshape(frames, bins).copy()


# --- dataset assembly ---------------------------------------------------------

def mix_row(row: ManifestRow):
    """Materialize one manifest row: (clean, mixture, scaled_noise).

    The noise segment offset is drawn from the row's seed, so every command
    that re-mixes a row gets the identical mixture.
    """
    clean = load_wav(row.clean, role="clean")
    noise = load_wav(row.noise, role="noise")
    max_offset = len(noise) - len(clean)
    if max_offset < 0:
        raise ValueError(f"noise {row.noise} shorter than clean {row.clean}")
    offset = int(np.random.default_rng(row.seed).integers(0, max_offset + 1))
    mixture, scaled = mix_at_snr(clean, noise, row.snr_db, offset)
    return clean, mixture, scaled


def build_examples(rows, stft_config=dsp.StftConfig(),
                   weight_config=percept.WeightConfig()) -> ExampleSet:
    if not rows:
        raise TooFewExamples("no manifest rows for this split")
    parts = []
    for row in rows:
        clean, mixture, _ = mix_row(row)
        parts.append(extract_examples(clean, mixture, stft_config, weight_config))
    return concat_examples(parts)


# --- training -----------------------------------------------------------------

def _mean_loss(model, inputs, targets, noisy, weights, chunk: int = 2048) -> float:
    total = 0.0
    for lo in range(0, len(inputs), chunk):
        hi = lo + chunk
        mask, _ = neural.forward(model, inputs[lo:hi], "infer")
        est = noisy[lo:hi] * mask.astype(np.float64)
        total += float(np.sum(percept.weighted_loss(targets[lo:hi], est, weights[lo:hi])))
    return total / len(inputs)


def train(rows, topology: neural.Topology, config: TrainConfig,
          stft_config: dsp.StftConfig = dsp.StftConfig()):
    """Train a masking model from manifest rows.

    Returns (model, stats, log) where log is a list of
    (step, train_loss, val_loss) probe evaluations; val_loss is NaN when
    the manifest has no validation rows.
    """
    config.validate()
    train_rows = [r for r in rows if r.split == "train"]
    val_rows = [r for r in rows if r.split == "val"]
    data = build_examples(train_rows, stft_config, config.weight)
    stats = fit_stats(data.inputs)
    inputs = normalize(data.inputs, stats)

    val = None
    if val_rows:
        vdata = build_examples(val_rows, stft_config, config.weight)
        val = (normalize(vdata.inputs, stats), vdata.targets,
               vdata.noisy_center, vdata.weights)

    init_seed, sample_seed, dropout_seed = np.random.SeedSequence(config.seed).spawn(3)
    model = neural.Model(topology, seed=init_seed)
    sampler = np.random.default_rng(sample_seed)
    dropout_rng = np.random.default_rng(dropout_seed)

    probe = min(len(data), 4096)
    n = len(data)
    log = []
    for step in range(1, config.max_steps + 1):
        idx = sampler.integers(0, n, size=config.batch_size)
        mask, cache = neural.forward(model, inputs[idx], "train", dropout_rng)
        noisy = data.noisy_center[idx]
        est = noisy * mask.astype(np.float64)
        d_est = percept.weighted_loss_grad(data.targets[idx], est, data.weights[idx])
        d_mask = d_est * noisy / config.batch_size  # batch loss is the mean
        grads = neural.backward(model, cache, d_mask)
        neural.adam_step(model, grads, lr=config.lr)

        if step == 1 or step % config.eval_every == 0 or step == config.max_steps:
            train_loss = _mean_loss(model, inputs[:probe], data.targets[:probe],
                                    data.noisy_center[:probe], data.weights[:probe])
            val_loss = _mean_loss(model, *val) if val else float("nan")
            log.append((step, train_loss, val_loss))
    return model, stats, log


def write_metrics_log(log, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["step", "train_loss", "val_loss"])
        for step, train_loss, val_loss in log:
            out.writerow([step, repr(train_loss), repr(val_loss)])


# --- enhancement ----------------------------------------------------------------

def enhance(model: neural.Model, stats: FeatureStats, noisy: Utterance,
            stft_config: dsp.StftConfig = dsp.StftConfig()):
    """Mask-and-resynthesize one noisy utterance.

    Returns (enhanced_utterance, mask_trace); the trace is the (frames, bins)
    mask the model produced, for component-level evaluation.
    """
    if noisy.sample_rate != 16000:
        raise SampleRateMismatch(f"expected 16000 Hz, got {noisy.sample_rate}")
    if len(stats.mean) != model.topology.input_dim:
        raise ShapeMismatch("normalization statistics do not match model input")
    x = np.asarray(noisy.samples, dtype=np.float64)
    spec = dsp.stft(x, stft_config)
    mag = np.abs(spec)
    inputs = normalize(context_features(mag), stats)
    mask, _ = neural.forward(model, inputs, "infer")
    mask = mask.astype(np.float64)
    out = dsp.istft(mask * mag, np.angle(spec), stft_config, length=len(x))
    return Utterance(out, noisy.sample_rate, "enhanced"), mask


# --- gradient verification -------------------------------------------------------

def gradient_check(seed: int = 0, topology: neural.Topology | None = None,
                   batch: int = 4, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs the full training chain (forward with batch-norm statistics and
    residual paths, mask scaling, weighted loss) on a tiny double-precision
    model with dropout off, and perturbs every parameter.
    """
    topo = topology or neural.Topology(input_dim=10, hidden=(8, 8), output_dim=5,
                                       dropout_rate=0.0)
    if topo.dropout_rate != 0.0:
        raise ValueError("finite differences need dropout disabled")
    rng = np.random.default_rng(seed)
    model = neural.Model(topo, dtype=np.float64, seed=seed)
    x = rng.standard_normal((batch, topo.input_dim))
    target = 2.0 * rng.random((batch, topo.output_dim))
    noisy = 0.5 + rng.random((batch, topo.output_dim))
    table = 0.5 + rng.random((batch, topo.output_dim))

    def batch_loss():
        mask, cache = neural.forward(model, x, "train")
        est = noisy * mask
        return float(np.mean(percept.weighted_loss(target, est, table))), cache, mask

    _, cache, mask = batch_loss()
    d_mask = percept.weighted_loss_grad(target, noisy * mask, table) * noisy / batch
    grads = neural.backward(model, cache, d_mask)

    worst = 0.0
    for p, g in zip(model.parameters(), grads):
        flat_p, flat_g = p.ravel(), g.ravel()
        for j in range(flat_p.size):
            saved = flat_p[j]
            flat_p[j] = saved + step
            up, _, _ = batch_loss()
            flat_p[j] = saved - step
            down, _, _ = batch_loss()
            flat_p[j] = saved
            fd = (up - down) / (2.0 * step)
            rel = abs(flat_g[j] - fd) / max(abs(flat_g[j]), abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst


# --- gamma sweep ----------------------------------------------------------------

def sweep_gamma(rows, gamma1_list, topology: neural.Topology,
                base_config: TrainConfig,
                stft_config: dsp.StftConfig = dsp.StftConfig()) -> list[dict]:
    """Train one model per gamma1 and score each on the validation rows."""
    from . import metrics

    if not gamma1_list:
        raise ValueError("gamma1 list must be nonempty")
    val_rows = [r for r in rows if r.split == "val"]
    table = []
    for gamma1 in gamma1_list:
        config = replace(base_config,
                         weight=replace(base_config.weight, gamma1=float(gamma1)))
        model, stats, log = train(rows, topology, config, stft_config)
        delta, distortion = [], []
        for row in val_rows:
            clean, mixture, scaled = mix_row(row)
            _, mask = enhance(model, stats, mixture, stft_config)
            pair = metrics.filter_components(clean.samples, scaled.samples,
                                             mask, stft_config)
            delta.append(metrics.delta_snr(clean.samples, scaled.samples,
                                           pair, row.snr_db))
            distortion.append(metrics.ssdr(clean.samples, pair.s_tilde))
        table.append({
            "gamma1": float(gamma1),
            "val_loss": log[-1][2] if val_rows else float("nan"),
            "val_delta_snr_db": float(np.mean(delta)) if delta else float("nan"),
            "val_ssdr_db": float(np.mean(distortion)) if distortion else float("nan"),
        })
    return table
