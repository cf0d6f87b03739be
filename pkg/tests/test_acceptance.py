"""Acceptance suite: one test per exit criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.  The end-to-end criteria train real models at desk
scale and take a few minutes.
"""

import io
import time

import numpy as np
import pytest

import synth
from wfse import audio, dsp, metrics, neural, percept, pipeline
from test_metrics import naive_ssdr

CFG = dsp.StftConfig()


def _report(number, text):
    print(f"\n[criterion {number:2d}] PASS: {text}")


def _save_bytes(model):
    buf = io.BytesIO()
    # save_model writes to a path; go through a real file for fidelity
    import tempfile
    with tempfile.NamedTemporaryFile(suffix=".wfd") as fh:
        neural.save_model(model, fh.name)
        fh.seek(0)
        buf.write(open(fh.name, "rb").read())
    return buf.getvalue()


# --- shared end-to-end corpus and runs -------------------------------------------

def _make_corpus(root, rng):
    """20 pseudo-utterances (15 train / 4 val / 1 held-out test) + two noises."""
    noises = {}
    for name, gen in (("white", synth.white_noise), ("pink", synth.pink_noise)):
        path = root / f"{name}.wav"
        audio.save_wav(gen(rng, 48000), path)
        noises[name] = str(path)
    rows = []
    splits = ["train"] * 15 + ["val"] * 4 + ["test"]
    for i, split in enumerate(splits):
        path = root / f"utt{i:02d}.wav"
        audio.save_wav(synth.speech_like(rng, 24000), path)
        rows.append(pipeline.ManifestRow(
            clean=str(path), noise=noises["white" if i % 2 == 0 else "pink"],
            snr_db=[0.0, 5.0, 10.0][i % 3], split=split, seed=900 + i))
    return rows


def _run_once(rows, weight, seed=7):
    topo = neural.Topology(input_dim=645, hidden=(256, 128, 128, 128, 64),
                           output_dim=129)
    config = pipeline.TrainConfig(lr=5e-4, batch_size=128, max_steps=2000,
                                  eval_every=250, weight=weight, seed=seed)
    model, stats, log = pipeline.train(rows, topo, config)

    test_row = [r for r in rows if r.split == "test"][0]
    clean, mixture, scaled = pipeline.mix_row(test_row)
    _, mask = pipeline.enhance(model, stats, mixture)
    pair = metrics.filter_components(clean.samples, scaled.samples, mask)
    delta = metrics.delta_snr(clean.samples, scaled.samples, pair, test_row.snr_db)
    return {
        "log": log,
        "loss_ratio": log[-1][1] / log[0][1],
        "delta_snr": delta,
        "model_bytes": _save_bytes(model),
    }


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_e2e")
    rows = _make_corpus(root, np.random.default_rng(424242))
    t0 = time.time()
    weighted = _run_once(rows, percept.WeightConfig("amr", gamma1=0.92, gamma2=0.6))
    reference = _run_once(rows, percept.WeightConfig("mse"))
    runtime = time.time() - t0
    weighted_again = _run_once(rows, percept.WeightConfig("amr", gamma1=0.92,
                                                          gamma2=0.6))
    return {"rows": rows, "weighted": weighted, "reference": reference,
            "weighted_again": weighted_again, "runtime": runtime}


@pytest.fixture(scope="module")
def reduction_runs(tmp_path_factory):
    """Two 100-step runs whose weight tables are all ones, plus a repeat."""
    root = tmp_path_factory.mktemp("acceptance_reduction")
    rows = _make_corpus(root, np.random.default_rng(515151))[:6]  # train subset
    for r in rows:
        r.split = "train"
    topo = neural.Topology(input_dim=645, hidden=(32, 16, 16, 16, 8), output_dim=129)

    def run(weight):
        config = pipeline.TrainConfig(lr=5e-4, batch_size=128, max_steps=100,
                                      eval_every=25, weight=weight, seed=13)
        model, _, log = pipeline.train(rows, topo, config)
        return {"log": log, "model_bytes": _save_bytes(model)}

    unit_tables = percept.WeightConfig("amr", gamma1=0.6, gamma2=0.6)
    return {
        "unit": run(unit_tables),
        "mse": run(percept.WeightConfig("mse")),
        "unit_again": run(unit_tables),
    }


# --- criterion 1: STFT/ISTFT identity -----------------------------------------------

def test_criterion_01_stft_istft_identity():
    rng = np.random.default_rng(1)
    start = time.time()
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(16000) * 0.5  # 1 s at 16 kHz
        spec = dsp.stft(x, CFG)
        rec = dsp.istft(np.abs(spec), np.angle(spec), CFG, length=len(x))
        interior = slice(CFG.hop, len(x) - CFG.hop)
        worst = max(worst, float(np.max(np.abs(rec[interior] - x[interior]))))
    elapsed = time.time() - start
    assert worst <= 1e-10, f"interior reconstruction error {worst:.3e}"
    assert elapsed < 5.0, f"took {elapsed:.1f}s"
    _report(1, f"STFT/ISTFT identity on 100 signals: max interior error "
               f"{worst:.2e} (double), {elapsed:.1f}s")


# --- criterion 2: FFT vs naive DFT ---------------------------------------------------

def test_criterion_02_fft_vs_naive_dft():
    rng = np.random.default_rng(2)
    k = 256
    n = np.arange(k)
    dft_matrix = np.exp(-2j * np.pi * np.outer(n, n) / k)
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(k)
        worst = max(worst, float(np.max(np.abs(dsp.fft(x) - dft_matrix @ x))))
    assert worst <= 1e-10
    _report(2, f"radix-2 FFT vs naive DFT, K=256, 100 frames: max error {worst:.2e}")


# --- criterion 3: Levinson-Durbin vs direct solve -------------------------------------

def test_criterion_03_levinson_vs_toeplitz_solve():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        frame = rng.standard_normal(256) * rng.uniform(0.1, 2.0)
        r = percept.autocorrelate(frame, 16)
        lp = percept.levinson_durbin(r, 16)
        toeplitz = np.array([[r[abs(i - j)] for j in range(16)] for i in range(16)])
        direct = np.linalg.solve(toeplitz, r[1:17])
        rel = np.max(np.abs(lp.a - direct)) / max(np.max(np.abs(direct)), 1e-30)
        worst = max(worst, float(rel))
        assert np.all(np.abs(lp.reflection) < 1.0)
    assert worst <= 1e-8
    _report(3, f"Levinson vs direct Toeplitz solve, 1000 draws: worst relative "
               f"error {worst:.2e}, all |k| < 1")


# --- criterion 4: loss kernel ----------------------------------------------------------

def test_criterion_04_loss_kernel():
    ones = np.ones(5)
    j8 = percept.weighted_loss(ones, np.zeros(5), np.ones(5))
    j14 = percept.weighted_loss(ones, np.zeros(5), np.array([1.0, 2, 1, 1, 1]))
    assert abs(j8 - 8.0) <= 1e-12
    assert abs(j14 - 14.0) <= 1e-12

    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        t, est = rng.random(129), rng.random(129)
        w = 0.5 + rng.random(129)
        g = percept.weighted_loss_grad(t, est, w)
        h = 1e-6
        for k in rng.integers(0, 129, size=8):
            up, down = est.copy(), est.copy()
            up[k] += h
            down[k] -= h
            fd = (percept.weighted_loss(t, up, w)
                  - percept.weighted_loss(t, down, w)) / (2 * h)
            worst = max(worst, abs(g[k] - fd) / max(abs(fd), 1e-12))
    assert worst <= 1e-6
    _report(4, f"loss kernel: hand cases exact, gradient vs finite differences "
               f"worst {worst:.2e} relative")


# --- criterion 5: full-network gradient check -------------------------------------------

def test_criterion_05_full_network_gradcheck():
    start = time.time()
    topo = neural.Topology(input_dim=10, hidden=(8, 8), output_dim=5,
                           dropout_rate=0.0)
    assert any(topo.skips), "residual path must be active"
    worst = pipeline.gradient_check(seed=0, topology=topo)
    elapsed = time.time() - start
    assert worst <= 1e-4
    assert elapsed < 60.0
    _report(5, f"full-network gradients (BN on, residuals on) vs finite "
               f"differences: worst {worst:.2e} relative, {elapsed:.1f}s")


# --- criterion 6: reduction identity ------------------------------------------------------

def test_criterion_06_unit_weight_reduction_bitwise(reduction_runs):
    unit, mse = reduction_runs["unit"], reduction_runs["mse"]
    assert unit["log"] == mse["log"]
    assert unit["model_bytes"] == mse["model_bytes"]
    _report(6, "unit-weight run reproduces the MSE reference bitwise over "
               "100 steps (loss log and model file)")


# --- criterion 7: mixing accuracy ----------------------------------------------------------

def test_criterion_07_mixing_accuracy():
    rng = np.random.default_rng(7)
    grid = [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0]
    worst = 0.0
    for i in range(100):
        clean = audio.Utterance(rng.standard_normal(rng.integers(2000, 8000)) * 0.2)
        noise = audio.Utterance(rng.standard_normal(len(clean) + 1000) * 0.4,
                                role="noise")
        snr = grid[i % len(grid)]
        _, scaled = audio.mix_at_snr(clean, noise, snr, int(rng.integers(0, 1000)))
        measured = 10 * np.log10(np.mean(clean.samples**2)
                                 / np.mean(scaled.samples**2))
        worst = max(worst, abs(measured - snr))
    assert worst < 0.01
    _report(7, f"100 mixes across the -5..20 dB grid: worst SNR deviation "
               f"{worst:.2e} dB")


# --- criterion 8: metrics oracles ------------------------------------------------------------

def test_criterion_08_metrics_oracles():
    rng = np.random.default_rng(8)
    clean = synth.speech_like(rng, 8000).samples
    assert metrics.ssdr(clean, clean.copy()) == 30.0
    assert abs(metrics.ssdr(clean, np.zeros_like(clean))) <= 1e-12

    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(500, 4000))
        c = rng.standard_normal(n) * rng.uniform(0.01, 0.5)
        e = c + rng.standard_normal(n) * rng.uniform(0.0, 0.3)
        worst = max(worst, abs(metrics.ssdr(c, e) - naive_ssdr(c, e)))
    assert worst <= 1e-10

    worst_delta = 0.0
    for _ in range(10):
        c = rng.standard_normal(32000) * 0.2
        noise_full = audio.Utterance(rng.standard_normal(34000) * 0.1, role="noise")
        _, scaled = audio.mix_at_snr(audio.Utterance(c), noise_full,
                                     float(rng.uniform(-5, 20)))
        frames = dsp.stft(c, CFG).shape[0]
        pair = metrics.filter_components(c, scaled.samples, np.ones((frames, 129)))
        snr_in = 10 * np.log10(np.sum(c**2) / np.sum(scaled.samples**2))
        worst_delta = max(worst_delta,
                          abs(metrics.delta_snr(c, scaled.samples, pair, snr_in)))
    assert worst_delta <= 0.01
    _report(8, f"metrics: ssdr(c,c)=30, ssdr(c,0)=0, naive-oracle gap {worst:.2e}, "
               f"identity-mask |dSNR| worst {worst_delta:.4f} dB")


# --- criterion 9: end-to-end desk scale --------------------------------------------------------

def test_criterion_09_end_to_end(e2e):
    weighted, reference = e2e["weighted"], e2e["reference"]
    assert weighted["loss_ratio"] < 0.10, f"weighted ratio {weighted['loss_ratio']:.3f}"
    assert reference["loss_ratio"] < 0.10, f"reference ratio {reference['loss_ratio']:.3f}"
    assert weighted["delta_snr"] > 3.0, f"weighted dSNR {weighted['delta_snr']:.2f}"
    assert reference["delta_snr"] > 3.0, f"reference dSNR {reference['delta_snr']:.2f}"
    assert weighted["delta_snr"] >= reference["delta_snr"] - 0.5
    assert e2e["runtime"] < 900.0, f"took {e2e['runtime']:.0f}s"
    _report(9, f"end-to-end: loss ratios {weighted['loss_ratio']:.3f} / "
               f"{reference['loss_ratio']:.3f}, held-out dSNR "
               f"{weighted['delta_snr']:.2f} / {reference['delta_snr']:.2f} dB, "
               f"{e2e['runtime']:.0f}s for both runs")


# --- criterion 10: determinism -------------------------------------------------------------------

def test_criterion_10_determinism(e2e, reduction_runs):
    assert reduction_runs["unit"]["log"] == reduction_runs["unit_again"]["log"]
    assert (reduction_runs["unit"]["model_bytes"]
            == reduction_runs["unit_again"]["model_bytes"])
    assert e2e["weighted"]["log"] == e2e["weighted_again"]["log"]
    assert e2e["weighted"]["model_bytes"] == e2e["weighted_again"]["model_bytes"]
    _report(10, "repeated runs of criteria 6 and 9 are bitwise identical "
                "(loss logs and model files)")
