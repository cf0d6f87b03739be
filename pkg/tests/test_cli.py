import numpy as np
import pytest

import synth
from wfse import audio, cli, neural, pipeline


def run(argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture()
def corpus_manifest(small_corpus, tmp_path):
    path = tmp_path / "manifest.csv"
    pipeline.write_manifest(small_corpus, path)
    return path


def test_mix_writes_wavs_with_exact_snr(tmp_path, small_corpus):
    rows = small_corpus[:2]
    manifest = tmp_path / "m.csv"
    pipeline.write_manifest(rows, manifest)
    out_dir = tmp_path / "mixes"
    assert run(["mix", manifest, out_dir]) == 0

    updated = pipeline.read_manifest(out_dir / "manifest.csv")
    assert len(updated) == 2
    for row in updated:
        assert row.mixture
        mixture = audio.load_wav(row.mixture)
        clean = audio.load_wav(row.clean)
        noise = mixture.samples - clean.samples
        measured = 10 * np.log10(np.mean(clean.samples**2) / np.mean(noise**2))
        assert abs(measured - row.snr_db) < 0.01


def test_mix_is_deterministic(tmp_path, small_corpus):
    manifest = tmp_path / "m.csv"
    pipeline.write_manifest(small_corpus[:2], manifest)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run(["mix", manifest, out_a]) == 0
    assert run(["mix", manifest, out_b]) == 0
    for name in sorted(p.name for p in out_a.iterdir()):
        a = (out_a / name).read_bytes()
        b = (out_b / name).read_bytes()
        if name.endswith(".wav"):
            assert a == b
    assert (out_a / "manifest.csv").read_text().replace(str(out_a), "") == \
           (out_b / "manifest.csv").read_text().replace(str(out_b), "")


def test_stats_roundtrip(tmp_path, corpus_manifest):
    out = tmp_path / "stats.wfs"
    assert run(["stats", corpus_manifest, out]) == 0
    stats = pipeline.load_stats(out)
    assert len(stats.mean) == 645
    assert np.all(stats.std > 0)


def _train_once(tmp_path, corpus_manifest, extra=()):
    model_path = tmp_path / "model.wfd"
    stats_path = tmp_path / "stats.wfs"
    log_path = tmp_path / "log.csv"
    code = run(list(extra) + [
        "--set", "train.max_steps=12", "--set", "train.eval_every=6",
        "--set", "topology.hidden=32,16,16,16,8",
        "train", corpus_manifest,
        "--model", model_path, "--stats", stats_path, "--log", log_path])
    return code, model_path, stats_path, log_path


def test_train_enhance_eval_workflow(tmp_path, corpus_manifest, small_corpus, capsys):
    code, model_path, stats_path, log_path = _train_once(tmp_path, corpus_manifest)
    assert code == 0
    assert log_path.read_text().startswith("step,train_loss,val_loss")

    # enhance a mixture of the test row
    row = [r for r in small_corpus if r.split == "test"][0]
    _, mixture, _ = pipeline.mix_row(row)
    noisy_path = tmp_path / "noisy.wav"
    audio.save_wav(mixture, noisy_path)
    out_wav = tmp_path / "enhanced.wav"
    trace_path = tmp_path / "trace.wfm"
    assert run(["enhance", "--model", model_path, "--stats", stats_path,
                noisy_path, out_wav, "--mask-trace", trace_path]) == 0
    enhanced = audio.load_wav(out_wav)
    assert len(enhanced) == len(mixture)
    trace = pipeline.load_mask_trace(trace_path)
    assert trace.shape[1] == 129
    assert np.all((trace >= 0) & (trace <= 1))

    report = tmp_path / "report.csv"
    assert run(["eval", corpus_manifest, "--model", model_path,
                "--stats", stats_path, "--report", report]) == 0
    text = report.read_text()
    assert text.startswith("condition,snr_in_db,delta_snr_db,ssdr_db")
    capsys.readouterr()


def test_enhance_dimension_mismatch_exits_2(tmp_path, corpus_manifest, small_corpus):
    code, model_path, _, _ = _train_once(tmp_path, corpus_manifest)
    assert code == 0
    bad_stats = pipeline.FeatureStats(np.zeros(100), np.ones(100))
    bad_path = tmp_path / "bad.wfs"
    pipeline.save_stats(bad_stats, bad_path)
    noisy_path = tmp_path / "x.wav"
    audio.save_wav(audio.Utterance(np.zeros(2000) + 0.01), noisy_path)
    out_wav = tmp_path / "should_not_exist.wav"
    assert run(["enhance", "--model", model_path, "--stats", bad_path,
                noisy_path, out_wav]) == 2
    assert not out_wav.exists()


def test_missing_input_exits_3(tmp_path):
    assert run(["enhance", "--model", tmp_path / "no.wfd",
                "--stats", tmp_path / "no.wfs",
                tmp_path / "no.wav", tmp_path / "out.wav"]) == 3


def test_bad_config_key_exits_2(tmp_path, corpus_manifest):
    assert run(["--set", "nope.nope=1", "stats", corpus_manifest,
                tmp_path / "s.wfs"]) == 2
    assert run(["--set", "weight.gamma1=2.0", "stats", corpus_manifest,
                tmp_path / "s.wfs"]) == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("train.lr = 1e-3\nweight.gamma1 = 0.9  # comment\n")
    cfg = cli.load_config(cfg_file, overrides=["train.lr=2e-3"])
    assert cfg["train.lr"] == 2e-3   # flag beats file
    assert cfg["weight.gamma1"] == 0.9  # file beats default
    assert cfg["weight.gamma2"] == 0.6  # default survives


def test_gradcheck_exits_zero(capsys):
    assert run(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "OK" in out


def test_analyze_writes_csv(tmp_path, small_corpus, capsys):
    row = small_corpus[0]
    out = tmp_path / "curves.csv"
    assert run(["analyze", row.clean, row.noise, "--frame", "8",
                "--snr-db", "5", "--out", out]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "k,envelope_db,noise_db,shaped_noise_db"
    assert len(lines) == 1 + 129
    capsys.readouterr()


def test_sweep_two_gammas(tmp_path, corpus_manifest, capsys):
    out = tmp_path / "sweep.csv"
    assert run(["--set", "train.max_steps=8", "--set", "train.eval_every=4",
                "--set", "topology.hidden=32,16", "sweep", corpus_manifest,
                "--gamma1", "1.0,0.92", "--out", out]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "gamma1,val_loss,val_delta_snr_db,val_ssdr_db"
    assert len(lines) == 3
    capsys.readouterr()
