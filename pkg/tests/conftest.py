import numpy as np
import pytest

import synth
from wfse import audio, pipeline


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A handful of short synthetic utterances + noises, as WAV files on disk."""
    root = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(2024)
    noise_paths = {}
    for name, gen in (("white", synth.white_noise), ("pink", synth.pink_noise)):
        path = root / f"{name}.wav"
        audio.save_wav(gen(rng, 20000), path)
        noise_paths[name] = str(path)

    rows = []
    splits = ["train"] * 4 + ["val"] * 2 + ["test"]
    for i, split in enumerate(splits):
        path = root / f"utt{i:02d}.wav"
        audio.save_wav(synth.speech_like(rng, 8000), path)
        rows.append(pipeline.ManifestRow(
            clean=str(path),
            noise=noise_paths["white" if i % 2 == 0 else "pink"],
            snr_db=[0.0, 5.0, 10.0][i % 3],
            split=split,
            seed=500 + i,
        ))
    return rows
