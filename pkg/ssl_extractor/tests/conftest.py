import gc

import numpy as np
import pytest
from scipy.io import wavfile

from sslextract.extract import ExtractSpec, load_model

SR = 16000


def write_tone(path, seconds, freq=220.0, sr=SR, stereo=False):
    t = np.arange(int(sr * seconds)) / sr
    x = (0.3 * np.sin(2 * np.pi * freq * t)).astype(np.float32)
    samples = (x * 32767).astype(np.int16)
    if stereo:
        samples = np.stack([samples, samples], axis=1)
    wavfile.write(path, sr, samples)


@pytest.fixture(scope="session")
def wav_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("wavs")
    write_tone(d / "utt_b.wav", 1.0)
    write_tone(d / "utt_a.wav", 0.5, freq=330.0)
    return d


# One-slot cache: each large encoder is ~1.3 GB, so holding all three at
# once can exhaust a small machine's RAM. Asking for a different model
# evicts the previous one first.
@pytest.fixture(scope="module")
def model_for(wav_dir):
    cache = {}

    def get(name):
        if name not in cache:
            cache.clear()
            gc.collect()
            # Random-init keeps the true architecture (conv geometry,
            # widths), so frame counts and dims match the checkpoints.
            spec = ExtractSpec(name, 0, str(wav_dir), "unused",
                               random_init=True)
            cache[name] = load_model(spec)
        return cache[name]

    yield get
    cache.clear()
    gc.collect()


def make_spec(wav_dir, out, model_name="wav2vec2-large", layer=3, **kw):
    return ExtractSpec(model_name, layer, str(wav_dir), str(out),
                       random_init=True, **kw)
