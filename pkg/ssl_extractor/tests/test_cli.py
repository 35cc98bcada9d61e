import subprocess
import sys

import numpy as np
import pytest
from scipy.io import wavfile

from sslextract.cli import main
from sslextract.fea import read_fea

SR = 16000


@pytest.fixture(scope="module")
def wav_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli_wavs")
    t = np.arange(SR // 2) / SR
    x = (0.3 * np.sin(2 * np.pi * 220 * t) * 32767).astype(np.int16)
    wavfile.write(d / "u1.wav", SR, x)
    return d


def test_no_args_is_usage_error(capsys):
    assert main([]) == 1
    err = capsys.readouterr().err
    assert "usage: ssl-extract" in err


def test_layer_and_all_layers_conflict(wav_dir, capsys):
    assert main(["--model", "wav2vec2-large", "--layer", "3", "--all-layers",
                 "--wav-dir", str(wav_dir), "--out", "x.fea"]) == 1
    assert "error" in capsys.readouterr().err


def test_layer_out_of_range_is_usage_error(wav_dir, capsys):
    assert main(["--model", "wav2vec2-large", "--layer", "25",
                 "--wav-dir", str(wav_dir), "--out", "x.fea"]) == 1
    assert "[0, 24]" in capsys.readouterr().err


def test_unknown_model_is_usage_error(wav_dir, capsys):
    assert main(["--model", "whisper-large", "--layer", "3",
                 "--wav-dir", str(wav_dir), "--out", "x.fea"]) == 1
    capsys.readouterr()


def test_speaker_meta_requires_cmvn(wav_dir, capsys):
    assert main(["--model", "wav2vec2-large", "--layer", "3",
                 "--wav-dir", str(wav_dir), "--out", "x.fea",
                 "--speaker-meta", "m.tsv"]) == 1
    assert "--cmvn" in capsys.readouterr().err


def test_missing_wav_dir_is_data_error(tmp_path, capsys):
    assert main(["--model", "wav2vec2-large", "--layer", "3", "--random-init",
                 "--wav-dir", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "x.fea")]) == 2
    assert "error" in capsys.readouterr().err


def test_extract_single_layer(wav_dir, tmp_path, capsys):
    out = tmp_path / "l5.fea"
    assert main(["--model", "wav2vec2-large", "--layer", "5", "--random-init",
                 "--wav-dir", str(wav_dir), "--out", str(out)]) == 0
    assert f"wrote {out}" in capsys.readouterr().out
    back = read_fea(out)
    assert back[0].utt_id == "u1"
    assert back[0].data.shape[1] == 1024


def test_extract_all_layers_with_cmvn(wav_dir, tmp_path, capsys):
    out_dir = tmp_path / "layers"
    assert main(["--model", "hubert-large", "--all-layers", "--random-init",
                 "--cmvn", "--wav-dir", str(wav_dir),
                 "--out", str(out_dir)]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 25
    archives = sorted(out_dir.glob("hubert-large.L*.fea"))
    assert len(archives) == 25
    fm = read_fea(out_dir / "hubert-large.L12.fea")[0]
    assert np.max(np.abs(fm.data.mean(axis=0))) < 1e-4


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sslextract"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "usage: ssl-extract" in proc.stderr
