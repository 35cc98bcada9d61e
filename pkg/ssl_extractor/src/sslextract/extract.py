"""Layer-wise embedding extraction from pretrained speech encoders.

Supports the large variants of three self-supervised models. Each
exposes 25 hidden layers of 1024-dim vectors at a 20 ms stride: layer 0
is the convolutional encoder output entering the transformer stack,
layers 1..24 are the transformer block outputs. Embeddings are written
as FEA1 archives for the lattice engine to consume.

A random-init mode builds the exact architecture without downloading
checkpoint weights; the convolutional geometry (kernels and strides,
hence frame counts) and every dimension are those of the real models,
so it serves offline testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile
from scipy.signal import resample_poly

from .fea import FeatureMatrix, write_fea

SAMPLE_RATE = 16000
N_LAYERS = 25
EMBED_DIM = 1024
FRAME_SHIFT = 0.02

VAR_FLOOR = 1e-10

# Hub checkpoint and pinned revision per supported model name.
MODELS = {
    "wav2vec2-large": ("facebook/wav2vec2-large-lv60", "main"),
    "hubert-large": ("facebook/hubert-large-ll60k", "main"),
    "data2vec-large": ("facebook/data2vec-audio-large", "main"),
}


class LayerOutOfRange(ValueError):
    """Layer index outside the encoder's hidden-layer range."""


class ModelUnavailable(RuntimeError):
    """Unknown model name, or weights that cannot be loaded or verified."""


class BadAudio(ValueError):
    """Unreadable, empty, multi-channel, too-short, or non-finite input."""


@dataclass
class ExtractSpec:
    """What to extract: model, layer, audio location, and output path.

    layer may be None only for all-layer extraction. speaker_meta
    switches CMVN from per-utterance to per-speaker statistics and
    names a TSV mapping utterances to speakers.
    """

    model_name: str
    layer: int | None
    wav_dir: str
    out: str
    device: str = "cpu"
    apply_cmvn: bool = False
    speaker_meta: str | None = None
    random_init: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.model_name not in MODELS:
            raise ModelUnavailable(
                f"unknown model {self.model_name!r}; "
                f"choose from {sorted(MODELS)}")
        if self.layer is not None and not (
                isinstance(self.layer, int) and 0 <= self.layer < N_LAYERS):
            raise LayerOutOfRange(
                f"layer must lie in [0, {N_LAYERS - 1}], got {self.layer!r}")
        if self.speaker_meta is not None and not self.apply_cmvn:
            raise ValueError("speaker_meta requires apply_cmvn")


def _architecture(model_name):
    from transformers import (
        Data2VecAudioConfig,
        Data2VecAudioModel,
        HubertConfig,
        HubertModel,
        Wav2Vec2Config,
        Wav2Vec2Model,
    )

    large = dict(hidden_size=EMBED_DIM, num_hidden_layers=N_LAYERS - 1,
                 num_attention_heads=16, intermediate_size=4096)
    if model_name == "wav2vec2-large":
        return Wav2Vec2Model, Wav2Vec2Config(
            feat_extract_norm="layer", do_stable_layer_norm=True, **large)
    if model_name == "hubert-large":
        return HubertModel, HubertConfig(
            feat_extract_norm="layer", do_stable_layer_norm=True, **large)
    return Data2VecAudioModel, Data2VecAudioConfig(**large)


def load_model(spec: ExtractSpec):
    """Build the encoder in inference mode on the requested device."""
    cls, config = _architecture(spec.model_name)
    if spec.random_init:
        torch.manual_seed(spec.seed)
        model = cls(config)
    else:
        repo, revision = MODELS[spec.model_name]
        try:
            model = cls.from_pretrained(repo, revision=revision)
        except Exception as exc:
            raise ModelUnavailable(
                f"could not load {repo}@{revision}: {exc}") from exc
    if (model.config.hidden_size != EMBED_DIM
            or model.config.num_hidden_layers != N_LAYERS - 1):
        raise ModelUnavailable(
            f"{spec.model_name}: encoder is not {N_LAYERS - 1} transformer "
            f"layers of {EMBED_DIM} dims")
    return model.eval().to(spec.device)


def frame_count(model, n_samples: int) -> int:
    """Output frames the convolutional front end produces."""
    t = n_samples
    for kernel, stride in zip(model.config.conv_kernel,
                              model.config.conv_stride):
        t = (t - kernel) // stride + 1
    return t


def read_wav_mono16k(path) -> np.ndarray:
    """Load one wav as float32 mono at 16 kHz, resampling if needed."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise BadAudio(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise BadAudio(f"{path}: expected mono audio, "
                       f"got {data.shape[1]} channels")
    if data.size == 0:
        raise BadAudio(f"{path}: empty audio")
    if data.dtype == np.uint8:
        samples = (data.astype(np.float32) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        samples = data.astype(np.float32) / float(np.iinfo(data.dtype).max)
    else:
        samples = data.astype(np.float32)
    if not np.all(np.isfinite(samples)):
        raise BadAudio(f"{path}: non-finite samples")
    if rate != SAMPLE_RATE:
        g = math.gcd(int(rate), SAMPLE_RATE)
        samples = resample_poly(
            samples, SAMPLE_RATE // g, int(rate) // g).astype(np.float32)
    return samples


def _hidden_states(model, samples: np.ndarray, device, path):
    if frame_count(model, len(samples)) < 1:
        raise BadAudio(f"{path}: too short ({len(samples)} samples "
                       "after resampling)")
    x = torch.from_numpy(samples).to(device)[None, :]
    with torch.no_grad():
        out = model(x, output_hidden_states=True)
    if len(out.hidden_states) != N_LAYERS:
        raise ModelUnavailable(
            f"expected {N_LAYERS} hidden layers, "
            f"got {len(out.hidden_states)}")
    return [h[0].cpu().numpy().astype(np.float32)
            for h in out.hidden_states]


def _wav_paths(wav_dir):
    paths = sorted(Path(wav_dir).glob("*.wav"), key=lambda p: p.stem)
    if not paths:
        raise BadAudio(f"no .wav files in {wav_dir}")
    return paths


def read_speaker_map(path) -> dict[str, str]:
    """utt_id -> speaker_id from a TSV with a header row."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split("\t")[:2] != ["utt_id", "speaker_id"]:
        raise ValueError(f"{path}:1: expected utt_id/speaker_id header")
    out: dict[str, str] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) < 2 or not fields[0] or not fields[1]:
            raise ValueError(f"{path}:{lineno}: need utt_id and speaker_id")
        if fields[0] in out:
            raise ValueError(f"{path}:{lineno}: duplicate utterance "
                             f"{fields[0]!r}")
        out[fields[0]] = fields[1]
    return out


def _normalize(feats: list[FeatureMatrix], spec: ExtractSpec):
    if not spec.apply_cmvn:
        return feats
    if spec.speaker_meta is None:
        groups = [[fm] for fm in feats]
    else:
        spk_of = read_speaker_map(spec.speaker_meta)
        missing = [fm.utt_id for fm in feats if fm.utt_id not in spk_of]
        if missing:
            raise ValueError(f"{spec.speaker_meta}: no speaker for "
                             f"utterances {missing}")
        by_spk: dict[str, list[FeatureMatrix]] = {}
        for fm in feats:
            by_spk.setdefault(spk_of[fm.utt_id], []).append(fm)
        groups = list(by_spk.values())
    normalized: dict[str, FeatureMatrix] = {}
    for group in groups:
        stacked = np.concatenate([fm.data for fm in group], axis=0)
        mu = stacked.mean(axis=0)
        sigma = np.sqrt(stacked.var(axis=0) + VAR_FLOOR)
        for fm in group:
            normalized[fm.utt_id] = FeatureMatrix(
                (fm.data - mu) / sigma, fm.frame_shift, fm.utt_id)
    return [normalized[fm.utt_id] for fm in feats]


def extract(spec: ExtractSpec, model=None) -> str:
    """Write one layer's embeddings for every wav to a FEA1 archive."""
    if spec.layer is None:
        raise LayerOutOfRange("extract needs a layer; "
                              "use extract_all_layers for every layer")
    paths = _wav_paths(spec.wav_dir)
    if model is None:
        model = load_model(spec)
    feats = []
    for path in paths:
        states = _hidden_states(model, read_wav_mono16k(path),
                                spec.device, path)
        feats.append(FeatureMatrix(states[spec.layer], FRAME_SHIFT,
                                   path.stem))
    write_fea(_normalize(feats, spec), spec.out)
    return spec.out


def extract_all_layers(spec: ExtractSpec, model=None) -> list[str]:
    """One forward pass per wav, fanned out to 25 per-layer archives.

    spec.out names a directory; archives inside it are named
    ``<model>.L<k>.fea`` for k in 0..24.
    """
    paths = _wav_paths(spec.wav_dir)
    if model is None:
        model = load_model(spec)
    per_layer: list[list[FeatureMatrix]] = [[] for _ in range(N_LAYERS)]
    for path in paths:
        states = _hidden_states(model, read_wav_mono16k(path),
                                spec.device, path)
        for k in range(N_LAYERS):
            per_layer[k].append(FeatureMatrix(states[k], FRAME_SHIFT,
                                              path.stem))
    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outs = []
    for k in range(N_LAYERS):
        out_path = out_dir / f"{spec.model_name}.L{k}.fea"
        write_fea(_normalize(per_layer[k], spec), out_path)
        outs.append(str(out_path))
    return outs
