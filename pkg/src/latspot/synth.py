"""Deterministic synthetic corpus generation in feature space.

Utterances are random word sequences from a lexicon; every phone emits a
run of frames drawn from its own Gaussian, so the true alignment is known
exactly and reference occurrence times carry no rounding error.  A mean
shift plus variance inflation models a train/test domain gap, scaled per
synthetic age band so younger speakers are harder, and additive feature
noise gives a noise-robustness axis.  Everything derives from one seed.
"""

import dataclasses
import json
import math
import os

import numpy as np

from .acoustic import PhoneSet, write_labels
from .decoder import Lexicon
from .features import FeatureMatrix, write_archive
from .scoring import RefOccurrence, TrialSet, write_refs, write_speaker_meta

DEFAULT_AGE_BANDS = ((4, 6, 1.0), (7, 9, 0.5), (10, 13, 0.25))

_SPEC_KEYS = (
    "phones", "lexicon", "means", "variances", "n_utts", "words_per_utt",
    "frames_per_phone", "sil_frames", "mean_shift", "var_inflation",
    "noise_std", "n_speakers", "age_bands", "frame_shift", "seed",
)


class EmptyLexicon(ValueError):
    """No words available to sample utterances from."""


def _check_range(name, value, minimum):
    lo, hi = value
    if not (isinstance(lo, int) and isinstance(hi, int) and minimum <= lo <= hi):
        raise ValueError(f"{name} must be an integer range with {minimum} <= lo <= hi")


@dataclasses.dataclass(eq=False)
class CorpusSpec:
    """Recipe for one corpus; means/variances are (n_phones, dim) arrays.

    mean_shift and var_inflation define the test-domain transform; both
    are scaled by each age band's difficulty factor, so a corpus with
    mean_shift 0 is the matched training domain regardless of bands.
    """

    phones: PhoneSet
    lexicon: Lexicon
    means: np.ndarray
    variances: np.ndarray
    n_utts: int = 20
    words_per_utt: tuple = (3, 8)
    frames_per_phone: tuple = (2, 5)
    sil_frames: tuple = (1, 3)
    mean_shift: float = 0.0
    var_inflation: float = 1.0
    noise_std: float = 0.0
    n_speakers: int = 6
    age_bands: tuple = DEFAULT_AGE_BANDS
    frame_shift: float = 0.01
    seed: int = 0

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        shape = (len(self.phones), self.means.shape[-1] if self.means.ndim else 0)
        if self.means.ndim != 2 or self.means.shape != shape:
            raise ValueError("means must be an (n_phones, dim) matrix")
        if self.variances.shape != self.means.shape:
            raise ValueError("variances must match the shape of means")
        if not np.all(np.isfinite(self.means)):
            raise ValueError("means must be finite")
        if not np.all(np.isfinite(self.variances)) or np.any(self.variances <= 0):
            raise ValueError("variances must be positive")
        for word, prons in self.lexicon.entries.items():
            for pron in prons:
                for ph in pron:
                    if ph not in self.phones.phones:
                        raise ValueError(f"word {word!r} uses unknown phone {ph!r}")
        if self.n_utts < 1 or self.n_speakers < 1:
            raise ValueError("need at least one utterance and one speaker")
        _check_range("words_per_utt", self.words_per_utt, 1)
        _check_range("frames_per_phone", self.frames_per_phone, 1)
        _check_range("sil_frames", self.sil_frames, 0)
        if self.frame_shift <= 0:
            raise ValueError("frame_shift must be positive")
        if self.var_inflation <= 0:
            raise ValueError("var_inflation must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not self.age_bands:
            raise ValueError("need at least one age band")
        for band in self.age_bands:
            age_min, age_max, difficulty = band
            if age_min > age_max or difficulty < 0:
                raise ValueError(f"bad age band {band!r}")

    @property
    def dim(self):
        return self.means.shape[1]

    @classmethod
    def with_random_emissions(cls, phones, lexicon, dim=13, separation=3.0,
                              emission_seed=0, **kwargs):
        """Build a spec with well-separated random per-phone Gaussians."""
        rng = np.random.default_rng(emission_seed)
        means = separation * rng.standard_normal((len(phones), dim))
        variances = np.ones((len(phones), dim))
        return cls(phones=phones, lexicon=lexicon, means=means,
                   variances=variances, **kwargs)


@dataclasses.dataclass(eq=False)
class Corpus:
    """Generated utterances plus every file-format ingredient."""

    feats: list          # FeatureMatrix per utterance
    frame_labels: dict   # utt_id -> list of phone indices, one per frame
    transcripts: dict    # utt_id -> tuple of words
    refs: list           # RefOccurrence for every word occurrence
    speaker_meta: dict   # utt_id -> (speaker_id, age)
    utt_durations: dict  # utt_id -> seconds

    @property
    def total_speech_sec(self):
        return math.fsum(self.utt_durations.values())

    def trial_set(self):
        """TrialSet view of the references for scoring."""
        return TrialSet(self.total_speech_sec, tuple(self.refs),
                        dict(self.speaker_meta), dict(self.utt_durations))


def generate(spec):
    """Generate a corpus; identical specs give bit-identical output.

    The random stream is consumed in a fixed order, and the mean shift
    enters additively after the Gaussian draw, so two specs differing
    only in mean_shift/var_inflation produce the same word sequences and
    alignments with transformed emissions.
    """
    if not spec.lexicon.entries:
        raise EmptyLexicon("cannot sample words from an empty lexicon")
    rng = np.random.default_rng(spec.seed)
    words = sorted(spec.lexicon.entries)
    n_bands = len(spec.age_bands)
    speakers = []
    for s in range(spec.n_speakers):
        age_min, age_max, difficulty = spec.age_bands[s % n_bands]
        age = int(rng.integers(age_min, age_max + 1))
        speakers.append((f"spk{s:02d}", age, difficulty))

    feats, refs = [], []
    frame_labels, transcripts, speaker_meta, utt_durations = {}, {}, {}, {}
    for u in range(spec.n_utts):
        utt_id = f"utt{u:04d}"
        speaker, age, difficulty = speakers[u % spec.n_speakers]
        shift = spec.mean_shift * difficulty
        inflation = 1.0 + (spec.var_inflation - 1.0) * difficulty

        n_words = int(rng.integers(spec.words_per_utt[0],
                                   spec.words_per_utt[1] + 1))
        # no immediate word repeats, so same-word occurrences stay
        # separable in time (single-word lexicons repeat by necessity)
        seq = []
        prev = -1
        for _ in range(n_words):
            if prev >= 0 and len(words) > 1:
                k = int(rng.integers(0, len(words) - 1))
                pick = k if k < prev else k + 1
            else:
                pick = int(rng.integers(0, len(words)))
            seq.append(words[pick])
            prev = pick
        phone_idx = []
        spans = []

        def sil_run(phone_idx=phone_idx):
            n = int(rng.integers(spec.sil_frames[0], spec.sil_frames[1] + 1))
            phone_idx.extend([0] * n)

        sil_run()
        for word in seq:
            prons = spec.lexicon.entries[word]
            pron = prons[int(rng.integers(0, len(prons)))]
            start = len(phone_idx)
            for ph in pron:
                dur = int(rng.integers(spec.frames_per_phone[0],
                                       spec.frames_per_phone[1] + 1))
                phone_idx.extend([spec.phones.index(ph)] * dur)
            spans.append((word, start, len(phone_idx)))
            sil_run()

        idx = np.asarray(phone_idx)
        gauss = rng.standard_normal((len(phone_idx), spec.dim))
        noise = rng.standard_normal((len(phone_idx), spec.dim))
        data = (spec.means[idx] + shift
                + gauss * np.sqrt(spec.variances[idx] * inflation)
                + spec.noise_std * noise)
        feats.append(FeatureMatrix(data, spec.frame_shift, utt_id))
        frame_labels[utt_id] = list(phone_idx)
        transcripts[utt_id] = tuple(seq)
        for word, start, end in spans:
            refs.append(RefOccurrence(word, utt_id, start * spec.frame_shift,
                                      end * spec.frame_shift))
        speaker_meta[utt_id] = (speaker, age)
        utt_durations[utt_id] = len(phone_idx) * spec.frame_shift
    return Corpus(feats, frame_labels, transcripts, refs, speaker_meta,
                  utt_durations)


def spec_to_json(spec):
    """Plain-dict form of a CorpusSpec, ready for json.dump."""
    return {
        "phones": list(spec.phones.phones),
        "lexicon": {w: [list(p) for p in prons]
                    for w, prons in spec.lexicon.entries.items()},
        "means": spec.means.tolist(),
        "variances": spec.variances.tolist(),
        "n_utts": spec.n_utts,
        "words_per_utt": list(spec.words_per_utt),
        "frames_per_phone": list(spec.frames_per_phone),
        "sil_frames": list(spec.sil_frames),
        "mean_shift": spec.mean_shift,
        "var_inflation": spec.var_inflation,
        "noise_std": spec.noise_std,
        "n_speakers": spec.n_speakers,
        "age_bands": [list(band) for band in spec.age_bands],
        "frame_shift": spec.frame_shift,
        "seed": spec.seed,
    }


def spec_from_json(blob):
    """Inverse of spec_to_json; rejects unknown keys."""
    unknown = sorted(set(blob) - set(_SPEC_KEYS))
    if unknown:
        raise ValueError(f"unknown corpus spec key {unknown[0]!r}")
    missing = sorted(set(_SPEC_KEYS) - set(blob))
    if missing:
        raise ValueError(f"missing corpus spec key {missing[0]!r}")
    return CorpusSpec(
        phones=PhoneSet(tuple(blob["phones"])),
        lexicon=Lexicon({w: [tuple(p) for p in prons]
                         for w, prons in blob["lexicon"].items()}),
        means=blob["means"],
        variances=blob["variances"],
        n_utts=blob["n_utts"],
        words_per_utt=tuple(blob["words_per_utt"]),
        frames_per_phone=tuple(blob["frames_per_phone"]),
        sil_frames=tuple(blob["sil_frames"]),
        mean_shift=float(blob["mean_shift"]),
        var_inflation=float(blob["var_inflation"]),
        noise_std=float(blob["noise_std"]),
        n_speakers=blob["n_speakers"],
        age_bands=tuple((int(a), int(b), float(d)) for a, b, d in blob["age_bands"]),
        frame_shift=float(blob["frame_shift"]),
        seed=blob["seed"],
    )


def save_spec(spec, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_json(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        try:
            blob = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: {exc}") from exc
    try:
        return spec_from_json(blob)
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"{path}: {exc}") from exc


def write_transcripts(transcripts, path):
    """Text transcript file: one `utt_id word word ...` line per utterance."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id in transcripts:
            fh.write(f"{utt_id} {' '.join(transcripts[utt_id])}\n")


def read_transcripts(path):
    """Read a transcript file written by write_transcripts."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: transcript line needs words")
            if parts[0] in out:
                raise ValueError(f"{path}:{lineno}: duplicate utterance {parts[0]!r}")
            out[parts[0]] = tuple(parts[1:])
    return out


def write_corpus(corpus, out_dir):
    """Write all five corpus artifacts into out_dir; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "feats": os.path.join(out_dir, "feats.fea"),
        "labels": os.path.join(out_dir, "labels.txt"),
        "transcripts": os.path.join(out_dir, "transcripts.txt"),
        "refs": os.path.join(out_dir, "refs.tsv"),
        "meta": os.path.join(out_dir, "meta.tsv"),
    }
    write_archive(corpus.feats, paths["feats"])
    write_labels(corpus.frame_labels, paths["labels"])
    write_transcripts(corpus.transcripts, paths["transcripts"])
    write_refs(corpus.refs, paths["refs"])
    write_speaker_meta(corpus.speaker_meta, paths["meta"])
    return paths
