"""Corpus generator tests: determinism, exact alignment arithmetic,
transcript/reference conservation, domain-shift statistics, and file IO."""

import math

import numpy as np
import pytest

from latspot.acoustic import PhoneSet, read_labels
from latspot.decoder import Lexicon
from latspot.features import read_archive
from latspot.scoring import read_refs, read_speaker_meta
from latspot.synth import (
    Corpus,
    CorpusSpec,
    EmptyLexicon,
    generate,
    load_spec,
    read_transcripts,
    save_spec,
    spec_from_json,
    spec_to_json,
    write_corpus,
    write_transcripts,
)

PHONES = PhoneSet(("SIL", "aa", "bb", "cc", "dd"))
LEXICON = Lexicon({"ONE": [("aa", "bb")], "TWO": [("cc",)],
                   "THREE": [("dd", "aa")]})


def small_spec(**kwargs):
    defaults = dict(n_utts=12, words_per_utt=(2, 5), seed=5)
    defaults.update(kwargs)
    return CorpusSpec.with_random_emissions(PHONES, LEXICON, dim=4, **defaults)


def test_determinism(tmp_path):
    spec = small_spec()
    a = generate(spec)
    b = generate(spec)
    write_corpus(a, tmp_path / "a")
    write_corpus(b, tmp_path / "b")
    for name in ("feats.fea", "labels.txt", "transcripts.txt", "refs.tsv",
                 "meta.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_single_word_arithmetic():
    lex = Lexicon({"AB": [("aa", "bb")]})
    spec = CorpusSpec.with_random_emissions(
        PHONES, lex, dim=3, n_utts=1, words_per_utt=(1, 1),
        frames_per_phone=(3, 3), sil_frames=(0, 0), frame_shift=1.0 / 3.0)
    corpus = generate(spec)
    assert corpus.feats[0].n_frames == 6
    assert corpus.frame_labels["utt0000"] == [1, 1, 1, 2, 2, 2]
    assert len(corpus.refs) == 1
    r = corpus.refs[0]
    assert (r.keyword_id, r.start_sec) == ("AB", 0.0)
    assert r.end_sec == 6 * spec.frame_shift
    assert corpus.utt_durations["utt0000"] == 6 * spec.frame_shift


def test_reference_counts_match_transcripts():
    corpus = generate(small_spec(n_utts=20))
    from_refs = {}
    for r in corpus.refs:
        from_refs[(r.keyword_id, r.utt_id)] = \
            from_refs.get((r.keyword_id, r.utt_id), 0) + 1
    from_text = {}
    for utt_id, words in corpus.transcripts.items():
        for w in words:
            from_text[(w, utt_id)] = from_text.get((w, utt_id), 0) + 1
    assert from_refs == from_text


def test_labels_align_with_references():
    spec = small_spec(n_utts=8)
    corpus = generate(spec)
    labels = {u: corpus.frame_labels[u] for u in corpus.frame_labels}
    for r in corpus.refs:
        start = round(r.start_sec / spec.frame_shift)
        end = round(r.end_sec / spec.frame_shift)
        span = labels[r.utt_id][start:end]
        assert 0 not in span
        pron = "".join(PHONES.phones[i] for i in dict.fromkeys(span))
        assert pron in {"".join(p) for p in LEXICON.entries[r.keyword_id]}


def test_matched_domains_distributionally_identical():
    base = dict(n_utts=40, words_per_utt=(3, 6))
    a = generate(small_spec(seed=1, **base))
    b = generate(small_spec(seed=2, **base))

    def phone_frames(corpus, phone):
        rows = []
        for feats in corpus.feats:
            mask = np.asarray(corpus.frame_labels[feats.utt_id]) == phone
            rows.append(feats.data[mask])
        return np.concatenate(rows)

    fa, fb = phone_frames(a, 1), phone_frames(b, 1)
    bound = 3.0 * np.sqrt(1.0 / len(fa) + 1.0 / len(fb))
    assert np.all(np.abs(fa.mean(axis=0) - fb.mean(axis=0)) < bound)


def test_mean_shift_moves_test_domain():
    bands = ((4, 6, 1.0),)
    matched = small_spec(n_utts=30, age_bands=bands)
    shifted = small_spec(n_utts=30, age_bands=bands, mean_shift=2.0)
    a, b = generate(matched), generate(shifted)
    # same seed: identical structure, emissions displaced by the shift
    assert a.transcripts == b.transcripts
    assert a.frame_labels == b.frame_labels
    deltas = np.concatenate([fb.data - fa.data
                             for fa, fb in zip(a.feats, b.feats)])
    assert np.all(np.abs(deltas.mean(axis=0) - 2.0) < 0.1)


def test_age_band_difficulty_scaling():
    bands = ((4, 6, 1.0), (10, 13, 0.0))
    spec = small_spec(n_utts=30, n_speakers=2, age_bands=bands, mean_shift=3.0)
    base = generate(small_spec(n_utts=30, n_speakers=2, age_bands=bands))
    corpus = generate(spec)
    young = [u for u, (_, age) in corpus.speaker_meta.items() if age <= 6]
    old = [u for u, (_, age) in corpus.speaker_meta.items() if age >= 10]
    assert young and old
    by_utt = {f.utt_id: f for f in corpus.feats}
    base_by_utt = {f.utt_id: f for f in base.feats}
    young_delta = np.concatenate(
        [by_utt[u].data - base_by_utt[u].data for u in young]).mean()
    old_delta = np.concatenate(
        [by_utt[u].data - base_by_utt[u].data for u in old]).mean()
    assert young_delta == pytest.approx(3.0, abs=1e-9)
    assert old_delta == pytest.approx(0.0, abs=1e-9)
    for _, age in corpus.speaker_meta.values():
        assert 4 <= age <= 6 or 10 <= age <= 13


def test_spec_json_round_trip(tmp_path):
    spec = small_spec(mean_shift=1.5, var_inflation=1.5, noise_std=0.3)
    path = tmp_path / "spec.json"
    save_spec(spec, path)
    back = load_spec(path)
    assert back.phones.phones == spec.phones.phones
    assert back.lexicon.entries == spec.lexicon.entries
    assert np.array_equal(back.means, spec.means)
    assert np.array_equal(back.variances, spec.variances)
    for field in ("n_utts", "words_per_utt", "frames_per_phone", "sil_frames",
                  "mean_shift", "var_inflation", "noise_std", "n_speakers",
                  "age_bands", "frame_shift", "seed"):
        assert getattr(back, field) == getattr(spec, field)
    assert generate(back).transcripts == generate(spec).transcripts


def test_spec_json_errors(tmp_path):
    blob = spec_to_json(small_spec())
    extra = dict(blob, bogus=1)
    with pytest.raises(ValueError, match="bogus"):
        spec_from_json(extra)
    missing = dict(blob)
    del missing["means"]
    with pytest.raises(ValueError, match="means"):
        spec_from_json(missing)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError, match=str(bad)):
        load_spec(bad)


def test_spec_validation():
    with pytest.raises(ValueError, match="variances"):
        CorpusSpec(PHONES, LEXICON, np.zeros((5, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError, match="shape"):
        CorpusSpec(PHONES, LEXICON, np.zeros((5, 3)), np.ones((5, 2)))
    with pytest.raises(ValueError, match="n_phones"):
        CorpusSpec(PHONES, LEXICON, np.zeros((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError, match="unknown phone"):
        CorpusSpec(PHONES, Lexicon({"X": [("zz",)]}),
                   np.zeros((5, 3)), np.ones((5, 3)))
    with pytest.raises(ValueError, match="words_per_utt"):
        small_spec(words_per_utt=(0, 2))
    with pytest.raises(ValueError, match="frames_per_phone"):
        small_spec(frames_per_phone=(0, 1))
    with pytest.raises(ValueError, match="age band"):
        small_spec(age_bands=((6, 4, 1.0),))
    with pytest.raises(ValueError, match="utterance"):
        small_spec(n_utts=0)


def test_empty_lexicon():
    lex = Lexicon({"ONE": [("aa",)]})
    spec = CorpusSpec.with_random_emissions(PHONES, lex, dim=4)
    spec.lexicon.entries.clear()
    with pytest.raises(EmptyLexicon):
        generate(spec)


def test_transcripts_round_trip(tmp_path):
    transcripts = {"u1": ("ONE", "TWO"), "u2": ("THREE",)}
    path = tmp_path / "text.txt"
    write_transcripts(transcripts, path)
    assert read_transcripts(path) == transcripts
    (tmp_path / "dup.txt").write_text("u1 ONE\nu1 TWO\n")
    with pytest.raises(ValueError, match="duplicate"):
        read_transcripts(tmp_path / "dup.txt")
    (tmp_path / "short.txt").write_text("u1\n")
    with pytest.raises(ValueError, match="words"):
        read_transcripts(tmp_path / "short.txt")


def test_write_corpus_round_trip(tmp_path):
    spec = small_spec(n_utts=6)
    corpus = generate(spec)
    paths = write_corpus(corpus, tmp_path / "corpus")
    feats = read_archive(paths["feats"])
    assert [f.utt_id for f in feats] == [f.utt_id for f in corpus.feats]
    labels = read_labels(paths["labels"])
    for f in feats:
        assert len(labels[f.utt_id]) == f.n_frames
        assert list(labels[f.utt_id]) == corpus.frame_labels[f.utt_id]
    assert read_transcripts(paths["transcripts"]) == corpus.transcripts
    assert read_refs(paths["refs"]) == corpus.refs
    assert read_speaker_meta(paths["meta"]) == corpus.speaker_meta
    trials = corpus.trial_set()
    assert trials.total_speech_sec == math.fsum(corpus.utt_durations.values())
