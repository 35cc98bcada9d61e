"""Command line driver: one subcommand per pipeline stage.

The `pipeline` subcommand chains corpus generation, feature transforms,
training, decoding, indexing, search, and scoring from a single flat JSON
config, writing every intermediate artifact with the same code paths the
individual subcommands use.  Exit codes: 0 success, 1 usage error (synopsis
on stderr), 2 data error (message names the offending file).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .acoustic import (PhoneSet, TrainConfig, load_model, posteriors,
                       read_labels, read_phones, save_model, train,
                       write_phones)
from .audio_io import read_wav, resample, write_wav
from .decoder import (DecodeConfig, Lexicon, build_lexicon_graph, decode,
                      read_lattices, read_lexicon, write_lattices,
                      write_lexicon)
from .features import (MfccConfig, apply_cmvn, compute_mfcc, read_archive,
                       splice, write_archive)
from .lattice_index import (build_index, build_keyword_fsts, frame_cut_sums,
                            lattice_posteriors, read_detections, read_index,
                            search, write_detections, write_index)
from .perturb import PerturbSpec, apply_perturb
from .scoring import (DEFAULT_BETA, EmptyGroup, NoScoreableKeywords, TrialSet,
                      compute_twv, group_report, kst_normalize, paired_tests,
                      read_durations, read_refs, read_speaker_meta,
                      sweep_mtwv, write_det_curve, write_durations)
from .synth import CorpusSpec, generate, load_spec, save_spec, write_corpus

SYNOPSIS = """\
usage: latspot <subcommand> [options]

subcommands:
  gen-corpus   generate a synthetic corpus from a spec JSON
  mfcc         extract MFCC features from a directory of wav files
  cmvn         mean/variance normalize each utterance of an archive
  splice       stack neighboring frames of an archive
  train-am     train the frame classifier on features plus labels
  decode       decode a feature archive into word lattices
  index        build a timed factor index from lattices
  search       run keyword queries against an index
  score        compute term-weighted values for detections
  perturb      apply a speech perturbation to a directory of wav files
  report       compare two score reports with paired tests
  pipeline     run the whole chain from one config

run `latspot <subcommand> --help` for flags."""

DEFAULT_PHONES = ("SIL", "a", "b", "c", "d", "e", "f", "g", "h")

DEFAULT_LEXICON = {
    "ALPHA": (("a", "b"),),
    "BRAVO": (("b", "c", "d"),),
    "CHARLIE": (("c", "a"),),
    "DELTA": (("d", "e"),),
    "ECHO": (("e", "h"),),
    "FOX": (("f", "g"),),
    "GOLF": (("g", "h", "a"),),
    "HOTEL": (("h", "b"),),
    "INDIA": (("a", "d", "f"),),
    "JULIET": (("e", "g"),),
    "KILO": (("f", "h"),),
    "LIMA": (("c", "g", "e"),),
}

DEFAULT_KEYWORDS = ("ALPHA", "BRAVO", "CHARLIE", "DELTA", "ECHO",
                    "FOX", "GOLF", "HOTEL", "INDIA", "JULIET")

PIPELINE_DEFAULTS = {
    "seed": 7,
    "dim": 13,
    "separation": 2.2,
    "n_speakers": 6,
    "train_utts": 40,
    "test_utts": 100,
    "words_per_utt_min": 3,
    "words_per_utt_max": 7,
    "frames_per_phone_min": 6,
    "frames_per_phone_max": 12,
    "sil_frames_min": 3,
    "sil_frames_max": 8,
    "frame_shift": 0.02,
    "mean_shift": 0.0,
    "var_inflation": 1.0,
    "noise_std": 0.0,
    "cmvn": False,
    "splice_context": 0,
    "hidden_dims": [32],
    "learning_rate": 0.2,
    "epochs": 15,
    "batch_size": 64,
    "beam": 16.0,
    "lattice_beam": 8.0,
    "word_penalty": 2.0,
    "max_active": 2000,
    "max_factor_len": 1,
    "merge_tol": 0.5,
    "beta": DEFAULT_BETA,
    "theta": 0.5,
    "tol_sec": 0.5,
    "kst": False,
    "groups": True,
    "phones_file": None,
    "lexicon_file": None,
    "keywords": None,
    "keywords_file": None,
    "out_dir": "run",
}

_PIPELINE_INT_KEYS = frozenset((
    "seed", "dim", "n_speakers", "train_utts", "test_utts",
    "words_per_utt_min", "words_per_utt_max", "frames_per_phone_min",
    "frames_per_phone_max", "sil_frames_min", "sil_frames_max",
    "splice_context", "epochs", "batch_size", "max_active", "max_factor_len",
))
_PIPELINE_FLOAT_KEYS = frozenset((
    "separation", "frame_shift", "mean_shift", "var_inflation", "noise_std",
    "learning_rate", "beam", "lattice_beam", "word_penalty", "merge_tol",
    "beta", "theta", "tol_sec",
))
_PIPELINE_BOOL_KEYS = frozenset(("cmvn", "kst", "groups"))
_PIPELINE_PATH_KEYS = frozenset(("phones_file", "lexicon_file",
                                 "keywords_file", "out_dir"))


class UsageError(Exception):
    """Bad flags or flag values; exits 1 with the synopsis."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _pos_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be at least 1")
    return value


def _nonneg_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be non-negative")
    return value


def _any_int(text):
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None


def _finite_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"{text!r} must be finite")
    return value


def _pos_float(text):
    value = _finite_float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return value


def _nonneg_float(text):
    value = _finite_float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be non-negative")
    return value


def _prob(text):
    value = _finite_float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text!r} must lie in [0, 1]")
    return value


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            blob = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(
                f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(blob, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return blob


def _dump_json(blob, path=None):
    text = json.dumps(blob, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {path}")


def _read_keywords(path):
    keywords = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            kw = line.strip()
            if not kw or kw.startswith("#"):
                continue
            if kw in keywords:
                raise ValueError(f"{path}:{lineno}: duplicate keyword {kw!r}")
            keywords.append(kw)
    if not keywords:
        raise ValueError(f"{path}: keyword list is empty")
    return keywords


# ---------------------------------------------------------------------------
# Stage helpers shared by the subcommands and the pipeline

def _write_corpus_tree(spec, out_dir):
    corpus = generate(spec)
    paths = write_corpus(corpus, out_dir)
    paths["phones"] = os.path.join(out_dir, "phones.txt")
    write_phones(spec.phones, paths["phones"])
    paths["lexicon"] = os.path.join(out_dir, "lexicon.txt")
    write_lexicon(spec.lexicon, paths["lexicon"])
    paths["durations"] = os.path.join(out_dir, "durations.tsv")
    write_durations(corpus.utt_durations, paths["durations"])
    return paths


def _cmvn_archive(src, dst):
    write_archive([apply_cmvn(f) for f in read_archive(src)], dst)


def _splice_archive(src, dst, context):
    write_archive([splice(f, context) for f in read_archive(src)], dst)


def _train_model(feats_path, labels_path, phones_path, cfg, out_path):
    model = train(read_archive(feats_path), read_labels(labels_path),
                  read_phones(phones_path), cfg)
    save_model(model, out_path)


def _decode_archive(feats_path, model_path, phones_path, lexicon_path, cfg,
                    out_path, jobs=1, use_priors=True):
    model = load_model(model_path)
    graph = build_lexicon_graph(read_lexicon(lexicon_path),
                                read_phones(phones_path))
    feats = read_archive(feats_path)
    priors = model.priors if use_priors else None

    def one(fm):
        return decode(posteriors(model, fm), graph, cfg, priors=priors)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            lats = list(pool.map(one, feats))
    else:
        lats = [one(fm) for fm in feats]
    write_lattices(lats, out_path)


def _index_lattice_file(lat_path, max_factor_len, merge_tol, out_path):
    """Build and write the index; returns the worst frame-cut deviation."""
    anns = [lattice_posteriors(lat) for lat in read_lattices(lat_path)]
    cut_err = 0.0
    for ann in anns:
        sums = frame_cut_sums(ann)
        cut_err = max(cut_err, float(np.max(np.abs(sums - 1.0))))
    write_index(build_index(anns, max_factor_len, merge_tol), out_path)
    return cut_err


def _search_index(index_path, keywords, lexicon_path, out_path):
    index = read_index(index_path)
    fsts = build_keyword_fsts(keywords, read_lexicon(lexicon_path))
    dets = [d for fst in fsts for d in search(index, fst)]
    write_detections(dets, out_path)
    return dets


def _score_report(dets_path, refs_path, meta_path, duration, durations_path,
                  beta, theta, tol_sec, use_kst, with_groups, keywords=None):
    """Returns (report dict, det curve, decided detections).

    With a keyword list the references are restricted to it, so occurrences
    of words that were never queried do not count as misses.
    """
    dets = read_detections(dets_path)
    refs = read_refs(refs_path)
    if keywords is not None:
        wanted = set(keywords)
        refs = [r for r in refs if r.keyword_id in wanted]
    meta = read_speaker_meta(meta_path)
    durations = read_durations(durations_path) if durations_path else None
    total = duration if duration is not None else math.fsum(durations.values())
    try:
        trials = TrialSet(total, tuple(refs), meta, durations)
    except ValueError as exc:
        raise ValueError(f"{refs_path}: {exc}") from None
    if use_kst:
        dets = kst_normalize(dets, trials, beta)
    else:
        dets = [dataclasses.replace(
            d, decision="YES" if d.score >= theta else "NO") for d in dets]
    try:
        rep = compute_twv(dets, trials, beta, theta, tol_sec)
    except NoScoreableKeywords as exc:
        raise ValueError(f"{refs_path}: {exc}") from None
    _, _, curve = sweep_mtwv(dets, trials, beta, tol_sec)
    report = {"schema": 1, "kst": bool(use_kst), **rep.to_dict()}
    if with_groups:
        by_label = group_report(dets, trials, beta=beta, theta=theta,
                                tol_sec=tol_sec)
        report["groups"] = {
            label: ({"empty": g.reason} if isinstance(g, EmptyGroup)
                    else g.to_dict())
            for label, g in by_label.items()
        }
    return report, curve, dets


# ---------------------------------------------------------------------------
# Subcommands

def _cmd_gen_corpus(args):
    spec = load_spec(args.spec)
    paths = _write_corpus_tree(spec, args.out)
    for key in sorted(paths):
        print(f"wrote {paths[key]}")
    return 0


def _mfcc_config(path):
    if path is None:
        return MfccConfig()
    blob = _load_json(path)
    allowed = {f.name for f in dataclasses.fields(MfccConfig)}
    for key in blob:
        if key not in allowed:
            raise ValueError(f"{path}: unknown mfcc config key {key!r}")
    try:
        return MfccConfig(**blob)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def _wav_paths(wav_dir):
    paths = sorted(Path(wav_dir).glob("*.wav"))
    if not paths:
        raise ValueError(f"no .wav files in {wav_dir}")
    return paths


def _cmd_mfcc(args):
    cfg = _mfcc_config(args.config)
    feats = []
    for path in _wav_paths(args.wav_dir):
        wave = read_wav(path)
        if args.rate is not None and wave.sample_rate != args.rate:
            wave = resample(wave, args.rate)
        feats.append(compute_mfcc(wave, cfg))
    write_archive(feats, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_cmvn(args):
    _cmvn_archive(args.inp, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_splice(args):
    _splice_archive(args.inp, args.out, args.context)
    print(f"wrote {args.out}")
    return 0


def _train_config(path, epochs, seed):
    blob = _load_json(path) if path else {}
    allowed = {f.name for f in dataclasses.fields(TrainConfig)}
    for key in blob:
        if key not in allowed:
            raise ValueError(f"{path}: unknown train config key {key!r}")
    if "hidden_dims" in blob:
        blob["hidden_dims"] = tuple(blob["hidden_dims"])
    if epochs is not None:
        blob["epochs"] = epochs
    if seed is not None:
        blob["seed"] = seed
    try:
        return TrainConfig(**blob)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from None


def _cmd_train_am(args):
    cfg = _train_config(args.config, args.epochs, args.seed)
    _train_model(args.feats, args.labels, args.phones, cfg, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_decode(args):
    cfg = DecodeConfig(args.beam, args.lattice_beam, args.word_penalty,
                       args.max_active)
    _decode_archive(args.feats, args.model, args.phones, args.lexicon, cfg,
                    args.out, jobs=args.jobs,
                    use_priors=not args.raw_posteriors)
    print(f"wrote {args.out}")
    return 0


def _cmd_index(args):
    _index_lattice_file(args.lattices, args.max_factor_len, args.merge_tol,
                        args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_search(args):
    _search_index(args.index, _read_keywords(args.keywords), args.lexicon,
                  args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_score(args):
    if args.duration is None and args.durations is None:
        raise UsageError("score needs --duration or --durations")
    if args.groups and args.durations is None:
        raise UsageError("--groups needs --durations")
    keywords = _read_keywords(args.keywords) if args.keywords else None
    report, curve, dets = _score_report(
        args.dets, args.refs, args.meta, args.duration, args.durations,
        args.beta, args.theta, args.tol_sec, args.kst, args.groups, keywords)
    if args.det_curve:
        write_det_curve(curve, args.det_curve)
        print(f"wrote {args.det_curve}")
    if args.out_dets:
        write_detections(dets, args.out_dets)
        print(f"wrote {args.out_dets}")
    _dump_json(report, args.out)
    return 0


def _cmd_perturb(args):
    if args.kind == "noise" and args.noise is None:
        raise UsageError("noise perturbation needs --noise")
    try:
        spec = PerturbSpec(args.kind, args.factor, args.noise)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    noise = read_wav(args.noise) if args.noise else None
    out_dir = Path(args.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    count = 0
    for path in _wav_paths(args.wav_dir):
        wave = apply_perturb(read_wav(path), spec, noise=noise,
                             seed=args.seed)
        write_wav(wave, out_dir / path.name, pcm16=args.pcm16)
        count += 1
    print(f"wrote {count} files to {out_dir}")
    return 0


def _report_keyword_twv(blob, path):
    if blob.get("schema") != 1:
        raise ValueError(f"{path}: unsupported report schema {blob.get('schema')!r}")
    entries = blob.get("keywords")
    if not isinstance(entries, list):
        raise ValueError(f"{path}: report has no keywords list")
    out = {}
    for entry in entries:
        try:
            out[entry["keyword_id"]] = float(entry["twv"])
        except (KeyError, TypeError, ValueError):
            raise ValueError(f"{path}: malformed keywords entry") from None
    return out


def _cmd_report(args):
    path_a, path_b = args.compare
    twv_a = _report_keyword_twv(_load_json(path_a), path_a)
    twv_b = _report_keyword_twv(_load_json(path_b), path_b)
    common = sorted(set(twv_a) & set(twv_b))
    if len(common) < 2:
        raise ValueError(
            f"{path_a} vs {path_b}: need at least 2 shared keywords, "
            f"got {len(common)}")
    tests = paired_tests([twv_a[k] for k in common],
                         [twv_b[k] for k in common])
    report = {"schema": 1, "n": len(common), "keyword_ids": common,
              "mean_twv_a": math.fsum(twv_a[k] for k in common) / len(common),
              "mean_twv_b": math.fsum(twv_b[k] for k in common) / len(common)}
    report.update(tests)
    _dump_json(report, args.out)
    return 0


# ---------------------------------------------------------------------------
# Pipeline

def _check_pipeline_value(key, value, where):
    if key in _PIPELINE_INT_KEYS:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif key in _PIPELINE_FLOAT_KEYS:
        ok = (isinstance(value, (int, float)) and not isinstance(value, bool)
              and math.isfinite(value))
    elif key in _PIPELINE_BOOL_KEYS:
        ok = isinstance(value, bool)
    elif key in _PIPELINE_PATH_KEYS:
        ok = value is None or (isinstance(value, str) and value)
    elif key == "hidden_dims":
        ok = (isinstance(value, list) and value
              and all(isinstance(v, int) and not isinstance(v, bool) and v > 0
                      for v in value))
    elif key == "keywords":
        ok = value is None or (isinstance(value, list) and value
                               and all(isinstance(v, str) and v for v in value))
    else:
        raise ValueError(f"{where}: unknown pipeline config key {key!r}")
    if not ok:
        raise ValueError(f"{where}: bad value for {key!r}: {value!r}")


def _pipeline_config(args):
    cfg = dict(PIPELINE_DEFAULTS)
    if args.config:
        blob = _load_json(args.config)
        for key, value in blob.items():
            if key not in cfg:
                raise ValueError(
                    f"{args.config}: unknown pipeline config key {key!r}")
            _check_pipeline_value(key, value, args.config)
        cfg.update(blob)
    for item in args.set or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set wants key=value, got {item!r}")
        if key not in cfg:
            raise UsageError(f"unknown pipeline config key {key!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        try:
            _check_pipeline_value(key, value, f"--set {key}")
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        cfg[key] = value
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out_dir"] = args.out
    return cfg


def _pipeline_inventory(cfg):
    if cfg["phones_file"]:
        phones = read_phones(cfg["phones_file"])
    else:
        phones = PhoneSet(DEFAULT_PHONES)
    if cfg["lexicon_file"]:
        lexicon = read_lexicon(cfg["lexicon_file"])
    else:
        lexicon = Lexicon({w: list(prons)
                           for w, prons in DEFAULT_LEXICON.items()})
    if cfg["keywords"] is not None and cfg["keywords_file"]:
        raise ValueError("pipeline config sets both keywords and keywords_file")
    if cfg["keywords_file"]:
        keywords = _read_keywords(cfg["keywords_file"])
    elif cfg["keywords"] is not None:
        keywords = list(cfg["keywords"])
    else:
        keywords = list(DEFAULT_KEYWORDS)
    return phones, lexicon, keywords


def _run_pipeline(cfg, jobs=1):
    out = Path(cfg["out_dir"])
    os.makedirs(out, exist_ok=True)
    phones, lexicon, keywords = _pipeline_inventory(cfg)
    seed = cfg["seed"]

    def corpus_spec(n_utts, corpus_seed, mean_shift, var_inflation, noise_std):
        return CorpusSpec.with_random_emissions(
            phones, lexicon, dim=cfg["dim"], separation=cfg["separation"],
            emission_seed=seed + 1000, n_utts=n_utts,
            words_per_utt=(cfg["words_per_utt_min"], cfg["words_per_utt_max"]),
            frames_per_phone=(cfg["frames_per_phone_min"],
                              cfg["frames_per_phone_max"]),
            sil_frames=(cfg["sil_frames_min"], cfg["sil_frames_max"]),
            frame_shift=cfg["frame_shift"], n_speakers=cfg["n_speakers"],
            mean_shift=mean_shift, var_inflation=var_inflation,
            noise_std=noise_std, seed=corpus_seed)

    train_spec = corpus_spec(cfg["train_utts"], seed + 1, 0.0, 1.0, 0.0)
    test_spec = corpus_spec(cfg["test_utts"], seed + 2, cfg["mean_shift"],
                            cfg["var_inflation"], cfg["noise_std"])
    save_spec(train_spec, out / "train_spec.json")
    save_spec(test_spec, out / "test_spec.json")
    train_paths = _write_corpus_tree(train_spec, str(out / "train"))
    test_paths = _write_corpus_tree(test_spec, str(out / "test"))

    train_feats = train_paths["feats"]
    test_feats = test_paths["feats"]
    if cfg["cmvn"]:
        for src in (train_feats, test_feats):
            _cmvn_archive(src, src[:-len(".fea")] + ".cmvn.fea")
        train_feats = train_feats[:-len(".fea")] + ".cmvn.fea"
        test_feats = test_feats[:-len(".fea")] + ".cmvn.fea"
    if cfg["splice_context"] > 0:
        for src in (train_feats, test_feats):
            _splice_archive(src, src[:-len(".fea")] + ".splice.fea",
                            cfg["splice_context"])
        train_feats = train_feats[:-len(".fea")] + ".splice.fea"
        test_feats = test_feats[:-len(".fea")] + ".splice.fea"

    model_path = str(out / "model.fcm")
    _train_model(train_feats, train_paths["labels"], train_paths["phones"],
                 TrainConfig(tuple(cfg["hidden_dims"]), cfg["learning_rate"],
                             cfg["epochs"], cfg["batch_size"], seed + 3),
                 model_path)

    lattices_path = str(out / "lattices.txt")
    _decode_archive(test_feats, model_path, test_paths["phones"],
                    test_paths["lexicon"],
                    DecodeConfig(cfg["beam"], cfg["lattice_beam"],
                                 cfg["word_penalty"], cfg["max_active"]),
                    lattices_path, jobs=jobs)

    index_path = str(out / "index.tfx")
    cut_err = _index_lattice_file(lattices_path, cfg["max_factor_len"],
                                  cfg["merge_tol"], index_path)

    dets_path = str(out / "dets.tsv")
    _search_index(index_path, keywords, test_paths["lexicon"], dets_path)

    report, curve, _ = _score_report(
        dets_path, test_paths["refs"], test_paths["meta"], None,
        test_paths["durations"], cfg["beta"], cfg["theta"], cfg["tol_sec"],
        cfg["kst"], cfg["groups"], keywords)
    write_det_curve(curve, out / "det_curve.csv")

    resolved = {k: v for k, v in cfg.items() if k != "out_dir"}
    resolved["keywords"] = keywords
    report["config"] = resolved
    report["frame_cut_max_err"] = cut_err
    report_path = str(out / "report.json")
    _dump_json(report, report_path)
    return report_path


def _cmd_pipeline(args):
    cfg = _pipeline_config(args)
    _run_pipeline(cfg, jobs=args.jobs)
    return 0


# ---------------------------------------------------------------------------
# Parser

def _build_parser():
    parser = _Parser(prog="latspot", description=__doc__)
    parser.set_defaults(cmd=None)
    subs = parser.add_subparsers(parser_class=_Parser)

    p = subs.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True, help="corpus spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(cmd=_cmd_gen_corpus)

    p = subs.add_parser("mfcc", help="extract MFCC features")
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--out", required=True, help="output archive")
    p.add_argument("--config", help="MfccConfig overrides as JSON")
    p.add_argument("--rate", type=_pos_int,
                   help="resample inputs to this rate first")
    p.set_defaults(cmd=_cmd_mfcc)

    p = subs.add_parser("cmvn", help="per-utterance mean/variance normalize")
    p.add_argument("--in", dest="inp", required=True, help="input archive")
    p.add_argument("--out", required=True, help="output archive")
    p.set_defaults(cmd=_cmd_cmvn)

    p = subs.add_parser("splice", help="stack neighboring frames")
    p.add_argument("--in", dest="inp", required=True, help="input archive")
    p.add_argument("--out", required=True, help="output archive")
    p.add_argument("--context", type=_nonneg_int, default=4,
                   help="frames on each side (default 4)")
    p.set_defaults(cmd=_cmd_splice)

    p = subs.add_parser("train-am", help="train the frame classifier")
    p.add_argument("--feats", required=True, help="feature archive")
    p.add_argument("--labels", required=True, help="frame label file")
    p.add_argument("--phones", required=True, help="phone inventory file")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--config", help="TrainConfig overrides as JSON")
    p.add_argument("--epochs", type=_pos_int)
    p.add_argument("--seed", type=_any_int)
    p.set_defaults(cmd=_cmd_train_am)

    p = subs.add_parser("decode", help="decode features into word lattices")
    p.add_argument("--feats", required=True, help="feature archive")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--phones", required=True, help="phone inventory file")
    p.add_argument("--lexicon", required=True, help="pronunciation lexicon")
    p.add_argument("--out", required=True, help="output lattice file")
    p.add_argument("--beam", type=_nonneg_float, default=16.0)
    p.add_argument("--lattice-beam", type=_nonneg_float, default=8.0)
    p.add_argument("--word-penalty", type=_finite_float, default=0.0)
    p.add_argument("--max-active", type=_pos_int, default=2000)
    p.add_argument("--raw-posteriors", action="store_true",
                   help="skip the prior division")
    p.add_argument("--jobs", type=_pos_int, default=1,
                   help="utterances decoded in parallel")
    p.set_defaults(cmd=_cmd_decode)

    p = subs.add_parser("index", help="build a timed factor index")
    p.add_argument("--lattices", required=True, help="lattice file")
    p.add_argument("--out", required=True, help="output index file")
    p.add_argument("--max-factor-len", type=_pos_int, default=3)
    p.add_argument("--merge-tol", type=_nonneg_float, default=0.5)
    p.set_defaults(cmd=_cmd_index)

    p = subs.add_parser("search", help="run keyword queries")
    p.add_argument("--index", required=True, help="timed factor index file")
    p.add_argument("--keywords", required=True,
                   help="text file, one keyword per line")
    p.add_argument("--lexicon", required=True, help="pronunciation lexicon")
    p.add_argument("--out", required=True, help="output detections TSV")
    p.set_defaults(cmd=_cmd_search)

    p = subs.add_parser("score", help="compute term-weighted values")
    p.add_argument("--dets", required=True, help="detections TSV")
    p.add_argument("--refs", required=True, help="references TSV")
    p.add_argument("--meta", required=True, help="speaker metadata TSV")
    p.add_argument("--duration", type=_pos_float,
                   help="total speech seconds")
    p.add_argument("--durations",
                   help="per-utterance durations TSV (total when "
                        "--duration is absent)")
    p.add_argument("--beta", type=_pos_float, default=DEFAULT_BETA)
    p.add_argument("--theta", type=_prob, default=0.5)
    p.add_argument("--tol-sec", type=_pos_float, default=0.5)
    p.add_argument("--kst", action="store_true",
                   help="keyword-specific score normalization first")
    p.add_argument("--keywords",
                   help="restrict references to this keyword list file")
    p.add_argument("--groups", action="store_true",
                   help="add per-age-group reports (needs --durations)")
    p.add_argument("--det-curve", help="write the threshold sweep as CSV")
    p.add_argument("--out-dets", help="write detections with decisions")
    p.add_argument("--out", help="report JSON path (default stdout)")
    p.set_defaults(cmd=_cmd_score)

    p = subs.add_parser("perturb", help="perturb a directory of wav files")
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kind", required=True,
                   choices=("pitch", "rate", "formant", "noise"))
    p.add_argument("--factor", type=_finite_float, required=True,
                   help="factor, alpha, or SNR in dB depending on kind")
    p.add_argument("--noise", help="noise wav for kind=noise")
    p.add_argument("--seed", type=_any_int, default=0,
                   help="noise segment seed")
    p.add_argument("--pcm16", action="store_true",
                   help="write 16-bit PCM instead of float")
    p.set_defaults(cmd=_cmd_perturb)

    p = subs.add_parser("report", help="compare two score reports")
    p.add_argument("--compare", nargs=2, required=True,
                   metavar=("A", "B"), help="two score report JSONs")
    p.add_argument("--out", help="comparison JSON path (default stdout)")
    p.set_defaults(cmd=_cmd_report)

    p = subs.add_parser("pipeline", help="run the whole chain")
    p.add_argument("--config", help="flat JSON config")
    p.add_argument("--seed", type=_any_int, help="overrides the config seed")
    p.add_argument("--out", help="overrides the config out_dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (JSON-parsed value)")
    p.add_argument("--jobs", type=_pos_int, default=1,
                   help="utterances decoded in parallel")
    p.set_defaults(cmd=_cmd_pipeline)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.cmd is None:
            print(SYNOPSIS, file=sys.stderr)
            return 1
        return args.cmd(args)
    except UsageError as exc:
        print(SYNOPSIS, file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
