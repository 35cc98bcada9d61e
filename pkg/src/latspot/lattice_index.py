"""Lattice posteriors, keyword acceptors, timed factor index, and search.

A forward-backward sweep in the log domain turns lattice arc costs into
arc posteriors. Factors (contiguous word sequences along lattice paths,
silence arcs skipped) are collected into an index of timed postings whose
posterior is the summed probability of every path segment realizing the
factor at that span. Searching an index is then a lookup of the keyword's
label sequences.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .decoder import Lattice, LatticeArc, Lexicon, topological_order


class DisconnectedLattice(ValueError):
    """A lattice arc or node lies on no complete path."""


class CorruptIndex(ValueError):
    """Index file does not parse."""


class OovKeywordWarning(UserWarning):
    """A keyword was skipped because the lexicon cannot spell it."""


INDEX_MAGIC = b"TFX1"
INDEX_VERSION = 1


@dataclass(frozen=True)
class KeywordFst:
    """Acceptor over word sequences: one path per surface form."""

    keyword_id: str
    paths: tuple

    def __post_init__(self) -> None:
        if not self.keyword_id:
            raise ValueError("keyword id must be non-empty")
        paths = tuple(tuple(p) for p in self.paths)
        if not paths:
            raise ValueError(f"{self.keyword_id}: acceptor needs at least one path")
        for path in paths:
            if not path or any(not w for w in path):
                raise ValueError(f"{self.keyword_id}: empty path or word label")
        if len(set(paths)) != len(paths):
            raise ValueError(f"{self.keyword_id}: duplicate surface path")
        object.__setattr__(self, "paths", paths)


def build_keyword_fsts(keywords, lexicon: Lexicon):
    """One acceptor per keyword; `|` separates alternative surface forms.

    Keywords whose words are missing from the lexicon are skipped with an
    OovKeywordWarning so a report can list them.
    """
    if not keywords:
        raise ValueError("keyword list is empty")
    if len(set(keywords)) != len(keywords):
        raise ValueError("duplicate keyword ids")
    fsts = []
    for kw in keywords:
        paths = []
        missing = []
        for alt in kw.split("|"):
            words = tuple(alt.split())
            if not words:
                raise ValueError(f"keyword {kw!r} has an empty surface form")
            missing.extend(w for w in words if w not in lexicon.entries)
            paths.append(words)
        if missing:
            warnings.warn(
                f"skipping out-of-vocabulary keyword {kw!r} "
                f"(unknown words: {', '.join(sorted(set(missing)))})",
                OovKeywordWarning,
                stacklevel=2,
            )
            continue
        fsts.append(KeywordFst(kw, tuple(dict.fromkeys(paths))))
    return fsts


@dataclass
class AnnotatedLattice:
    """A lattice plus its arc posteriors and forward-backward node scores."""

    lattice: Lattice
    arc_posteriors: tuple
    node_fwd: tuple
    node_bwd: tuple
    total: float


def lattice_posteriors(lat: Lattice) -> AnnotatedLattice:
    """Forward-backward over -(acoustic+graph) costs in the log domain."""
    n = len(lat.node_frames)
    arcs = lat.arcs
    w = [-(a.acoustic_cost + a.graph_cost) for a in arcs]
    arcs_from = [[] for _ in range(n)]
    for i, a in enumerate(arcs):
        arcs_from[a.src].append(i)
    order = topological_order(lat)

    fwd = [-math.inf] * n
    fwd[0] = 0.0
    for node in order:
        if fwd[node] == -math.inf:
            continue
        for i in arcs_from[node]:
            dst = arcs[i].dst
            fwd[dst] = float(np.logaddexp(fwd[dst], fwd[node] + w[i]))
    bwd = [-math.inf] * n
    for f in lat.final_nodes:
        bwd[f] = 0.0
    for node in reversed(order):
        for i in arcs_from[node]:
            tail = bwd[arcs[i].dst]
            if tail > -math.inf:
                bwd[node] = float(np.logaddexp(bwd[node], w[i] + tail))
    total = -math.inf
    for f in lat.final_nodes:
        total = float(np.logaddexp(total, fwd[f]))
    if not math.isfinite(total):
        raise DisconnectedLattice(f"{lat.utt_id}: no complete path")
    if abs(total - bwd[0]) > 1e-6:
        raise RuntimeError("forward and backward totals disagree")

    post = []
    for i, a in enumerate(arcs):
        if fwd[a.src] == -math.inf or bwd[a.dst] == -math.inf:
            raise DisconnectedLattice(
                f"{lat.utt_id}: arc {a.src}->{a.dst} lies on no complete path"
            )
        post.append(math.exp(fwd[a.src] + w[i] + bwd[a.dst] - total))
    return AnnotatedLattice(lat, tuple(post), tuple(fwd), tuple(bwd), total)


def frame_cut_sums(ann: AnnotatedLattice) -> np.ndarray:
    """Posterior mass crossing each frame boundary; 1.0 everywhere when sane."""
    sums = np.zeros(ann.lattice.n_frames)
    for a, p in zip(ann.lattice.arcs, ann.arc_posteriors):
        sums[a.start_frame:a.end_frame] += p
    return sums


@dataclass(frozen=True)
class Posting:
    utt_id: str
    start_sec: float
    end_sec: float
    posterior: float


@dataclass
class TimedFactorIndex:
    """Map from word-sequence factor to sorted timed postings."""

    entries: dict
    max_factor_len: int
    merge_tol: float

    def __post_init__(self) -> None:
        if self.max_factor_len < 1:
            raise ValueError("max_factor_len must be at least 1")
        if self.merge_tol < 0:
            raise ValueError("merge_tol must be non-negative")
        canon = {}
        for factor, postings in self.entries.items():
            factor = tuple(factor)
            if not 1 <= len(factor) <= self.max_factor_len:
                raise ValueError(f"factor {factor} breaks the length bound")
            postings = tuple(postings)
            order = [(p.utt_id, p.start_sec, p.end_sec) for p in postings]
            if order != sorted(order):
                raise ValueError(f"postings for {factor} are not sorted")
            for p in postings:
                if not 0.0 < p.posterior <= 1.0:
                    raise ValueError(f"posting posterior {p.posterior} outside (0, 1]")
                if not p.end_sec > p.start_sec:
                    raise ValueError("posting span must have positive length")
            canon[factor] = postings
        self.entries = canon


def build_index(annotated, max_factor_len: int = 3, merge_tol: float = 0.5) -> TimedFactorIndex:
    """Collect factor postings from posterior-annotated lattices.

    Per (factor, utterance, span) the posterior is the summed probability of
    all path segments realizing it, clamped to 1. Occurrences whose midpoint
    falls within merge_tol seconds of an earlier one collapse onto it,
    keeping the earliest span and the maximum posterior.
    """
    if max_factor_len < 1:
        raise ValueError("max_factor_len must be at least 1")
    spans: dict = {}
    for ann in annotated:
        lat = ann.lattice
        arcs = lat.arcs
        n = len(lat.node_frames)
        w = [-(a.acoustic_cost + a.graph_cost) for a in arcs]
        arcs_from = [[] for _ in range(n)]
        for i, a in enumerate(arcs):
            arcs_from[a.src].append(i)
        # word arcs reachable through epsilon-only prefixes, mass-summed
        succ = [None] * n
        if max_factor_len > 1:
            for node in reversed(topological_order(lat)):
                d: dict = {}
                for i in arcs_from[node]:
                    a = arcs[i]
                    if a.word is not None:
                        d[i] = float(np.logaddexp(d.get(i, -math.inf), 0.0))
                    else:
                        for j, lw in succ[a.dst].items():
                            d[j] = float(np.logaddexp(d.get(j, -math.inf), w[i] + lw))
                succ[node] = d
        stack = [
            (i, (a.word,), a.start_frame, ann.node_fwd[a.src] + w[i])
            for i, a in enumerate(arcs)
            if a.word is not None
        ]
        while stack:
            i, labels, start_frame, lp = stack.pop()
            a = arcs[i]
            prob = math.exp(lp + ann.node_bwd[a.dst] - ann.total)
            key = (labels, lat.utt_id)
            span = (start_frame * lat.frame_shift, a.end_frame * lat.frame_shift)
            bucket = spans.setdefault(key, {})
            bucket[span] = bucket.get(span, 0.0) + prob
            if len(labels) < max_factor_len:
                for j, lw in succ[a.dst].items():
                    stack.append(
                        (j, labels + (arcs[j].word,), start_frame, lp + lw + w[j])
                    )

    entries: dict = {}
    for (factor, utt), d in spans.items():
        merged = []
        for (s, e), p in sorted(d.items()):
            p = min(p, 1.0)
            if merged:
                ms, me, mp = merged[-1]
                if (s + e) / 2 - (ms + me) / 2 <= merge_tol:
                    merged[-1] = (ms, me, max(mp, p))
                    continue
            merged.append((s, e, p))
        entries.setdefault(factor, []).extend(
            Posting(utt, s, e, p) for s, e, p in merged
        )
    entries = {
        f: tuple(sorted(v, key=lambda p: (p.utt_id, p.start_sec, p.end_sec)))
        for f, v in entries.items()
    }
    return TimedFactorIndex(entries, max_factor_len, merge_tol)


@dataclass(frozen=True)
class Detection:
    """One scored keyword hit; the decision is set by the scoring stage."""

    keyword_id: str
    utt_id: str
    start_sec: float
    end_sec: float
    score: float
    decision: str = "NO"

    def __post_init__(self) -> None:
        if not self.keyword_id or "\t" in self.keyword_id or "\n" in self.keyword_id:
            raise ValueError(f"bad keyword id {self.keyword_id!r}")
        if not self.utt_id or any(ch.isspace() for ch in self.utt_id):
            raise ValueError(f"bad utt id {self.utt_id!r}")
        if not self.end_sec > self.start_sec:
            raise ValueError("detection span must have positive length")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.decision not in ("YES", "NO"):
            raise ValueError(f"decision must be YES or NO, got {self.decision!r}")


def search(index: TimedFactorIndex, kfst: KeywordFst):
    """All postings matching any surface path, deduped per span by max score."""
    for path in kfst.paths:
        if len(path) > index.max_factor_len:
            raise ValueError(
                f"{kfst.keyword_id}: path of length {len(path)} exceeds the "
                f"indexed factor bound {index.max_factor_len}"
            )
    best: dict = {}
    for path in kfst.paths:
        for p in index.entries.get(path, ()):
            key = (p.utt_id, p.start_sec, p.end_sec)
            if p.posterior > best.get(key, -1.0):
                best[key] = p.posterior
    return [
        Detection(kfst.keyword_id, utt, s, e, score)
        for (utt, s, e), score in sorted(best.items())
    ]


DETECTIONS_HEADER = "keyword_id\tutt_id\tstart_sec\tend_sec\tscore\tdecision"


def write_detections(detections, path) -> None:
    """TSV with a fixed header; floats keep full precision."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(DETECTIONS_HEADER + "\n")
        for d in detections:
            f.write(
                f"{d.keyword_id}\t{d.utt_id}\t{d.start_sec!r}\t{d.end_sec!r}"
                f"\t{d.score!r}\t{d.decision}\n"
            )


def read_detections(path):
    dets = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if lineno == 1:
                if line != DETECTIONS_HEADER:
                    raise ValueError(f"{path}:1: bad detections header")
                continue
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 6:
                raise ValueError(f"{path}:{lineno}: want 6 tab-separated columns")
            try:
                dets.append(Detection(cols[0], cols[1], float(cols[2]),
                                      float(cols[3]), float(cols[4]), cols[5]))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
    return dets


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for the index format")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptIndex(f"{self.path}: truncated index")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def write_index(index: TimedFactorIndex, path) -> None:
    """Versioned binary index with factors and postings in sorted order."""
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        f.write(struct.pack("<II", INDEX_VERSION, index.max_factor_len))
        f.write(struct.pack("<d", index.merge_tol))
        f.write(struct.pack("<I", len(index.entries)))
        for factor in sorted(index.entries):
            f.write(struct.pack("<H", len(factor)))
            for word in factor:
                f.write(_pack_str(word))
            postings = index.entries[factor]
            f.write(struct.pack("<I", len(postings)))
            for p in postings:
                f.write(_pack_str(p.utt_id))
                f.write(struct.pack("<ddd", p.start_sec, p.end_sec, p.posterior))


def read_index(path) -> TimedFactorIndex:
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    if r.take(4) != INDEX_MAGIC:
        raise CorruptIndex(f"{path}: bad magic")
    version, max_len = r.unpack("<II")
    if version != INDEX_VERSION:
        raise CorruptIndex(f"{path}: unsupported version {version}")
    (merge_tol,) = r.unpack("<d")
    (n_factors,) = r.unpack("<I")
    entries = {}
    for _ in range(n_factors):
        (n_labels,) = r.unpack("<H")
        factor = tuple(r.text() for _ in range(n_labels))
        (n_postings,) = r.unpack("<I")
        postings = []
        for _ in range(n_postings):
            utt = r.text()
            start, end, posterior = r.unpack("<ddd")
            postings.append(Posting(utt, start, end, posterior))
        if factor in entries:
            raise CorruptIndex(f"{path}: duplicate factor {factor}")
        entries[factor] = tuple(postings)
    if r.pos != len(blob):
        raise CorruptIndex(f"{path}: trailing bytes")
    try:
        return TimedFactorIndex(entries, max_len, merge_tol)
    except ValueError as e:
        raise CorruptIndex(f"{path}: {e}") from None
