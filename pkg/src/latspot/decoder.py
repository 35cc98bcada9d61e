"""Frame-synchronous beam search over a lexicon prefix graph.

Tokens walk phone arcs of a prefix tree: a token may stay on its arc,
advance to a child arc, or, once a pronunciation is complete, traverse a
word arc back to the root. Every word traversal is recorded; a
forward-backward sweep then keeps the recorded arcs that lie on some
complete path within ``lattice_beam`` of the best one, which becomes the
output lattice. Silence is a one-frame self-loop at the root and shows up
as an epsilon lattice arc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .acoustic import LOG_FLOOR, DimMismatch, PhoneSet, PosteriorMatrix, scaled_loglikes


class UnknownPhone(ValueError):
    """A pronunciation uses a phone outside the phone set."""


class EmptyPosteriors(ValueError):
    """Decoding needs at least one frame."""


class NoSurvivingPath(RuntimeError):
    """Pruning removed every token before a path could finish."""


@dataclass(frozen=True)
class Lexicon:
    """Pronunciation dictionary: word to alternative phone sequences."""

    entries: dict

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("lexicon has no words")
        canon = {}
        for word, prons in self.entries.items():
            if not word or word == "-" or any(ch.isspace() for ch in word):
                raise ValueError(f"bad word label {word!r}")
            tidy = tuple(tuple(p) for p in prons)
            if not tidy:
                raise ValueError(f"{word}: no pronunciations")
            if any(not pron for pron in tidy):
                raise ValueError(f"{word}: empty pronunciation")
            if len(set(tidy)) != len(tidy):
                raise ValueError(f"{word}: duplicate pronunciation")
            canon[word] = tuple(sorted(tidy))
        object.__setattr__(self, "entries", canon)

    @property
    def words(self) -> list:
        return sorted(self.entries)


def read_lexicon(path) -> Lexicon:
    """Text lexicon: one ``word phone phone ...`` line per pronunciation."""
    entries: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if len(tok) < 2:
                raise ValueError(f"{path}:{lineno}: want `word phone phone ...`")
            entries.setdefault(tok[0], []).append(tuple(tok[1:]))
    if not entries:
        raise ValueError(f"{path}:1: lexicon file has no entries")
    return Lexicon(entries)


def write_lexicon(lexicon: Lexicon, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for word in lexicon.words:
            for pron in lexicon.entries[word]:
                f.write(" ".join((word, *pron)) + "\n")


@dataclass(frozen=True)
class PhoneArc:
    src: int
    dst: int
    phone: int


@dataclass(frozen=True)
class WordArc:
    state: int
    word: str


@dataclass(frozen=True)
class LexiconGraph:
    """Deterministic prefix tree; state 0 is the root and only word boundary."""

    n_states: int
    phone_arcs: tuple
    word_arcs: tuple
    n_words: int
    sil_loop: bool = True


def build_lexicon_graph(lexicon: Lexicon, phones: PhoneSet, sil_loop: bool = True) -> LexiconGraph:
    """Prefix tree with sorted phone branching; homophones share all states."""
    known = set(phones.phones)
    prefixes = set()
    for word, prons in lexicon.entries.items():
        for pron in prons:
            for ph in pron:
                if ph not in known:
                    raise UnknownPhone(f"{word}: phone {ph!r} not in phone set")
            for i in range(1, len(pron) + 1):
                prefixes.add(pron[:i])
    state_of = {(): 0}
    for p in sorted(prefixes):
        state_of[p] = len(state_of)
    phone_arcs = tuple(
        PhoneArc(state_of[p[:-1]], state_of[p], phones.index(p[-1]))
        for p in sorted(prefixes)
    )
    word_arcs = tuple(
        WordArc(state_of[pron], word)
        for word in sorted(lexicon.entries)
        for pron in lexicon.entries[word]
    )
    return LexiconGraph(
        n_states=len(state_of),
        phone_arcs=phone_arcs,
        word_arcs=word_arcs,
        n_words=len(lexicon.entries),
        sil_loop=sil_loop,
    )


@dataclass(frozen=True)
class DecodeConfig:
    beam: float = 16.0
    lattice_beam: float = 8.0
    word_penalty: float = 0.0
    max_active: int = 2000

    def __post_init__(self) -> None:
        if self.beam < 0 or self.lattice_beam < 0:
            raise ValueError("beams must be non-negative")
        if self.max_active < 1:
            raise ValueError("max_active must be at least 1")


@dataclass(frozen=True)
class LatticeArc:
    src: int
    dst: int
    word: str | None
    acoustic_cost: float
    graph_cost: float
    start_frame: int
    end_frame: int


@dataclass
class Lattice:
    """Word graph for one utterance; node ids index ``node_frames``."""

    utt_id: str
    n_frames: int
    frame_shift: float
    node_frames: tuple
    arcs: tuple

    def __post_init__(self) -> None:
        self.node_frames = tuple(int(f) for f in self.node_frames)
        self.arcs = tuple(self.arcs)
        if self.frame_shift <= 0:
            raise ValueError("frame_shift must be positive")
        if not self.node_frames:
            raise ValueError("lattice has no nodes")
        if self.node_frames[0] != 0 or self.node_frames.count(0) != 1:
            raise ValueError("lattice needs exactly one start node at frame 0")
        if self.n_frames not in self.node_frames:
            raise ValueError("lattice has no final node")
        n = len(self.node_frames)
        succ = [[] for _ in range(n)]
        indeg = [0] * n
        for arc in self.arcs:
            if not (0 <= arc.src < n and 0 <= arc.dst < n):
                raise ValueError("arc references an unknown node")
            if arc.src == arc.dst:
                raise ValueError("lattice has a self-loop")
            if (arc.start_frame != self.node_frames[arc.src]
                    or arc.end_frame != self.node_frames[arc.dst]):
                raise ValueError("arc frames disagree with its nodes")
            if arc.end_frame < arc.start_frame:
                raise ValueError("arc frames must be non-decreasing")
            if not 0 <= arc.start_frame <= arc.end_frame <= self.n_frames:
                raise ValueError("arc frames fall outside the utterance")
            if not (math.isfinite(arc.acoustic_cost) and math.isfinite(arc.graph_cost)):
                raise ValueError("arc costs must be finite")
            succ[arc.src].append(arc.dst)
            indeg[arc.dst] += 1
        stack = [i for i in range(n) if indeg[i] == 0]
        seen = 0
        while stack:
            i = stack.pop()
            seen += 1
            for j in succ[i]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    stack.append(j)
        if seen != n:
            raise ValueError("lattice has a cycle")

    @property
    def final_nodes(self) -> tuple:
        return tuple(i for i, f in enumerate(self.node_frames) if f == self.n_frames)


def topological_order(lat: Lattice) -> list:
    n = len(lat.node_frames)
    succ = [[] for _ in range(n)]
    indeg = [0] * n
    for arc in lat.arcs:
        succ[arc.src].append(arc.dst)
        indeg[arc.dst] += 1
    order = []
    ready = sorted(i for i in range(n) if indeg[i] == 0)
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in sorted(succ[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    return order


def best_path(lat: Lattice) -> tuple:
    """Minimum-cost start-to-final path as (total cost, arc list)."""
    arcs_from: dict = {}
    for arc in lat.arcs:
        arcs_from.setdefault(arc.src, []).append(arc)
    cost = {0: 0.0}
    back: dict = {}
    for i in topological_order(lat):
        if i not in cost:
            continue
        for arc in arcs_from.get(i, ()):
            c = cost[i] + arc.acoustic_cost + arc.graph_cost
            if c < cost.get(arc.dst, math.inf):
                cost[arc.dst] = c
                back[arc.dst] = arc
    finals = [i for i in lat.final_nodes if i in cost]
    if not finals:
        raise NoSurvivingPath(f"{lat.utt_id}: no start-to-final path")
    end = min(finals, key=lambda i: (cost[i], i))
    path = []
    node = end
    while node != 0:
        arc = back[node]
        path.append(arc)
        node = arc.src
    path.reverse()
    return cost[end], path


def decode(post: PosteriorMatrix, graph: LexiconGraph,
           cfg: DecodeConfig = DecodeConfig(), priors=None) -> Lattice:
    """Token-passing Viterbi search producing a pruned word lattice."""
    if post.data.shape[0] == 0:
        raise EmptyPosteriors("no frames to decode")
    if priors is None:
        scores = np.log(post.data + LOG_FLOOR)
    else:
        scores = scaled_loglikes(post, priors)
    T = scores.shape[0]
    top = max((a.phone for a in graph.phone_arcs), default=0)
    if scores.shape[1] <= top:
        raise DimMismatch(
            f"graph uses phone index {top} but posteriors have {scores.shape[1]} columns"
        )

    arcs = graph.phone_arcs
    from_state = [[] for _ in range(graph.n_states)]
    for i, arc in enumerate(arcs):
        from_state[arc.src].append(i)
    words_at = [[] for _ in range(graph.n_states)]
    for w in graph.word_arcs:
        words_at[w.state].append(w.word)
    gc_word = cfg.word_penalty + math.log(graph.n_words)

    root_cost = [math.inf] * (T + 1)
    root_cost[0] = 0.0
    active: dict = {}
    word_hyps: dict = {}
    sil_frames = []

    for t in range(T):
        fr = scores[t]
        new: dict = {}
        if math.isfinite(root_cost[t]):
            base = root_cost[t]
            for i in from_state[0]:
                c = base - fr[arcs[i].phone]
                if c < new.get((i, t), math.inf):
                    new[(i, t)] = c
        for (i, t0), c in active.items():
            arc = arcs[i]
            stay = c - fr[arc.phone]
            if stay < new.get((i, t0), math.inf):
                new[(i, t0)] = stay
            for j in from_state[arc.dst]:
                adv = c - fr[arcs[j].phone]
                if adv < new.get((j, t0), math.inf):
                    new[(j, t0)] = adv
        arrive = math.inf
        if graph.sil_loop and math.isfinite(root_cost[t]):
            arrive = root_cost[t] - fr[0]
            sil_frames.append(t)
        for (i, t0), c in new.items():
            for word in words_at[arcs[i].dst]:
                ac = c - root_cost[t0]
                key = (word, t0, t + 1)
                if ac < word_hyps.get(key, math.inf):
                    word_hyps[key] = ac
                if c + gc_word < arrive:
                    arrive = c + gc_word
        root_cost[t + 1] = arrive
        best = min(min(new.values(), default=math.inf), arrive)
        if not math.isfinite(best):
            raise NoSurvivingPath(f"{post.utt_id}: no live tokens at frame {t + 1}")
        limit = best + cfg.beam
        new = {k: v for k, v in new.items() if v <= limit}
        if root_cost[t + 1] > limit:
            root_cost[t + 1] = math.inf
        if len(new) > cfg.max_active:
            # ties break toward lower arc and start ids, keeping runs repeatable
            ranked = sorted(new.items(), key=lambda kv: (kv[1], kv[0]))
            new = dict(ranked[: cfg.max_active])
        active = new

    if not math.isfinite(root_cost[T]):
        raise NoSurvivingPath(f"{post.utt_id}: no completed path reaches frame {T}")

    raw = [(t, t + 1, None, float(-scores[t, 0]), 0.0) for t in sil_frames]
    raw.extend(
        (t0, t1, word, float(ac), gc_word)
        for (word, t0, t1), ac in sorted(word_hyps.items())
    )
    raw.sort(key=lambda r: (r[0], r[1], r[2] is not None, r[2] or ""))

    fwd = [math.inf] * (T + 1)
    fwd[0] = 0.0
    for t0, t1, word, ac, gc in sorted(raw, key=lambda r: r[1]):
        c = fwd[t0] + ac + gc
        if c < fwd[t1]:
            fwd[t1] = c
    bwd = [math.inf] * (T + 1)
    bwd[T] = 0.0
    for t0, t1, word, ac, gc in sorted(raw, key=lambda r: -r[0]):
        c = ac + gc + bwd[t1]
        if c < bwd[t0]:
            bwd[t0] = c
    total = fwd[T]
    if abs(total - root_cost[T]) > 1e-6:
        raise RuntimeError("lattice best path diverged from the search score")

    thr = total + cfg.lattice_beam
    keep = [
        r for r in raw
        if math.isfinite(fwd[r[0]]) and math.isfinite(bwd[r[1]])
        and fwd[r[0]] + r[3] + r[4] + bwd[r[1]] <= thr + 1e-9
    ]
    frames = sorted({f for r in keep for f in (r[0], r[1])} | {0, T})
    node_of = {f: i for i, f in enumerate(frames)}
    lat_arcs = tuple(
        LatticeArc(node_of[t0], node_of[t1], word, ac, gc, t0, t1)
        for t0, t1, word, ac, gc in keep
    )
    return Lattice(post.utt_id, T, post.frame_shift, tuple(frames), lat_arcs)


def write_lattices(lattices, path) -> None:
    """Text lattices: `UTT id T shift`, `ARC ...` lines, then `END`."""
    with open(path, "w", encoding="utf-8") as f:
        for lat in lattices:
            if not lat.utt_id or any(ch.isspace() for ch in lat.utt_id):
                raise ValueError(f"utt id {lat.utt_id!r} does not fit the text format")
            f.write(f"UTT {lat.utt_id} {lat.n_frames} {lat.frame_shift!r}\n")
            for a in lat.arcs:
                f.write(
                    f"ARC {a.src} {a.dst} {a.word if a.word is not None else '-'} "
                    f"{a.acoustic_cost!r} {a.graph_cost!r} {a.start_frame} {a.end_frame}\n"
                )
            f.write("END\n")


def read_lattices(path) -> list:
    """Parse a text lattice file back into Lattice objects."""
    lats = []
    seen = set()
    header = None
    arcs: list = []
    frames: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            tok = line.split()
            if not tok:
                continue
            where = f"{path}:{lineno}"
            if tok[0] == "UTT":
                if header is not None:
                    raise ValueError(f"{where}: UTT before previous END")
                if len(tok) != 4:
                    raise ValueError(f"{where}: want `UTT id frames shift`")
                try:
                    header = (tok[1], int(tok[2]), float(tok[3]))
                except ValueError:
                    raise ValueError(f"{where}: bad UTT header") from None
                if header[0] in seen:
                    raise ValueError(f"{where}: duplicate utterance {header[0]!r}")
                arcs, frames = [], {0: 0}
            elif tok[0] == "ARC":
                if header is None:
                    raise ValueError(f"{where}: ARC outside a UTT block")
                if len(tok) != 8:
                    raise ValueError(f"{where}: want `ARC src dst word ac gc start end`")
                try:
                    src, dst = int(tok[1]), int(tok[2])
                    ac, gc = float(tok[4]), float(tok[5])
                    t0, t1 = int(tok[6]), int(tok[7])
                except ValueError:
                    raise ValueError(f"{where}: bad ARC fields") from None
                word = None if tok[3] == "-" else tok[3]
                for node, frame in ((src, t0), (dst, t1)):
                    if frames.setdefault(node, frame) != frame:
                        raise ValueError(f"{where}: node {node} frame disagrees")
                arcs.append(LatticeArc(src, dst, word, ac, gc, t0, t1))
            elif tok[0] == "END":
                if header is None:
                    raise ValueError(f"{where}: END without UTT")
                n = max(frames) + 1
                if sorted(frames) != list(range(n)):
                    raise ValueError(f"{where}: node ids are not dense")
                node_frames = tuple(frames[i] for i in range(n))
                try:
                    lats.append(Lattice(header[0], header[1], header[2],
                                        node_frames, tuple(arcs)))
                except ValueError as e:
                    raise ValueError(f"{where}: {e}") from None
                seen.add(header[0])
                header = None
            else:
                raise ValueError(f"{where}: unknown record {tok[0]!r}")
    if header is not None:
        raise ValueError(f"{path}: truncated, {header[0]!r} has no END")
    return lats
