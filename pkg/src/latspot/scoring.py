"""Term-weighted value scoring for keyword search output.

Detections are aligned one-to-one to reference occurrences per keyword,
then scored with the NIST-style term-weighted value TWV = 1 - P_miss -
beta * P_fa, averaged over keywords that have at least one reference
occurrence.  A threshold sweep yields the maximum attainable value, raw
posterior scores can be renormalized per keyword, and per-keyword score
vectors from two systems can be compared with paired significance tests.
"""

import dataclasses
import math

from .lattice_index import Detection

DEFAULT_BETA = 999.9

AGE_GROUPS = (("4-6", 4, 6), ("7-9", 7, 9), ("10-13", 10, 13))

REFS_HEADER = "keyword_id\tutt_id\tstart_sec\tend_sec"
META_HEADER = "utt_id\tspeaker_id\tage"
DET_CURVE_HEADER = "theta,pfa,pmiss,twv"
DURATIONS_HEADER = "utt_id\tduration_sec"


class NoScoreableKeywords(ValueError):
    """No keyword in the trial set has a reference occurrence."""


class LengthMismatch(ValueError):
    """Paired score vectors differ in length."""


class DegenerateInput(ValueError):
    """Too few pairs for a significance test."""


@dataclasses.dataclass(frozen=True)
class RefOccurrence:
    """One true occurrence of a keyword inside an utterance."""

    keyword_id: str
    utt_id: str
    start_sec: float
    end_sec: float

    def __post_init__(self):
        if not self.keyword_id or "\t" in self.keyword_id or "\n" in self.keyword_id:
            raise ValueError("keyword id must be non-empty without tabs or newlines")
        if not self.utt_id or any(c.isspace() for c in self.utt_id):
            raise ValueError("utterance id must be non-empty without whitespace")
        if not (math.isfinite(self.start_sec) and math.isfinite(self.end_sec)):
            raise ValueError("occurrence times must be finite")
        if self.start_sec < 0.0 or self.end_sec <= self.start_sec:
            raise ValueError("occurrence must satisfy end > start >= 0")


@dataclasses.dataclass
class TrialSet:
    """References plus the speech metadata needed to score against them.

    speaker_meta maps utt_id to (speaker_id, age in years or None); ages
    feed the age-group breakdown.  utt_durations (seconds per utterance)
    is optional and only needed by group_report, which recomputes speech
    totals per group; when present the durations must cover every
    reference utterance and sum to total_speech_sec.
    """

    total_speech_sec: float
    refs: tuple
    speaker_meta: dict
    utt_durations: dict | None = None

    def __post_init__(self):
        self.refs = tuple(self.refs)
        if not (math.isfinite(self.total_speech_sec) and self.total_speech_sec > 0):
            raise ValueError("total speech duration must be positive")
        for r in self.refs:
            if r.utt_id not in self.speaker_meta:
                raise ValueError(
                    f"reference utterance {r.utt_id!r} missing from speaker_meta")
            if r.end_sec > self.total_speech_sec + 1e-9:
                raise ValueError(
                    "total speech duration shorter than a reference occurrence")
        if self.utt_durations is not None:
            for utt, dur in self.utt_durations.items():
                if utt not in self.speaker_meta:
                    raise ValueError(f"duration for unknown utterance {utt!r}")
                if not (math.isfinite(dur) and dur > 0):
                    raise ValueError("utterance durations must be positive")
            for r in self.refs:
                if r.utt_id not in self.utt_durations:
                    raise ValueError(
                        f"no duration for reference utterance {r.utt_id!r}")
            if abs(math.fsum(self.utt_durations.values())
                   - self.total_speech_sec) > 1e-6:
                raise ValueError("utterance durations do not sum to total_speech_sec")


@dataclasses.dataclass(frozen=True)
class KeywordStats:
    """Counts and rates for one keyword at a fixed decision threshold."""

    keyword_id: str
    n_true: int
    n_hit: int
    n_fa: int
    p_miss: float
    p_fa: float
    twv: float

    def __post_init__(self):
        if self.n_true < 1 or not 0 <= self.n_hit <= self.n_true or self.n_fa < 0:
            raise ValueError("inconsistent detection counts")
        if not (0.0 <= self.p_miss <= 1.0 and 0.0 <= self.p_fa <= 1.0):
            raise ValueError("miss and false-alarm rates must lie in [0, 1]")


@dataclasses.dataclass
class TwvReport:
    """Scoring summary at one threshold plus the sweep maximum.

    p_fa_avg and p_miss_avg are keyword-averaged rates at theta; skipped
    lists keywords that appeared only in the detections and were excluded
    from the average for lack of reference occurrences.
    """

    keywords: tuple
    atwv: float
    mtwv: float
    mtwv_threshold: float
    p_fa_avg: float
    p_miss_avg: float
    theta: float
    beta: float
    skipped: tuple = ()

    def __post_init__(self):
        self.keywords = tuple(self.keywords)
        self.skipped = tuple(self.skipped)
        if self.atwv > 1.0 + 1e-12 or self.mtwv > 1.0 + 1e-12:
            raise ValueError("term-weighted value cannot exceed 1")
        if self.mtwv < self.atwv - 1e-12:
            raise ValueError("sweep maximum cannot fall below the actual value")

    def to_dict(self):
        """Plain-dict form of every field, ready for json.dump."""
        return {
            "beta": self.beta,
            "theta": self.theta,
            "atwv": self.atwv,
            "mtwv": self.mtwv,
            "mtwv_threshold": self.mtwv_threshold,
            "p_fa_avg": self.p_fa_avg,
            "p_miss_avg": self.p_miss_avg,
            "skipped_keywords": list(self.skipped),
            "keywords": [
                {
                    "keyword_id": s.keyword_id,
                    "n_true": s.n_true,
                    "n_hit": s.n_hit,
                    "n_fa": s.n_fa,
                    "p_miss": s.p_miss,
                    "p_fa": s.p_fa,
                    "twv": s.twv,
                }
                for s in self.keywords
            ],
        }


@dataclasses.dataclass(frozen=True)
class EmptyGroup:
    """Marker for an age group that produced nothing to score."""

    label: str
    reason: str


def _midpoint(start, end):
    return 0.5 * (start + end)


def align_detections(dets, refs, tol_sec=0.5):
    """Greedy one-to-one matching of detections to references.

    A detection can match an unmatched reference of the same keyword in
    the same utterance when their midpoints differ by at most tol_sec.
    Pairs are taken closest-first, ties going to the earliest reference.
    Returns (hits, misses, false_alarms) with hits as (det, ref) pairs.
    """
    candidates = []
    for i, d in enumerate(dets):
        dm = _midpoint(d.start_sec, d.end_sec)
        for j, r in enumerate(refs):
            if d.keyword_id != r.keyword_id or d.utt_id != r.utt_id:
                continue
            dist = abs(dm - _midpoint(r.start_sec, r.end_sec))
            if dist <= tol_sec:
                candidates.append((dist, r.start_sec, i, j))
    used_det = [False] * len(dets)
    used_ref = [False] * len(refs)
    hits = []
    for _, _, i, j in sorted(candidates):
        if used_det[i] or used_ref[j]:
            continue
        used_det[i] = used_ref[j] = True
        hits.append((dets[i], refs[j]))
    misses = [r for j, r in enumerate(refs) if not used_ref[j]]
    false_alarms = [d for i, d in enumerate(dets) if not used_det[i]]
    return hits, misses, false_alarms


def _twv_at(dets, trials, beta, theta, tol_sec):
    yes = [d for d in dets if d.score >= theta]
    hits, _, false_alarms = align_detections(yes, trials.refs, tol_sec)
    n_true = {}
    for r in trials.refs:
        n_true[r.keyword_id] = n_true.get(r.keyword_id, 0) + 1
    n_hit = {}
    for _, r in hits:
        n_hit[r.keyword_id] = n_hit.get(r.keyword_id, 0) + 1
    n_fa = {}
    for d in false_alarms:
        n_fa[d.keyword_id] = n_fa.get(d.keyword_id, 0) + 1
    stats = []
    for kw in sorted(n_true):
        nt = n_true[kw]
        nh = n_hit.get(kw, 0)
        nf = n_fa.get(kw, 0)
        p_miss = 1.0 - nh / nt
        # 1-second trial convention: non-target trials are the speech
        # seconds not occupied by true occurrences
        denom = trials.total_speech_sec - nt
        if nf == 0:
            p_fa = 0.0
        elif denom > 0:
            p_fa = min(1.0, nf / denom)
        else:
            p_fa = 1.0
        stats.append(KeywordStats(kw, nt, nh, nf, p_miss, p_fa,
                                  1.0 - p_miss - beta * p_fa))
    if not stats:
        raise NoScoreableKeywords("no keyword has a reference occurrence")
    skipped = tuple(sorted({d.keyword_id for d in dets} - set(n_true)))
    atwv = math.fsum(s.twv for s in stats) / len(stats)
    p_fa_avg = math.fsum(s.p_fa for s in stats) / len(stats)
    p_miss_avg = math.fsum(s.p_miss for s in stats) / len(stats)
    return tuple(stats), atwv, p_fa_avg, p_miss_avg, skipped


def sweep_mtwv(dets, trials, beta=DEFAULT_BETA, tol_sec=0.5):
    """Sweep decision thresholds over every distinct score plus {0, 1}.

    Returns (mtwv, theta_star, det_curve) where theta_star is the
    smallest maximizing threshold and det_curve lists
    (theta, p_fa_avg, p_miss_avg, twv) per swept threshold.  With no
    detections at all the maximum is 0 and theta_star is pinned to 1.
    """
    thresholds = sorted({d.score for d in dets} | {0.0, 1.0})
    curve = []
    for theta in thresholds:
        _, atwv, p_fa_avg, p_miss_avg, _ = _twv_at(dets, trials, beta, theta, tol_sec)
        curve.append((theta, p_fa_avg, p_miss_avg, atwv))
    mtwv = max(point[3] for point in curve)
    theta_star = next(point[0] for point in curve if point[3] == mtwv)
    if not dets:
        theta_star = 1.0
    return mtwv, theta_star, curve


def compute_twv(dets, trials, beta=DEFAULT_BETA, theta=0.5, tol_sec=0.5):
    """Score detections against a trial set at decision threshold theta.

    Decisions are re-derived as score >= theta; stored decision fields
    are ignored.  Keywords without reference occurrences are excluded
    from the average and listed in the report.
    """
    if not (math.isfinite(beta) and beta > 0):
        raise ValueError("beta must be positive")
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    stats, atwv, p_fa_avg, p_miss_avg, skipped = _twv_at(
        dets, trials, beta, theta, tol_sec)
    mtwv, theta_star, _ = sweep_mtwv(dets, trials, beta, tol_sec)
    return TwvReport(stats, atwv, mtwv, theta_star, p_fa_avg, p_miss_avg,
                     theta, beta, skipped)


def kst_normalize(dets, trials, beta=DEFAULT_BETA):
    """Keyword-specific score normalization.

    Per keyword the expected true count is estimated as the sum of raw
    scores, turned into the threshold
    thr = est / (T/beta + (beta-1)/beta * est), and raw scores are mapped
    through the monotone piecewise-linear function sending [0, thr] to
    [0, 0.5] and [thr, 1] to [0.5, 1].  Decisions become YES at 0.5.
    """
    totals = {}
    for d in dets:
        totals[d.keyword_id] = totals.get(d.keyword_id, 0.0) + d.score
    out = []
    for d in dets:
        est = totals[d.keyword_id]
        if est > 0.0:
            thr = est / (trials.total_speech_sec / beta
                         + (beta - 1.0) / beta * est)
        else:
            thr = 1.0
        if thr >= 1.0:
            norm = 0.5 * d.score / thr
        elif d.score <= thr:
            norm = 0.5 * d.score / thr
        else:
            norm = 0.5 + 0.5 * (d.score - thr) / (1.0 - thr)
        norm = min(1.0, max(0.0, norm))
        out.append(dataclasses.replace(
            d, score=norm, decision="YES" if norm >= 0.5 else "NO"))
    return out


def group_report(dets, trials, groups=AGE_GROUPS, beta=DEFAULT_BETA,
                 theta=0.5, tol_sec=0.5):
    """Score each age group separately.

    groups is a list of (label, age_min, age_max); an utterance belongs
    to a group when its speaker age lies in the inclusive range.  Speech
    totals are recomputed per group from utt_durations.  Groups with no
    utterances or no reference occurrences map to an EmptyGroup marker.
    """
    if trials.utt_durations is None:
        raise ValueError("per-utterance durations are required for group reports")
    out = {}
    for label, age_min, age_max in groups:
        utts = {u for u, (_, age) in trials.speaker_meta.items()
                if age is not None and age_min <= age <= age_max}
        missing = sorted(u for u in utts if u not in trials.utt_durations)
        if missing:
            raise ValueError(f"no duration for utterance {missing[0]!r}")
        if not utts:
            out[label] = EmptyGroup(label, "no utterances in age range")
            continue
        durations = {u: trials.utt_durations[u] for u in utts}
        sub = TrialSet(math.fsum(durations.values()),
                       tuple(r for r in trials.refs if r.utt_id in utts),
                       {u: trials.speaker_meta[u] for u in utts},
                       durations)
        sub_dets = [d for d in dets if d.utt_id in utts]
        try:
            out[label] = compute_twv(sub_dets, sub, beta, theta, tol_sec)
        except NoScoreableKeywords:
            out[label] = EmptyGroup(label, "no reference occurrences")
    return out


def _reg_inc_beta_cf(a, b, x):
    # Lentz's continued fraction for the regularized incomplete beta
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def _reg_inc_beta(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _reg_inc_beta_cf(a, b, x) / a
    return 1.0 - front * _reg_inc_beta_cf(b, a, 1.0 - x) / b


def _student_two_sided(t, df):
    return _reg_inc_beta(0.5 * df, 0.5, df / (df + t * t))


def _average_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(values):
        j = i
        while j < len(values) and values[order[j]] == values[order[i]]:
            j += 1
        # positions i..j-1 share ranks i+1..j
        avg = 0.5 * (i + j + 1)
        for k in range(i, j):
            ranks[order[k]] = avg
        i = j
    return ranks


def _signed_rank(diffs):
    nonzero = [d for d in diffs if d != 0.0]
    n = len(nonzero)
    if n == 0:
        return 0.0, 1.0
    ranks = _average_ranks([abs(d) for d in nonzero])
    r_plus = math.fsum(r for d, r in zip(nonzero, ranks) if d > 0)
    stat = min(r_plus, math.fsum(ranks) - r_plus)
    if n < 10:
        # exact null distribution by sign enumeration, valid with ties
        hits = 0
        for mask in range(1 << n):
            w = 0.0
            for i in range(n):
                if mask >> i & 1:
                    w += ranks[i]
            if w <= stat + 1e-9:
                hits += 1
        p = 2.0 * hits / (1 << n)
    else:
        mean = 0.25 * n * (n + 1)
        var = n * (n + 1) * (2 * n + 1) / 24.0
        counts = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        var -= math.fsum(t ** 3 - t for t in counts.values()) / 48.0
        shift = stat - mean
        correction = 0.5 * ((shift > 0) - (shift < 0))
        z = (shift - correction) / math.sqrt(var)
        p = math.erfc(abs(z) / math.sqrt(2.0))
    return stat, min(p, 1.0)


def paired_tests(per_kw_a, per_kw_b):
    """Two-sided paired t-test and Wilcoxon signed-rank test.

    Zero differences are dropped for the signed-rank test, which uses
    exact sign enumeration below 10 effective pairs and the normal
    approximation with continuity and tie corrections otherwise.  The
    returned flag is "all_differences_zero" or "zero_variance" for the
    degenerate cases, else None.
    """
    a = [float(x) for x in per_kw_a]
    b = [float(x) for x in per_kw_b]
    if len(a) != len(b):
        raise LengthMismatch(f"paired vectors of length {len(a)} and {len(b)}")
    n = len(a)
    if n < 2:
        raise DegenerateInput("need at least two paired values")
    diffs = [x - y for x, y in zip(a, b)]
    if all(d == 0.0 for d in diffs):
        return {"t_stat": 0.0, "t_pvalue": 1.0, "wilcoxon_stat": 0.0,
                "wilcoxon_pvalue": 1.0, "flag": "all_differences_zero"}
    mean = math.fsum(diffs) / n
    var = math.fsum((d - mean) ** 2 for d in diffs) / (n - 1)
    flag = None
    if var == 0.0:
        t_stat = math.inf if mean > 0 else -math.inf
        t_pvalue = 0.0
        flag = "zero_variance"
    else:
        t_stat = mean / math.sqrt(var / n)
        t_pvalue = _student_two_sided(t_stat, n - 1)
    wilcoxon_stat, wilcoxon_pvalue = _signed_rank(diffs)
    return {"t_stat": t_stat, "t_pvalue": t_pvalue,
            "wilcoxon_stat": wilcoxon_stat,
            "wilcoxon_pvalue": wilcoxon_pvalue, "flag": flag}


def write_refs(refs, path):
    """Write reference occurrences as a TSV file with a header row."""
    lines = [REFS_HEADER]
    for r in refs:
        lines.append(f"{r.keyword_id}\t{r.utt_id}\t{r.start_sec!r}\t{r.end_sec!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_refs(path):
    """Read reference occurrences written by write_refs."""
    refs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if lineno == 1:
                if line != REFS_HEADER:
                    raise ValueError(f"{path}:1: expected header {REFS_HEADER!r}")
                continue
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            try:
                refs.append(RefOccurrence(parts[0], parts[1],
                                          float(parts[2]), float(parts[3])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return refs


def write_speaker_meta(meta, path):
    """Write utt_id -> (speaker_id, age or None) as a TSV file."""
    lines = [META_HEADER]
    for utt in sorted(meta):
        speaker, age = meta[utt]
        lines.append(f"{utt}\t{speaker}\t{'-' if age is None else age}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_speaker_meta(path):
    """Read speaker metadata written by write_speaker_meta."""
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if lineno == 1:
                if line != META_HEADER:
                    raise ValueError(f"{path}:1: expected header {META_HEADER!r}")
                continue
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            utt, speaker, age_text = parts
            if not utt or any(c.isspace() for c in utt):
                raise ValueError(f"{path}:{lineno}: bad utterance id {utt!r}")
            if not speaker or any(c.isspace() for c in speaker):
                raise ValueError(f"{path}:{lineno}: bad speaker id {speaker!r}")
            if utt in meta:
                raise ValueError(f"{path}:{lineno}: duplicate utterance {utt!r}")
            if age_text == "-":
                age = None
            else:
                try:
                    age = int(age_text)
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: bad age {age_text!r}") from exc
                if age < 0:
                    raise ValueError(f"{path}:{lineno}: bad age {age_text!r}")
            meta[utt] = (speaker, age)
    return meta


def write_durations(durations, path):
    """Write utt_id -> duration in seconds as a TSV file."""
    lines = [DURATIONS_HEADER]
    for utt in sorted(durations):
        lines.append(f"{utt}\t{float(durations[utt])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_durations(path):
    """Read per-utterance durations written by write_durations."""
    durations = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if lineno == 1:
                if line != DURATIONS_HEADER:
                    raise ValueError(f"{path}:1: expected header {DURATIONS_HEADER!r}")
                continue
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated fields")
            utt, dur_text = parts
            if not utt or any(c.isspace() for c in utt):
                raise ValueError(f"{path}:{lineno}: bad utterance id {utt!r}")
            if utt in durations:
                raise ValueError(f"{path}:{lineno}: duplicate utterance {utt!r}")
            try:
                dur = float(dur_text)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad duration {dur_text!r}") from exc
            if not (math.isfinite(dur) and dur > 0):
                raise ValueError(f"{path}:{lineno}: bad duration {dur_text!r}")
            durations[utt] = dur
    return durations


def write_det_curve(curve, path):
    """Write a threshold sweep as CSV rows theta,pfa,pmiss,twv."""
    lines = [DET_CURVE_HEADER]
    for theta, p_fa, p_miss, twv in curve:
        lines.append(f"{theta!r},{p_fa!r},{p_miss!r},{twv!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
