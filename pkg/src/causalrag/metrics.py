"""Evaluation metrics: binary classification (accuracy/F1/AUROC) and text
generation (BLEU, ROUGE-L, METEOR-lite).

METEOR-lite keeps the exact + stem alignment stages and the fragmentation
penalty but drops WordNet synonymy, so it is fully deterministic and
dependency-free.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import EmptyInput, SingleClass

_PUNCT = set(string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip leading/trailing ASCII punctuation."""
    out = []
    for raw in text.lower().split():
        token = raw.strip("".join(_PUNCT))
        if token:
            out.append(token)
    return out


@dataclass(frozen=True)
class VqaRecord:
    id: str
    gold: int
    predicted: int
    confidence: float


@dataclass(frozen=True)
class GenRecord:
    id: str
    candidate: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]


# -- classification metrics -------------------------------------------


def accuracy_f1(records: Sequence[VqaRecord]) -> dict[str, float]:
    if not records:
        raise EmptyInput("no VQA records")
    tp = sum(1 for r in records if r.gold == 1 and r.predicted == 1)
    fp = sum(1 for r in records if r.gold == 0 and r.predicted == 1)
    fn = sum(1 for r in records if r.gold == 1 and r.predicted == 0)
    correct = sum(1 for r in records if r.gold == r.predicted)
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return {
        "accuracy": correct / len(records),
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def auroc(records: Sequence[VqaRecord]) -> float:
    """Mann-Whitney AUROC: P(conf_pos > conf_neg) with half credit for ties."""
    pos = sorted(r.confidence for r in records if r.gold == 1)
    neg = sorted(r.confidence for r in records if r.gold == 0)
    if not pos or not neg:
        raise SingleClass("AUROC needs at least one positive and one negative")
    # two-pointer sweep over sorted confidences; equivalent to exhaustive pairs
    import bisect

    wins = 0.0
    for p in pos:
        lo = bisect.bisect_left(neg, p)
        hi = bisect.bisect_right(neg, p)
        wins += lo + 0.5 * (hi - lo)
    return wins / (len(pos) * len(neg))


# -- BLEU --------------------------------------------------------------


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(record: GenRecord, max_n: int = 4) -> float:
    """Unsmoothed sentence BLEU with clipped n-gram precision and brevity
    penalty against the closest reference length (ties broken short)."""
    cand = record.candidate
    if not cand:
        return 0.0
    c = len(cand)
    log_prec_sum = 0.0
    for n in range(1, max_n + 1):
        cand_ngrams = _ngrams(cand, n)
        total = sum(cand_ngrams.values())
        if total == 0:
            return 0.0
        max_ref = Counter()
        for ref in record.references:
            for gram, count in _ngrams(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand_ngrams.items())
        if clipped == 0:
            return 0.0
        log_prec_sum += math.log(clipped / total)
    r = min((len(ref) for ref in record.references), key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_prec_sum / max_n)


# -- ROUGE-L -----------------------------------------------------------


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(record: GenRecord) -> dict[str, float]:
    """LCS-based P/R/F against the best-F reference."""
    cand = record.candidate
    if not cand:
        return {"precision": 0.0, "recall": 0.0, "f": 0.0}
    best = {"precision": 0.0, "recall": 0.0, "f": 0.0}
    for ref in record.references:
        if not ref:
            continue
        lcs = _lcs_length(cand, ref)
        p = lcs / len(cand)
        r = lcs / len(ref)
        f = 2 * p * r / (p + r) if (p + r) else 0.0
        if f > best["f"]:
            best = {"precision": p, "recall": r, "f": f}
    return best


# -- METEOR-lite -------------------------------------------------------


def stem(word: str) -> str:
    """Tiny deterministic suffix stripper; stands in for a full stemmer."""
    for suffix, replacement, min_stem in (
        ("sses", "ss", 2),
        ("ies", "y", 2),
        ("ing", "", 3),
        ("ed", "", 3),
        ("ly", "", 3),
        ("s", "", 3),
    ):
        if word.endswith(suffix) and len(word) - len(suffix) >= min_stem:
            if suffix == "s" and word.endswith(("ss", "us")):
                continue
        else:
            continue
        return word[: -len(suffix)] + replacement
    return word


def _stage_quotas(cand: Sequence[str], ref: Sequence[str]):
    """Per-class match quotas for the exact stage then the stem stage."""
    exact = {}
    cand_counts = Counter(cand)
    ref_counts = Counter(ref)
    for word in cand_counts:
        q = min(cand_counts[word], ref_counts.get(word, 0))
        if q:
            exact[word] = q
    residual_cand = Counter(
        {w: c - exact.get(w, 0) for w, c in cand_counts.items() if c - exact.get(w, 0)}
    )
    residual_ref = Counter(
        {w: c - exact.get(w, 0) for w, c in ref_counts.items() if c - exact.get(w, 0)}
    )
    stem_cand = Counter()
    stem_ref = Counter()
    for w, c in residual_cand.items():
        stem_cand[stem(w)] += c
    for w, c in residual_ref.items():
        stem_ref[stem(w)] += c
    stems = {}
    for s in stem_cand:
        q = min(stem_cand[s], stem_ref.get(s, 0))
        if q:
            stems[s] = q
    return exact, stems


_SEARCH_LIMIT = 16


def _min_chunks(cand: Sequence[str], ref: Sequence[str], exact: dict, stems: dict) -> int:
    """Minimum chunk count over alignments honoring the stage quotas.

    An alignment pairs candidate and reference tokens one-to-one with exactly
    exact[w] identical-word pairs per word w and exactly stems[s]
    stem-equal (but unequal-word) pairs per stem class s.  Depth-first search
    over candidate positions with quota/availability pruning; beyond the
    search limit the first completed assignment (contiguity-first ordering)
    is accepted instead of the proven minimum.
    """
    matches = sum(exact.values()) + sum(stems.values())
    if matches == 0:
        return 0

    exact_left = dict(exact)
    stem_left = dict(stems)
    ref_used = [False] * len(ref)
    ref_word_avail = Counter(ref)
    ref_stem = [stem(w) for w in ref]
    cand_stem = [stem(w) for w in cand]

    # suffix counts for the upper-bound prune
    n = len(cand)
    suffix_word = [Counter() for _ in range(n + 1)]
    suffix_stem = [Counter() for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        suffix_word[i] = suffix_word[i + 1].copy()
        suffix_word[i][cand[i]] += 1
        suffix_stem[i] = suffix_stem[i + 1].copy()
        suffix_stem[i][cand_stem[i]] += 1

    def upper_bound(i: int) -> int:
        total = 0
        for w, q in exact_left.items():
            if q:
                total += min(q, suffix_word[i][w])
        for s, q in stem_left.items():
            if q:
                total += min(q, suffix_stem[i][s])
        return total

    greedy = len(cand) > _SEARCH_LIMIT or len(ref) > _SEARCH_LIMIT
    best = [matches + 1]

    def dfs(i: int, matched: int, chunks: int, last_cand: int, last_ref: int) -> None:
        if chunks >= best[0]:
            return
        if matched == matches:
            best[0] = chunks
            return
        if i == n or upper_bound(i) < matches - matched:
            return
        word = cand[i]
        word_stem = cand_stem[i]
        positions: list[tuple[int, str]] = []
        if exact_left.get(word, 0) > 0:
            for j in range(len(ref)):
                if not ref_used[j] and ref[j] == word:
                    positions.append((j, "exact"))
        if stem_left.get(word_stem, 0) > 0:
            for j in range(len(ref)):
                if ref_used[j] or ref[j] == word or ref_stem[j] != word_stem:
                    continue
                # a stem match may not starve the exact quota of the ref word
                if ref_word_avail[ref[j]] - 1 < exact_left.get(ref[j], 0):
                    continue
                positions.append((j, "stem"))
        # a chunk continues only when both sides advance by exactly one
        contiguous = i == last_cand + 1
        positions.sort(key=lambda t: (not (contiguous and t[0] == last_ref + 1), t[0]))
        for j, kind in positions:
            key = word if kind == "exact" else word_stem
            quota = exact_left if kind == "exact" else stem_left
            quota[key] -= 1
            ref_used[j] = True
            ref_word_avail[ref[j]] -= 1
            step = 0 if (contiguous and j == last_ref + 1) else 1
            dfs(i + 1, matched + 1, chunks + step, i, j)
            ref_word_avail[ref[j]] += 1
            ref_used[j] = False
            quota[key] += 1
            if greedy and best[0] <= matches:
                return
        dfs(i + 1, matched, chunks, last_cand, last_ref)

    dfs(0, 0, 0, -2, -2)
    return best[0] if best[0] <= matches else matches


def meteor_lite(record: GenRecord) -> float:
    """Best-reference METEOR with exact + stem stages and chunk penalty."""
    cand = record.candidate
    if not cand:
        return 0.0
    best = 0.0
    for ref in record.references:
        if not ref:
            continue
        exact, stems = _stage_quotas(cand, ref)
        m = sum(exact.values()) + sum(stems.values())
        if m == 0:
            continue
        chunks = _min_chunks(cand, ref, exact, stems)
        p = m / len(cand)
        r = m / len(ref)
        fmean = 10 * p * r / (r + 9 * p)
        penalty = 0.5 * (chunks / m) ** 3
        best = max(best, fmean * (1.0 - penalty))
    return best


# -- batch entry points ------------------------------------------------


def evaluate_vqa(records: Sequence[VqaRecord]) -> dict[str, float]:
    out = accuracy_f1(records)
    try:
        out["auroc"] = auroc(records)
    except SingleClass:
        out["auroc"] = float("nan")
    return out


def evaluate_generation(records: Sequence[GenRecord]) -> dict[str, float]:
    if not records:
        raise EmptyInput("no generation records")
    n = len(records)
    return {
        "bleu": sum(bleu(r) for r in records) / n,
        "rouge_l": sum(rouge_l(r)["f"] for r in records) / n,
        "meteor": sum(meteor_lite(r) for r in records) / n,
    }


def format_metrics(metrics: dict[str, float]) -> str:
    """Render metric name -> value with 4 decimal places, stable key order."""
    import json

    return json.dumps({k: round(v, 4) for k, v in sorted(metrics.items())})
