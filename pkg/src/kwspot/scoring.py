"""KWS confidence scores: <kw> softmax score, bigram edit-distance score
for the ASR baseline, and sum-fusion, plus the score CSV format."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .transducer import greedy_decode


@dataclass(frozen=True)
class ScoredUtterance:
    utt_id: str
    polarity: str  # "positive" | "negative"
    score: float
    system: str = ""

    def __post_init__(self):
        if self.polarity not in ("positive", "negative"):
            raise ValueError(f"bad polarity {self.polarity!r}")
        if not math.isfinite(self.score) or self.score < 0:
            raise ValueError("score must be finite and >= 0")


def kw_confidence(model, features, max_symbols_per_frame: int = 3) -> float:
    """Maximum <kw> softmax probability over every joint evaluation along
    the greedy decoding path."""
    kw_id = getattr(model, "kw_token_id", None)
    if kw_id is None:
        raise ValueError("model must expose kw_token_id for confidence scoring")
    _, kw_probs = greedy_decode(
        model, features, max_symbols_per_frame, collect_kw=kw_id
    )
    return max(kw_probs)


def levenshtein(a: str, b: str) -> int:
    """Unit-cost grapheme edit distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _normalize(text: str) -> str:
    return "".join(text.lower().split())


def bigram_ged_score(hypothesis_text: str, keywords: list[str]) -> float:
    """exp(-GED_min) over all word bigrams of the hypothesis vs. the
    keywords, with case and spaces ignored.

    Single-word hypotheses fall back to the unigram; an empty hypothesis
    scores 0.
    """
    if not keywords:
        raise ValueError("keywords must be non-empty")
    words = hypothesis_text.split()
    if not words:
        return 0.0
    if len(words) == 1:
        grams = [words[0]]
    else:
        grams = [words[i] + words[i + 1] for i in range(len(words) - 1)]
    norm_keywords = [_normalize(k) for k in keywords]
    ged_min = min(
        levenshtein(_normalize(g), k) for g in grams for k in norm_keywords
    )
    return math.exp(-ged_min)


def fuse_scores(scores: list[ScoredUtterance]) -> float:
    """Arithmetic sum of per-system scores for one utterance."""
    if not scores:
        raise ValueError("need at least one score")
    ids = {s.utt_id for s in scores}
    if len(ids) != 1:
        raise ValueError(f"mismatched utterance ids: {sorted(ids)}")
    return sum(s.score for s in scores)


def fuse_score_lists(systems: list[list[ScoredUtterance]], system_name: str = "fusion") -> list[ScoredUtterance]:
    """Per-utterance sum-fusion of two or more score lists keyed by utt_id."""
    if len(systems) < 1:
        raise ValueError("need at least one system")
    keyed = [{s.utt_id: s for s in sys_scores} for sys_scores in systems]
    ids = set(keyed[0])
    for k in keyed[1:]:
        if set(k) != ids:
            raise ValueError("systems score different utterance sets")
    fused = []
    for utt_id in sorted(ids):
        parts = [k[utt_id] for k in keyed]
        if len({p.polarity for p in parts}) != 1:
            raise ValueError(f"polarity mismatch for {utt_id}")
        fused.append(
            ScoredUtterance(utt_id, parts[0].polarity, fuse_scores(parts), system_name)
        )
    return fused


def save_scores_csv(scores: list[ScoredUtterance], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["utt_id", "polarity", "score", "system"])
        for s in scores:
            writer.writerow([s.utt_id, s.polarity, repr(s.score), s.system])


def load_scores_csv(path) -> list[ScoredUtterance]:
    scores = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"utt_id", "polarity", "score", "system"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(required)}")
        for row in reader:
            scores.append(
                ScoredUtterance(
                    row["utt_id"], row["polarity"], float(row["score"]), row["system"]
                )
            )
    return scores
