"""Synthetic corpus generation, feature geometry, and JSONL persistence.

The synthetic corpus stands in for a vendor-collected KWS dataset: every
token has a fixed acoustic prototype vector, an utterance's features are
the prototypes of its spoken (verbatim, pre-rewrite) text plus noise, and
negatives optionally include confusable one-edit corruptions of a keyword
phrase.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .vocab import KW_TOKEN, Vocabulary, count_kw_tokens, rewrite_keywords, tokenize

# Prototype vectors are a property of the vocabulary, not of one corpus
# draw: train/test corpora generated with different seeds must share them.
_PROTOTYPE_SEED = 0x5EED_70CE
# The filler-word pool is likewise shared: train and test corpora must
# differ in word order and noise, not in which words exist.
_WORD_POOL_SEED = 0x5EED_0FD5


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray  # (T, D) float64
    frame_stride_ms: float = 30.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError("frames must be a non-empty (T, D) matrix")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames must be finite")
        if self.frame_stride_ms <= 0:
            raise ValueError("frame_stride_ms must be positive")
        object.__setattr__(self, "frames", frames)


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    polarity: str  # "positive" | "negative"
    transcript: str  # post-rewrite, may contain <kw>
    text_verbatim: str  # pre-rewrite spoken text
    features: FeatureSequence

    def __post_init__(self):
        if self.polarity not in ("positive", "negative"):
            raise ValueError(f"bad polarity {self.polarity!r}")


@dataclass(frozen=True)
class SynthConfig:
    keyword_phrases: tuple[str, ...] = ("okay google", "hey google")
    num_positive: int = 100
    num_negative: int = 100
    confusable_fraction: float = 0.2
    base_dim: int = 16
    frames_per_token: int = 2
    noise_stddev: float = 0.3
    seed: int = 42
    word_pool_size: int = 40
    min_words: int = 2
    max_words: int = 4
    frame_stride_ms: float = 30.0

    def __post_init__(self):
        if not self.keyword_phrases:
            raise ValueError("keyword_phrases must be non-empty")
        if not (0.0 <= self.confusable_fraction <= 1.0):
            raise ValueError("confusable_fraction must be in [0, 1]")
        if self.noise_stddev < 0:
            raise ValueError("noise_stddev must be >= 0")
        if self.base_dim < 1 or self.frames_per_token < 1:
            raise ValueError("base_dim and frames_per_token must be positive")


def stack_and_subsample(features: FeatureSequence, stack: int, subsample: int) -> FeatureSequence:
    """Stack consecutive frames and subsample in time.

    Output frame i concatenates input frames [i*subsample, i*subsample+stack),
    right-padded by repeating the last input frame; output length is
    ceil(T / subsample) and the stride grows by the subsample factor.
    """
    if stack < 1 or subsample < 1:
        raise ValueError("stack and subsample must be >= 1")
    frames = features.frames
    t_in = frames.shape[0]
    t_out = math.ceil(t_in / subsample)
    idx = np.arange(t_out)[:, None] * subsample + np.arange(stack)[None, :]
    idx = np.minimum(idx, t_in - 1)
    stacked = frames[idx].reshape(t_out, -1)
    return FeatureSequence(stacked, features.frame_stride_ms * subsample)


def token_prototypes(vocab: Vocabulary, base_dim: int) -> np.ndarray:
    """Fixed per-token prototype vectors, shared by all corpora on a vocab."""
    rng = np.random.default_rng(_PROTOTYPE_SEED + base_dim)
    return rng.standard_normal((vocab.size, base_dim))


def features_for_text(
    text: str,
    vocab: Vocabulary,
    cfg: SynthConfig,
    rng: np.random.Generator,
    prototypes: np.ndarray | None = None,
) -> FeatureSequence:
    """Prototype-concatenation features for a (verbatim) text, plus noise."""
    if prototypes is None:
        prototypes = token_prototypes(vocab, cfg.base_dim)
    ids = tokenize(text, vocab)
    frames = np.repeat(prototypes[ids], cfg.frames_per_token, axis=0)
    if cfg.noise_stddev > 0:
        frames = frames + rng.normal(0.0, cfg.noise_stddev, frames.shape)
    return FeatureSequence(frames, cfg.frame_stride_ms)


def _random_word(rng: np.random.Generator) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    length = int(rng.integers(3, 7))
    return "".join(letters[int(rng.integers(0, 26))] for _ in range(length))


def _corrupt_phrase(phrase: str, rng: np.random.Generator, forbidden: set[str]) -> str:
    """One grapheme edit (substitute/delete/insert) of a keyword phrase."""
    letters = "abcdefghijklmnopqrstuvwxyz"
    for _ in range(100):
        chars = list(phrase)
        op = int(rng.integers(0, 3))
        pos = int(rng.integers(0, len(chars)))
        if op == 0:
            chars[pos] = letters[int(rng.integers(0, 26))]
        elif op == 1 and len(chars) > 1:
            del chars[pos]
        else:
            chars.insert(pos, letters[int(rng.integers(0, 26))])
        out = "".join(chars)
        if out.strip() and out not in forbidden and " ".join(out.split()) == out:
            return out
    raise RuntimeError("could not corrupt phrase")


def synthesize_corpus(
    cfg: SynthConfig, vocab: Vocabulary | None = None
) -> list[UtteranceRecord]:
    """Deterministic synthetic corpus of positive/negative utterances.

    Positives embed one keyword phrase (verbatim) at a random word position;
    a confusable_fraction of negatives embed a one-edit corruption of a
    keyword phrase instead of a regular word.
    """
    vocab = vocab or Vocabulary.default()
    keywords = [k.lower() for k in cfg.keyword_phrases]
    for kw in keywords:
        tokenize(kw, vocab)  # raises OovError if not representable
    rng = np.random.default_rng(cfg.seed)
    prototypes = token_prototypes(vocab, cfg.base_dim)
    pool_rng = np.random.default_rng(_WORD_POOL_SEED + cfg.word_pool_size)
    pool = [_random_word(pool_rng) for _ in range(cfg.word_pool_size)]
    kw_set = set(keywords)

    def random_words(n):
        return [pool[int(rng.integers(0, len(pool)))] for _ in range(n)]

    records = []
    for i in range(cfg.num_positive):
        kw = keywords[int(rng.integers(0, len(keywords)))]
        words = random_words(int(rng.integers(cfg.min_words, cfg.max_words + 1)))
        at = int(rng.integers(0, len(words) + 1))
        words.insert(at, kw)
        text = " ".join(words)
        records.append(_make_record(f"pos{i:05d}", "positive", text, keywords, vocab, cfg, rng, prototypes))

    num_confusable = int(round(cfg.confusable_fraction * cfg.num_negative))
    for i in range(cfg.num_negative):
        words = random_words(int(rng.integers(cfg.min_words, cfg.max_words + 1)))
        if i < num_confusable:
            kw = keywords[int(rng.integers(0, len(keywords)))]
            words[int(rng.integers(0, len(words)))] = _corrupt_phrase(kw, rng, kw_set)
        text = " ".join(words)
        if rewrite_keywords(text, keywords) != text:
            text = " ".join(random_words(cfg.min_words))  # vanishingly unlikely
        records.append(_make_record(f"neg{i:05d}", "negative", text, keywords, vocab, cfg, rng, prototypes))
    return records


def _make_record(utt_id, polarity, text, keywords, vocab, cfg, rng, prototypes):
    transcript = rewrite_keywords(text, keywords)
    features = features_for_text(text, vocab, cfg, rng, prototypes)
    rec = UtteranceRecord(utt_id, polarity, transcript, text, features)
    has_kw = count_kw_tokens(tokenize(transcript, vocab), vocab) >= 1
    if has_kw != (polarity == "positive"):
        raise RuntimeError(f"polarity/<kw> mismatch for {utt_id}: {text!r}")
    return rec


def save_jsonl(records: list[UtteranceRecord], path) -> None:
    """One JSON object per line; floats keep full round-trip precision."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            obj = {
                "id": rec.id,
                "polarity": rec.polarity,
                "transcript": rec.transcript,
                "text_verbatim": rec.text_verbatim,
                "stride_ms": rec.features.frame_stride_ms,
                "features": [[float(v) for v in row] for row in rec.features.frames],
            }
            f.write(json.dumps(obj) + "\n")


def load_jsonl(path) -> list[UtteranceRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = UtteranceRecord(
                    id=obj["id"],
                    polarity=obj["polarity"],
                    transcript=obj["transcript"],
                    text_verbatim=obj.get("text_verbatim", obj["transcript"]),
                    features=FeatureSequence(
                        np.array(obj["features"], dtype=np.float64), obj["stride_ms"]
                    ),
                )
            except (KeyError, ValueError, TypeError) as e:
                raise ValueError(f"{path}: malformed record on line {lineno}: {e}") from e
            records.append(rec)
    return records
