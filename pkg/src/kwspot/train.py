"""RNN-T warm-start training, the verbatim-transcript ASR baseline, and
MBR fine-tuning orchestration with validation-based checkpoint selection."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass

import numpy as np
import torch

from .corpus import UtteranceRecord
from .evaluate import det_curve, eer, fn_at_fp
from .mbr import MbrConfig, mbr_finetune_step
from .model import ModelConfig, TransducerModel, build_model
from .scoring import ScoredUtterance, bigram_ged_score, kw_confidence
from .transducer import greedy_decode, rnnt_neg_log_prob
from .vocab import Vocabulary, detokenize, tokenize

log = logging.getLogger("kwspot")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 3e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int = 1000
    eval_every: int = 200
    seed: int = 42
    stage: str = "rnnt"  # "rnnt" | "mbr"
    max_symbols_per_frame: int = 3

    def __post_init__(self):
        if self.batch_size < 1 or self.max_steps < 0 or self.eval_every < 1:
            raise ValueError("batch_size/max_steps/eval_every must be positive")
        if self.stage not in ("rnnt", "mbr"):
            raise ValueError("stage must be 'rnnt' or 'mbr'")


def _check_disjoint(train_set, valid_set):
    overlap = {r.id for r in train_set} & {r.id for r in valid_set}
    if overlap:
        raise ValueError(f"train/valid sets share utterance ids: {sorted(overlap)[:5]}")


def _targets(records, vocab, verbatim: bool):
    texts = [(r.text_verbatim if verbatim else r.transcript) for r in records]
    return [tokenize(t, vocab) for t in texts]


def _batches(num: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches, reshuffled each epoch."""
    while True:
        order = rng.permutation(num)
        for i in range(0, num, batch_size):
            yield order[i : i + batch_size]


def _mean_nll(model, records, targets) -> float:
    with torch.no_grad():
        total = 0.0
        for rec, tgt in zip(records, targets):
            lattice = model.forward_lattice(rec.features, tgt)
            total += float(rnnt_neg_log_prob(lattice, tgt, model.blank_id))
    return total / max(len(records), 1)


def score_utterances(
    model, records, system: str, keywords=None, vocab=None, max_symbols_per_frame: int = 3
) -> list[ScoredUtterance]:
    """Confidence scores for a record list.

    With `keywords` set the model is treated as a verbatim ASR baseline and
    scored with the bigram edit-distance rule; otherwise the <kw> softmax
    score is used.
    """
    out = []
    for rec in records:
        if keywords is None:
            score = kw_confidence(model, rec.features, max_symbols_per_frame)
        else:
            hyp = greedy_decode(model, rec.features, max_symbols_per_frame)
            text = detokenize(list(hyp.tokens), vocab)
            score = bigram_ged_score(text, keywords)
        out.append(ScoredUtterance(rec.id, rec.polarity, score, system))
    return out


def _valid_eer(model, records, cap, keywords=None, vocab=None) -> float:
    scored = score_utterances(model, records, "valid", keywords, vocab, cap)
    return eer(det_curve(scored))


def train_rnnt(
    model_cfg: ModelConfig,
    train_set: list[UtteranceRecord],
    valid_set: list[UtteranceRecord],
    train_cfg: TrainConfig,
    vocab: Vocabulary,
    keywords: list[str] | None = None,
    verbatim: bool = False,
    model: TransducerModel | None = None,
) -> tuple[TransducerModel, list[dict]]:
    """Minimize the mean transcript negative log-probability; keep the
    checkpoint with the best validation EER.

    `verbatim=True` trains the ASR baseline on pre-rewrite transcripts and
    evaluates it with bigram edit-distance scoring (requires `keywords`).
    """
    if not train_set or not valid_set:
        raise ValueError("train and valid sets must be non-empty")
    _check_disjoint(train_set, valid_set)
    if verbatim and not keywords:
        raise ValueError("verbatim training needs the keyword list for validation scoring")
    torch.manual_seed(train_cfg.seed)
    if model is None:
        model = build_model(model_cfg, vocab.blank_id, train_cfg.seed, vocab.kw_token_id)
    targets = _targets(train_set, vocab, verbatim)
    valid_targets = _targets(valid_set, vocab, verbatim)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=train_cfg.learning_rate,
        betas=(train_cfg.adam_beta1, train_cfg.adam_beta2),
        eps=train_cfg.adam_eps,
    )
    rng = np.random.default_rng(train_cfg.seed)
    batches = _batches(len(train_set), train_cfg.batch_size, rng)
    metric_log: list[dict] = []
    score_kw = keywords if verbatim else None
    best = {
        "metric": _valid_eer(model, valid_set, train_cfg.max_symbols_per_frame, score_kw, vocab),
        "state": copy.deepcopy(model.state_dict()),
        "step": 0,
    }
    for step in range(1, train_cfg.max_steps + 1):
        idx = next(batches)
        model.train()
        optimizer.zero_grad()
        loss = 0.0
        for i in idx:
            lattice = model.forward_lattice(train_set[i].features, targets[i])
            loss = loss + rnnt_neg_log_prob(lattice, targets[i], model.blank_id)
        loss = loss / len(idx)
        if not torch.isfinite(loss):
            raise RuntimeError(f"training diverged: non-finite loss at step {step}")
        loss.backward()
        optimizer.step()
        model.eval()
        loss = loss.detach()
        if step % train_cfg.eval_every == 0 or step == train_cfg.max_steps:
            valid_eer = _valid_eer(model, valid_set, train_cfg.max_symbols_per_frame, score_kw, vocab)
            valid_nll = _mean_nll(model, valid_set, valid_targets)
            metric_log.append(
                {
                    "step": step,
                    "stage": "rnnt",
                    "train_loss": float(loss),
                    "valid_metric_name": "eer",
                    "valid_metric_value": valid_eer,
                    "valid_nll": valid_nll,
                }
            )
            log.info("step %d train_nll %.4f valid_eer %.4f valid_nll %.4f", step, float(loss), valid_eer, valid_nll)
            if valid_eer < best["metric"]:
                best = {"metric": valid_eer, "state": copy.deepcopy(model.state_dict()), "step": step}
        else:
            metric_log.append(
                {
                    "step": step,
                    "stage": "rnnt",
                    "train_loss": float(loss),
                    "valid_metric_name": "",
                    "valid_metric_value": "",
                }
            )
    model.load_state_dict(best["state"])
    model.eval()
    log.info("selected checkpoint from step %d (valid EER %.4f)", best["step"], best["metric"])
    return model, metric_log


def train_asr_baseline(model_cfg, train_set, valid_set, train_cfg, vocab, keywords):
    """Same machinery as train_rnnt, on verbatim transcripts without the
    <kw> rewriting; scored with the bigram edit-distance rule."""
    return train_rnnt(
        model_cfg, train_set, valid_set, train_cfg, vocab,
        keywords=keywords, verbatim=True,
    )


def run_mbr_finetune(
    model: TransducerModel,
    train_set: list[UtteranceRecord],
    valid_set: list[UtteranceRecord],
    mbr_cfg: MbrConfig,
    train_cfg: TrainConfig,
    vocab: Vocabulary,
) -> tuple[TransducerModel, list[dict]]:
    """Fine-tune a warm-started model with the combined MBR + RNN-T loss;
    checkpoint selection by validation FN at 1% FP.

    Ties prefer the most recent checkpoint: the warm start is the step-0
    candidate, and on small validation sets the metric often saturates at
    its floor, so strict-improvement selection would discard fine-tuning
    even when it helps on held-out data.
    """
    if not train_set or not valid_set:
        raise ValueError("train and valid sets must be non-empty")
    _check_disjoint(train_set, valid_set)
    torch.manual_seed(train_cfg.seed)
    targets = _targets(train_set, vocab, verbatim=False)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=train_cfg.learning_rate,
        betas=(train_cfg.adam_beta1, train_cfg.adam_beta2),
        eps=train_cfg.adam_eps,
    )
    rng = np.random.default_rng(train_cfg.seed)
    batches = _batches(len(train_set), train_cfg.batch_size, rng)

    def valid_fn_at_1pct():
        scored = score_utterances(model, valid_set, "valid", None, vocab, train_cfg.max_symbols_per_frame)
        return fn_at_fp(det_curve(scored), 0.01)

    metric_log: list[dict] = []
    best = {"metric": valid_fn_at_1pct(), "state": copy.deepcopy(model.state_dict()), "step": 0}
    for step in range(1, train_cfg.max_steps + 1):
        idx = next(batches)
        batch = [(train_set[i].features, targets[i], vocab) for i in idx]
        metrics = mbr_finetune_step(model, optimizer, batch, mbr_cfg)
        row = {
            "step": step,
            "stage": "mbr",
            "train_loss": metrics["total"],
            "mbr_term": metrics["mbr_term"],
            "rnnt_term": metrics["rnnt_term"],
            "valid_metric_name": "",
            "valid_metric_value": "",
        }
        if step % train_cfg.eval_every == 0 or step == train_cfg.max_steps:
            metric = valid_fn_at_1pct()
            row["valid_metric_name"] = "fn_at_1pct_fp"
            row["valid_metric_value"] = metric
            log.info("mbr step %d total %.4f mbr %.4f rnnt %.4f valid_fn@1%%fp %.4f",
                     step, metrics["total"], metrics["mbr_term"], metrics["rnnt_term"], metric)
            if metric <= best["metric"]:
                best = {"metric": metric, "state": copy.deepcopy(model.state_dict()), "step": step}
        metric_log.append(row)
    model.load_state_dict(best["state"])
    model.eval()
    return model, metric_log


def save_metric_log(metric_log: list[dict], path) -> None:
    fields = ["step", "stage", "train_loss", "mbr_term", "rnnt_term", "valid_metric_name", "valid_metric_value"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in metric_log:
            writer.writerow(row)
