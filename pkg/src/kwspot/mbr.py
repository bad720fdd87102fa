"""Keyword MBR loss: insertion/deletion counts, per-sample and batch loss,
and gradients w.r.t. hypothesis scores and model parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .transducer import NBestList, beam_search_nbest, rnnt_neg_log_prob
from .vocab import Vocabulary, count_kw_tokens


@dataclass(frozen=True)
class MbrConfig:
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 0.01
    epsilon: float = 1e-6
    n_best: int = 4
    beam: int = 8
    denominator_mode: str = "clamped"  # "literal" divides by k_ref + eps as written
    posterior_mode: str = "softmax"  # "raw" uses exp(log_prob) without normalizing
    max_symbols_per_frame: int = 3

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.lam < 0:
            raise ValueError("alpha, beta, lambda must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if not (1 <= self.n_best <= self.beam):
            raise ValueError("need 1 <= n_best <= beam")
        if self.denominator_mode not in ("literal", "clamped"):
            raise ValueError("denominator_mode must be 'literal' or 'clamped'")
        if self.posterior_mode not in ("softmax", "raw"):
            raise ValueError("posterior_mode must be 'softmax' or 'raw'")


@dataclass(frozen=True)
class KwTokenStats:
    k_hyp: int
    k_ref: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.k_hyp, self.k_ref, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")
        if self.fp != max(0, self.k_hyp - self.k_ref) or self.fn != max(0, self.k_ref - self.k_hyp):
            raise ValueError("fp/fn inconsistent with counts")


def kw_stats(hypothesis_tokens, reference_tokens, vocab: Vocabulary) -> KwTokenStats:
    """Keyword-token insertion and deletion counts between one hypothesis
    and the reference; at most one of fp, fn is non-zero."""
    k_hyp = count_kw_tokens(hypothesis_tokens, vocab)
    k_ref = count_kw_tokens(reference_tokens, vocab)
    return KwTokenStats(
        k_hyp=k_hyp,
        k_ref=k_ref,
        fp=max(0, k_hyp - k_ref),
        fn=max(0, k_ref - k_hyp),
    )


def hypothesis_posteriors(nbest: NBestList) -> list[float]:
    """Softmax posteriors over the N-best hypothesis log-probabilities."""
    if not nbest.hypotheses:
        raise ValueError("empty N-best list")
    scores = np.array([h.log_prob for h in nbest.hypotheses])
    shifted = scores - scores.max()
    w = np.exp(shifted)
    return list(w / w.sum())


def _denominator(k_ref: int, cfg: MbrConfig) -> float:
    base = k_ref if cfg.denominator_mode == "literal" else max(k_ref, 1)
    return base + cfg.epsilon


def risk(stats: KwTokenStats, cfg: MbrConfig) -> float:
    return (cfg.alpha * stats.fp + cfg.beta * stats.fn) / _denominator(stats.k_ref, cfg)


def per_sample_loss(posterior: float, stats: KwTokenStats, cfg: MbrConfig) -> float:
    """Posterior-weighted keyword error for one hypothesis."""
    if not (0.0 <= posterior <= 1.0):
        raise ValueError("posterior must be in [0, 1]")
    return posterior * risk(stats, cfg)


def batch_loss(batch, cfg: MbrConfig) -> float:
    """Total loss over (nbest, reference_tokens, rnnt_nll, vocab) tuples:
    the double sum of per-sample losses plus lambda times the summed
    transcript negative log-probabilities."""
    total = 0.0
    for nbest, reference, rnnt_nll, vocab in batch:
        posteriors = _posteriors(nbest, cfg)
        for hyp, p in zip(nbest.hypotheses, posteriors):
            total += p * risk(kw_stats(hyp.tokens, reference, vocab), cfg)
        total += cfg.lam * rnnt_nll
    return total


def _posteriors(nbest: NBestList, cfg: MbrConfig) -> list[float]:
    if cfg.posterior_mode == "raw":
        return [float(np.exp(h.log_prob)) for h in nbest.hypotheses]
    return hypothesis_posteriors(nbest)


def mbr_grad_wrt_scores(nbest: NBestList, reference, vocab: Vocabulary, cfg: MbrConfig) -> np.ndarray:
    """Gradient of the per-utterance MBR sum w.r.t. hypothesis log-probs,
    holding the token sequences fixed."""
    if not nbest.hypotheses:
        raise ValueError("empty N-best list")
    r = np.array([risk(kw_stats(h.tokens, reference, vocab), cfg) for h in nbest.hypotheses])
    if cfg.posterior_mode == "raw":
        return np.array([float(np.exp(h.log_prob)) for h in nbest.hypotheses]) * r
    p = np.array(hypothesis_posteriors(nbest))
    return p * (r - float(p @ r))


def mbr_batch_loss_torch(model, batch, cfg: MbrConfig):
    """Differentiable batch loss for fine-tuning.

    Per utterance: beam search (no gradient) proposes the N-best token
    sequences; each sequence is then re-scored differentiably as its full
    alignment-marginal log-probability via the forward DP, and those scores
    feed the posterior-weighted risk plus the lambda-weighted RNN-T term.
    """
    mbr_term = model.joint_out.weight.new_zeros(())
    rnnt_term = model.joint_out.weight.new_zeros(())
    for features, reference, vocab in batch:
        reference = [int(t) for t in reference]
        nll = rnnt_neg_log_prob(model.forward_lattice(features, reference), reference, model.blank_id)
        rnnt_term = rnnt_term + nll
        nbest = beam_search_nbest(
            model, features, beam=cfg.beam, n=cfg.n_best,
            max_symbols_per_frame=cfg.max_symbols_per_frame,
        )
        risks = [
            risk(kw_stats(h.tokens, reference, vocab), cfg) for h in nbest.hypotheses
        ]
        if all(r == 0.0 for r in risks):
            continue  # no gradient either way; skip the re-scoring work
        scores = torch.stack(
            [
                -rnnt_neg_log_prob(
                    model.forward_lattice(features, h.tokens), h.tokens, model.blank_id
                )
                for h in nbest.hypotheses
            ]
        )
        r = scores.new_tensor(risks)
        if cfg.posterior_mode == "raw":
            mbr_term = mbr_term + (torch.exp(scores) * r).sum()
        else:
            mbr_term = mbr_term + (torch.softmax(scores, dim=0) * r).sum()
    return mbr_term, rnnt_term


def mbr_finetune_step(model, optimizer, batch, cfg: MbrConfig) -> dict:
    """One fine-tuning step on a batch of (features, reference_tokens, vocab).

    Returns the loss breakdown; the optimizer step is skipped only if the
    gradient is identically zero (all hypotheses risk-free and lambda 0).
    """
    model.train()
    optimizer.zero_grad()
    mbr_term, rnnt_term = mbr_batch_loss_torch(model, batch, cfg)
    total = mbr_term + cfg.lam * rnnt_term
    if not torch.isfinite(total):
        raise RuntimeError("non-finite MBR fine-tuning loss")
    if total.requires_grad:
        total.backward()
        optimizer.step()
    model.eval()
    return {
        "mbr_term": float(mbr_term.detach()),
        "rnnt_term": float(rnnt_term.detach()),
        "total": float(total.detach()),
    }
