"""Transducer sequence probability, lattice gradient, and decoding.

The lattice is a (T, U+1, V) table of log-softmax vectors. The forward DP
sums over all monotone blank/label alignment paths; `exhaustive_decode`
enumerates emission paths directly and serves as the test oracle for both
the DP and the beam search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

NEG_INF = float("-inf")


# --- sequence probability -------------------------------------------------


def rnnt_neg_log_prob(lattice, target, blank_id: int):
    """-log P(target | lattice) over all alignment paths.

    Accepts a numpy array or a torch tensor; a torch input keeps the
    computation differentiable and returns a 0-dim tensor.
    """
    if isinstance(lattice, torch.Tensor):
        return _rnnt_nll_torch(lattice, [int(t) for t in target], blank_id)
    lattice = np.asarray(lattice, dtype=np.float64)
    out = _rnnt_nll_torch(torch.as_tensor(lattice), [int(t) for t in target], blank_id)
    return float(out)


def _rnnt_nll_torch(lattice: torch.Tensor, target: list[int], blank_id: int) -> torch.Tensor:
    t_len, u1, _ = lattice.shape
    u_len = u1 - 1
    if len(target) != u_len:
        raise ValueError(f"lattice has U={u_len} but target length is {len(target)}")
    blanks = lattice[:, :, blank_id]  # (T, U+1)
    if u_len > 0:
        emits = lattice[:, torch.arange(u_len), target]  # (T, U); [t, u] = lp(y[u] | t, u)
    ninf = lattice.new_tensor(NEG_INF)
    # alpha carried as full-length-T diagonals (t + u = d), -inf off-diagonal
    ts = torch.arange(t_len)
    prev = torch.where(ts == 0, lattice.new_tensor(0.0), ninf)
    for d in range(1, t_len + u_len):
        us = d - ts
        valid = (us >= 0) & (us <= u_len)
        tm1 = (ts - 1).clamp(min=0)
        us_c = us.clamp(min=0, max=u_len)
        from_blank = torch.where(
            valid & (ts >= 1), prev[tm1] + blanks[tm1, us_c], ninf
        )
        if u_len > 0:
            um1 = (us - 1).clamp(min=0, max=u_len - 1)
            from_emit = torch.where(
                valid & (us >= 1), prev[ts] + emits[ts, um1], ninf
            )
            prev = torch.logaddexp(from_blank, from_emit)
        else:
            prev = from_blank
    # after the last diagonal, prev[T-1] == alpha[T-1, U]
    return -(prev[t_len - 1] + blanks[t_len - 1, u_len])


def rnnt_grad(lattice, target, blank_id: int) -> np.ndarray:
    """Exact d(-log P)/d(lattice log-probs) via forward-backward in numpy.

    Independent of the autograd path used during training; cells off every
    alignment path get zero gradient.
    """
    lattice = np.asarray(lattice, dtype=np.float64)
    t_len, u1, _ = lattice.shape
    u_len = u1 - 1
    target = [int(t) for t in target]
    if len(target) != u_len:
        raise ValueError(f"lattice has U={u_len} but target length is {len(target)}")
    blanks = lattice[:, :, blank_id]
    alpha = np.full((t_len, u1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(t_len):
        for u in range(u1):
            if t == 0 and u == 0:
                continue
            a = alpha[t - 1, u] + blanks[t - 1, u] if t > 0 else NEG_INF
            b = alpha[t, u - 1] + lattice[t, u - 1, target[u - 1]] if u > 0 else NEG_INF
            alpha[t, u] = np.logaddexp(a, b)
    beta = np.full((t_len, u1), NEG_INF)
    beta[t_len - 1, u_len] = blanks[t_len - 1, u_len]
    for t in range(t_len - 1, -1, -1):
        for u in range(u_len, -1, -1):
            if t == t_len - 1 and u == u_len:
                continue
            a = blanks[t, u] + beta[t + 1, u] if t + 1 < t_len else NEG_INF
            b = lattice[t, u, target[u]] + beta[t, u + 1] if u < u_len else NEG_INF
            beta[t, u] = np.logaddexp(a, b)
    log_p = beta[0, 0]
    grad = np.zeros_like(lattice)
    for t in range(t_len):
        for u in range(u1):
            if t + 1 < t_len:
                occ = alpha[t, u] + blanks[t, u] + beta[t + 1, u] - log_p
                grad[t, u, blank_id] -= math.exp(occ)
            if u < u_len:
                occ = alpha[t, u] + lattice[t, u, target[u]] + beta[t, u + 1] - log_p
                grad[t, u, target[u]] -= math.exp(occ)
    # final blank transition out of (T-1, U)
    occ = alpha[t_len - 1, u_len] + blanks[t_len - 1, u_len] - log_p
    grad[t_len - 1, u_len, blank_id] -= math.exp(occ)
    return grad


# --- hypotheses -----------------------------------------------------------


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_prob: float
    frame_emissions: tuple[tuple[int, int], ...] = ()  # (frame, token) per emission

    def __post_init__(self):
        if not math.isfinite(self.log_prob):
            raise ValueError("log_prob must be finite")
        if self.frame_emissions and len(self.frame_emissions) != len(self.tokens):
            raise ValueError("frame_emissions must align with tokens")


@dataclass(frozen=True)
class NBestList:
    hypotheses: tuple[Hypothesis, ...]
    beam_size: int
    n: int

    def __post_init__(self):
        seqs = [h.tokens for h in self.hypotheses]
        if len(set(seqs)) != len(seqs):
            raise ValueError("duplicate token sequences in N-best list")
        keys = [(-h.log_prob, h.tokens) for h in self.hypotheses]
        if keys != sorted(keys):
            raise ValueError("N-best list must be sorted by descending log_prob")


def _joint_row(model, enc_t, emb) -> np.ndarray:
    row = model.joint_log_probs(enc_t, emb)
    if isinstance(row, torch.Tensor):
        row = row.detach().cpu().numpy()
    return np.asarray(row, dtype=np.float64)


# --- greedy ---------------------------------------------------------------


def greedy_decode(model, features, max_symbols_per_frame: int = 3, collect_kw=None):
    """Frame-by-frame argmax decoding with a per-frame emission cap.

    Ties break toward the lowest token id. If `collect_kw` is a token id,
    the softmax probability of that token at every joint evaluation is
    appended to the returned list (used for confidence scoring).
    """
    if max_symbols_per_frame < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    kw_probs = [] if collect_kw is not None else None
    with torch.no_grad():
        enc = model.encode(features)
        emb, state = model.label_start()
        tokens: list[int] = []
        emissions: list[tuple[int, int]] = []
        log_prob = 0.0
        for t in range(len(enc)):
            emitted = 0
            while True:
                row = _joint_row(model, enc[t], emb)
                if kw_probs is not None:
                    kw_probs.append(math.exp(row[collect_kw]))
                if emitted < max_symbols_per_frame:
                    best = int(np.argmax(row))  # first occurrence = lowest id on ties
                else:
                    best = model.blank_id  # cap reached: frame advance forced
                if best == model.blank_id:
                    log_prob += float(row[model.blank_id])
                    break
                tokens.append(best)
                emissions.append((t, best))
                log_prob += float(row[best])
                emitted += 1
                emb, state = model.label_step(best, state)
    hyp = Hypothesis(tuple(tokens), log_prob, tuple(emissions))
    return (hyp, kw_probs) if kw_probs is not None else hyp


# --- beam search ----------------------------------------------------------


class _Beam:
    __slots__ = ("tokens", "log_prob", "emb", "state", "emissions", "best_path")

    def __init__(self, tokens, log_prob, emb, state, emissions, best_path):
        self.tokens = tokens
        self.log_prob = log_prob  # merged over alignment paths found so far
        self.emb = emb
        self.state = state
        self.emissions = emissions
        self.best_path = best_path  # score of the single best path, for emissions


def _merge(pool: dict, hyp: _Beam) -> None:
    old = pool.get(hyp.tokens)
    if old is None:
        pool[hyp.tokens] = hyp
    else:
        old.log_prob = float(np.logaddexp(old.log_prob, hyp.log_prob))
        if hyp.best_path > old.best_path:
            old.best_path = hyp.best_path
            old.emissions = hyp.emissions


def _top(pool: dict, k: int) -> list:
    return sorted(pool.values(), key=lambda h: (-h.log_prob, h.tokens))[:k]


def beam_search_nbest(
    model, features, beam: int, n: int, max_symbols_per_frame: int = 3
) -> NBestList:
    """Frame-synchronous beam search returning the top-n distinct sequences.

    Hypotheses with identical token sequences are merged by log-sum-exp of
    their path scores; a complete hypothesis consumes every frame via a
    blank transition. Within a frame, blank-stopped and still-emitting
    candidates compete in a single pruning pool, so beam 1 follows exactly
    the greedy per-step argmax path, and a beam wide enough to hold every
    candidate explores every path.
    """
    if beam < 1 or not (1 <= n <= beam):
        raise ValueError("need beam >= 1 and 1 <= n <= beam")
    if max_symbols_per_frame < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    blank = model.blank_id
    with torch.no_grad():
        enc = model.encode(features)
        emb0, state0 = model.label_start()
        frontier = [_Beam((), 0.0, emb0, state0, (), 0.0)]
        for t in range(len(enc)):
            stopped: dict = {}  # consumed frame t via blank
            active = frontier
            for step in range(max_symbols_per_frame + 1):
                expansions: dict = {}
                parents: dict = {}  # tokens -> parent state for the LSTM step
                for hyp in active:
                    row = _joint_row(model, enc[t], hyp.emb)
                    _merge(
                        stopped,
                        _Beam(
                            hyp.tokens,
                            hyp.log_prob + float(row[blank]),
                            hyp.emb,
                            hyp.state,
                            hyp.emissions,
                            hyp.best_path + float(row[blank]),
                        ),
                    )
                    if step == max_symbols_per_frame:
                        continue
                    for v in range(len(row)):
                        if v == blank:
                            continue
                        seq = hyp.tokens + (v,)
                        parents.setdefault(seq, hyp.state)
                        _merge(
                            expansions,
                            _Beam(
                                seq,
                                hyp.log_prob + float(row[v]),
                                None,
                                None,
                                hyp.emissions + ((t, v),),
                                hyp.best_path + float(row[v]),
                            ),
                        )
                # joint pruning: stopped and continuing candidates share the
                # beam budget (continuing entries sort after stopped on ties)
                ranked = sorted(
                    [(h, False) for h in stopped.values()]
                    + [(h, True) for h in expansions.values()],
                    key=lambda hc: (-hc[0].log_prob, hc[0].tokens, hc[1]),
                )[:beam]
                stopped = {h.tokens: h for h, cont in ranked if not cont}
                active = [h for h, cont in ranked if cont]
                for hyp in active:
                    # the label-encoder state depends only on the token
                    # sequence, so any contributing parent's state is valid
                    hyp.emb, hyp.state = model.label_step(hyp.tokens[-1], parents[hyp.tokens])
                if not active:
                    break
            frontier = _top(stopped, beam)
    hyps = tuple(Hypothesis(h.tokens, h.log_prob, h.emissions) for h in _top({h.tokens: h for h in frontier}, n))
    return NBestList(hyps, beam_size=beam, n=n)


# --- exhaustive oracle ----------------------------------------------------


def exhaustive_decode(
    model, features, max_symbols_per_frame: int = 3, max_paths: int = 100_000
) -> list[tuple[tuple[int, ...], float]]:
    """Enumerate every emission path and merge by token sequence.

    Test oracle only; raises if the path count guard is exceeded. Returns
    (sequence, merged log_prob) pairs sorted by descending log_prob with
    lexicographic tie-breaking.
    """
    if max_symbols_per_frame < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    blank = model.blank_id
    merged: dict[tuple[int, ...], float] = {}
    paths_seen = 0
    with torch.no_grad():
        enc = model.encode(features)
        t_len = len(enc)
        rows: dict[tuple[int, ...], np.ndarray] = {}
        states: dict[tuple[int, ...], tuple] = {}

        def label_state(tokens):
            if tokens not in states:
                if tokens:
                    emb, state = label_state(tokens[:-1])
                    states[tokens] = model.label_step(tokens[-1], state)
                else:
                    states[tokens] = model.label_start()
            return states[tokens]

        def row_for(t, tokens):
            key = (t,) + tokens
            if key not in rows:
                emb, _ = label_state(tokens)
                rows[key] = _joint_row(model, enc[t], emb)
            return rows[key]

        def walk(t, tokens, log_p, emitted):
            nonlocal paths_seen
            if t == t_len:
                paths_seen += 1
                if paths_seen > max_paths:
                    raise RuntimeError(f"exhaustive_decode path guard exceeded ({max_paths})")
                prev = merged.get(tokens)
                merged[tokens] = log_p if prev is None else float(np.logaddexp(prev, log_p))
                return
            row = row_for(t, tokens)
            walk(t + 1, tokens, log_p + float(row[blank]), 0)
            if emitted < max_symbols_per_frame:
                for v in range(len(row)):
                    if v != blank:
                        walk(t, tokens + (v,), log_p + float(row[v]), emitted + 1)

        walk(0, (), 0.0, 0)
    return sorted(merged.items(), key=lambda kv: (-kv[1], kv[0]))


# --- stub model for tests and hand-built scoring cases --------------------


class TableModel:
    """Prefix-independent stub decoder: one fixed log-prob row per frame.

    Implements the same duck-typed surface the decoders use on the real
    model, which makes exhaustive enumeration tractable for oracles.
    """

    def __init__(self, logits: np.ndarray, blank_id: int):
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 2:
            raise ValueError("logits must be (T, V)")
        shifted = logits - logits.max(axis=1, keepdims=True)
        self.log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        self.blank_id = blank_id
        self.vocab_size = logits.shape[1]

    def encode(self, features):
        return self.log_probs

    def label_start(self):
        return None, None

    def label_step(self, token, state):
        return None, None

    def joint_log_probs(self, enc_t, emb):
        return enc_t
