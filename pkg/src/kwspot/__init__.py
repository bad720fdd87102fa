"""Keyword spotting with a transformer transducer: <kw>-token transcripts,
RNN-T training, keyword MBR fine-tuning, N-best decoding, confidence
scoring, score fusion, and DET/EER evaluation."""

from .vocab import Vocabulary, rewrite_keywords, tokenize, detokenize, count_kw_tokens
from .corpus import (
    FeatureSequence,
    SynthConfig,
    UtteranceRecord,
    load_jsonl,
    save_jsonl,
    stack_and_subsample,
    synthesize_corpus,
)
from .model import ModelConfig, TransducerModel, build_model, load_checkpoint, save_checkpoint
from .transducer import (
    Hypothesis,
    NBestList,
    beam_search_nbest,
    exhaustive_decode,
    greedy_decode,
    rnnt_grad,
    rnnt_neg_log_prob,
)
from .mbr import KwTokenStats, MbrConfig, batch_loss, hypothesis_posteriors, kw_stats, mbr_grad_wrt_scores, per_sample_loss
from .scoring import ScoredUtterance, bigram_ged_score, fuse_scores, kw_confidence
from .evaluate import DetCurve, OperatingPoint, det_curve, eer, fn_at_fp
from .train import TrainConfig, run_mbr_finetune, train_asr_baseline, train_rnnt

__all__ = [name for name in dir() if not name.startswith("_")]
