import numpy as np
import pytest
import torch
from dataclasses import replace

from kwspot.corpus import SynthConfig, synthesize_corpus
from kwspot.mbr import MbrConfig
from kwspot.model import ModelConfig
from kwspot.scoring import ScoredUtterance
from kwspot.train import (
    TrainConfig,
    run_mbr_finetune,
    save_metric_log,
    score_utterances,
    train_asr_baseline,
    train_rnnt,
)
from kwspot.vocab import Vocabulary

VOCAB = Vocabulary.default()
KEYWORDS = ["okay google", "hey google"]

SYNTH = dict(base_dim=8, frames_per_token=2, noise_stddev=0.1, min_words=1,
             max_words=1, word_pool_size=6, confusable_fraction=0.0)
MODEL = ModelConfig(
    input_dim=8, num_blocks=1, dense1_dim=8, dense2_dim=4, num_heads=1,
    head_dim=8, label_encoder_dim=8, joint_dim=8, vocab_size=VOCAB.size,
)


def tiny_sets(n_train=4, n_valid=2):
    train = synthesize_corpus(SynthConfig(num_positive=n_train, num_negative=n_train, seed=1, **SYNTH))
    valid = synthesize_corpus(SynthConfig(num_positive=n_valid, num_negative=n_valid, seed=2, **SYNTH))
    valid = [replace(r, id="v" + r.id) for r in valid]
    return train, valid


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.seed == 42
        assert cfg.stage == "rnnt"

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(stage="other")


class TestTrainRnnt:
    def test_short_run_improves_train_loss(self):
        train, valid = tiny_sets()
        cfg = TrainConfig(max_steps=30, eval_every=15, batch_size=4, learning_rate=3e-3, seed=0)
        model, metric_log = train_rnnt(MODEL, train, valid, cfg, VOCAB)
        losses = [row["train_loss"] for row in metric_log if row["stage"] == "rnnt"]
        assert len(metric_log) == 30
        assert losses[-1] < losses[0]

    def test_metric_log_structure(self):
        train, valid = tiny_sets()
        cfg = TrainConfig(max_steps=4, eval_every=2, batch_size=4, seed=0)
        _, metric_log = train_rnnt(MODEL, train, valid, cfg, VOCAB)
        evals = [r for r in metric_log if r["valid_metric_name"]]
        assert [r["step"] for r in evals] == [2, 4]
        assert all(r["valid_metric_name"] == "eer" for r in evals)
        assert all(0.0 <= r["valid_metric_value"] <= 1.0 for r in evals)

    def test_deterministic(self):
        train, valid = tiny_sets()
        cfg = TrainConfig(max_steps=6, eval_every=3, batch_size=4, seed=0)
        m1, log1 = train_rnnt(MODEL, train, valid, cfg, VOCAB)
        m2, log2 = train_rnnt(MODEL, train, valid, cfg, VOCAB)
        assert log1 == log2
        for p1, p2 in zip(m1.parameters(), m2.parameters()):
            assert torch.equal(p1, p2)

    def test_rejects_overlapping_splits(self):
        train, _ = tiny_sets()
        cfg = TrainConfig(max_steps=1)
        with pytest.raises(ValueError, match="share"):
            train_rnnt(MODEL, train, train, cfg, VOCAB)

    def test_rejects_empty_sets(self):
        train, valid = tiny_sets()
        with pytest.raises(ValueError):
            train_rnnt(MODEL, [], valid, TrainConfig(max_steps=1), VOCAB)

    def test_returns_best_validation_checkpoint(self):
        # with zero learning rate every eval sees the initial model, so the
        # selected checkpoint must equal the initial weights
        train, valid = tiny_sets()
        cfg = TrainConfig(max_steps=4, eval_every=2, batch_size=4, learning_rate=0.0, seed=0)
        model, _ = train_rnnt(MODEL, train, valid, cfg, VOCAB)
        from kwspot.model import build_model

        torch.manual_seed(cfg.seed)
        init = build_model(MODEL, VOCAB.blank_id, cfg.seed, VOCAB.kw_token_id)
        for p1, p2 in zip(model.parameters(), init.parameters()):
            assert torch.equal(p1, p2)


class TestAsrBaseline:
    def test_trains_on_verbatim_text_and_scores_with_ged(self):
        train, valid = tiny_sets()
        cfg = TrainConfig(max_steps=4, eval_every=2, batch_size=4, seed=0)
        model, metric_log = train_asr_baseline(MODEL, train, valid, cfg, VOCAB, KEYWORDS)
        scores = score_utterances(model, valid, "asr", KEYWORDS, VOCAB)
        assert all(0.0 <= s.score <= 1.0 for s in scores)
        assert all(s.system == "asr" for s in scores)

    def test_requires_keywords(self):
        train, valid = tiny_sets()
        with pytest.raises(ValueError):
            train_rnnt(MODEL, train, valid, TrainConfig(max_steps=1), VOCAB, verbatim=True)


class TestScoreUtterances:
    def test_kw_mode_scores_are_probabilities(self):
        train, valid = tiny_sets()
        cfg = TrainConfig(max_steps=2, eval_every=2, batch_size=4, seed=0)
        model, _ = train_rnnt(MODEL, train, valid, cfg, VOCAB)
        scores = score_utterances(model, valid, "ttkws")
        assert [s.utt_id for s in scores] == [r.id for r in valid]
        assert all(isinstance(s, ScoredUtterance) for s in scores)
        assert all(0.0 <= s.score <= 1.0 for s in scores)


class TestMbrFinetune:
    def test_runs_and_logs(self):
        train, valid = tiny_sets()
        cfg = TrainConfig(max_steps=3, eval_every=3, batch_size=4, learning_rate=1e-5, seed=0, stage="mbr")
        warm, _ = train_rnnt(MODEL, train, valid, TrainConfig(max_steps=5, eval_every=5, batch_size=4, seed=0), VOCAB)
        mbr_cfg = MbrConfig(beam=3, n_best=2, max_symbols_per_frame=2)
        model, metric_log = run_mbr_finetune(warm, train, valid, mbr_cfg, cfg, VOCAB)
        assert len(metric_log) == 3
        assert all(r["stage"] == "mbr" for r in metric_log)
        assert {"mbr_term", "rnnt_term"} <= set(metric_log[0])
        evals = [r for r in metric_log if r["valid_metric_name"]]
        assert evals and evals[0]["valid_metric_name"] == "fn_at_1pct_fp"


class TestMetricLogCsv:
    def test_round_trippable_columns(self, tmp_path):
        rows = [
            {"step": 1, "stage": "rnnt", "train_loss": 2.5, "valid_metric_name": "", "valid_metric_value": ""},
            {"step": 2, "stage": "rnnt", "train_loss": 2.0, "valid_metric_name": "eer", "valid_metric_value": 0.25},
        ]
        path = tmp_path / "metrics.csv"
        save_metric_log(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,stage,train_loss,mbr_term,rnnt_term,valid_metric_name,valid_metric_value"
        assert len(lines) == 3
