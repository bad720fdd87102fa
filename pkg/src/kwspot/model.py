"""Transformer-transducer model: causal transformer audio encoder, LSTM
label encoder, additive joint network, checkpoint persistence.

All arithmetic is float64 on CPU so that finite-difference gradient checks
and cross-run determinism hold exactly; checkpoints store float32.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

CHECKPOINT_MAGIC = b"KWSPOT1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 16
    num_blocks: int = 2
    dense1_dim: int = 64
    dense2_dim: int = 16
    num_heads: int = 2
    head_dim: int = 8
    dropout: float = 0.0
    label_encoder_dim: int = 16
    joint_dim: int = 16
    vocab_size: int = 30
    joint_nonlinearity: str = "tanh"
    label_cell: str = "lstm"

    def __post_init__(self):
        dims = (
            self.input_dim, self.num_blocks, self.dense1_dim, self.dense2_dim,
            self.num_heads, self.head_dim, self.label_encoder_dim, self.joint_dim,
        )
        if any(d < 1 for d in dims):
            raise ValueError("all dimensions must be positive")
        if self.vocab_size < 3:
            raise ValueError("vocab_size must be >= 3")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")

    @property
    def d_model(self) -> int:
        return self.num_heads * self.head_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def production_small_config(vocab_size: int = 30, input_dim: int = 160) -> ModelConfig:
    """Production-scale "small" model preset: 7 blocks, 128/32 dense, 8x64 heads,
    32-dim label encoder."""
    return ModelConfig(
        input_dim=input_dim, num_blocks=7, dense1_dim=128, dense2_dim=32,
        num_heads=8, head_dim=64, dropout=0.1, label_encoder_dim=32,
        joint_dim=512, vocab_size=vocab_size,
    )


def _init_linear(layer: nn.Linear, gen: torch.Generator) -> None:
    fan_in = layer.weight.shape[1]
    scale = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        layer.weight.uniform_(-scale, scale, generator=gen)
        if layer.bias is not None:
            layer.bias.zero_()


def sinusoidal_positions(t: int, dim: int, dtype=torch.float64) -> torch.Tensor:
    pos = torch.arange(t, dtype=dtype)[:, None]
    i = torch.arange(dim, dtype=dtype)[None, :]
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=dtype), (2 * (i // 2)) / dim)
    enc = torch.where(i % 2 == 0, torch.sin(angle), torch.cos(angle))
    return enc


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        inner = cfg.num_heads * cfg.head_dim
        self.num_heads = cfg.num_heads
        self.head_dim = cfg.head_dim
        self.q = nn.Linear(d, inner)
        self.k = nn.Linear(d, inner)
        self.v = nn.Linear(d, inner)
        self.out = nn.Linear(inner, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[0]
        h, hd = self.num_heads, self.head_dim
        q = self.q(x).view(t, h, hd).transpose(0, 1)  # (h, t, hd)
        k = self.k(x).view(t, h, hd).transpose(0, 1)
        v = self.v(x).view(t, h, hd).transpose(0, 1)
        scores = q @ k.transpose(1, 2) / math.sqrt(hd)  # (h, t, t)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        ctx = (attn @ v).transpose(0, 1).reshape(t, h * hd)
        return self.out(ctx)


class TransformerBlock(nn.Module):
    """Post-LN block: causal self-attention, then a two-layer feed-forward
    (dense1 -> dense2) with a projection back to the model width."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.attn = CausalSelfAttention(cfg)
        self.norm1 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, cfg.dense1_dim)
        self.ff2 = nn.Linear(cfg.dense1_dim, cfg.dense2_dim)
        self.ff_out = nn.Linear(cfg.dense2_dim, d)
        self.norm2 = nn.LayerNorm(d)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attn(x)))
        ff = self.ff_out(torch.relu(self.ff2(torch.relu(self.ff1(x)))))
        return self.norm2(x + self.dropout(ff))


class TransducerModel(nn.Module):
    """Audio encoder + label encoder + additive joint.

    The decoding-facing surface is `encode`, `label_start`, `label_step`,
    and `joint_log_probs`; `forward_lattice` composes them over a whole
    (features, target) pair.
    """

    def __init__(self, cfg: ModelConfig, blank_id: int, seed: int = 0, kw_token_id: int | None = None):
        super().__init__()
        self.cfg = cfg
        self.blank_id = blank_id
        self.kw_token_id = kw_token_id
        d = cfg.d_model
        self.input_proj = nn.Linear(cfg.input_dim, d)
        self.blocks = nn.ModuleList(TransformerBlock(cfg) for _ in range(cfg.num_blocks))
        self.label_embed = nn.Embedding(cfg.vocab_size, cfg.label_encoder_dim)
        self.label_cell = nn.LSTMCell(cfg.label_encoder_dim, cfg.label_encoder_dim)
        self.label_h0 = nn.Parameter(torch.zeros(cfg.label_encoder_dim))
        self.label_c0 = nn.Parameter(torch.zeros(cfg.label_encoder_dim))
        self.joint_audio = nn.Linear(d, cfg.joint_dim)
        self.joint_label = nn.Linear(cfg.label_encoder_dim, cfg.joint_dim)
        self.joint_out = nn.Linear(cfg.joint_dim, cfg.vocab_size)
        self.double()
        self._reset_parameters(seed)

    def _reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                _init_linear(module, gen)
        with torch.no_grad():
            scale = 1.0 / math.sqrt(self.cfg.label_encoder_dim)
            self.label_embed.weight.uniform_(-scale, scale, generator=gen)
            self.label_cell.weight_ih.uniform_(-scale, scale, generator=gen)
            self.label_cell.weight_hh.uniform_(-scale, scale, generator=gen)
            self.label_cell.bias_ih.zero_()
            self.label_cell.bias_hh.zero_()
            self.label_h0.uniform_(-scale, scale, generator=gen)
            self.label_c0.uniform_(-scale, scale, generator=gen)

    # --- audio side -------------------------------------------------------

    def encode(self, features) -> torch.Tensor:
        """Per-frame acoustic embeddings, (T, d_model)."""
        x = _as_tensor(features)
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise ValueError(
                f"features must be (T, {self.cfg.input_dim}), got {tuple(x.shape)}"
            )
        x = self.input_proj(x)
        x = x + sinusoidal_positions(x.shape[0], self.cfg.d_model).to(x.dtype)
        for block in self.blocks:
            x = block(x)
        return x

    # --- label side -------------------------------------------------------

    def label_start(self):
        """Embedding of the empty prefix plus the initial recurrent state."""
        h, c = self.label_h0, self.label_c0
        return h, (h, c)

    def label_step(self, token: int, state):
        if token == self.blank_id:
            raise ValueError("blank id is not a valid label-encoder input")
        if not (0 <= token < self.cfg.vocab_size):
            raise ValueError(f"token id {token} out of range")
        h, c = state
        emb = self.label_embed.weight[token]
        h, c = self.label_cell(emb[None, :], (h[None, :], c[None, :]))
        h, c = h[0], c[0]
        return h, (h, c)

    def label_encode(self, prefix) -> torch.Tensor:
        """Embedding of a full token prefix (equivalent to repeated steps)."""
        emb, state = self.label_start()
        for token in prefix:
            emb, state = self.label_step(int(token), state)
        return emb

    def label_states(self, target) -> torch.Tensor:
        """Stacked embeddings for all prefixes of target, (U+1, label_dim)."""
        out = []
        emb, state = self.label_start()
        out.append(emb)
        for token in target:
            emb, state = self.label_step(int(token), state)
            out.append(emb)
        return torch.stack(out)

    # --- joint ------------------------------------------------------------

    def joint_log_probs(self, acoustic_emb: torch.Tensor, linguistic_emb: torch.Tensor) -> torch.Tensor:
        """Log-softmax over the vocabulary for one (frame, prefix) pair.

        Both inputs may carry leading broadcast dimensions.
        """
        a = self.joint_audio(acoustic_emb)
        l = self.joint_label(linguistic_emb)
        z = torch.tanh(a + l)
        return torch.log_softmax(self.joint_out(z), dim=-1)

    def forward_lattice(self, features, target) -> torch.Tensor:
        """Joint log-probabilities for every (t, u), (T, U+1, vocab)."""
        target = [int(t) for t in target]
        if any(t == self.blank_id for t in target):
            raise ValueError("target must not contain blank")
        enc = self.encode(features)  # (T, d)
        lab = self.label_states(target)  # (U+1, ld)
        return self.joint_log_probs(enc[:, None, :], lab[None, :, :])


def _as_tensor(features) -> torch.Tensor:
    if isinstance(features, torch.Tensor):
        return features.double()
    if hasattr(features, "frames"):
        features = features.frames
    return torch.as_tensor(np.asarray(features), dtype=torch.float64)


def build_model(
    cfg: ModelConfig, blank_id: int, seed: int = 0, kw_token_id: int | None = None
) -> TransducerModel:
    """Deterministically initialized model (uniform +-1/sqrt(fan_in), zero bias)."""
    model = TransducerModel(cfg, blank_id, seed, kw_token_id)
    model.eval()
    return model


def parameter_grad(model: TransducerModel, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Gradient of a scalar loss w.r.t. every named parameter tensor."""
    if not torch.isfinite(loss):
        raise ValueError("loss is not finite")
    params = dict(model.named_parameters())
    grads = torch.autograd.grad(
        loss, list(params.values()), allow_unused=True, retain_graph=False
    )
    out = {}
    for (name, p), g in zip(params.items(), grads):
        out[name] = torch.zeros_like(p) if g is None else g
    return out


# --- checkpoint format ----------------------------------------------------
# magic "KWSPOT1" | u32 version | u32 config-json-len | config json |
# u32 blank_id | i32 kw_token_id (-1 if unset) | u32 num-tensors | per tensor:
#   u32 name-len | name utf-8 | u32 ndim | u32 dims... | f32le data


def save_checkpoint(model: TransducerModel, path) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg_json = json.dumps(model.cfg.to_dict()).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_json)))
    buf.write(cfg_json)
    buf.write(struct.pack("<I", model.blank_id))
    kw = model.kw_token_id
    buf.write(struct.pack("<i", -1 if kw is None else kw))
    named = list(model.state_dict().items())
    buf.write(struct.pack("<I", len(named)))
    for name, tensor in named:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        arr = tensor.detach().cpu().numpy().astype("<f4")
        buf.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


class CheckpointError(ValueError):
    pass


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> TransducerModel:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(f, 4))
        cfg = ModelConfig.from_dict(json.loads(_read_exact(f, cfg_len).decode("utf-8")))
        if expect_config is not None and cfg != expect_config:
            raise CheckpointError("checkpoint config does not match the requested config")
        (blank_id,) = struct.unpack("<I", _read_exact(f, 4))
        (kw_token_id,) = struct.unpack("<i", _read_exact(f, 4))
        (num_tensors,) = struct.unpack("<I", _read_exact(f, 4))
        state = {}
        for _ in range(num_tensors):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(f, 4))
            shape = struct.unpack("<" + "I" * ndim, _read_exact(f, 4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(shape)
            state[name] = torch.as_tensor(arr.astype(np.float64))
    model = build_model(cfg, blank_id, kw_token_id=None if kw_token_id < 0 else kw_token_id)
    model.load_state_dict(state)
    model.eval()
    return model
