"""Decoder-only transformer with a language-model head and a per-slot
presence classifier head.

Blocks are pre-norm with learned positional embeddings and a GELU feed
forward. The classifier reads the hidden state at the context separator
position (the last context token), before any state tokens, so its output
is a pure function of the context. Two execution paths share the same
kernels: an autograd path for training (see :mod:`.autograd`) and a plain
numpy path with an incremental key/value cache for decoding.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import kernels
from .autograd import Tensor

CHECKPOINT_MAGIC = b"DSTLABCK"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_slots: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 0  # 0 means 4 * d_model
    max_seq_len: int = 256
    dropout_rate: float = 0.1
    tie_lm_head: bool = False
    # The classifier input gets the same dropout treatment as the LM head's
    # input (none beyond the in-block dropouts); True adds an extra dropout
    # on the classifier feature only.
    classifier_dropout: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def init_parameters(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    d, f, v = config.d_model, config.d_ff, config.vocab_size

    def normal(*shape):
        return (rng.standard_normal(shape) * 0.02).astype(dt)

    params: dict[str, np.ndarray] = {
        "tok_emb": normal(v, d),
        "pos_emb": normal(config.max_seq_len, d),
        "ln_f_g": np.ones(d, dtype=dt),
        "ln_f_b": np.zeros(d, dtype=dt),
        "w_acc": normal(d, config.n_slots),
        "b_acc": np.zeros(config.n_slots, dtype=dt),
    }
    if not config.tie_lm_head:
        params["w_lm"] = normal(d, v)
    params["b_lm"] = np.zeros(v, dtype=dt)
    for i in range(config.n_layers):
        params.update({
            f"l{i}.ln1_g": np.ones(d, dtype=dt), f"l{i}.ln1_b": np.zeros(d, dtype=dt),
            f"l{i}.wq": normal(d, d), f"l{i}.bq": np.zeros(d, dtype=dt),
            f"l{i}.wk": normal(d, d), f"l{i}.bk": np.zeros(d, dtype=dt),
            f"l{i}.wv": normal(d, d), f"l{i}.bv": np.zeros(d, dtype=dt),
            f"l{i}.wo": normal(d, d), f"l{i}.bo": np.zeros(d, dtype=dt),
            f"l{i}.ln2_g": np.ones(d, dtype=dt), f"l{i}.ln2_b": np.zeros(d, dtype=dt),
            f"l{i}.w_ff1": normal(d, f), f"l{i}.b_ff1": np.zeros(f, dtype=dt),
            f"l{i}.w_ff2": normal(f, d), f"l{i}.b_ff2": np.zeros(d, dtype=dt),
        })
    return params


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(p.size for p in params.values()))


def wrap_parameters(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def causal_mask(t: int, dtype) -> np.ndarray:
    mask = np.zeros((t, t), dtype=dtype)
    mask[np.triu_indices(t, k=1)] = -np.inf
    return mask


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ag.add(ag.matmul(x, w), b)


def encode_hidden(
    p: dict[str, Tensor],
    config: ModelConfig,
    ids: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Hidden states after the final norm, shape (B, T, d). ``ids`` is (B, T)."""
    if ids.ndim != 2:
        raise ValueError("ids must be (batch, time)")
    bsz, t = ids.shape
    if t > config.max_seq_len:
        raise ValueError(f"sequence of {t} tokens exceeds max_seq_len={config.max_seq_len}")
    drop = config.dropout_rate if train else 0.0
    if drop > 0.0 and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    h_heads, d_head = config.n_heads, config.d_model // config.n_heads
    mask = causal_mask(t, config.np_dtype)
    positions = np.arange(t)

    x = ag.add(ag.embedding(p["tok_emb"], ids), ag.embedding(p["pos_emb"], positions))
    if drop > 0.0:
        x = ag.dropout(x, drop, rng)
    scale_factor = 1.0 / np.sqrt(d_head)
    for i in range(config.n_layers):
        pre = ag.layernorm(x, p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"])
        # q carries the 1/sqrt(d_head) factor so the (T, T) score array is
        # produced in a single matmul pass.
        q = ag.scale(_linear(pre, p[f"l{i}.wq"], p[f"l{i}.bq"]), scale_factor)
        k = _linear(pre, p[f"l{i}.wk"], p[f"l{i}.bk"])
        v = _linear(pre, p[f"l{i}.wv"], p[f"l{i}.bv"])
        q = ag.transpose(ag.reshape(q, (bsz, t, h_heads, d_head)), (0, 2, 1, 3))
        k = ag.transpose(ag.reshape(k, (bsz, t, h_heads, d_head)), (0, 2, 3, 1))
        v = ag.transpose(ag.reshape(v, (bsz, t, h_heads, d_head)), (0, 2, 1, 3))
        attn = ag.softmax_last(ag.add_const(ag.matmul(q, k), mask))
        ctx = ag.reshape(ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)), (bsz, t, config.d_model))
        out = _linear(ctx, p[f"l{i}.wo"], p[f"l{i}.bo"])
        if drop > 0.0:
            out = ag.dropout(out, drop, rng)
        x = ag.add(x, out)
        pre2 = ag.layernorm(x, p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"])
        ff = _linear(ag.gelu(_linear(pre2, p[f"l{i}.w_ff1"], p[f"l{i}.b_ff1"])), p[f"l{i}.w_ff2"], p[f"l{i}.b_ff2"])
        if drop > 0.0:
            ff = ag.dropout(ff, drop, rng)
        x = ag.add(x, ff)
    return ag.layernorm(x, p["ln_f_g"], p["ln_f_b"])


def lm_head(p: dict[str, Tensor], config: ModelConfig, rows: Tensor) -> Tensor:
    w = ag.transpose(p["tok_emb"], (1, 0)) if config.tie_lm_head else p["w_lm"]
    return ag.add(ag.matmul(rows, w), p["b_lm"])


def classifier_head(
    p: dict[str, Tensor],
    config: ModelConfig,
    phi: Tensor,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    if train and config.classifier_dropout and config.dropout_rate > 0.0:
        phi = ag.dropout(phi, config.dropout_rate, rng)
    return ag.add(ag.matmul(phi, p["w_acc"]), p["b_acc"])


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_head(phi: np.ndarray, w_acc: np.ndarray, b_acc: np.ndarray) -> np.ndarray:
    """Per-slot probabilities from the classifier; stable for large logits."""
    return stable_sigmoid(phi @ w_acc + b_acc)


def forward(
    params: dict[str, Tensor],
    config: ModelConfig,
    context_ids,
    target_ids=None,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> dict:
    """Single-example forward pass.

    Returns ``token_logits`` (one row per target position; empty without a
    target), ``phi`` (hidden state at the final context token), and
    ``slot_logits``. In train mode the returned tensors stay attached to the
    tape. The classifier reads the separator position even when target
    tokens follow, and causal masking keeps ``phi`` independent of them.
    """
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    train = mode == "train"
    ctx = np.asarray(context_ids, dtype=np.int64)
    tgt = np.asarray(target_ids, dtype=np.int64) if target_ids is not None else np.empty(0, dtype=np.int64)
    ids = np.concatenate([ctx, tgt])[None, :]
    hidden = encode_hidden(params, config, ids, train=train, rng=rng)
    sep = len(ctx) - 1
    phi = ag.gather_rows(hidden, np.array([0]), np.array([sep]))
    slot_logits = classifier_head(params, config, phi, train=train, rng=rng)
    n_tgt = len(tgt)
    if n_tgt:
        rows = ag.gather_rows(hidden, np.zeros(n_tgt, dtype=np.int64), sep + np.arange(n_tgt))
        token_logits = lm_head(params, config, rows)
    else:
        token_logits = Tensor(np.zeros((0, config.vocab_size), dtype=config.np_dtype))
    return {"token_logits": token_logits, "phi": phi, "slot_logits": slot_logits}


# --- inference path with key/value cache -----------------------------------

class DecodeSession:
    """Greedy-decoding helper over frozen parameters.

    ``prefill`` consumes the prompt and exposes the hidden state of its last
    position (the classifier feature when the prompt is a serialized
    context); ``step`` appends one token at a time reusing cached keys and
    values. Read-only with respect to the parameters, so one parameter set
    may serve many sessions.
    """

    def __init__(self, params: dict[str, np.ndarray], config: ModelConfig):
        self.p = params
        self.config = config
        self.d_head = config.d_model // config.n_heads
        self.length = 0
        dt = config.np_dtype
        self._k = [np.empty((config.max_seq_len, config.n_heads, self.d_head), dtype=dt)
                   for _ in range(config.n_layers)]
        self._v = [np.empty((config.max_seq_len, config.n_heads, self.d_head), dtype=dt)
                   for _ in range(config.n_layers)]
        self.last_hidden: np.ndarray | None = None

    def prefill(self, ids) -> np.ndarray:
        """Run the prompt; returns hidden states (T, d) after the final norm."""
        ids = np.asarray(ids, dtype=np.int64)
        t = len(ids)
        if t > self.config.max_seq_len:
            raise ValueError(f"prompt of {t} tokens exceeds max_seq_len={self.config.max_seq_len}")
        cfg, p = self.config, self.p
        h_heads, d_head = cfg.n_heads, self.d_head
        mask = causal_mask(t, cfg.np_dtype)
        x = p["tok_emb"][ids] + p["pos_emb"][:t]
        for i in range(cfg.n_layers):
            pre, _, _ = kernels.layernorm_forward(x, p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"], 1e-5)
            q = (pre @ p[f"l{i}.wq"] + p[f"l{i}.bq"]).reshape(t, h_heads, d_head)
            k = (pre @ p[f"l{i}.wk"] + p[f"l{i}.bk"]).reshape(t, h_heads, d_head)
            v = (pre @ p[f"l{i}.wv"] + p[f"l{i}.bv"]).reshape(t, h_heads, d_head)
            self._k[i][:t] = k
            self._v[i][:t] = v
            scores = np.einsum("qhd,khd->hqk", q, k) / np.sqrt(d_head) + mask
            attn = kernels.softmax_last(scores)
            ctx = np.einsum("hqk,khd->qhd", attn, v).reshape(t, cfg.d_model)
            x = x + ctx @ p[f"l{i}.wo"] + p[f"l{i}.bo"]
            pre2, _, _ = kernels.layernorm_forward(x, p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"], 1e-5)
            ff = kernels.gelu_forward(pre2 @ p[f"l{i}.w_ff1"] + p[f"l{i}.b_ff1"]) @ p[f"l{i}.w_ff2"] + p[f"l{i}.b_ff2"]
            x = x + ff
        hidden, _, _ = kernels.layernorm_forward(x, p["ln_f_g"], p["ln_f_b"], 1e-5)
        self.length = t
        self.last_hidden = hidden[-1]
        return hidden

    def step(self, token_id: int) -> np.ndarray:
        """Append one token; returns the new last hidden state (d,)."""
        cfg, p = self.config, self.p
        pos = self.length
        if pos >= cfg.max_seq_len:
            raise ValueError("decode cache full")
        h_heads, d_head = cfg.n_heads, self.d_head
        x = p["tok_emb"][token_id] + p["pos_emb"][pos]
        x = x[None, :]
        for i in range(cfg.n_layers):
            pre, _, _ = kernels.layernorm_forward(x, p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"], 1e-5)
            q = (pre @ p[f"l{i}.wq"] + p[f"l{i}.bq"]).reshape(h_heads, d_head)
            self._k[i][pos] = (pre @ p[f"l{i}.wk"] + p[f"l{i}.bk"]).reshape(h_heads, d_head)
            self._v[i][pos] = (pre @ p[f"l{i}.wv"] + p[f"l{i}.bv"]).reshape(h_heads, d_head)
            keys = self._k[i][: pos + 1]
            vals = self._v[i][: pos + 1]
            scores = np.einsum("hd,khd->hk", q, keys) / np.sqrt(d_head)
            attn = kernels.softmax_last(scores)
            ctx = np.einsum("hk,khd->hd", attn, vals).reshape(1, cfg.d_model)
            x = x + ctx @ p[f"l{i}.wo"] + p[f"l{i}.bo"]
            pre2, _, _ = kernels.layernorm_forward(x, p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"], 1e-5)
            ff = kernels.gelu_forward(pre2 @ p[f"l{i}.w_ff1"] + p[f"l{i}.b_ff1"]) @ p[f"l{i}.w_ff2"] + p[f"l{i}.b_ff2"]
            x = x + ff
        hidden, _, _ = kernels.layernorm_forward(x, p["ln_f_g"], p["ln_f_b"], 1e-5)
        self.length = pos + 1
        self.last_hidden = hidden[0]
        return hidden[0]

    def lm_logits(self) -> np.ndarray:
        w = self.p["tok_emb"].T if self.config.tie_lm_head else self.p["w_lm"]
        return self.last_hidden @ w + self.p["b_lm"]

    def slot_probabilities(self) -> np.ndarray:
        return sigmoid_head(self.last_hidden, self.p["w_acc"], self.p["b_acc"])


# --- checkpoint container ---------------------------------------------------

@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    ontology_hash: str
    vocab_hash: str
    extra: dict = field(default_factory=dict)


class CheckpointMismatch(ValueError):
    pass


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> str:
    """Write the deterministic binary container; returns its sha256 hex digest."""
    names = sorted(ckpt.params)
    tensors = []
    offset = 0
    for name in names:
        arr = ckpt.params[name]
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype), "offset": offset})
        offset += arr.nbytes
    header = json.dumps({
        "format": "dstlab-checkpoint-v1",
        "model_config": ckpt.config.to_dict(),
        "ontology_hash": ckpt.ontology_hash,
        "vocab_hash": ckpt.vocab_hash,
        "extra": ckpt.extra,
        "tensors": tensors,
    }, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for name in names:
        buf.write(np.ascontiguousarray(ckpt.params[name]).astype(ckpt.params[name].dtype, copy=False).tobytes())
    blob = buf.getvalue()
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path: str | Path, ontology_hash: str | None = None, vocab_hash: str | None = None) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointMismatch(f"{path} is not a checkpoint file")
    hlen = struct.unpack("<I", blob[8:12])[0]
    header = json.loads(blob[12: 12 + hlen])
    if ontology_hash is not None and header["ontology_hash"] != ontology_hash:
        raise CheckpointMismatch("checkpoint was trained against a different ontology")
    if vocab_hash is not None and header["vocab_hash"] != vocab_hash:
        raise CheckpointMismatch("checkpoint was trained against a different vocabulary")
    base = 12 + hlen
    params = {}
    for spec in header["tensors"]:
        arr = np.frombuffer(blob, dtype=np.dtype(spec["dtype"]), count=int(np.prod(spec["shape"], dtype=np.int64)),
                            offset=base + spec["offset"]).reshape(spec["shape"])
        params[spec["name"]] = arr.copy()
    return Checkpoint(
        config=ModelConfig.from_dict(header["model_config"]),
        params=params,
        ontology_hash=header["ontology_hash"],
        vocab_hash=header["vocab_hash"],
        extra=header.get("extra", {}),
    )


def checkpoint_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
