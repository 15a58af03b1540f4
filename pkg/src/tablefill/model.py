"""The iterated table-filling network.

Data flow for a padded batch of ``B`` sentences of length ``n``::

    ids -> embedding -> 2-layer BiLSTM -> projection          H      [B, n, d]
    H -> two linear maps                                      Hs, Ho [B, n, d]
    repeat t = 1..N:
        TF = W_r relu(Hs_i * Ho_j) + b_r                      TF     [B, n, n, R, L]
        if t < N:
            TFs, TFo = linear(maxpool over objects / subjects of TF)
            Hs' = relu(FFN(cross_att(self_att(TFs), H, H)))   (same for Ho)
            Hs, Ho = LayerNorm(Hs + Hs'), LayerNorm(Ho + Ho')
    TF^(N) -> softmax/argmax per cell, cross-entropy loss

The table-generation and mining weights are created once and reused at every
iteration, so the parameter count does not depend on ``N``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .core import NUM_LABELS, LabelTable
from .tensor import Tensor


class DataError(ValueError):
    """Raised for token ids or lengths the model cannot handle."""


@dataclass
class ModelConfig:
    num_relations: int
    vocab_size: int
    d_h: int = 64
    heads: int = 4
    N: int = 2
    max_len: int = 100
    emb_dim: int = 32
    rnn_hidden: tuple[int, ...] = (32, 32)
    residual: bool = True
    num_labels: int = field(default=NUM_LABELS, init=False)

    def __post_init__(self):
        self.rnn_hidden = tuple(self.rnn_hidden)
        if self.d_h % self.heads:
            raise ValueError(f"d_h={self.d_h} must be divisible by heads={self.heads}")
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.num_relations < 1 or self.vocab_size < 2:
            raise ValueError("need at least one relation and a vocabulary with PAD/UNK")
        if len(self.rnn_hidden) < 1:
            raise ValueError("encoder needs at least one recurrent layer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("num_labels")
        d["rnn_hidden"] = list(self.rnn_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d.pop("num_labels", None)
        return cls(**d)


@dataclass
class ForwardTrace:
    H: Tensor
    hs: list[Tensor]
    ho: list[Tensor]
    tf: list[Tensor]
    mask: np.ndarray

    @property
    def final(self) -> Tensor:
        """``TF^(N)`` with shape ``[B, n, n, R, L]``."""
        return self.tf[-1]


def pair_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    return mask[:, :, None] & mask[:, None, :]


class TableFillingModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    # ------------------------------------------------------------ parameters

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        p = self.params
        d, rl = c.d_h, c.num_relations * c.num_labels
        p["encoder.embedding"] = T.glorot(rng, c.vocab_size, c.emb_dim)
        d_in = c.emb_dim
        for k, h in enumerate(c.rnn_hidden):
            for direction in ("fwd", "bwd"):
                pre = f"encoder.rnn{k}.{direction}"
                p[pre + ".wx"] = T.glorot(rng, d_in, 4 * h)
                p[pre + ".wh"] = T.glorot(rng, h, 4 * h)
                p[pre + ".b"] = T.zeros((4 * h,))
            d_in = 2 * h
        p["encoder.proj.w"] = T.glorot(rng, d_in, d)
        p["encoder.proj.b"] = T.zeros((d,))
        for k in ("1", "2"):
            p[f"split.w{k}"] = T.glorot(rng, d, d)
            p[f"split.b{k}"] = T.zeros((d,))
        # one d x L block per relation, stored side by side
        blocks = [T.glorot(rng, d, c.num_labels).data for _ in range(c.num_relations)]
        p["tfg.w"] = Tensor(np.concatenate(blocks, axis=1), requires_grad=True)
        p["tfg.b"] = T.zeros((rl,))
        for k in ("s", "o"):
            p[f"gfm.w{k}"] = T.glorot(rng, rl, d)
            p[f"gfm.b{k}"] = T.zeros((d,))
        for block in ("self_att", "cross_att"):
            for name, t in T.init_attention(d, rng).items():
                p[f"gfm.{block}.{name}"] = t
        p["gfm.ffn.w"] = T.glorot(rng, d, d)
        p["gfm.ffn.b"] = T.zeros((d,))
        p["gfm.norm.gain"] = T.ones((d,))
        p["gfm.norm.bias"] = T.zeros((d,))
        for name, t in p.items():
            t.name = name

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = set(self.params) ^ set(state)
            raise ValueError(f"parameter names differ from model: {sorted(missing)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"parameter {k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data[...] = v

    def _sub(self, prefix: str) -> dict[str, Tensor]:
        n = len(prefix)
        return {k[n:]: v for k, v in self.params.items() if k.startswith(prefix)}

    # ------------------------------------------------------------ modules

    def encode(self, ids: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
        """Token ids ``[B, n]`` to representations ``H`` of shape ``[B, n, d_h]``."""
        c, p = self.config, self.params
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise DataError(f"expected a [B, n] id grid, got shape {ids.shape}")
        if ids.shape[1] > c.max_len:
            raise DataError(f"sentence length {ids.shape[1]} exceeds max_len={c.max_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= c.vocab_size):
            raise DataError(f"token id out of range for vocab_size={c.vocab_size}")
        mask = np.ones(ids.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        x = T.embedding(ids, p["encoder.embedding"])
        for k in range(len(c.rnn_hidden)):
            pre = f"encoder.rnn{k}"
            fwd = T.lstm(x, mask, p[pre + ".fwd.wx"], p[pre + ".fwd.wh"], p[pre + ".fwd.b"])
            bwd = T.lstm(x, mask, p[pre + ".bwd.wx"], p[pre + ".bwd.wh"], p[pre + ".bwd.b"], reverse=True)
            x = T.concat([fwd, bwd], axis=-1)
        return T.linear(x, p["encoder.proj.w"], p["encoder.proj.b"])

    def split_features(self, H: Tensor) -> tuple[Tensor, Tensor]:
        p = self.params
        return (T.linear(H, p["split.w1"], p["split.b1"]),
                T.linear(H, p["split.w2"], p["split.b2"]))

    def tfg(self, hs: Tensor, ho: Tensor) -> Tensor:
        """Relation table features, ``[B, n, n, R*L]`` with relation-major last axis."""
        p = self.params
        return T.linear(T.relu(T.pairwise_hadamard(hs, ho)), p["tfg.w"], p["tfg.b"])

    def gfm_combine(self, tf: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Pool the unified table feature per subject row and per object column."""
        p = self.params
        mask = np.asarray(mask, dtype=bool)
        shape = tf.shape
        over_obj = np.broadcast_to(mask[:, None, :, None], shape)
        over_subj = np.broadcast_to(mask[:, :, None, None], shape)
        pooled_s, _ = T.max_over_axis(tf, 2, over_obj)
        pooled_o, _ = T.max_over_axis(tf, 1, over_subj)
        return (T.linear(pooled_s, p["gfm.ws"], p["gfm.bs"]),
                T.linear(pooled_o, p["gfm.wo"], p["gfm.bo"]))

    def gfm_mine(self, tf_side: Tensor, H: Tensor, mask: np.ndarray) -> Tensor:
        c, p = self.config, self.params
        mined = T.multi_head_attention(tf_side, tf_side, tf_side, self._sub("gfm.self_att."),
                                       c.heads, key_mask=mask)
        mined = T.multi_head_attention(mined, H, H, self._sub("gfm.cross_att."), c.heads, key_mask=mask)
        return T.relu(T.linear(mined, p["gfm.ffn.w"], p["gfm.ffn.b"]))

    def gfm_residual(self, old: Tensor, new: Tensor) -> Tensor:
        p = self.params
        x = T.add(old, new) if self.config.residual else new
        return T.layer_norm(x, p["gfm.norm.gain"], p["gfm.norm.bias"])

    # ------------------------------------------------------------ full passes

    def forward(self, ids: np.ndarray, mask: np.ndarray | None = None, N: int | None = None) -> ForwardTrace:
        c = self.config
        N = c.N if N is None else N
        if N < 1:
            raise ValueError("N must be at least 1")
        ids = np.asarray(ids)
        mask = np.ones(ids.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        H = self.encode(ids, mask)
        hs, ho = self.split_features(H)
        bsz, n = ids.shape
        trace = ForwardTrace(H=H, hs=[hs], ho=[ho], tf=[], mask=mask)
        for t in range(1, N + 1):
            tf = self.tfg(hs, ho)
            trace.tf.append(T.reshape(tf, (bsz, n, n, c.num_relations, c.num_labels)))
            if t < N:
                tf_s, tf_o = self.gfm_combine(tf, mask)
                hs = self.gfm_residual(hs, self.gfm_mine(tf_s, H, mask))
                ho = self.gfm_residual(ho, self.gfm_mine(tf_o, H, mask))
                trace.hs.append(hs)
                trace.ho.append(ho)
        return trace

    def fill_tables(self, tf_final: Tensor, mask: np.ndarray) -> list[LabelTable]:
        """Label every cell with its most probable label, one table per sentence.

        Tables are cropped to each sentence's real length; padding cells are
        therefore never labelled.
        """
        probs = _softmax_np(tf_final.data)
        labels = probs.argmax(axis=-1)
        labels = np.where(pair_mask(mask)[..., None], labels, 0)
        lengths = np.asarray(mask, dtype=bool).sum(axis=1)
        return [LabelTable(labels[b, :m, :m].transpose(2, 0, 1)) for b, m in enumerate(lengths)]

    def loss(self, tf_final: Tensor, gold: np.ndarray, mask: np.ndarray) -> tuple[Tensor, int]:
        """Summed cell cross-entropy and its term count.

        ``gold`` is ``[B, R, n, n]`` label codes (the stacked ``LabelTable``
        grids); padding cells are masked out of the sum.
        """
        gold = np.asarray(gold).transpose(0, 2, 3, 1)
        return T.cross_entropy_masked(tf_final, gold, pair_mask(mask))

    def mean_loss(self, ids, mask, gold, N: int | None = None) -> Tensor:
        ids = np.asarray(ids)
        mask = np.ones(ids.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        trace = self.forward(ids, mask, N)
        total, count = self.loss(trace.final, gold, mask)
        return T.scale(total, 1.0 / max(count, 1))

    def predict_tables(self, ids, mask=None, N: int | None = None) -> list[LabelTable]:
        ids = np.asarray(ids)
        mask = np.ones(ids.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        with T.no_grad():
            trace = self.forward(ids, mask, N)
            return self.fill_tables(trace.final, mask)


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def count_params(model: TableFillingModel) -> int:
    return model.num_parameters()


__all__ = ["DataError", "ModelConfig", "ForwardTrace", "TableFillingModel", "pair_mask", "count_params"]
