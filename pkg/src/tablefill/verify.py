"""Finite-difference verification suite behind the ``gradcheck`` command."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .codec import encode_triples
from .core import Triple
from .model import ModelConfig, TableFillingModel

OP_TOL = 1e-5
MODEL_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name:<28} rel-err={self.error:.3e}  tol={self.tol:.0e}"


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x) + np.where(x >= 0, margin, -margin)


def _distinct(rng, shape):
    # well-separated values so max ties and near-ties cannot occur
    return rng.permutation(np.arange(int(np.prod(shape)))).reshape(shape) * 0.1 + rng.uniform(0, 0.01, shape)


def _sq(y: T.Tensor) -> T.Tensor:
    """A scalar readout with non-uniform upstream gradient."""
    return T.total(T.hadamard(y, y))


def op_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    def check(name, f, *arrays):
        xs = [T.Tensor(a) for a in arrays]
        out.append(CheckResult(name, T.finite_diff_check(f, xs), OP_TOL))

    check("linear", lambda x, w, b: _sq(T.linear(x, w, b)),
          rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2))
    check("add_bias", lambda x, b: _sq(T.add_bias(x, b)), rng.normal(size=(2, 3, 4)), rng.normal(size=4))
    check("add", lambda a, b: _sq(T.add(a, b)), rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
    check("scale", lambda a: _sq(T.scale(a, -1.7)), rng.normal(size=(4,)))
    check("hadamard", lambda a, b: _sq(T.hadamard(a, b)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    check("pairwise_hadamard", lambda a, b: _sq(T.pairwise_hadamard(a, b)),
          rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 5, 4)))
    check("relu", lambda a: _sq(T.relu(a)), _away_from_zero(rng, (3, 5)))
    check("sigmoid", lambda a: _sq(T.sigmoid(a)), rng.normal(size=(6,)))
    check("tanh", lambda a: _sq(T.tanh(a)), rng.normal(size=(6,)))
    check("matmul", lambda a, b: _sq(T.matmul(a, b)), rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 5)))
    check("reshape+transpose", lambda a: _sq(T.transpose(T.reshape(a, (3, 2, 4)), (2, 0, 1))),
          rng.normal(size=(6, 4)))
    check("concat", lambda a, b: _sq(T.concat([a, b], axis=-1)), rng.normal(size=(2, 3)), rng.normal(size=(2, 4)))
    table = rng.normal(size=(7, 3))
    ids = np.array([[1, 4, 1], [6, 0, 2]])
    check("embedding", lambda t: _sq(T.embedding(ids, t)), table)
    check("softmax_last", lambda a: _sq(T.softmax_last(a)), rng.normal(size=(3, 8)))
    smask = rng.random((3, 8)) < 0.7
    smask[:, 0] = True
    check("softmax_last(masked)", lambda a: _sq(T.softmax_last(a, smask)), rng.normal(size=(3, 8)))
    check("log_softmax_last", lambda a: _sq(T.log_softmax_last(a)), rng.normal(size=(3, 8)))
    check("layer_norm", lambda x, g, b: _sq(T.layer_norm(x, g, b)),
          rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6))
    check("max_over_axis", lambda a: _sq(T.max_over_axis(a, 1)[0]), _distinct(rng, (3, 4, 2)))
    mmask = rng.random((3, 4, 2)) < 0.6
    mmask[:, 0] = True
    check("max_over_axis(masked)", lambda a: _sq(T.max_over_axis(a, 1, mmask)[0]), _distinct(rng, (3, 4, 2)))
    gold = rng.integers(0, 8, size=(3, 3, 2))
    cmask = rng.random((3, 3)) < 0.7
    check("cross_entropy_masked", lambda z: T.cross_entropy_masked(z, gold, cmask)[0],
          rng.normal(size=(3, 3, 2, 8)))
    lmask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=bool)
    for reverse in (False, True):
        check("lstm" + ("(reverse)" if reverse else ""),
              lambda x, wx, wh, b: _sq(T.lstm(x, lmask, wx, wh, b, reverse=reverse)),
              rng.normal(size=(2, 4, 3)), rng.normal(size=(3, 8)) * 0.5, rng.normal(size=(2, 8)) * 0.5,
              rng.normal(size=8) * 0.1)
    att = {k: rng.normal(size=(8, 8)) * 0.4 if k.startswith("w") else rng.normal(size=8) * 0.1
           for k in T.nn.ATTENTION_KEYS}
    key_mask = np.array([[1, 1, 1], [1, 0, 1]], dtype=bool)

    def attention(q, kv, *ws):
        return _sq(T.multi_head_attention(q, kv, kv, dict(zip(T.nn.ATTENTION_KEYS, ws)), 2, key_mask))

    check("multi_head_attention", attention, rng.normal(size=(2, 4, 8)), rng.normal(size=(2, 3, 8)),
          *att.values())
    return out


def tiny_model_check(seed: int = 0) -> CheckResult:
    """Full loss of a 4-token, 2-relation, d_h=8, N=2 model against finite differences."""
    cfg = ModelConfig(num_relations=2, vocab_size=10, d_h=8, heads=2, N=2, emb_dim=6, rnn_hidden=(5, 4))
    model = TableFillingModel(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for p in model.parameters():
        # lift biases and gains off their symmetric init so every path carries gradient
        p.data += rng.normal(scale=0.1, size=p.shape)
    ids = np.array([[2, 5, 7, 3]])
    mask = np.ones_like(ids, dtype=bool)
    table, _ = encode_triples(4, [Triple.of(0, 1, 0, 3, 3), Triple.of(2, 2, 1, 0, 1)], 2)
    gold = table.grid[None].astype(np.int64)
    err = T.finite_diff_check(lambda *ps: model.mean_loss(ids, mask, gold), model.parameters())
    return CheckResult("model loss (n=4,R=2,d=8,N=2)", err, MODEL_TOL)


def run_gradcheck(seed: int = 0, verbose: bool = True) -> tuple[bool, list[CheckResult], float]:
    start = time.perf_counter()
    results = op_checks(seed) + [tiny_model_check(seed)]
    elapsed = time.perf_counter() - start
    if verbose:
        for r in results:
            print(r.line())
        print(f"{sum(r.ok for r in results)}/{len(results)} checks passed in {elapsed:.1f}s")
    return all(r.ok for r in results), results, elapsed
