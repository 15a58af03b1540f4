"""Adam training loop with per-epoch dev scoring and resumable checkpoints."""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import Batch, Dataset, Vocab, batchify
from .evaluation import evaluate
from .model import TableFillingModel
from .tensor import Adam, AdamState

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    def __init__(self, epoch: int, batch: Batch, value: float):
        ids = [ex.sentence.id for ex in batch.examples]
        super().__init__(f"non-finite loss {value} at epoch {epoch} in batch {ids}")
        self.epoch, self.batch, self.value = epoch, batch, value


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 6
    shuffle_seed: int = 0
    eval_every: int = 1
    train_eval_every: int = 0     # 0 disables scoring on the training split
    target_train_f1: float | None = None
    target_dev_f1: float | None = None
    patience: int = 0             # stop after this many dev scorings without improvement; 0 = never

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    epoch: int = 0
    best_dev_f1: float = -1.0
    best_epoch: int = 0
    best_params: dict | None = None
    history: list[dict] = field(default_factory=list)
    adam: AdamState = field(default_factory=AdamState)


def epoch_batches(dataset: Dataset, vocab: Vocab, cfg: TrainConfig, epoch: int, max_len: int):
    seed = int(np.random.SeedSequence([cfg.shuffle_seed, epoch]).generate_state(1)[0])
    return batchify(dataset, cfg.batch_size, vocab, max_len, shuffle_seed=seed)


def train_epoch(model: TableFillingModel, opt: Adam, batches: list[Batch], epoch: int) -> float:
    """One pass of Adam over ``batches``; returns the mean per-cell loss."""
    total, cells = 0.0, 0
    for batch in batches:
        opt.zero_grad()
        trace = model.forward(batch.ids, batch.mask)
        loss_sum, count = model.loss(trace.final, batch.gold, batch.mask)
        value = loss_sum.item()
        if not np.isfinite(value):
            raise NonFiniteLoss(epoch, batch, value)
        loss_sum.backward(np.array(1.0 / max(count, 1)))
        opt.step()
        total += value
        cells += count
        del trace
    return total / max(cells, 1)


def train(model: TableFillingModel, train_ds: Dataset, dev_ds: Dataset | None, vocab: Vocab,
          cfg: TrainConfig, state: TrainState | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainState:
    """Train until ``cfg.epochs`` or until both F1 targets are met.

    ``state`` resumes a previous run (optimizer moments included).  The
    parameters with the best dev exact-match F1 are kept in
    ``state.best_params``.
    """
    state = state or TrainState()
    opt = Adam(model.parameters(), lr=cfg.lr)
    opt.state = state.adam
    max_len = model.config.max_len
    while state.epoch < cfg.epochs:
        epoch = state.epoch + 1
        t0 = time.perf_counter()
        loss = train_epoch(model, opt, epoch_batches(train_ds, vocab, cfg, epoch, max_len), epoch)
        row = {"epoch": epoch, "loss": loss}
        if dev_ds is not None and cfg.eval_every and epoch % cfg.eval_every == 0:
            dev = evaluate(model, dev_ds, vocab, cfg.batch_size)
            row["dev_f1"] = dev.f1
            if dev.f1 > state.best_dev_f1:
                state.best_dev_f1 = dev.f1
                state.best_epoch = epoch
                state.best_params = copy.deepcopy(model.state_dict())
        if cfg.train_eval_every and epoch % cfg.train_eval_every == 0:
            row["train_f1"] = evaluate(model, train_ds, vocab, cfg.batch_size).f1
        row["seconds"] = time.perf_counter() - t0
        state.history.append(row)
        state.epoch = epoch
        log.info("epoch %d %s", epoch, row)
        if on_epoch:
            on_epoch(row)
        done_train = cfg.target_train_f1 is None or row.get("train_f1", -1) >= cfg.target_train_f1
        done_dev = cfg.target_dev_f1 is None or row.get("dev_f1", -1) >= cfg.target_dev_f1
        if (cfg.target_train_f1 is not None or cfg.target_dev_f1 is not None) and done_train and done_dev:
            break
        if cfg.patience and dev_ds is not None and epoch - state.best_epoch >= cfg.patience * cfg.eval_every:
            log.info("no dev improvement for %d epochs, stopping", epoch - state.best_epoch)
            break
    state.adam = opt.state
    return state
