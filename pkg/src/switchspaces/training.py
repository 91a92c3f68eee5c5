"""Minibatch Adam training for both tasks, with early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import InteractionStore, TripleStore, binary_tree_kg, load_kg, load_movielens, split_interactions
from .errors import ContractViolation, NumericFailure
from .kg import SwisE, TripleIndex, sample_negative_tails
from .metrics import kg_rank_metrics, rec_rank_metrics
from .numerics import Adam, ParamStore
from .numerics import autodiff as ad
from .product import parse_signature
from .rec import SwitchRec

log = logging.getLogger(__name__)

TREE_DATA = "synthetic:tree"


def load_data(cfg: RunConfig):
    if cfg.task == "kg":
        if cfg.data == TREE_DATA:
            return binary_tree_kg()
        if not cfg.data:
            raise ContractViolation("a kg run needs --data (a directory or 'synthetic:tree')")
        return load_kg(cfg.data)
    if not cfg.data:
        raise ContractViolation("a rec run needs --data (a MovieLens directory or ratings file)")
    return split_interactions(load_movielens(cfg.data), rng=np.random.default_rng(cfg.split_seed))


def build_model(cfg: RunConfig, data):
    sig = parse_signature(cfg.signature)
    mode = "sum" if cfg.mode == "product" else "switch"
    common = dict(k=cfg.k, mode=mode, gate_variant=cfg.gate, noise=cfg.noise, gate_weighting=cfg.gate_weighting,
                  trainable_curvature=cfg.trainable_curvature, detach_gate_input=cfg.detach_gate_input)
    if cfg.task == "kg":
        return SwisE(sig, data.n_entities, 2 * data.n_relations, **common)
    return SwitchRec(sig, data.n_users, data.n_items, **common)


def evaluate(cfg: RunConfig, model, params, data, split="test") -> dict:
    if cfg.task == "kg":
        return kg_rank_metrics(model, params, data, split, workers=cfg.workers)
    return rec_rank_metrics(model, params, data, split, workers=cfg.workers)


def selection_metric(cfg: RunConfig) -> str:
    return "MRR" if cfg.task == "kg" else "MAP"


@dataclass
class TrainResult:
    params: ParamStore
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid: float = float("nan")
    stopped_early: bool = False


def _diagnose(loss_fn):
    """Rerun a batch with numerics checks on to name the op that went non-finite."""
    with ad.check_numerics():
        try:
            loss_fn()
        except NumericFailure as err:
            return err
    return NumericFailure("loss", "loss is non-finite but no primitive produced a NaN/Inf")


def _step(params, opt, loss_fn):
    leaves = params.leaves()
    loss, decision = loss_fn(leaves)
    lv = float(ad.value(loss))
    if not np.isfinite(lv):
        raise _diagnose(lambda: loss_fn(params.leaves()))
    opt.step(params, ad.backward(loss, leaves))
    return lv, decision


def _kg_batches(cfg, model, data, rng):
    train = data.with_reciprocals(data.train)
    known = TripleIndex(train, data.n_entities, model.n_relations)
    order = rng.permutation(len(train))
    for lo in range(0, len(train), cfg.batch_size):
        pos = train[order[lo : lo + cfg.batch_size]]
        neg = sample_negative_tails(pos, cfg.n_neg, data.n_entities, known, rng)
        yield lambda p, pos=pos, neg=neg: model.loss(p, pos, neg, rng, w_aux=cfg.w_aux, reg=cfg.reg)


def _rec_batches(cfg, model, data, rng, train_mask):
    train = data.train
    order = rng.permutation(len(train))
    for lo in range(0, len(train), cfg.batch_size):
        b = train[order[lo : lo + cfg.batch_size]]
        neg = rng.integers(0, data.n_items, len(b))
        for _ in range(20):
            bad = train_mask[b[:, 0], neg]
            if not bad.any():
                break
            neg[bad] = rng.integers(0, data.n_items, int(bad.sum()))
        yield lambda p, b=b, neg=neg: model.loss(p, b[:, 0], b[:, 1], neg, rng, margin=cfg.margin, w_aux=cfg.w_aux, reg=cfg.reg)


def train(cfg: RunConfig, data=None, model=None, params: ParamStore | None = None, on_epoch=None, gate_sink=None) -> TrainResult:
    """Train ``model`` on ``data`` under ``cfg``.

    Every random draw (initialisation, shuffling, negatives, gate noise)
    comes from one generator seeded with ``cfg.seed``. Validation runs every
    ``eval_every`` epochs; after ``patience`` evaluations without
    improvement training stops, and the best parameters are returned.
    ``on_epoch(record)`` is called with each history row; ``gate_sink``
    receives the GateDecision of every training batch.
    """
    data = load_data(cfg) if data is None else data
    model = build_model(cfg, data) if model is None else model
    rng = np.random.default_rng(cfg.seed)
    params = model.init_params(rng) if params is None else params
    opt = Adam(cfg.lr)
    metric = selection_metric(cfg)
    result = TrainResult(params.copy())
    best, stale = -np.inf, 0
    train_mask = data.mask("train") if cfg.task == "rec" else None
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        batches = _kg_batches(cfg, model, data, rng) if cfg.task == "kg" else _rec_batches(cfg, model, data, rng, train_mask)
        total = 0.0
        for loss_fn in batches:
            lv, decision = _step(params, opt, loss_fn)
            total += lv
            if gate_sink is not None and decision is not None:
                gate_sink(decision)
        record = {"epoch": epoch, "loss": total, "time": time.perf_counter() - t0}
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            record[f"valid_{metric}"] = evaluate(cfg, model, params, data, "valid")[metric]
            if record[f"valid_{metric}"] > best:
                best, stale = record[f"valid_{metric}"], 0
                result.params, result.best_epoch, result.best_valid = params.copy(), epoch, best
            else:
                stale += 1
        result.history.append(record)
        log.info("epoch %d loss %.4f %s", epoch, total, record.get(f"valid_{metric}", ""))
        if on_epoch is not None:
            on_epoch(record)
        if stale >= cfg.patience:
            result.stopped_early = True
            break
    return result


def write_history(history: list[dict], path) -> None:
    keys = []
    for row in history:
        keys += [k for k in row if k not in keys]
    lines = [",".join(keys)]
    for row in history:
        lines.append(",".join("" if row.get(k) is None else repr(row[k]) if isinstance(row.get(k), float) else str(row.get(k, "")) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
