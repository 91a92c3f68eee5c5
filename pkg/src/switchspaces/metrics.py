"""Ranking metrics for link prediction and top-N recommendation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def filtered_ranks(scores: np.ndarray, true_idx, exclude=None) -> np.ndarray:
    """Rank of the true candidate in each row, ignoring excluded candidates.

    Ties count against the true candidate (it is placed after every
    competitor with an equal score). ``exclude`` is a per-row sequence of
    candidate ids; the true id is never excluded.
    """
    scores = np.array(scores, dtype=np.float64)
    true_idx = np.asarray(true_idx)
    rows = np.arange(len(scores))
    target = scores[rows, true_idx].copy()
    if exclude is not None:
        for q, ex in enumerate(exclude):
            if len(ex):
                scores[q, ex] = -np.inf
    scores[rows, true_idx] = target
    return (scores >= target[:, None]).sum(axis=1)


def ranking_summary(ranks, cutoffs=(1, 3, 10)) -> dict[str, float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    out = {"MRR": float(np.mean(1.0 / ranks)) if len(ranks) else 0.0}
    for k in cutoffs:
        out[f"HR@{k}"] = float(np.mean(ranks <= k)) if len(ranks) else 0.0
    return out


def kg_rank_metrics(model, params, store, split="test", cutoffs=(1, 3, 10), chunk=256, workers=1, return_ranks=False):
    """Filtered MRR and hit rates over both prediction directions.

    Head prediction for ``(h, r, t)`` is tail prediction for the reciprocal
    query ``(t, r^-1, ?)``. Gate noise is off, so results are deterministic.
    """
    queries = store.with_reciprocals(getattr(store, split))
    known = store.known_tails()
    p = {k: np.asarray(v) for k, v in params.items()}

    def run(lo):
        q = queries[lo : lo + chunk]
        scores, _ = model.score_all_tails(p, q[:, 0], q[:, 1], chunk=chunk)
        exclude = [np.setdiff1d(known.get((int(h), int(r)), ()), [t]) for h, r, t in q]
        return filtered_ranks(scores, q[:, 2], exclude)

    starts = range(0, len(queries), chunk)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(lo) for lo in starts]
    ranks = np.concatenate(parts) if parts else np.zeros(0)
    out = ranking_summary(ranks, cutoffs)
    return (out, ranks) if return_ranks else out


def average_precision(ranks, n_relevant) -> float:
    """AP from the 1-based ranks of the relevant items."""
    r = np.sort(np.asarray(ranks, dtype=np.float64))
    if n_relevant == 0:
        return 0.0
    return float(np.sum(np.arange(1, len(r) + 1) / r) / n_relevant)


def relevant_ranks(scores: np.ndarray, candidates: np.ndarray, relevant: np.ndarray) -> np.ndarray:
    """1-based ranks of ``relevant`` ids among ``candidates``; ties broken by item id."""
    s = scores[candidates]
    sr = scores[relevant]
    higher = (s[None, :] > sr[:, None]).sum(1)
    tied_before = ((s[None, :] == sr[:, None]) & (candidates[None, :] < relevant[:, None])).sum(1)
    return higher + tied_before + 1


def rec_metrics_from_scores(scores, train_mask, relevant_lists, ks=(5, 10)) -> dict[str, float]:
    """MAP, P@K and R@K for a ``(U, I)`` score matrix.

    Each user ranks the items they did not interact with in training; users
    with no relevant item are skipped.
    """
    aps, prec, rec = [], {k: [] for k in ks}, {k: [] for k in ks}
    n_items = scores.shape[1]
    all_items = np.arange(n_items)
    for u, rel in enumerate(relevant_lists):
        if len(rel) == 0:
            continue
        cand = all_items[~train_mask[u]]
        ranks = relevant_ranks(scores[u], cand, np.asarray(rel))
        aps.append(average_precision(ranks, len(rel)))
        for k in ks:
            hits = np.sum(ranks <= k)
            prec[k].append(hits / k)
            rec[k].append(hits / len(rel))
    out = {"MAP": float(np.mean(aps)) if aps else 0.0}
    for k in ks:
        out[f"P@{k}"] = float(np.mean(prec[k])) if aps else 0.0
        out[f"R@{k}"] = float(np.mean(rec[k])) if aps else 0.0
    out["users"] = len(aps)
    return out


def rec_rank_metrics(model, params, store, split="test", ks=(5, 10), chunk=128, workers=1) -> dict[str, float]:
    """Top-N metrics of a recommender over one split of an InteractionStore."""
    train_mask = store.mask("train")
    relevant = store.items_by_user(split)
    users = np.arange(store.n_users)
    starts = range(0, len(users), chunk)

    def run(lo):
        return model.score_matrix(params, users[lo : lo + chunk])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(lo) for lo in starts]
    scores = np.concatenate(parts)
    return rec_metrics_from_scores(scores, train_mask, relevant, ks)
