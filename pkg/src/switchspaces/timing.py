"""Wall-clock cost of link-prediction inference as the number of spaces grows.

Each query ``(h, r)`` is scored against a set of candidate tails, as in
ranking evaluation: the gate runs once per query and only its K active
spaces score the candidates. The reported unit is seconds per scored
``(h, r, t)`` triple.
"""

from __future__ import annotations

import time

import numpy as np

from .kg import SwisE
from .product import parse_signature


def sweep_signature(n: int, kind: str = "P", dim: int = 100) -> str:
    return ",".join(f"{kind}{dim}" for _ in range(n))


def random_model(n: int, k: int, kind="P", dim=100, n_entities=1000, gate="matrix-conv2d", seed=0):
    """Untrained model ``(kind^dim)^n`` whose gate spreads queries over many active sets."""
    rng = np.random.default_rng(seed)
    model = SwisE(parse_signature(sweep_signature(n, kind, dim)), n_entities, 2, k=k, gate_variant=gate)
    # gate weights well above the training init so the argmax is not one fixed set
    params = dict(model.init_params(rng, init_scale=0.3, gate_scale=0.3))
    return model, params


def time_ranking(model: SwisE, params, n_queries=32, repeats=5, seed=0) -> dict:
    """Best-of-``repeats`` timing of scoring every entity as tail for ``n_queries`` queries."""
    rng = np.random.default_rng(seed)
    h = rng.integers(0, model.n_entities, n_queries)
    r = rng.integers(0, model.n_relations, n_queries)
    model.score_all_tails(params, h, r, chunk=n_queries)
    best = np.inf
    for _ in range(repeats):
        model.component_evals = 0
        start = time.perf_counter()
        model.score_all_tails(params, h, r, chunk=n_queries)
        best = min(best, time.perf_counter() - start)
    return {
        "seconds_per_query": best / n_queries,
        "seconds_per_example": best / (n_queries * model.n_entities),
        "components_per_query": model.component_evals / n_queries,
    }


def timing_sweep(ns=(5, 10, 20), k=2, kind="P", dim=100, n_entities=1000, n_queries=32, repeats=5,
                 gate="matrix-conv2d", seed=0) -> list[dict]:
    """One row per N at fixed K; K is capped at N."""
    rows = []
    for n in ns:
        kk = min(k, n)
        model, params = random_model(n, kk, kind, dim, n_entities, gate, seed)
        row = {"n": n, "k": kk, "signature": f"({kind}{dim})^{n}"}
        row.update(time_ranking(model, params, n_queries, repeats, seed))
        rows.append(row)
    return rows


def relative_growth(rows: list[dict], key="seconds_per_example") -> float:
    """Time at the largest N relative to the smallest, minus one."""
    ordered = sorted(rows, key=lambda row: row["n"])
    return ordered[-1][key] / ordered[0][key] - 1.0
