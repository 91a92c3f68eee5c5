"""Dataset ingestion: KG triple files and MovieLens-style interaction logs."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation


@dataclass
class TripleStore:
    """Triples as dense integer ids; relation ids ``>= n_relations`` are reciprocals."""

    entities: dict[str, int]
    relations: dict[str, int]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    _known: dict | None = field(default=None, repr=False)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def with_reciprocals(self, triples: np.ndarray) -> np.ndarray:
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        inv = np.stack([triples[:, 2], triples[:, 1] + self.n_relations, triples[:, 0]], axis=1)
        return np.concatenate([triples, inv])

    def all_triples(self) -> np.ndarray:
        return self.with_reciprocals(np.concatenate([self.train, self.valid, self.test]))

    def known_tails(self) -> dict[tuple[int, int], np.ndarray]:
        """``(h, r) -> true tails`` over every split, both directions."""
        if self._known is None:
            trip = self.all_triples()
            order = np.lexsort((trip[:, 2], trip[:, 1], trip[:, 0]))
            trip = trip[order]
            keys, starts = np.unique(trip[:, :2], axis=0, return_index=True)
            ends = np.append(starts[1:], len(trip))
            self._known = {(int(h), int(r)): trip[s:e, 2] for (h, r), s, e in zip(keys, starts, ends)}
        return self._known


def _read_triples(path: Path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ContractViolation(f"{path}:{lineno}: expected 'head<TAB>relation<TAB>tail'")
            rows.append(tuple(p.strip() for p in parts))
    return rows


def kg_from_triples(train, valid=(), test=()) -> TripleStore:
    """Build a TripleStore from (head, relation, tail) symbol triples."""
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    splits = []
    for rows in (train, valid, test):
        ids = []
        for h, r, t in rows:
            h, r, t = str(h), str(r), str(t)
            hi = entities.setdefault(h, len(entities))
            ri = relations.setdefault(r, len(relations))
            ti = entities.setdefault(t, len(entities))
            ids.append((hi, ri, ti))
        splits.append(np.array(ids, dtype=np.int64).reshape(-1, 3))
    return TripleStore(entities, relations, *splits)


def load_kg(path: str | os.PathLike) -> TripleStore:
    """Read ``train.txt``, ``valid.txt`` and ``test.txt`` from a directory."""
    root = Path(path)
    splits = [_read_triples(root / f"{name}.txt") for name in ("train", "valid", "test")]
    return kg_from_triples(*splits)


def binary_tree_kg(depth: int = 6, relation: str = "child_of") -> TripleStore:
    """Balanced binary tree with ``2**depth - 1`` nodes; every split holds all edges."""
    n = 2**depth - 1
    rows = [(f"n{c}", relation, f"n{(c - 1) // 2}") for c in range(1, n)]
    store = kg_from_triples(rows)
    store.valid = store.train.copy()
    store.test = store.train.copy()
    return store


@dataclass
class InteractionStore:
    """Binarized implicit feedback with a per-user train/valid/test partition."""

    users: dict[str, int]
    items: dict[str, int]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def mask(self, split: str = "train") -> np.ndarray:
        m = np.zeros((self.n_users, self.n_items), dtype=bool)
        pairs = getattr(self, split)
        m[pairs[:, 0], pairs[:, 1]] = True
        return m

    def items_by_user(self, split: str) -> list[np.ndarray]:
        pairs = getattr(self, split)
        order = np.argsort(pairs[:, 0], kind="stable")
        pairs = pairs[order]
        bounds = np.searchsorted(pairs[:, 0], np.arange(self.n_users + 1))
        return [pairs[bounds[u] : bounds[u + 1], 1] for u in range(self.n_users)]


def load_movielens(path: str | os.PathLike) -> np.ndarray:
    """Raw events as a string array ``(n, 4)``: user, item, rating, timestamp.

    Accepts the 100K layout (tab separated, ``u.data``) and the 1M layout
    (``::`` separated, ``ratings.dat``); a directory is searched for either.
    """
    p = Path(path)
    if p.is_dir():
        for name in ("u.data", "ratings.dat"):
            if (p / name).exists():
                p = p / name
                break
        else:
            raise ContractViolation(f"no u.data or ratings.dat under {path}")
    rows = []
    with open(p, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("::") if "::" in line else line.split("\t")
            if len(parts) < 3:
                raise ContractViolation(f"{p}:{lineno}: expected user, item, rating, timestamp")
            rows.append(parts[:4] + [""] * (4 - len(parts[:4])))
    return np.array(rows, dtype=str).reshape(-1, 4)


def split_interactions(events, ratios=(0.7, 0.1, 0.2), rng=None) -> InteractionStore:
    """Per-user random partition.

    Validation and test sizes are ``floor(n * ratio)``; the remainder goes to
    training. Every observed (user, item) pair counts once, whatever its rating.
    """
    if not math.isclose(sum(ratios), 1.0):
        raise ContractViolation("split ratios must sum to 1")
    rng = np.random.default_rng(0) if rng is None else rng
    events = np.asarray(events)
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    pairs = np.array([(users.setdefault(str(u), len(users)), items.setdefault(str(i), len(items)))
                      for u, i in events[:, :2]], dtype=np.int64).reshape(-1, 2)
    pairs = np.unique(pairs, axis=0)
    bounds = np.searchsorted(pairs[:, 0], np.arange(len(users) + 1))
    out = {"train": [], "valid": [], "test": []}
    for u in range(len(users)):
        mine = pairs[bounds[u] : bounds[u + 1]]
        mine = mine[rng.permutation(len(mine))]
        n = len(mine)
        n_val = int(math.floor(n * ratios[1] + 1e-9))
        n_test = int(math.floor(n * ratios[2] + 1e-9))
        n_train = n - n_val - n_test
        out["train"].append(mine[:n_train])
        out["valid"].append(mine[n_train : n_train + n_val])
        out["test"].append(mine[n_train + n_val :])
    return InteractionStore(users, items, *(np.concatenate(out[k]).reshape(-1, 2) for k in ("train", "valid", "test")))
