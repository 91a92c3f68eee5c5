"""Run configuration and its flat ``key = value`` file format.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Keys are the :class:`RunConfig` field names. Lists (``seeds``) are comma
separated, booleans are ``true``/``false``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractViolation
from .gating import VARIANTS
from .product import parse_signature

TASK_DEFAULTS = {
    "kg": {"batch_size": 512, "gate": "matrix-conv2d", "trainable_curvature": True, "reg": 0.0},
    "rec": {"batch_size": 1024, "gate": "flat-linear", "trainable_curvature": False, "reg": 0.01},
}


@dataclass
class RunConfig:
    task: str = "kg"
    signature: str = "E16"
    k: int | None = None
    mode: str = "switch"
    lr: float = 0.001
    epochs: int = 100
    batch_size: int | None = None
    n_neg: int = 50
    margin: float = 0.5
    reg: float | None = None
    w_aux: float = 0.01
    gate: str | None = None
    noise: bool = True
    gate_weighting: bool = True
    trainable_curvature: bool | None = None
    detach_gate_input: bool = True
    patience: int = 10
    eval_every: int = 1
    seed: int = 0
    seeds: list[int] = field(default_factory=list)
    split_seed: int = 0
    data: str = ""
    out: str = "runs/latest"
    workers: int = 1

    def __post_init__(self):
        self.resolve()

    def resolve(self) -> "RunConfig":
        if self.task not in TASK_DEFAULTS:
            raise ContractViolation(f"task must be one of {sorted(TASK_DEFAULTS)}")
        for key, val in TASK_DEFAULTS[self.task].items():
            if getattr(self, key) is None:
                setattr(self, key, val)
        sig = parse_signature(self.signature)
        if self.k is None:
            self.k = sig.n
        if not 1 <= self.k <= sig.n:
            raise ContractViolation(f"K={self.k} must lie in [1, N={sig.n}]")
        if self.mode not in ("switch", "product"):
            raise ContractViolation("mode must be 'switch' or 'product'")
        if self.mode == "product" and self.k != sig.n:
            raise ContractViolation("product mode requires K = N")
        if self.gate not in VARIANTS:
            raise ContractViolation(f"gate must be one of {VARIANTS}")
        for name in ("lr", "batch_size", "margin", "patience", "eval_every"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"{name} must be positive")
        for name in ("reg", "w_aux", "n_neg", "epochs"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be nonnegative")
        return self

    @property
    def n(self) -> int:
        return parse_signature(self.signature).n

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, list):
                val = ",".join(str(v) for v in val)
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractViolation(f"config line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            raw[key] = val
        return cls(**coerce(raw))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def updated(self, **changes) -> "RunConfig":
        values = dataclasses.asdict(self)
        values.update({k: v for k, v in coerce(changes).items() if v is not None})
        return RunConfig(**values)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ContractViolation(f"not a boolean: {text!r}")


def coerce(raw: dict) -> dict:
    """Convert string values to the field types of RunConfig."""
    out = {}
    for key, val in raw.items():
        if key not in _FIELDS:
            raise ContractViolation(f"unknown config key {key!r}")
        if not isinstance(val, str):
            out[key] = val
            continue
        kind = str(_FIELDS[key].type)
        if val in ("None", ""):
            out[key] = [] if "list" in kind else (None if "None" in kind else val)
        elif "list" in kind:
            out[key] = [int(v) for v in val.split(",") if v.strip()]
        elif "bool" in kind:
            out[key] = _parse_bool(val)
        elif "int" in kind:
            out[key] = int(val)
        elif "float" in kind:
            out[key] = float(val)
        else:
            out[key] = val
    return out
