"""Flat key = value run configuration.

One experiment is described by a small text file of ``key = value`` lines
('#' starts a comment).  Values are parsed as int, float, bare word, or a
comma-separated tuple of these.  The schema is documented in the README and
enforced here: unknown keys are rejected so that a config hash pins the run.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path


_COMMON = {"q", "f", "theta", "eps", "seed", "out", "replicas"}
ALLOWED_KEYS = {
    "simulate": _COMMON | {"T", "nx", "dt", "replicas_const", "snapshots"},
    "couple": _COMMON | {"period", "periods"},
    "verify-kernels": _COMMON | {"deltas"},
    "verify-sg": _COMMON | {"p", "cells", "functionals"},
    "scale-check": _COMMON | {"p", "lambdas", "replicas_const", "recenter_replicas",
                              "recenter_lambda", "nx", "dt"},
    "compare": _COMMON | {"T", "replicas_const", "reference_replicas", "ch_nx", "ch_dt",
                          "period"},
}
KINDS = tuple(sorted(ALLOWED_KEYS))


def _parse_scalar(tok: str):
    tok = tok.strip()
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    return tok


def parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return tuple(_parse_scalar(t) for t in raw.split(",") if t.strip())
    return _parse_scalar(raw)


def _as_tuple(v) -> tuple:
    return v if isinstance(v, tuple) else (v,)


@dataclass
class RunConfig:
    """Resolved configuration of one experiment run."""

    kind: str
    q: tuple = (1.0, 1.0)
    f: tuple = ("w2",)
    theta: str = "gauss"
    eps: tuple = (0.2, 0.1, 0.05)
    seed: int = 1
    out: str = "runs/out"
    replicas: int = 500
    options: dict = field(default_factory=dict)   # kind-specific extras

    def __post_init__(self):
        if self.kind not in ALLOWED_KEYS:
            raise ValueError(f"unknown experiment kind {self.kind!r} (choose from {KINDS})")
        self.q = tuple(float(c) for c in _as_tuple(self.q))
        self.f = tuple(str(x) for x in _as_tuple(self.f))
        self.eps = tuple(float(e) for e in _as_tuple(self.eps))
        if list(self.eps) != sorted(self.eps, reverse=True) or len(set(self.eps)) != len(self.eps):
            raise ValueError("eps ladder must be strictly decreasing")

    def opt(self, key: str, default=None):
        return self.options.get(key, default)

    def canonical_text(self) -> str:
        items = {"kind": self.kind, "q": self.q, "f": self.f, "theta": self.theta,
                 "eps": self.eps, "seed": self.seed, "replicas": self.replicas}
        items.update(self.options)
        lines = []
        for k in sorted(items):
            v = items[k]
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    @classmethod
    def from_file(cls, path, kind: str, seed: int | None = None,
                  out: str | None = None) -> "RunConfig":
        allowed = ALLOWED_KEYS.get(kind)
        if allowed is None:
            raise ValueError(f"unknown experiment kind {kind!r} (choose from {KINDS})")
        raw = {}
        for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, val = line.split("=", 1)
            key = key.strip()
            if key not in allowed:
                raise ValueError(f"{path}:{ln}: key {key!r} not allowed for kind {kind!r}")
            raw[key] = parse_value(val)
        known = {f.name for f in dc_fields(cls)} - {"kind", "options"}
        base = {k: v for k, v in raw.items() if k in known}
        extras = {k: v for k, v in raw.items() if k not in known}
        cfg = cls(kind=kind, options=extras, **base)
        if seed is not None:
            cfg.seed = seed
        if out is not None:
            cfg.out = out
        return cfg
