"""Run configuration: defaults for every pipeline knob plus a small
key = value config-file format (# comments, blank lines ignored)."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

CONFIG_ENV_VAR = "MCRAG_CONFIG"


@dataclass
class RunConfig:
    data_dir: Path = Path("data")
    graph_path: Optional[Path] = None
    annotations_path: Optional[Path] = None
    embeddings_path: Optional[Path] = None
    proposals_path: Optional[Path] = None
    alpha: float = 0.5
    k: int = 10
    pool_multiplier: int = 4
    theta: Optional[float] = None
    smoothing: float = 1.0
    eps_floor: float = 1e-6
    significance: float = 0.01
    tau: float = 0.7
    seed: int = 0
    host: str = "127.0.0.1"
    port: int = 8787
    token: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha out of [0,1]: {self.alpha}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau out of [0,1]: {self.tau}")
        if self.k < 1 or self.pool_multiplier < 1:
            raise ValueError("k and pool_multiplier must be >= 1")
        if self.smoothing <= 0:
            raise ValueError(f"smoothing must be > 0: {self.smoothing}")
        if not 0.0 < self.eps_floor < 1.0:
            raise ValueError(f"eps_floor out of (0,1): {self.eps_floor}")
        if not 0.0 < self.significance < 1.0:
            raise ValueError(f"significance out of (0,1): {self.significance}")

    def resolve(self, name: str) -> Path:
        explicit = getattr(self, f"{name}_path")
        if explicit is not None:
            return Path(explicit)
        defaults = {
            "graph": "graph.json",
            "annotations": "annotations.jsonl",
            "embeddings": "embeddings.jsonl",
            "proposals": "proposals.jsonl",
        }
        return Path(self.data_dir) / defaults[name]


_PATH_KEYS = {"data_dir", "graph_path", "annotations_path", "embeddings_path", "proposals_path"}
_INT_KEYS = {"k", "pool_multiplier", "seed", "port"}
_FLOAT_KEYS = {"alpha", "theta", "smoothing", "eps_floor", "significance", "tau"}


def parse_config_text(text: str) -> RunConfig:
    values: dict = {}
    known = {f.name for f in fields(RunConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in _PATH_KEYS:
            values[key] = Path(value)
        elif key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = None if value.lower() == "none" else float(value)
        else:
            values[key] = value
    return RunConfig(**values)


def load_config(path: Optional[Path] = None) -> RunConfig:
    """Load config from an explicit path, the MCRAG_CONFIG env var, or defaults."""
    if path is None:
        env = os.environ.get(CONFIG_ENV_VAR)
        if env:
            path = Path(env)
    if path is None:
        return RunConfig()
    return parse_config_text(Path(path).read_text(encoding="utf-8"))
