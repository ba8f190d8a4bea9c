"""Posterior chain container with CSV round trip."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = ["Chain"]


@dataclass
class Chain:
    """Retained draws (one row per iteration) with named columns.

    Values are stored on the natural scale (phi, sigma2, not logs). meta
    carries the seed, acceptance rate, wall time and a config snapshot.
    """

    draws: np.ndarray
    columns: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if self.draws.shape[1] != len(self.columns):
            raise ConfigError("draws width != number of columns")
        if len(set(self.columns)) != len(self.columns):
            raise ConfigError("duplicate column names")
        if not np.isfinite(self.draws).all():
            raise ConfigError("chain contains non-finite values")

    def __len__(self) -> int:
        return len(self.draws)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.draws[:, self.columns.index(name)]
        except ValueError:
            raise ConfigError(f"no column {name!r}") from None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.draws:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, meta: dict | None = None) -> "Chain":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                columns = next(reader)
            except StopIteration:
                raise ConfigError(f"{path}: empty chain file") from None
            draws = np.array([[float(v) for v in row] for row in reader])
        if draws.size == 0:
            raise ConfigError(f"{path}: chain has no draws")
        return cls(draws, columns, meta or {})

    def save_meta(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.meta, fh, indent=2, default=float)
