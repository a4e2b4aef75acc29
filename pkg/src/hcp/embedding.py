"""Learnable per-robot hardware embeddings."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .errors import DimensionError, EmbeddingLookupError
from .kinematics import HardwareVector
from .nn import adam_update
from .rng import make_rng


@dataclass
class EmbeddingTable:
    """Rows keyed by robot id, each with its own Adam moments and step count."""

    dim: int
    lr: float = 1e-4
    init_scale: float = 0.1
    seed: int = 0
    finetune: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionError("embedding dim must be >= 1")
        self.ids: list[str] = []
        self.index: dict[str, int] = {}
        self.values = np.zeros((0, self.dim))
        self.m = np.zeros((0, self.dim))
        self.v = np.zeros((0, self.dim))
        self.steps = np.zeros(0, dtype=np.int64)
        self._rng = make_rng(self.seed, "embedding")

    def __len__(self):
        return len(self.ids)

    def add(self, robot_id: str) -> int:
        if robot_id in self.index:
            return self.index[robot_id]
        row = self._rng.uniform(-self.init_scale, self.init_scale, self.dim)
        self.index[robot_id] = len(self.ids)
        self.ids.append(robot_id)
        self.values = np.vstack([self.values, row])
        self.m = np.vstack([self.m, np.zeros(self.dim)])
        self.v = np.vstack([self.v, np.zeros(self.dim)])
        self.steps = np.append(self.steps, 0)
        return self.index[robot_id]

    def add_all(self, robot_ids) -> None:
        for rid in robot_ids:
            self.add(rid)

    def row(self, robot_id: str) -> int:
        if robot_id not in self.index:
            if not self.finetune:
                raise EmbeddingLookupError(robot_id)
            return self.add(robot_id)
        return self.index[robot_id]

    def lookup(self, robot_id: str) -> HardwareVector:
        """Snapshot of the current row (a copy, so later updates don't leak into it)."""
        i = self.row(robot_id)  # may append a row in fine-tune mode
        return HardwareVector(self.values[i].copy(), "implicit", 0)

    def apply_gradients(self, grads_by_robot: dict) -> None:
        for rid, g in grads_by_robot.items():
            g = np.asarray(g, float)
            if g.shape != (self.dim,):
                raise DimensionError(f"gradient for {rid} has shape {g.shape}, expected ({self.dim},)")
            i = self.row(rid)
            self.steps[i] = adam_update(self.values[i], g, self.m[i], self.v[i], int(self.steps[i]), self.lr)

    def state_dict(self) -> dict:
        return {"embedding.values": self.values, "embedding.m": self.m, "embedding.v": self.v,
                "embedding.steps": self.steps, "embedding.ids": np.array(self.ids, dtype=str)}

    def load_state_dict(self, d: dict) -> None:
        self.ids = [str(x) for x in d["embedding.ids"]]
        self.index = {rid: i for i, rid in enumerate(self.ids)}
        self.values = np.array(d["embedding.values"], dtype=float).reshape(-1, self.dim)
        self.m = np.array(d["embedding.m"], dtype=float).reshape(-1, self.dim)
        self.v = np.array(d["embedding.v"], dtype=float).reshape(-1, self.dim)
        self.steps = np.array(d["embedding.steps"], dtype=np.int64)


def lookup(table: EmbeddingTable, robot_id: str) -> HardwareVector:
    return table.lookup(robot_id)


def apply_embedding_gradients(table: EmbeddingTable, grads_by_robot: dict) -> EmbeddingTable:
    """Per-row Adam step; rows without a gradient are left untouched."""
    table.apply_gradients(grads_by_robot)
    return table


def group_gradients(robot_rows: np.ndarray, input_grads: np.ndarray, ids: list[str]) -> dict:
    """Sum per-sample gradients (rows of ``input_grads``) by robot."""
    out = {}
    uniq, inv = np.unique(robot_rows, return_inverse=True)
    sums = np.zeros((len(uniq), input_grads.shape[1]))
    np.add.at(sums, inv, input_grads)
    for k, r in enumerate(uniq):
        out[ids[r]] = sums[k]
    return out


@dataclass(frozen=True)
class SmoothnessReport:
    rows: list  # (robot_id, *components, parameter)
    spearman_rho: float | None  # None when undefined (constant distances)
    n_pairs: int


def embedding_report(table: EmbeddingTable, pool, varied_param) -> SmoothnessReport:
    """Rows for plotting plus the Spearman correlation between pairwise embedding
    distances and pairwise parameter differences.

    ``varied_param`` maps a RobotSpec to the scalar physical parameter."""
    vals, params, rows = [], [], []
    for spec in pool:
        i = table.row(spec.robot_id)
        e = table.values[i]
        p = float(varied_param(spec))
        vals.append(e)
        params.append(p)
        rows.append((spec.robot_id, *map(float, e), p))
    E = np.array(vals)
    P = np.array(params)
    iu = np.triu_indices(len(E), k=1)
    dE = np.linalg.norm(E[:, None] - E[None], axis=-1)[iu]
    dP = np.abs(P[:, None] - P[None])[iu]
    rho = None
    if len(dE) >= 2 and np.ptp(dE) > 0 and np.ptp(dP) > 0:
        rho = float(spearmanr(dE, dP).statistic)
    return SmoothnessReport(rows, rho, len(dE))


def write_report_csv(report: SmoothnessReport, path, param_name: str = "parameter") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = len(report.rows[0]) - 2 if report.rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["robot_id", *[f"v{i}" for i in range(dim)], param_name])
        for r in report.rows:
            w.writerow([r[0], *(f"{x:.9g}" for x in r[1:])])
