"""Hardware vectors appended to the policy input, one provider per conditioning mode."""
from __future__ import annotations

import numpy as np

from .embedding import EmbeddingTable
from .errors import ConfigError
from .kinematics import DYN_DIM, EXPLICIT_DIM, dynamics_vector, explicit_encoding
from .robots import HOPPER, SamplingRanges

HCP_E, HCP_I, HCP_E_DYN, BASELINE = "HCP-E", "HCP-I", "HCP-E+DYN", "BASELINE"
ALGORITHMS = (HCP_E, HCP_I, HCP_E_DYN, BASELINE)


class HardwareProvider:
    """Maps robots to v_h.

    Fixed vectors (explicit kinematics, scaled dynamics) are cached per robot and
    pass through the observation normaliser; learned embeddings come from an
    ``EmbeddingTable`` and enter the networks unnormalised.
    """

    def __init__(self, algorithm: str, ranges: SamplingRanges | None = None, table: EmbeddingTable | None = None):
        if algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {algorithm!r}")
        if algorithm == HCP_I and table is None:
            raise ConfigError("HCP-I needs an embedding table")
        if algorithm == HCP_E_DYN and ranges is None:
            raise ConfigError("HCP-E+DYN needs the sampling ranges to scale dynamics")
        self.algorithm = algorithm
        self.ranges = ranges
        self.table = table
        self._cache: dict[str, np.ndarray] = {}

    @property
    def learnable(self) -> bool:
        return self.algorithm == HCP_I

    @property
    def dim(self) -> int:
        return {HCP_E: EXPLICIT_DIM, HCP_E_DYN: EXPLICIT_DIM + DYN_DIM, BASELINE: 0}.get(
            self.algorithm, self.table.dim if self.table is not None else 0)

    def fixed(self, spec) -> np.ndarray:
        if self.algorithm in (BASELINE, HCP_I):
            return np.zeros(0)
        v = self._cache.get(spec.robot_id)
        if v is None:
            v = explicit_encoding(spec).values
            if self.algorithm == HCP_E_DYN:
                v = np.concatenate([v, dynamics_vector(spec, self.ranges)])
            self._cache[spec.robot_id] = v
        return v

    def register(self, pool) -> None:
        if self.learnable:
            self.table.add_all(s.robot_id for s in pool)

    def row(self, spec) -> int:
        return self.table.row(spec.robot_id) if self.learnable else -1

    def vector(self, spec) -> np.ndarray:
        if self.learnable:
            return self.table.lookup(spec.robot_id).values
        return self.fixed(spec)


def default_ranges(task: str) -> SamplingRanges:
    return SamplingRanges.hopper() if task == HOPPER else SamplingRanges.manipulator()
