"""Per-subject tensor fields: SPD matrices attached to lattice sites."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyData
from .lattice import Lattice
from .spd import validate_spd_batch


@dataclass
class TensorField:
    """A voxel-indexed collection of SPD matrices for one subject.

    ``tensors`` has shape (n_active_sites, p, p); ``group`` is the binary
    group indicator x_i.
    """

    lattice: Lattice
    tensors: np.ndarray
    subject_id: str = ""
    group: int = 0

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=float)
        if self.tensors.ndim != 3 or self.tensors.shape[1] != self.tensors.shape[2]:
            raise DimensionMismatch(
                f"tensors must be (n, p, p), got {self.tensors.shape}"
            )
        if self.tensors.shape[0] != self.lattice.n_sites:
            raise DimensionMismatch(
                f"{self.tensors.shape[0]} tensors for {self.lattice.n_sites} sites"
            )
        self.group = int(self.group)
        if self.group not in (0, 1):
            raise ValueError(f"group indicator must be 0 or 1, got {self.group}")

    @property
    def p(self) -> int:
        return self.tensors.shape[1]

    def validate(self, *, strict: bool = True) -> None:
        if not np.all(np.isfinite(self.tensors)):
            raise DimensionMismatch("tensor field has non-finite entries")
        if strict:
            validate_spd_batch(self.tensors)


def estimate_sigma(fields) -> np.ndarray:
    """Elementwise mean of all tensors over subjects and active voxels.

    This is the moment-method value of the fixed hyper-mean matrix.
    """
    fields = list(fields)
    if not fields or any(f.tensors.shape[0] == 0 for f in fields):
        raise EmptyData("no tensors to average")
    first = fields[0]
    for f in fields[1:]:
        first.lattice.require_same(f.lattice)
        if f.p != first.p:
            raise DimensionMismatch("fields have differing matrix dimension")
    total = np.zeros((first.p, first.p))
    count = 0
    for f in fields:
        total += f.tensors.sum(axis=0)
        count += f.tensors.shape[0]
    out = total / count
    return 0.5 * (out + out.T)
