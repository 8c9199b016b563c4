"""Mined-data containers and the knowledge-base interchange format.

A data tuple pairs a deformation gradient with the nominal stress the
microscale oracle returned for it, plus provenance (which loop iteration and
macro path produced it).  The on-disk format is line-delimited: one record
per tuple with provenance, pseudo-time and the 18 tensor components written
as shortest round-trip decimal literals, so a load followed by a save is
byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensors
from .errors import CorruptRecord, EmptyDataSet, FormatVersionMismatch

KBASE_VERSION = "matmine-kbase-v1"
_N_FIELDS = 5 + 9 + 9


@dataclass
class DataSet:
    """Columnar set of (F, P) tuples with provenance.

    ``source`` names where a tuple came from (for example
    ``init:uniaxial-tension-x1`` or ``mined``), ``iteration`` the mining-loop
    iteration that added it (0 for the initial suite), ``path_id`` the load
    path it belongs to and ``step``/``t`` the position along that path.
    """

    F: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 3)))
    P: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 3)))
    source: list = field(default_factory=list)
    iteration: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    path_id: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    step: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float).reshape(-1, 3, 3)
        self.P = np.asarray(self.P, dtype=float).reshape(-1, 3, 3)
        self.source = list(self.source)
        self.iteration = np.asarray(self.iteration, dtype=int).reshape(-1)
        self.path_id = np.asarray(self.path_id, dtype=int).reshape(-1)
        self.step = np.asarray(self.step, dtype=int).reshape(-1)
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        n = len(self.F)
        for name in ("P", "source", "iteration", "path_id", "step", "t"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has inconsistent length")

    def __len__(self):
        return self.F.shape[0]

    def subset(self, idx):
        idx = np.atleast_1d(np.asarray(idx))
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return DataSet(self.F[idx], self.P[idx],
                       [self.source[i] for i in idx],
                       self.iteration[idx], self.path_id[idx],
                       self.step[idx], self.t[idx])

    def merged_with(self, other: "DataSet"):
        return DataSet(np.concatenate([self.F, other.F]),
                       np.concatenate([self.P, other.P]),
                       self.source + other.source,
                       np.concatenate([self.iteration, other.iteration]),
                       np.concatenate([self.path_id, other.path_id]),
                       np.concatenate([self.step, other.step]),
                       np.concatenate([self.t, other.t]))

    def invariant_values(self, fiber_axis=None):
        """Invariant image of every tuple, shape (m, 6) or (m, 4)."""
        if len(self) == 0:
            raise EmptyDataSet("no tuples to map")
        C = tensors.right_cauchy_green(self.F)
        M = None if fiber_axis is None else tensors.structural_tensor(fiber_axis)
        return tensors.invariants(C, M)


def from_records(records):
    """Build a DataSet from an iterable of (F, P, source, iteration, path_id,
    step, t) tuples."""
    records = list(records)
    if not records:
        return DataSet()
    F = np.stack([r[0] for r in records])
    P = np.stack([r[1] for r in records])
    return DataSet(F, P, [r[2] for r in records],
                   np.array([r[3] for r in records], dtype=int),
                   np.array([r[4] for r in records], dtype=int),
                   np.array([r[5] for r in records], dtype=int),
                   np.array([r[6] for r in records], dtype=float))


def save_kbase(dataset: DataSet, path):
    """Write the knowledge base as line-delimited records with a version header."""
    with open(path, "w") as fh:
        fh.write(f"# {KBASE_VERSION}\n")
        fh.write("# source iteration path step t F(9 row-major) P(9 row-major)\n")
        for i in range(len(dataset)):
            src = str(dataset.source[i]).replace(" ", "_") or "unknown"
            fields = [src, str(int(dataset.iteration[i])), str(int(dataset.path_id[i])),
                      str(int(dataset.step[i])), repr(float(dataset.t[i]))]
            fields += [repr(float(v)) for v in dataset.F[i].flat]
            fields += [repr(float(v)) for v in dataset.P[i].flat]
            fh.write(" ".join(fields) + "\n")


def load_kbase(path):
    """Read a knowledge base written by :func:`save_kbase`.

    Raises :class:`FormatVersionMismatch` for a missing or unknown header and
    :class:`CorruptRecord` (with line number) for malformed records.
    """
    records = []
    with open(path) as fh:
        first = fh.readline().strip()
        if first != f"# {KBASE_VERSION}":
            raise FormatVersionMismatch(
                f"expected header '# {KBASE_VERSION}', found {first!r}")
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != _N_FIELDS:
                raise CorruptRecord(f"expected {_N_FIELDS} fields, found {len(parts)}",
                                    line_no=line_no)
            try:
                src = parts[0]
                it, pid, stp = int(parts[1]), int(parts[2]), int(parts[3])
                numbers = np.array([float(v) for v in parts[4:]])
            except ValueError as exc:
                raise CorruptRecord(str(exc), line_no=line_no) from None
            if not np.all(np.isfinite(numbers)):
                raise CorruptRecord("non-finite value", line_no=line_no)
            records.append((numbers[1:10].reshape(3, 3),
                            numbers[10:19].reshape(3, 3),
                            src, it, pid, stp, numbers[0]))
    return from_records(records)
