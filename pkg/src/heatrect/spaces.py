"""Tensor-product Hilbert spaces, sparse mode operators, and density matrices.

The mode order of a :class:`SpaceLayout` fixes the Kronecker convention:
the leftmost mode is the slowest-varying index of the product basis.  All
operators built here are embedded in the full product space (identity on
every other mode) and stored as canonical CSR matrices, so identical
inputs always produce bit-identical sparse structures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-10
EIGENVALUE_FLOOR = -1e-8


@dataclass(frozen=True)
class HarmonicOscillator:
    """Harmonic oscillator truncated to ``dim`` Fock states."""

    dim: int

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"harmonic oscillator needs dim >= 2, got {self.dim}")


@dataclass(frozen=True)
class Qutrit:
    """Three-level anharmonic mode; lowering operator |0><1| + sqrt(2)|1><2|."""

    @property
    def dim(self) -> int:
        return 3


ModeKind = HarmonicOscillator | Qutrit


@dataclass(frozen=True)
class SpaceLayout:
    """Ordered list of labelled modes spanning a tensor-product space."""

    modes: tuple[tuple[str, ModeKind], ...]

    def __post_init__(self):
        if not self.modes:
            raise ValueError("layout needs at least one mode")
        labels = [label for label, _ in self.modes]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate mode labels in layout: {labels}")

    @classmethod
    def of(cls, *modes: tuple[str, ModeKind]) -> "SpaceLayout":
        return cls(tuple(modes))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.modes)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(kind.dim for _, kind in self.modes)

    @property
    def total_dim(self) -> int:
        return math.prod(self.dims)

    def index_of(self, label: str) -> int:
        for i, (name, _) in enumerate(self.modes):
            if name == label:
                return i
        raise ValueError(f"unknown mode label {label!r}; layout has {list(self.labels)}")

    def kind_of(self, label: str) -> ModeKind:
        return self.modes[self.index_of(label)][1]

    def dim_of(self, label: str) -> int:
        return self.kind_of(label).dim

    def sub_layout(self, keep) -> "SpaceLayout":
        """Layout restricted to the modes in ``keep``, in layout order."""
        keep = set(keep)
        unknown = keep - set(self.labels)
        if unknown:
            raise ValueError(f"unknown mode labels {sorted(unknown)}; layout has {list(self.labels)}")
        return SpaceLayout(tuple(m for m in self.modes if m[0] in keep))


def _canonical_csr(matrix) -> sp.csr_array:
    a = sp.csr_array(matrix, dtype=np.complex128)
    a.sum_duplicates()
    a.eliminate_zeros()
    a.sort_indices()
    return a


@dataclass(frozen=True)
class SparseOperator:
    """Sparse complex operator tied to a layout.

    The stored matrix is canonical CSR: sorted indices, duplicates summed,
    explicit zeros removed.  Treat instances as immutable.
    """

    layout: SpaceLayout
    matrix: sp.csr_array

    @classmethod
    def wrap(cls, layout: SpaceLayout, matrix) -> "SparseOperator":
        m = _canonical_csr(matrix)
        d = layout.total_dim
        if m.shape != (d, d):
            raise ValueError(f"operator shape {m.shape} does not match layout dim {d}")
        return cls(layout, m)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def dag(self) -> "SparseOperator":
        return SparseOperator(self.layout, _canonical_csr(self.matrix.conj().T))

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def _check_layout(self, other: "SparseOperator"):
        if self.layout != other.layout:
            raise ValueError("operators live on different layouts")

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        self._check_layout(other)
        return SparseOperator(self.layout, _canonical_csr(self.matrix + other.matrix))

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        self._check_layout(other)
        return SparseOperator(self.layout, _canonical_csr(self.matrix - other.matrix))

    def __matmul__(self, other: "SparseOperator") -> "SparseOperator":
        self._check_layout(other)
        return SparseOperator(self.layout, _canonical_csr(self.matrix @ other.matrix))

    def __mul__(self, scalar) -> "SparseOperator":
        return SparseOperator(self.layout, _canonical_csr(self.matrix * complex(scalar)))

    __rmul__ = __mul__

    def __neg__(self) -> "SparseOperator":
        return self * (-1.0)


def _local_lowering(kind: ModeKind) -> np.ndarray:
    if isinstance(kind, Qutrit):
        a = np.zeros((3, 3), dtype=np.complex128)
        a[0, 1] = 1.0
        a[1, 2] = math.sqrt(2.0)
        return a
    return np.diag(np.sqrt(np.arange(1, kind.dim, dtype=np.float64)), k=1).astype(np.complex128)


def embed(layout: SpaceLayout, label: str, local_matrix) -> SparseOperator:
    """Embed a single-mode matrix into the full product space."""
    idx = layout.index_of(label)
    dims = layout.dims
    if np.shape(local_matrix) != (dims[idx], dims[idx]):
        raise ValueError(
            f"local matrix shape {np.shape(local_matrix)} does not match mode "
            f"{label!r} of dim {dims[idx]}"
        )
    left = math.prod(dims[:idx]) if idx > 0 else 1
    right = math.prod(dims[idx + 1:]) if idx + 1 < len(dims) else 1
    m = sp.csr_array(np.asarray(local_matrix, dtype=np.complex128))
    full = sp.kron(sp.kron(sp.eye_array(left, format="csr"), m), sp.eye_array(right, format="csr"))
    return SparseOperator.wrap(layout, full)


def identity_op(layout: SpaceLayout) -> SparseOperator:
    return SparseOperator.wrap(layout, sp.eye_array(layout.total_dim, format="csr"))


def lowering_op(layout: SpaceLayout, label: str) -> SparseOperator:
    """Lowering operator of one mode, identity on all others."""
    return embed(layout, label, _local_lowering(layout.kind_of(label)))


def raising_op(layout: SpaceLayout, label: str) -> SparseOperator:
    return embed(layout, label, _local_lowering(layout.kind_of(label)).conj().T)


def number_op(layout: SpaceLayout, label: str) -> SparseOperator:
    """Excitation-number operator a†a of one mode (diag(0, 1, ...))."""
    dim = layout.dim_of(label)
    return embed(layout, label, np.diag(np.arange(dim, dtype=np.complex128)))


def projector(layout: SpaceLayout, label: str, level: int) -> SparseOperator:
    """Projector onto one level of a mode, identity on the other modes."""
    dim = layout.dim_of(label)
    if not 0 <= level < dim:
        raise ValueError(f"level {level} out of range for mode {label!r} of dim {dim}")
    local = np.zeros((dim, dim), dtype=np.complex128)
    local[level, level] = 1.0
    return embed(layout, label, local)


@dataclass
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite state on a layout."""

    layout: SpaceLayout
    data: np.ndarray

    @classmethod
    def from_matrix(cls, layout: SpaceLayout, matrix, validate: bool = True) -> "DensityMatrix":
        data = np.asarray(matrix, dtype=np.complex128)
        d = layout.total_dim
        if data.shape != (d, d):
            raise ValueError(f"state shape {data.shape} does not match layout dim {d}")
        rho = cls(layout, data)
        if validate:
            rho.validate()
        return rho

    @classmethod
    def from_vec(cls, layout: SpaceLayout, vec, validate: bool = True) -> "DensityMatrix":
        d = layout.total_dim
        data = np.asarray(vec, dtype=np.complex128).reshape((d, d), order="F")
        return cls.from_matrix(layout, data, validate=validate)

    @classmethod
    def ground_state(cls, layout: SpaceLayout) -> "DensityMatrix":
        d = layout.total_dim
        data = np.zeros((d, d), dtype=np.complex128)
        data[0, 0] = 1.0
        return cls(layout, data)

    @classmethod
    def from_mode_states(cls, layout: SpaceLayout, mode_states, validate: bool = True) -> "DensityMatrix":
        """Product state from per-mode density matrices given in layout order."""
        mats = [np.asarray(m, dtype=np.complex128) for m in mode_states]
        if len(mats) != len(layout.modes):
            raise ValueError("need one state per mode")
        for m, dim in zip(mats, layout.dims):
            if m.shape != (dim, dim):
                raise ValueError(f"mode state shape {m.shape} does not match dim {dim}")
        data = mats[0]
        for m in mats[1:]:
            data = np.kron(data, m)
        return cls.from_matrix(layout, data, validate=validate)

    def validate(self):
        herm = np.max(np.abs(self.data - self.data.conj().T))
        if herm > HERMITICITY_TOL:
            raise ValueError(f"state is not Hermitian: max |rho - rho†| = {herm:.3e}")
        tr = self.data.trace()
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"state trace {tr} deviates from 1 beyond {TRACE_TOL}")
        eigmin = float(np.linalg.eigvalsh(self.data)[0])
        if eigmin < EIGENVALUE_FLOOR:
            raise ValueError(f"state has negative eigenvalue {eigmin:.3e}")

    def vec(self) -> np.ndarray:
        """Column-stacked vector view: vec[i + d*j] = rho[i, j]."""
        return self.data.flatten(order="F")

    def expectation(self, op: SparseOperator) -> complex:
        if op.layout != self.layout:
            raise ValueError("operator layout does not match state layout")
        return complex((op.matrix.multiply(self.data.T)).sum())

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.layout, self.data.copy())


def partial_trace(rho: DensityMatrix, keep) -> DensityMatrix:
    """Trace out every mode not in ``keep``.

    The result lives on the sub-layout of kept modes in layout order; the
    trace is preserved exactly.
    """
    keep = list(keep)
    if not keep:
        raise ValueError("keep set must not be empty")
    layout = rho.layout
    keep_indices = sorted(layout.index_of(label) for label in keep)
    dims = layout.dims
    n = len(dims)

    tensor = rho.data.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for i in range(n):
        if i not in keep_indices:
            col[i] = row[i]
    out = "".join(row[i] for i in keep_indices) + "".join(letters[n + i] for i in keep_indices)
    reduced = np.einsum("".join(row + col) + "->" + out, tensor)

    sub = layout.sub_layout(layout.labels[i] for i in keep_indices)
    d = sub.total_dim
    return DensityMatrix(sub, reduced.reshape((d, d)))
