"""Scalar diagnostics: currents, rectification, effective temperature,
thermal populations, fidelity, and per-mode reports."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuits import BathParams
from .lindblad import RateTable
from .spaces import (
    DensityMatrix,
    HarmonicOscillator,
    SpaceLayout,
    SparseOperator,
    lowering_op,
    number_op,
    partial_trace,
    projector,
    raising_op,
)

RECTIFICATION_CURRENT_FLOOR = 1e-14


@dataclass(frozen=True)
class BiasSetting:
    """Bath occupations of one bias direction."""

    label: str
    n_left: float
    n_right: float

    @classmethod
    def forward(cls, n_hot: float = 0.5) -> "BiasSetting":
        return cls("forward", n_hot, 0.0)

    @classmethod
    def reverse(cls, n_hot: float = 0.5) -> "BiasSetting":
        return cls("reverse", 0.0, n_hot)

    @classmethod
    def from_temperatures(cls, label: str, T_left: float, T_right: float) -> "BiasSetting":
        """Occupations from temperatures given in units of the filter frequency."""
        from .circuits import bose_occupation

        return cls(label, bose_occupation(1.0 / T_left), bose_occupation(1.0 / T_right))

    def swapped(self, label: str) -> "BiasSetting":
        return BiasSetting(label, self.n_right, self.n_left)


@dataclass(frozen=True)
class CurrentFunctional:
    """Named linear current observable: value(rho) = Re tr(W rho)."""

    name: str
    observable: SparseOperator

    def value(self, rho: DensityMatrix) -> float:
        return float(np.real(rho.expectation(self.observable)))


@dataclass(frozen=True)
class CurrentReport:
    """Forward/reverse bias currents and their rectification factor."""

    forward: float
    reverse: float
    rectification: float

    @classmethod
    def from_currents(cls, forward: float, reverse: float) -> "CurrentReport":
        return cls(forward, reverse, rectification(forward, reverse))


def bath_exchange_current(rho_ss: DensityMatrix, label: str, bath: BathParams) -> float:
    """Net excitation current bath -> filter oscillator in the full model.

    Gamma n <a a†> - Gamma (n+1) <a† a> on the steady state; positive means
    the bath pumps the system.  The heat current is this times the filter
    frequency.
    """
    op = bath_exchange_functional(rho_ss.layout, label, bath).observable
    return float(np.real(rho_ss.expectation(op)))


def bath_exchange_functional(layout: SpaceLayout, label: str, bath: BathParams) -> CurrentFunctional:
    if not isinstance(layout.kind_of(label), HarmonicOscillator):
        raise ValueError(f"mode {label!r} is not a harmonic oscillator")
    a = lowering_op(layout, label)
    ad = raising_op(layout, label)
    w = bath.Gamma * bath.n * (a @ ad) - bath.Gamma * (bath.n + 1.0) * (ad @ a)
    return CurrentFunctional(f"exchange_current_{label}", w)


def _emission_weight(layout: SpaceLayout, label: str, table: RateTable) -> SparseOperator:
    """Diagonal weight for excitations decaying into the bath of one qutrit."""
    return table.get(1, 0) * projector(layout, label, 1) + table.get(2, 1) * projector(layout, label, 2)


def _absorption_weight(layout: SpaceLayout, label: str, table: RateTable) -> SparseOperator:
    return table.get(0, 1) * projector(layout, label, 0) + table.get(1, 2) * projector(layout, label, 1)


def emission_current_functional(layout: SpaceLayout, labels, tables) -> CurrentFunctional:
    """Excitations per unit time decaying to the bath through the given qutrits.

    This is the decay-only current used at the standard bias points, where
    the receiving bath is empty and absorption vanishes identically.
    """
    labels = list(labels)
    w = _emission_weight(layout, labels[0], tables[labels[0]])
    for label in labels[1:]:
        w = w + _emission_weight(layout, label, tables[label])
    return CurrentFunctional("emission_current_" + "_".join(labels), w)


def net_bath_current_functional(layout: SpaceLayout, labels, tables) -> CurrentFunctional:
    """Net excitation current into the bath (emission minus absorption)."""
    labels = list(labels)
    w = None
    for label in labels:
        term = _emission_weight(layout, label, tables[label]) - _absorption_weight(layout, label, tables[label])
        w = term if w is None else w + term
    return CurrentFunctional("net_bath_current_" + "_".join(labels), w)


def markov_current_parallel(rho_ss: DensityMatrix, tables: dict[str, RateTable], direction: str) -> float:
    """Bias current of the parallel circuit from level populations.

    ``direction="forward"`` sums the right-bath decay over both qutrits;
    ``direction="reverse"`` returns minus the left-bath decay sum, so the
    reverse current is reported as a nonpositive number.
    """
    if direction == "forward":
        return emission_current_functional(rho_ss.layout, ("D1", "D2"), tables).value(rho_ss)
    if direction == "reverse":
        return -emission_current_functional(rho_ss.layout, ("D1", "D2"), tables).value(rho_ss)
    raise ValueError(f"direction must be 'forward' or 'reverse', got {direction!r}")


def markov_current_series(rho_ss: DensityMatrix, tables: dict[str, RateTable], direction: str) -> float:
    """Bias current of the series circuit: D2 feeds the right bath in
    forward bias, D1 feeds the left bath (with negative sign) in reverse."""
    if direction == "forward":
        return emission_current_functional(rho_ss.layout, ("D2",), tables).value(rho_ss)
    if direction == "reverse":
        return -emission_current_functional(rho_ss.layout, ("D1",), tables).value(rho_ss)
    raise ValueError(f"direction must be 'forward' or 'reverse', got {direction!r}")


def rectification(j_forward: float, j_reverse: float) -> float:
    """Diode quality -J_f / J_r; +inf when the reverse current vanishes."""
    if abs(j_reverse) < RECTIFICATION_CURRENT_FLOOR:
        return math.inf
    return -j_forward / j_reverse


def effective_temperature(mean_n: float) -> float:
    """Temperature (units of the mode frequency) of a thermal state with
    occupation ``mean_n``; returns 0 for mean_n <= 0 (log divergence)."""
    if mean_n <= 0:
        return 0.0
    return 1.0 / (math.log(mean_n + 1.0) - math.log(mean_n))


def thermal_population(mean_n: float, n: int) -> float:
    """Fock-level population <n|rho|n> of a thermal state with mean ``mean_n``."""
    if mean_n < 0:
        raise ValueError(f"mean_n must be nonnegative, got {mean_n}")
    if n < 0:
        raise ValueError(f"level must be nonnegative, got {n}")
    if mean_n == 0:
        return 1.0 if n == 0 else 0.0
    return mean_n ** n / (1.0 + mean_n) ** (n + 1)


def thermal_state_matrix(dim: int, mean_n: float) -> np.ndarray:
    """Thermal density matrix truncated to ``dim`` levels and renormalized."""
    pops = np.array([thermal_population(mean_n, k) for k in range(dim)])
    return np.diag(pops / pops.sum()).astype(np.complex128)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(matrix)
    if vals[0] < -1e-8:
        raise ValueError(f"matrix has negative eigenvalue {vals[0]:.3e}; not a state")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def fidelity(rho1: DensityMatrix, rho2: DensityMatrix) -> float:
    """Uhlmann fidelity [tr sqrt(sqrt(rho1) rho2 sqrt(rho1))]^2 in [0, 1]."""
    if rho1.layout != rho2.layout:
        raise ValueError("states live on different layouts")
    s1 = _psd_sqrt(rho1.data)
    inner = s1 @ rho2.data @ s1
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    if vals[0] < -1e-8:
        raise ValueError(f"fidelity kernel has negative eigenvalue {vals[0]:.3e}")
    root_sum = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    return min(root_sum ** 2, 1.0)


@dataclass
class ModeReport:
    """Occupation, effective temperature, and populations of one mode."""

    label: str
    mean_n: float
    effective_T: float
    effective_T_defined: bool
    populations: np.ndarray
    reduced: DensityMatrix


def mode_report(rho: DensityMatrix, label: str) -> ModeReport:
    reduced = partial_trace(rho, [label])
    mean_n = float(np.real(reduced.expectation(number_op(reduced.layout, label))))
    pops = np.real(np.diag(reduced.data)).copy()
    defined = mean_n > 0
    return ModeReport(
        label=label,
        mean_n=mean_n,
        effective_T=effective_temperature(mean_n),
        effective_T_defined=defined,
        populations=pops,
        reduced=reduced,
    )
