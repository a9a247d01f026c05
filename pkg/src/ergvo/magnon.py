"""Truncated magnon space for the nearest-neighbour gadolinium sublattice.

The collective spin of the sublattice is bosonised with spin-deviation
operators carrying a square-root dressing that enforces the finite-spin
ceiling; the space is truncated at NGd deviations, so all operators are
(NGd+1) x (NGd+1). The longitudinal component keeps only the deviation
part, S_z = -a^dag a; the constant N/2 term is absorbed into the static
mean exchange field acting on the erbium.

The erbium couples to its four nearest neighbours only, which shows up
as the 1/sqrt(NGd/2) normalisation of the Heisenberg coupling. Note the
normalisation is applied to the longitudinal product as well, making
that term truncation-dependent; this follows the model definition
literally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .angular import AngularBasis, OperatorMatrix, spin_operator
from .constants import CM1_TO_GHZ, MU_B_OVER_H
from .ion import ModelParams

__all__ = [
    "MagnonSpace",
    "CompositeBasis",
    "spin_deviation_ops",
    "build_H_Gd",
    "build_H_ErGd",
    "compose",
]


@dataclass(frozen=True)
class MagnonSpace:
    """Fock space truncated at NGd spin deviations."""

    NGd: int

    def __post_init__(self):
        if self.NGd < 1:
            raise ValueError(f"NGd must be >= 1, got {self.NGd}")

    @property
    def dim(self) -> int:
        return self.NGd + 1


@dataclass(frozen=True)
class CompositeBasis:
    """Ion-major tensor product of the term basis with the magnon space."""

    ion: AngularBasis
    magnon: MagnonSpace

    @property
    def dim(self) -> int:
        return self.ion.dim * self.magnon.dim

    def lift_ion(self, op: np.ndarray) -> np.ndarray:
        return np.kron(op, np.eye(self.magnon.dim))

    def lift_magnon(self, op: np.ndarray) -> np.ndarray:
        return np.kron(np.eye(self.ion.dim), op)


def spin_deviation_ops(space: MagnonSpace):
    """Sublattice spin components (Sx, Sy, Sz) in the truncated Fock basis.

    Built from truncated a, a^dag with the dressing (I - n/NGd)^(1/2)
    ordered left of a and right of a^dag; Sz = -a^dag a.
    """
    n_max = space.NGd
    dim = space.dim
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    adag = a.T
    dress = np.diag(np.sqrt(1.0 - np.arange(dim) / n_max))
    half_root_n = math.sqrt(n_max) / 2
    sx = half_root_n * (dress @ a + adag @ dress)
    sy = 1j * half_root_n * (dress @ a - adag @ dress)
    sz = -np.diag(np.arange(dim, dtype=float))
    return (
        OperatorMatrix(space, sx),
        OperatorMatrix(space, sy),
        OperatorMatrix(space, sz),
    )


def build_H_Gd(B: float, theta: float, params: ModelParams,
               space: MagnonSpace) -> OperatorMatrix:
    """Gadolinium Zeeman term (muB/h) gGd [B.S_Gd + B0Gd S_Gd,z], in GHz.

    The applied field carries the same x misalignment as the erbium
    Zeeman term.
    """
    sx, _, sz = (op.entries for op in spin_deviation_ops(space))
    th = math.radians(theta)
    h = MU_B_OVER_H * params.gGd * (
        B * (math.cos(th) * sz + math.sin(th) * sx) + params.B0Gd * sz
    )
    return OperatorMatrix(space, h, units="GHz")


def build_H_ErGd(params: ModelParams, ion_basis: AngularBasis,
                 space: MagnonSpace) -> OperatorMatrix:
    """Heisenberg coupling -2 Jeff / sqrt(NGd/2) * S_Er . S_Gd, in GHz.

    Jeff is taken from params in cm^-1. The output lives on the composite
    (ion-major) basis.
    """
    comp = CompositeBasis(ion_basis, space)
    jeff_ghz = params.Jeff * CM1_TO_GHZ
    pref = -2.0 * jeff_ghz / math.sqrt(space.NGd / 2.0)
    gd_ops = [op.entries for op in spin_deviation_ops(space)]
    er_ops = [spin_operator(c, ion_basis).entries for c in "xyz"]
    h = sum(np.kron(er, gd) for er, gd in zip(er_ops, gd_ops))
    return OperatorMatrix(comp, pref * h, units="GHz")


def compose(H_Er: OperatorMatrix, H_Gd: OperatorMatrix,
            H_int: OperatorMatrix) -> OperatorMatrix:
    """Total Hamiltonian H_Er x I + I x H_Gd + H_int on the composite basis."""
    comp = H_int.basis
    if not isinstance(comp, CompositeBasis):
        raise ValueError("interaction term must live on a CompositeBasis")
    if H_Er.dim != comp.ion.dim or H_Gd.dim != comp.magnon.dim:
        raise ValueError(
            f"dimension mismatch: ion {H_Er.dim} vs {comp.ion.dim}, "
            f"magnon {H_Gd.dim} vs {comp.magnon.dim}"
        )
    total = comp.lift_ion(H_Er.entries) + comp.lift_magnon(H_Gd.entries) + H_int.entries
    return OperatorMatrix(comp, total, units="GHz")
