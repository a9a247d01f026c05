"""Single-ion erbium Hamiltonian in the antiferromagnetically ordered host.

The full ion Hamiltonian is the sum of five terms: free-ion spin-orbit
coupling (with per-manifold energy offsets standing in for the
configuration-level Coulomb terms), the crystal field of the D2d site,
Zeeman coupling to the applied field, the static mean field of the
ordered gadolinium neighbours, and a projective correction that offsets
the first excited J manifold. Everything is assembled in GHz over the
52-state 4I term basis; crystal-field and free-ion parameters are
accepted in cm^-1 and converted at the boundary.

The restricted single-term basis means the Coulomb parameters F2, F4, F6
and the global offset E0 are carried in ModelParams for completeness but
act only through ``manifold_offsets``; refitting against full
multi-configuration level data is out of scope.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .angular import (
    AngularBasis,
    HalfInt,
    OperatorMatrix,
    load_reduced_elements,
    orbital_operator,
    spin_operator,
    tensor_operator,
)
from .constants import CM1_TO_GHZ, MU_B_OVER_H

__all__ = [
    "ModelParams",
    "Sublattice",
    "ErbiumModel",
    "build_H_FI",
    "build_H_CF",
    "build_H_Z",
    "build_H_MF",
    "build_H_corr",
    "assemble_H_Er",
]

# JSON keys of the parameter file, in canonical order.
PARAM_KEYS = [
    "E0", "F2", "F4", "F6", "zeta",
    "B20", "B40", "B60", "B44", "B64",
    "Ecorr", "Bex", "Bdip", "B0Gd", "Jeff",
    "theta", "gGd", "NGd",
]

THETA_BOUND_DEG = 10.0


def _parse_halfint_key(key: str) -> HalfInt:
    if "/" in key:
        num, den = key.split("/")
        if int(den) != 2:
            raise ValueError(f"bad half-integer key {key!r}")
        return HalfInt(int(num))
    return HalfInt.of(float(key))


@dataclass(frozen=True)
class ModelParams:
    """All physical model parameters.

    Energies in cm^-1 (E0, F2, F4, F6, zeta, B20..B64, Ecorr, Jeff),
    fields in tesla (Bex, Bdip, B0Gd), theta in degrees, gGd
    dimensionless, NGd a positive integer. ``manifold_offsets`` maps J to
    a uniform cm^-1 shift of that manifold.
    """

    E0: float = 0.0
    F2: float = 0.0
    F4: float = 0.0
    F6: float = 0.0
    zeta: float = 0.0
    B20: float = 0.0
    B40: float = 0.0
    B60: float = 0.0
    B44: float = 0.0
    B64: float = 0.0
    Ecorr: float = 0.0
    Bex: float = 0.0
    Bdip: float = 0.0
    B0Gd: float = 0.0
    Jeff: float = 0.0
    theta: float = 0.0
    gGd: float = 2.0
    NGd: int = 2
    manifold_offsets: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(self.theta) > THETA_BOUND_DEG:
            raise ValueError(
                f"|theta| <= {THETA_BOUND_DEG} deg violated: theta={self.theta}"
            )
        if self.NGd < 1:
            raise ValueError(f"NGd must be >= 1, got {self.NGd}")
        offsets = {
            HalfInt.of(k) if not isinstance(k, str) else _parse_halfint_key(k): v
            for k, v in self.manifold_offsets.items()
        }
        object.__setattr__(self, "manifold_offsets", offsets)

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    @staticmethod
    def defaults() -> "ModelParams":
        """The fitted Er:GdVO4 parameter set bundled with the package."""
        text = resources.files("ergvo").joinpath("data/er_gdvo4.json").read_text()
        return ModelParams.from_dict(json.loads(text))

    @staticmethod
    def from_dict(data: dict) -> "ModelParams":
        unknown = set(data) - set(PARAM_KEYS) - {"manifold_offsets"}
        if unknown:
            raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
        return ModelParams(**data)

    @staticmethod
    def from_json(path) -> "ModelParams":
        with open(path) as fh:
            return ModelParams.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {key: getattr(self, key) for key in PARAM_KEYS}
        out["manifold_offsets"] = {repr(J): v for J, v in self.manifold_offsets.items()}
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class Sublattice:
    """One of the two oppositely magnetised gadolinium spin families."""

    label: int

    def __post_init__(self):
        if self.label not in (1, 2):
            raise ValueError(f"sublattice label must be 1 or 2, got {self.label}")

    @property
    def sign(self) -> int:
        return 1 if self.label == 1 else -1

    @staticmethod
    def of(value) -> "Sublattice":
        if isinstance(value, Sublattice):
            return value
        return Sublattice(int(value))


SUBLATTICE_1 = Sublattice(1)
SUBLATTICE_2 = Sublattice(2)


def build_H_FI(params: ModelParams, basis: AngularBasis) -> OperatorMatrix:
    """Free-ion term: lambda L.S with lambda = -zeta/(2S), plus manifold offsets.

    The negative lambda gives the inverted multiplet of the
    more-than-half-filled f shell (J = L+S lowest). Output in GHz.
    """
    s = basis.S.value
    lam = -params.zeta / (2 * s)
    ls = sum(
        (orbital_operator(c, basis) @ spin_operator(c, basis)).entries
        for c in "xyz"
    )
    h = lam * ls
    for J, off in params.manifold_offsets.items():
        blk = basis.block_slice(J)
        h[blk, blk] += off * np.eye(blk.stop - blk.start)
    return OperatorMatrix(basis, h * CM1_TO_GHZ, units="GHz")


def build_H_CF(params: ModelParams, basis: AngularBasis,
               reduced: dict | None = None, sign: int = 1) -> OperatorMatrix:
    """Crystal field of the D2d site: B20, B40, B60 axial plus B44, B64.

    ``sign`` is forwarded to tensor_operator to flip the tensor phase
    convention if a parameter set from differently-conventioned
    literature is used.
    """
    if reduced is None:
        reduced = load_reduced_elements()
    terms = [
        (params.B20, 2, 0),
        (params.B40, 4, 0),
        (params.B60, 6, 0),
        (params.B44, 4, 4),
        (params.B64, 6, 4),
    ]
    h = np.zeros((basis.dim, basis.dim), dtype=complex)
    for coeff, k, q in terms:
        if coeff == 0.0:
            continue
        op = tensor_operator(k, q, basis, reduced[k], sign=sign).entries
        if q != 0:
            op = op + tensor_operator(k, -q, basis, reduced[k], sign=sign).entries
        h += coeff * op
    return OperatorMatrix(basis, h * CM1_TO_GHZ, units="GHz")


def build_H_Z(B: float, theta: float, basis: AngularBasis) -> OperatorMatrix:
    """Zeeman term (muB/h) B.(L+2S) for B = B(cos(theta) z + sin(theta) x).

    B in tesla, theta in degrees (misalignment towards x); output in GHz.
    """
    if not math.isfinite(B):
        raise ValueError(f"field must be finite, got {B}")
    th = math.radians(theta)
    gz = (orbital_operator("z", basis) + 2 * spin_operator("z", basis)).entries
    gx = (orbital_operator("x", basis) + 2 * spin_operator("x", basis)).entries
    h = MU_B_OVER_H * B * (math.cos(th) * gz + math.sin(th) * gx)
    return OperatorMatrix(basis, h, units="GHz")


def build_H_MF(params: ModelParams, sublattice, basis: AngularBasis) -> OperatorMatrix:
    """Static mean field of the ordered neighbours, along the easy axis.

    sign(sublattice) * (muB/h) * [Bex*Sz + Bdip*(Lz+2Sz)], in GHz.
    """
    sub = Sublattice.of(sublattice)
    sz = spin_operator("z", basis).entries
    gz = (orbital_operator("z", basis) + 2 * spin_operator("z", basis)).entries
    h = sub.sign * MU_B_OVER_H * (params.Bex * sz + params.Bdip * gz)
    return OperatorMatrix(basis, h, units="GHz")


def _select_excited_manifold(basis: AngularBasis, eigvecs: np.ndarray,
                             J_target=HalfInt(13)) -> np.ndarray:
    """Columns of eigvecs whose dominant J character is J_target.

    Raises when any state has no J manifold with weight > 0.5, naming the
    offending eigenstate index.
    """
    selected = []
    for idx in range(eigvecs.shape[1]):
        weights = basis.j_weights(eigvecs[:, idx])
        best_J = max(weights, key=weights.get)
        if weights[best_J] <= 0.5:
            raise ValueError(
                f"eigenstate {idx} has ambiguous J character "
                f"(max weight {weights[best_J]:.3f} <= 0.5)"
            )
        if best_J == J_target:
            selected.append(idx)
    expected = J_target.twice + 1
    if len(selected) != expected:
        raise ValueError(
            f"expected {expected} states with dominant J={J_target}, "
            f"found {len(selected)}"
        )
    return eigvecs[:, selected]


def build_H_corr(params: ModelParams, H_zero_field: OperatorMatrix,
                 mode: str = "projector") -> OperatorMatrix:
    """Projective correction offsetting the first excited J manifold.

    H_zero_field is the B = 0 reference (free ion + crystal field + mean
    field); its eigenvectors with dominant J = 13/2 character define the
    corrected subspace. mode="projector" (default) applies
    Ecorr * sum_i |psi_i><psi_i|; mode="block" applies the literal
    all-pairs sum_{i,j} |psi_i><psi_j|, which is rank one and depends on
    the eigenvector phases - kept only as a documented alternative
    reading.
    """
    basis = H_zero_field.basis
    if params.Ecorr == 0.0:
        return OperatorMatrix(basis, np.zeros_like(H_zero_field.entries), units="GHz")
    _, vecs = np.linalg.eigh(H_zero_field.entries)
    sel = _select_excited_manifold(basis, vecs)
    if mode == "projector":
        proj = sel @ sel.conj().T
    elif mode == "block":
        u = sel.sum(axis=1)
        proj = np.outer(u, u.conj())
    else:
        raise ValueError(f"unknown correction mode {mode!r}")
    return OperatorMatrix(basis, params.Ecorr * CM1_TO_GHZ * proj, units="GHz")


def assemble_H_Er(params: ModelParams, B: float, sublattice,
                  basis: AngularBasis | None = None,
                  corr_mode: str = "projector") -> OperatorMatrix:
    """Full single-ion Hamiltonian at applied field B (tesla), in GHz."""
    if basis is None:
        basis = AngularBasis.erbium_4I()
    h_static = (
        build_H_FI(params, basis)
        + build_H_CF(params, basis)
        + build_H_MF(params, sublattice, basis)
    )
    h_corr = build_H_corr(params, h_static, mode=corr_mode)
    return h_static + h_corr + build_H_Z(B, params.theta, basis)


class ErbiumModel:
    """Precomputed field-sweep form of the ion Hamiltonian.

    The field-independent part (free ion + crystal field + mean field +
    correction, with the correction projector frozen at the construction
    parameters as is done before fitting) is built once; hamiltonian(B)
    then costs two scaled matrix additions.
    """

    def __init__(self, params: ModelParams, sublattice,
                 basis: AngularBasis | None = None,
                 corr_mode: str = "projector"):
        if basis is None:
            basis = AngularBasis.erbium_4I()
        self.params = params
        self.sublattice = Sublattice.of(sublattice)
        self.basis = basis
        h_static = (
            build_H_FI(params, basis)
            + build_H_CF(params, basis)
            + build_H_MF(params, self.sublattice, basis)
        )
        self.H0 = (h_static + build_H_corr(params, h_static, mode=corr_mode)).entries
        gz = (orbital_operator("z", basis) + 2 * spin_operator("z", basis)).entries
        gx = (orbital_operator("x", basis) + 2 * spin_operator("x", basis)).entries
        th = math.radians(params.theta)
        self.field_generator = MU_B_OVER_H * (math.cos(th) * gz + math.sin(th) * gx)
        # Magnetic-dipole operators for line strengths.
        self.dipole_ops = {
            c: (orbital_operator(c, basis) + 2 * spin_operator(c, basis)).entries
            for c in "xyz"
        }

    @property
    def dim(self) -> int:
        return self.basis.dim

    def hamiltonian(self, B: float) -> np.ndarray:
        """Dense GHz Hamiltonian at applied field B (tesla)."""
        return self.H0 + B * self.field_generator
