"""Field sweeps, transition branches, line strengths and crossing detection.

A sweep diagonalises the (ion or ion+magnon) Hamiltonian on a field grid,
computes transition frequencies from the global ground state together
with magnetic-dipole line strengths, and connects levels across field
steps by eigenvector overlap so that each branch keeps its identity
through crossings. Branch frequencies are reported relative to a
reference line (by default the zero-field transition into the lowest
excited-manifold level of sublattice 1) so that the energy zero never
matters.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .angular import AngularBasis, HalfInt, OperatorMatrix
from .constants import MU_B_OVER_H
from .ion import ErbiumModel, ModelParams, Sublattice
from .magnon import CompositeBasis, MagnonSpace, build_H_ErGd, spin_deviation_ops

__all__ = [
    "SpectralMap",
    "Branch",
    "TrackingLossWarning",
    "CrossingResult",
    "eigensolve",
    "field_sweep",
    "transition_strengths",
    "track_levels",
    "find_avoided_crossing",
    "export_map",
    "load_map",
    "count_lines",
    "default_reference",
]

# Cartesian components feeding each polarization channel. The z (c-axis)
# magnetic-dipole component is taken as the pi channel; overridable per
# call for parameter sets following another mapping.
DEFAULT_CHANNELS = {"sigma": ("x", "y"), "pi": ("z",)}

HERMITICITY_TOL = 1e-9


class TrackingLossWarning(UserWarning):
    """Emitted when branch tracking cannot confidently match a level."""


def eigensolve(H: OperatorMatrix):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian H.

    Raises ValueError when the input fails the Hermiticity check.
    """
    defect = H.hermiticity_defect()
    if defect > HERMITICITY_TOL:
        raise ValueError(f"matrix is not Hermitian (relative defect {defect:.2e})")
    vals, vecs = np.linalg.eigh(H.entries)
    return vals, vecs


def track_levels(prev_vecs: np.ndarray, cur_vecs: np.ndarray,
                 field: float | None = None) -> np.ndarray:
    """Permutation matching previous eigenvectors to current ones.

    perm[i] is the current-eigenvector column continuing previous column
    i, chosen greedily by descending squared overlap with deterministic
    index tie-breaks. A TrackingLossWarning (tagged with the field value
    when given) is emitted whenever a state's best remaining overlap
    falls below 0.5.
    """
    if prev_vecs.shape != cur_vecs.shape:
        raise ValueError("eigenvector sets must have identical shape")
    n = prev_vecs.shape[1]
    overlap = np.abs(prev_vecs.conj().T @ cur_vecs) ** 2
    perm = np.full(n, -1, dtype=int)
    taken = np.zeros(n, dtype=bool)
    # Greedy assignment in order of descending overlap; ties resolved by
    # (previous index, current index) so reruns are identical.
    flat = np.argsort(-overlap, axis=None, kind="stable")
    assigned = 0
    lost = []
    for k in flat:
        i, j = divmod(int(k), n)
        if perm[i] >= 0 or taken[j]:
            continue
        perm[i] = j
        taken[j] = True
        if overlap[i, j] < 0.5:
            lost.append(i)
        assigned += 1
        if assigned == n:
            break
    if lost:
        where = f" at B={field:g} T" if field is not None else ""
        warnings.warn(
            f"tracking loss{where}: best overlap < 0.5 for states {lost}",
            TrackingLossWarning,
            stacklevel=2,
        )
    return perm


def transition_strengths(eigvals: np.ndarray, eigvecs: np.ndarray,
                         dipole_ops: dict, ground_index: int = 0,
                         polarization: str = "average",
                         channels: dict | None = None) -> np.ndarray:
    """Relative magnetic-dipole strengths |<f|L_q+2S_q|0>|^2 per level.

    Cartesian components are summed over the channel's members; the
    ``average`` polarization is the mean of the sigma and pi channels.
    The ground state's own entry (the zero-frequency 'transition') is
    set to zero.
    """
    if channels is None:
        channels = DEFAULT_CHANNELS
    ground = eigvecs[:, ground_index]

    def channel_sum(components):
        total = np.zeros(eigvals.shape[0])
        for c in components:
            total += np.abs(eigvecs.conj().T @ (dipole_ops[c] @ ground)) ** 2
        return total

    if polarization == "average":
        out = 0.5 * (channel_sum(channels["sigma"]) + channel_sum(channels["pi"]))
    elif polarization == "unpolarized":
        out = channel_sum(channels["sigma"]) + channel_sum(channels["pi"])
    elif polarization in channels:
        out = channel_sum(channels[polarization])
    else:
        raise ValueError(f"unknown polarization {polarization!r}")
    out[ground_index] = 0.0
    return out


@dataclass
class Branch:
    """One tracked transition trace over the field grid."""

    sublattice: int
    label: str
    freq: np.ndarray
    strength_sigma: np.ndarray
    strength_pi: np.ndarray
    in_window: np.ndarray

    def strength(self, polarization: str = "average") -> np.ndarray:
        if polarization == "sigma":
            return self.strength_sigma
        if polarization == "pi":
            return self.strength_pi
        if polarization == "average":
            return 0.5 * (self.strength_sigma + self.strength_pi)
        if polarization == "unpolarized":
            return self.strength_sigma + self.strength_pi
        raise ValueError(f"unknown polarization {polarization!r}")


@dataclass
class SpectralMap:
    """Branches of ground-state transitions over an ordered field grid."""

    fields: np.ndarray
    reference: float
    branches: list = field(default_factory=list)

    def branch(self, label: str) -> Branch:
        for b in self.branches:
            if b.label == label:
                return b
        available = ", ".join(b.label for b in self.branches)
        raise KeyError(f"no branch {label!r}; available: {available}")

    def labels(self, sublattice: int | None = None) -> list:
        return [
            b.label
            for b in self.branches
            if sublattice is None or b.sublattice == sublattice
        ]


def default_reference(params: ModelParams, basis: AngularBasis | None = None,
                      corr_mode: str = "projector",
                      with_magnons: bool = False) -> float:
    """Zero-field transition (GHz) into the lowest excited-manifold level
    of sublattice 1.

    Computed from the same model family that is being swept (ion-only or
    magnon-coupled), so the magnon-induced common shift of all lines
    never leaks into relative frequencies.
    """
    if basis is None:
        basis = AngularBasis.erbium_4I()
    engine = _SweepEngine(params, 1, with_magnons, basis, corr_mode)
    vals, vecs = np.linalg.eigh(engine.hamiltonian(0.0))
    excited = HalfInt(13)
    blk = basis.block_slice(excited)
    magnon_dim = vals.shape[0] // basis.dim
    for idx in range(vals.shape[0]):
        weight = np.sum(
            np.abs(vecs[:, idx].reshape(basis.dim, magnon_dim)[blk]) ** 2
        )
        if weight > 0.5:
            return float(vals[idx] - vals[0])
    raise ValueError("no excited-manifold level found for the reference")


class _SweepEngine:
    """Hamiltonian factory H(B) = H0 + B*G for one sublattice."""

    def __init__(self, params: ModelParams, sublattice, with_magnons: bool,
                 basis: AngularBasis, corr_mode: str):
        sub = Sublattice.of(sublattice)
        ion = ErbiumModel(params, sub, basis, corr_mode=corr_mode)
        if not with_magnons:
            self.H0 = ion.H0
            self.G = ion.field_generator
            self.dipole_ops = ion.dipole_ops
            return
        space = MagnonSpace(params.NGd)
        comp = CompositeBasis(basis, space)
        sgx, _, sgz = (op.entries for op in spin_deviation_ops(space))
        th = math.radians(params.theta)
        gd_static = MU_B_OVER_H * params.gGd * params.B0Gd * sgz
        gd_field = MU_B_OVER_H * params.gGd * (
            math.cos(th) * sgz + math.sin(th) * sgx
        )
        # Sublattice 2 sees the applied field reversed relative to its own
        # (mirrored) magnon branch, so that branch stiffens with field.
        field_sign = sub.sign
        self.H0 = (
            comp.lift_ion(ion.H0)
            + comp.lift_magnon(gd_static)
            + build_H_ErGd(params, basis, space).entries
        )
        self.G = comp.lift_ion(ion.field_generator) + field_sign * comp.lift_magnon(
            gd_field
        )
        self.dipole_ops = {c: comp.lift_ion(op) for c, op in ion.dipole_ops.items()}

    def hamiltonian(self, B: float) -> np.ndarray:
        return self.H0 + B * self.G


def field_sweep(params: ModelParams, b_range, steps: int,
                sublattices=(1, 2), with_magnons: bool = False,
                window=(-100.0, 200.0), reference: float | None = None,
                polarization_channels: dict | None = None,
                basis: AngularBasis | None = None,
                corr_mode: str = "projector", threads: int = 1) -> SpectralMap:
    """Sweep the applied field and build the map of ground-state transitions.

    b_range is (b_min, b_max) in tesla with |B| <= 3; steps >= 2 grid
    points. Branches are tracked by eigenvector overlap; a branch is kept
    when its frequency falls inside ``window`` (GHz, relative to
    ``reference``) at one or more field points. An empty window yields an
    empty-branch warning rather than a failure.
    """
    b_min, b_max = float(b_range[0]), float(b_range[1])
    if not (-3.0 <= b_min <= 3.0 and -3.0 <= b_max <= 3.0):
        raise ValueError("field range must lie within [-3, 3] T")
    if steps < 2:
        raise ValueError("a sweep needs at least 2 field steps")
    if basis is None:
        basis = AngularBasis.erbium_4I()
    if reference is None:
        reference = default_reference(params, basis, corr_mode=corr_mode)
    fields = np.linspace(b_min, b_max, steps)
    channels = polarization_channels or DEFAULT_CHANNELS

    spectral = SpectralMap(fields=fields, reference=reference)
    for sub in sublattices:
        engine = _SweepEngine(params, sub, with_magnons, basis, corr_mode)
        hams = [engine.hamiltonian(B) for B in fields]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                solved = list(pool.map(np.linalg.eigh, hams))
        else:
            solved = [np.linalg.eigh(h) for h in hams]

        dim = solved[0][0].shape[0]
        # Track every level; the permutation chain maps the level order at
        # the first field point onto each later point.
        chain = np.arange(dim)
        freq = np.empty((steps, dim))
        sig = np.empty((steps, dim))
        pi = np.empty((steps, dim))
        prev_vecs = None
        for k, (vals, vecs) in enumerate(solved):
            if prev_vecs is not None:
                perm = track_levels(prev_vecs, vecs, field=float(fields[k]))
                chain = perm[chain]
            prev_vecs = vecs
            rel = (vals - vals[0]) - reference
            s_sig = transition_strengths(vals, vecs, engine.dipole_ops,
                                         polarization="sigma", channels=channels)
            s_pi = transition_strengths(vals, vecs, engine.dipole_ops,
                                        polarization="pi", channels=channels)
            freq[k] = rel[chain]
            sig[k] = s_sig[chain]
            pi[k] = s_pi[chain]

        lo, hi = window
        masks = (freq >= lo) & (freq <= hi)
        # Trace 0 is the ground state at the first field point, not a
        # transition; every other trace that enters the window becomes a
        # branch, ranked by its frequency at the first field point.
        kept = [t for t in range(1, dim) if masks[:, t].any()]
        kept.sort(key=lambda t: freq[0, t])
        if not kept:
            warnings.warn(
                f"window {window} contains no levels for sublattice {sub}",
                UserWarning,
                stacklevel=2,
            )
        for rank, trace in enumerate(kept, start=1):
            spectral.branches.append(
                Branch(
                    sublattice=Sublattice.of(sub).label,
                    label=f"S{Sublattice.of(sub).label}:T{rank:02d}",
                    freq=freq[:, trace].copy(),
                    strength_sigma=sig[:, trace].copy(),
                    strength_pi=pi[:, trace].copy(),
                    in_window=masks[:, trace].copy(),
                )
            )
    return spectral


@dataclass
class CrossingResult:
    """Location and size of a minimum branch separation."""

    found: bool
    field: float
    gap: float


def find_avoided_crossing(spectral: SpectralMap, branch_a: str,
                          branch_b: str) -> CrossingResult:
    """Minimum |f_a - f_b| between two branches, quadratically refined.

    Only field points where both branches are in-window enter. When the
    separation is monotone over the overlap range (no interior local
    minimum) the result carries found=False together with the boundary
    minimum for diagnostics.
    """
    a = spectral.branch(branch_a)
    b = spectral.branch(branch_b)
    both = a.in_window & b.in_window
    if both.sum() < 3:
        raise ValueError("branches share fewer than 3 in-window field points")
    fields = spectral.fields[both]
    sep = np.abs(a.freq[both] - b.freq[both])
    k = int(np.argmin(sep))
    if k == 0 or k == len(sep) - 1:
        return CrossingResult(found=False, field=float(fields[k]), gap=float(sep[k]))
    # Quadratic refinement through the three points around the minimum.
    x = fields[k - 1:k + 2]
    y = sep[k - 1:k + 2]
    denom = (x[0] - x[1]) * (x[0] - x[2]) * (x[1] - x[2])
    a2 = (x[2] * (y[1] - y[0]) + x[1] * (y[0] - y[2]) + x[0] * (y[2] - y[1])) / denom
    b1 = (x[2] ** 2 * (y[0] - y[1]) + x[1] ** 2 * (y[2] - y[0])
          + x[0] ** 2 * (y[1] - y[2])) / denom
    c0 = (x[1] * x[2] * (x[1] - x[2]) * y[0] + x[2] * x[0] * (x[2] - x[0]) * y[1]
          + x[0] * x[1] * (x[0] - x[1]) * y[2]) / denom
    if a2 <= 0:
        return CrossingResult(found=True, field=float(fields[k]), gap=float(sep[k]))
    b_star = -b1 / (2 * a2)
    b_star = float(np.clip(b_star, x[0], x[2]))
    gap = float(a2 * b_star ** 2 + b1 * b_star + c0)
    return CrossingResult(found=True, field=b_star, gap=gap)


def count_lines(spectral: SpectralMap, field_index: int,
                tol: float = 1e-3) -> int:
    """Distinct in-window transition frequencies at one field point.

    Frequencies closer than ``tol`` GHz count once, so the sublattice-
    degenerate zero-field spectrum is counted physically.
    """
    freqs = sorted(
        b.freq[field_index]
        for b in spectral.branches
        if b.in_window[field_index]
    )
    count = 0
    last = None
    for f in freqs:
        if last is None or f - last > tol:
            count += 1
        last = f
    return count


_CSV_HEADER = ["field_T", "sublattice", "branch_label", "freq_GHz",
               "strength_sigma", "strength_pi"]


def export_map(spectral: SpectralMap, destination,
               header_comment: str | None = None) -> None:
    """Write the map as CSV, field-major then sublattice then label.

    Floats are written with shortest round-trip formatting, so a load
    followed by an export reproduces the file byte for byte. Only
    in-window points become rows; an empty map yields a header-only file.
    """
    with open(destination, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(f"# reference_GHz={spectral.reference!r}\n")
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        order = sorted(
            range(len(spectral.branches)),
            key=lambda i: (spectral.branches[i].sublattice,
                           spectral.branches[i].label),
        )
        for k, B in enumerate(spectral.fields):
            for i in order:
                b = spectral.branches[i]
                if not b.in_window[k]:
                    continue
                writer.writerow([
                    repr(float(B)), b.sublattice, b.label,
                    repr(float(b.freq[k])),
                    repr(float(b.strength_sigma[k])),
                    repr(float(b.strength_pi[k])),
                ])


def load_map(path) -> SpectralMap:
    """Rebuild a SpectralMap from an exported CSV.

    Masked (out-of-window) points are NaN in the reconstructed traces.
    """
    reference = 0.0
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                if "reference_GHz=" in line:
                    reference = float(line.split("reference_GHz=")[1])
                continue
            rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    if header != _CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    data = list(reader)
    fields = sorted({float(r[0]) for r in data})
    index = {B: k for k, B in enumerate(fields)}
    branches = {}
    for r in data:
        key = (int(r[1]), r[2])
        if key not in branches:
            branches[key] = {
                "freq": np.full(len(fields), np.nan),
                "sig": np.full(len(fields), np.nan),
                "pi": np.full(len(fields), np.nan),
            }
        k = index[float(r[0])]
        branches[key]["freq"][k] = float(r[3])
        branches[key]["sig"][k] = float(r[4])
        branches[key]["pi"][k] = float(r[5])
    out = SpectralMap(fields=np.array(fields), reference=reference)
    for (sub, label), tr in sorted(branches.items()):
        mask = ~np.isnan(tr["freq"])
        out.branches.append(Branch(
            sublattice=sub, label=label, freq=tr["freq"],
            strength_sigma=tr["sig"], strength_pi=tr["pi"], in_window=mask,
        ))
    return out
