"""Fitting model parameters to measured transition-frequency data.

The objective mixes two data tiers: field-dependent transition
frequencies relative to the reference line ("high_res", GHz) and
zero-field level energies ("low_res", cm^-1, referenced to the ground
level). Residuals are unit-normalised to GHz and the high-resolution
tier enters the squared objective with a 100:1 weight ratio over the
low-resolution tier, so the field-dependent data dominates without
discarding the level-energy constraint.

Optimisation is a bounded derivative-free simplex descent; branch
tracking inside the objective can relabel levels at kinks, which rules
out gradient methods. Two stages mirror the fitting protocol for this
material: first the ion-only model on magnon-unaffected points, then the
magnon-coupled model with the exchange strength freed, starting from the
stage-1 optimum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .angular import AngularBasis
from .constants import CM1_TO_GHZ
from .ion import ErbiumModel, ModelParams, THETA_BOUND_DEG
from .spectrum import SpectralMap, default_reference, field_sweep

__all__ = [
    "TransitionDatum",
    "FitReport",
    "SynthResult",
    "residuals",
    "optimize",
    "two_stage_fit",
    "synth_data",
    "transitions_to_csv",
    "transitions_from_csv",
]

# sqrt of the squared-residual tier ratio (100:1), applied after both
# tiers are expressed in GHz.
TIER_SCALE = {"high_res": 1.0, "low_res": 0.1}

ECORR_BOUND_CM1 = 10.0

# Default parameter bounds; theta and Ecorr carry the hard constraints of
# the fitting protocol and are always enforced.
HARD_BOUNDS = {
    "theta": (-THETA_BOUND_DEG, THETA_BOUND_DEG),
    "Ecorr": (-ECORR_BOUND_CM1, ECORR_BOUND_CM1),
}


@dataclass
class TransitionDatum:
    """One measured transition (high_res) or level energy (low_res).

    ``frequency`` is GHz relative to the reference line for the high_res
    tier and cm^-1 above the ground level for the low_res tier. ``label``
    names the model branch ("S1:T03") or the level index ("L16").
    ``exclude`` masks points deviated by magnon coupling from ion-only
    fits.
    """

    field: float
    frequency: float
    sublattice: int
    label: str
    tier: str = "high_res"
    weight: float = 1.0
    exclude: bool = False

    def __post_init__(self):
        if self.tier not in TIER_SCALE:
            raise ValueError(f"unknown tier {self.tier!r}")
        if not (math.isfinite(self.field) and math.isfinite(self.frequency)):
            raise ValueError("field and frequency must be finite")
        if self.weight <= 0:
            raise ValueError("weights must be positive")


@dataclass
class FitOptions:
    """Sweep settings shared by data synthesis and residual evaluation."""

    with_magnons: bool = False
    window: tuple = (-100.0, 200.0)
    corr_mode: str = "projector"
    respect_exclude: bool = False


def _model_branches(params: ModelParams, fields: np.ndarray, sublattice: int,
                    options: FitOptions) -> SpectralMap:
    if fields.size == 1:
        grid = (float(fields[0]), float(fields[0]) + 1e-4)
        steps = 2
    else:
        grid = (float(fields[0]), float(fields[-1]))
        steps = fields.size
    spectral = field_sweep(
        params, grid, steps, sublattices=(sublattice,),
        with_magnons=options.with_magnons, window=options.window,
        corr_mode=options.corr_mode,
    )
    return spectral


def residuals(params: ModelParams, data, options: FitOptions | None = None) -> np.ndarray:
    """Weighted residual vector (GHz) for the given data.

    High-resolution residuals are differences of reference-relative
    transition frequencies; the model is evaluated exactly at the data's
    field values. With magnons disabled, each datum is matched to the
    nearest ion-only branch at its field (the magnon-model labels have no
    ion-only counterpart); with magnons enabled, labels are matched
    exactly and an unknown label raises a diagnostic error listing the
    available branches. Low-resolution residuals compare ground-
    referenced level energies; their labels are level indices "L<k>".
    """
    if options is None:
        options = FitOptions()
    if not data:
        raise ValueError("no data to evaluate")
    out = []

    high = [d for d in data if d.tier == "high_res"
            and not (options.respect_exclude and d.exclude)]
    for sub in sorted({d.sublattice for d in high}):
        chunk = [d for d in high if d.sublattice == sub]
        fields = np.array(sorted({d.field for d in chunk}))
        spectral = _model_branches(params, fields, sub, options)
        index = {float(B): k for k, B in enumerate(fields)}
        freq_by_label = {b.label: b.freq for b in spectral.branches}
        branch_matrix = np.array([b.freq for b in spectral.branches])
        for d in chunk:
            k = index[float(d.field)]
            if options.with_magnons:
                if d.label not in freq_by_label:
                    raise KeyError(
                        f"label {d.label!r} not among model branches "
                        f"{sorted(freq_by_label)}"
                    )
                model = freq_by_label[d.label][k]
            else:
                model = branch_matrix[np.argmin(np.abs(branch_matrix[:, k] - d.frequency)), k]
            out.append(TIER_SCALE["high_res"] * d.weight * (model - d.frequency))

    low = [d for d in data if d.tier == "low_res"
           and not (options.respect_exclude and d.exclude)]
    if low:
        basis = AngularBasis.erbium_4I()
        for sub in sorted({d.sublattice for d in low}):
            chunk = [d for d in low if d.sublattice == sub]
            for B in sorted({d.field for d in chunk}):
                model = ErbiumModel(params, sub, basis, corr_mode=options.corr_mode)
                vals = np.linalg.eigvalsh(model.hamiltonian(B))
                energies_cm1 = (vals - vals[0]) / CM1_TO_GHZ
                for d in (x for x in chunk if x.field == B):
                    if not d.label.startswith("L"):
                        raise KeyError(
                            f"low_res labels are level indices 'L<k>', got {d.label!r}"
                        )
                    idx = int(d.label[1:])
                    if idx >= energies_cm1.size:
                        raise KeyError(f"level index {idx} out of range")
                    delta_ghz = (energies_cm1[idx] - d.frequency) * CM1_TO_GHZ
                    out.append(TIER_SCALE["low_res"] * d.weight * delta_ghz)
    return np.array(out)


def _tier_rms(params: ModelParams, data, options: FitOptions) -> dict:
    """Unweighted RMS per tier in native units (GHz / cm^-1)."""
    rms = {}
    for tier, scale in TIER_SCALE.items():
        subset = [replace(d, weight=1.0) for d in data if d.tier == tier]
        if not subset:
            continue
        r = residuals(params, subset, options) / scale
        if tier == "low_res":
            r = r / CM1_TO_GHZ
        rms[tier] = float(np.sqrt(np.mean(r ** 2)))
    return rms


@dataclass
class FitReport:
    """Outcome of one optimisation stage."""

    params: ModelParams
    free_names: tuple
    objective: float
    rms: dict
    iterations: int
    converged: bool
    tier_squared_ratio: float = 100.0

    def summary(self) -> str:
        lines = [
            f"converged: {self.converged}",
            f"iterations: {self.iterations}",
            f"objective: {self.objective!r}",
            f"tier_squared_ratio: {self.tier_squared_ratio:g}",
        ]
        for tier, value in sorted(self.rms.items()):
            unit = "GHz" if tier == "high_res" else "cm^-1"
            lines.append(f"rms_{tier}: {value!r} {unit}")
        for name in self.free_names:
            lines.append(f"{name}: {getattr(self.params, name)!r}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "objective": self.objective,
            "tier_squared_ratio": self.tier_squared_ratio,
            "rms": dict(self.rms),
            "free_names": list(self.free_names),
            "params": self.params.to_dict(),
        }


def optimize(initial: ModelParams, data, free_param_names,
             bounds: dict | None = None, options: FitOptions | None = None,
             max_iterations: int = 4000, xatol: float = 1e-6,
             fatol: float = 1e-12) -> FitReport:
    """Bounded simplex descent on the weighted sum of squared residuals.

    ``free_param_names`` picks the ModelParams fields to vary; everything
    else stays at its initial value. The protocol bounds on theta and
    Ecorr are always enforced on top of user bounds. An infeasible start
    raises ValueError. A stall below the relative tolerance returns a
    report with converged=False rather than failing.
    """
    if options is None:
        options = FitOptions()
    free = tuple(free_param_names)
    for name in free:
        if not hasattr(initial, name):
            raise ValueError(f"unknown parameter {name!r}")
    merged = dict(bounds or {})
    for name, hard in HARD_BOUNDS.items():
        lo, hi = merged.get(name, (-np.inf, np.inf))
        merged[name] = (max(lo, hard[0]), min(hi, hard[1]))
    box = [merged.get(name, (-np.inf, np.inf)) for name in free]
    x0 = np.array([float(getattr(initial, name)) for name in free])
    for value, (lo, hi), name in zip(x0, box, free):
        if not lo <= value <= hi:
            raise ValueError(f"start value {name}={value} outside bounds [{lo}, {hi}]")

    def with_values(x) -> ModelParams:
        return initial.replace(**{n: float(v) for n, v in zip(free, x)})

    def objective(x) -> float:
        r = residuals(with_values(x), data, options)
        return float(r @ r)

    if not free:
        f0 = objective(x0)
        return FitReport(initial, free, f0, _tier_rms(initial, data, options),
                         iterations=0, converged=True)

    f0 = objective(x0)
    res = minimize(
        objective, x0, method="Nelder-Mead", bounds=box,
        options={"maxiter": max_iterations, "xatol": xatol, "fatol": fatol},
    )
    # Monotone acceptance: never report a point worse than the start.
    if res.fun <= f0:
        best_x, best_f = res.x, float(res.fun)
    else:
        best_x, best_f = x0, f0
    fitted = with_values(best_x)
    return FitReport(
        params=fitted, free_names=free, objective=best_f,
        rms=_tier_rms(fitted, data, options),
        iterations=int(res.nit), converged=bool(res.success and res.fun <= f0),
    )


def two_stage_fit(initial: ModelParams, data,
                  stage1_names=("Bex", "Bdip", "theta"),
                  stage2_extra=("Jeff",),
                  bounds: dict | None = None,
                  window=(-100.0, 200.0), corr_mode: str = "projector",
                  **optimize_kwargs):
    """Ion-only fit on magnon-unaffected points, then the coupled model.

    Stage 1 varies ``stage1_names`` with magnons off, respecting the
    per-datum exclude mask. Stage 2 starts from the stage-1 optimum,
    turns the magnon coupling on, frees the same parameters plus
    ``stage2_extra`` and uses every datum. Returns (report1, report2).
    """
    opts1 = FitOptions(with_magnons=False, window=window,
                       corr_mode=corr_mode, respect_exclude=True)
    report1 = optimize(initial, data, stage1_names, bounds, opts1,
                       **optimize_kwargs)
    opts2 = FitOptions(with_magnons=True, window=window,
                       corr_mode=corr_mode, respect_exclude=False)
    report2 = optimize(report1.params, data, tuple(stage1_names) + tuple(stage2_extra),
                       bounds, opts2, **optimize_kwargs)
    return report1, report2


@dataclass
class SynthResult:
    """Synthetic transition data plus the seed that generated it."""

    data: list
    seed: int
    reference: float


def synth_data(params: ModelParams, b_range, steps: int, noise: float = 0.0,
               tier: str = "high_res", sublattices=(1, 2),
               with_magnons: bool = False, window=(-100.0, 200.0),
               corr_mode: str = "projector", seed: int = 0,
               strength_min: float = 0.01,
               magnon_deviation_threshold: float = 0.5) -> SynthResult:
    """Sample model branches into TransitionDatum records.

    Branches weaker than ``strength_min`` of the strongest line (peak,
    averaged polarization) are dropped, mimicking what an absorption
    measurement resolves. With magnons enabled, points deviating from
    the persistent ion-only partner branch by more than
    ``magnon_deviation_threshold`` GHz are flagged exclude=True for
    ion-only fits. Gaussian frequency noise is reproducible via ``seed``.
    """
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    spectral = field_sweep(params, b_range, steps, sublattices=sublattices,
                           with_magnons=with_magnons, window=window,
                           corr_mode=corr_mode)
    peak = max(b.strength("average").max() for b in spectral.branches)
    data = []
    off_map = None
    if with_magnons:
        off_map = field_sweep(params, b_range, steps, sublattices=sublattices,
                              with_magnons=False, window=window,
                              corr_mode=corr_mode)
    for branch in spectral.branches:
        if branch.strength("average").max() < strength_min * peak:
            continue
        if off_map is not None:
            partners = [b for b in off_map.branches
                        if b.sublattice == branch.sublattice]
            deviation = [np.mean(np.abs(branch.freq - b.freq)) for b in partners]
            partner = partners[int(np.argmin(deviation))]
            deviated = np.abs(branch.freq - partner.freq) > magnon_deviation_threshold
        else:
            deviated = np.zeros(branch.freq.shape, dtype=bool)
        for k, B in enumerate(spectral.fields):
            if not branch.in_window[k]:
                continue
            data.append(TransitionDatum(
                field=float(B),
                frequency=float(branch.freq[k] + rng.normal(0.0, noise)) if noise
                else float(branch.freq[k]),
                sublattice=branch.sublattice,
                label=branch.label,
                tier=tier,
                exclude=bool(deviated[k]),
            ))
    return SynthResult(data=data, seed=seed, reference=spectral.reference)


_TRANSITION_HEADER = ["field_T", "freq_GHz", "sublattice", "label", "tier",
                      "weight", "exclude"]


def transitions_to_csv(data, path, seed: int | None = None) -> None:
    """Write transition data; the seed that generated it goes in a comment."""
    with open(path, "w", newline="") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(_TRANSITION_HEADER)
        for d in data:
            writer.writerow([
                repr(d.field), repr(d.frequency), d.sublattice, d.label,
                d.tier, repr(d.weight), int(d.exclude),
            ])


def transitions_from_csv(path) -> list:
    """Read transition data written by transitions_to_csv."""
    rows = []
    with open(path) as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    if header[:6] != _TRANSITION_HEADER[:6]:
        raise ValueError(f"unexpected transition CSV header {header}")
    data = []
    for r in reader:
        data.append(TransitionDatum(
            field=float(r[0]), frequency=float(r[1]), sublattice=int(r[2]),
            label=r[3], tier=r[4], weight=float(r[5]),
            exclude=bool(int(r[6])) if len(r) > 6 else False,
        ))
    return data
