"""Exact angular-momentum algebra over a single LS term.

Wigner 3j/6j symbols are evaluated with the Racah closed-sum formulas in
exact rational arithmetic (Python integers / ``fractions.Fraction``), so
every symbol is correct to the last floating-point bit for j well beyond
the j <= 20 range this package uses. Operator matrices (spherical tensors
C^(k)_q, spin and orbital vectors) are built from those symbols with the
Wigner-Eckart theorem over a |L,S,J,mJ> product basis.

Phase conventions: Condon-Shortley phases throughout; tensor operators
are normalised a la Wybourne, C^(k)_q = sqrt(4*pi/(2k+1)) Y_kq, so that
crystal-field coefficients multiplying them follow the standard
spherical-tensor crystal-field literature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources

import numpy as np

__all__ = [
    "HalfInt",
    "AngularBasis",
    "OperatorMatrix",
    "wigner3j",
    "wigner6j",
    "tensor_operator",
    "spin_operator",
    "orbital_operator",
    "load_reduced_elements",
]


@dataclass(frozen=True, order=True)
class HalfInt:
    """Integer or half-integer angular momentum stored exactly as 2j."""

    twice: int

    @staticmethod
    def of(value) -> "HalfInt":
        """Coerce an int, float or HalfInt to a HalfInt.

        Floats must be exact multiples of 1/2 (e.g. 1.5), otherwise a
        ValueError is raised.
        """
        if isinstance(value, HalfInt):
            return value
        twice = 2 * value
        if twice != round(twice):
            raise ValueError(f"{value!r} is not an integer or half-integer")
        return HalfInt(int(round(twice)))

    @property
    def value(self) -> float:
        return self.twice / 2

    @property
    def is_integer(self) -> bool:
        return self.twice % 2 == 0

    def __add__(self, other) -> "HalfInt":
        return HalfInt(self.twice + HalfInt.of(other).twice)

    def __sub__(self, other) -> "HalfInt":
        return HalfInt(self.twice - HalfInt.of(other).twice)

    def __neg__(self) -> "HalfInt":
        return HalfInt(-self.twice)

    def __float__(self) -> float:
        return self.twice / 2

    def __repr__(self) -> str:
        if self.twice % 2 == 0:
            return str(self.twice // 2)
        return f"{self.twice}/2"


def _check_jm(tj: int, tm: int) -> None:
    """Validate a (j, m) pair given as twice-values."""
    if tj < 0:
        raise ValueError(f"angular momentum magnitude j={tj/2} must be >= 0")
    if (tj - tm) % 2 != 0:
        raise ValueError(f"j - m must be an integer, got j={tj/2}, m={tm/2}")
    if abs(tm) > tj:
        raise ValueError(f"|m| <= j violated: j={tj/2}, m={tm/2}")


def _triangle_ok(ta: int, tb: int, tc: int) -> bool:
    """Triangle rule on twice-values, including integer-perimeter check."""
    return (
        abs(ta - tb) <= tc <= ta + tb
        and (ta + tb + tc) % 2 == 0
    )


def _fact(n: int) -> int:
    if n < 0:
        raise ValueError("negative factorial")
    return math.factorial(n)


def _triangle_coeff(ta: int, tb: int, tc: int) -> Fraction:
    """Delta(abc) = (a+b-c)!(a-b+c)!(-a+b+c)!/(a+b+c+1)! exactly."""
    return Fraction(
        _fact((ta + tb - tc) // 2)
        * _fact((ta - tb + tc) // 2)
        * _fact((-ta + tb + tc) // 2),
        _fact((ta + tb + tc) // 2 + 1),
    )


def _signed_sqrt(sign: int, square: Fraction) -> float:
    """sign * sqrt(square) with the square held exact until the end."""
    if square == 0 or sign == 0:
        return 0.0
    return sign * math.sqrt(float(square))


@lru_cache(maxsize=100_000)
def _w3j(tj1: int, tj2: int, tj3: int, tm1: int, tm2: int, tm3: int) -> float:
    if tm1 + tm2 + tm3 != 0:
        return 0.0
    if not _triangle_ok(tj1, tj2, tj3):
        return 0.0

    prefactor = _triangle_coeff(tj1, tj2, tj3) * Fraction(
        _fact((tj1 + tm1) // 2)
        * _fact((tj1 - tm1) // 2)
        * _fact((tj2 + tm2) // 2)
        * _fact((tj2 - tm2) // 2)
        * _fact((tj3 + tm3) // 2)
        * _fact((tj3 - tm3) // 2)
    )

    k_min = max(0, (tj2 - tj3 - tm1) // 2, (tj1 - tj3 + tm2) // 2)
    k_max = min(
        (tj1 + tj2 - tj3) // 2,
        (tj1 - tm1) // 2,
        (tj2 + tm2) // 2,
    )
    total = Fraction(0)
    for k in range(k_min, k_max + 1):
        den = (
            _fact(k)
            * _fact((tj1 + tj2 - tj3) // 2 - k)
            * _fact((tj1 - tm1) // 2 - k)
            * _fact((tj2 + tm2) // 2 - k)
            * _fact((tj3 - tj2 + tm1) // 2 + k)
            * _fact((tj3 - tj1 - tm2) // 2 + k)
        )
        total += Fraction(-1 if k % 2 else 1, den)
    if total == 0:
        return 0.0

    exponent = (tj1 - tj2 - tm3) // 2
    sign = -1 if exponent % 2 else 1
    if total < 0:
        sign, total = -sign, -total
    return _signed_sqrt(sign, prefactor * total * total)


@lru_cache(maxsize=100_000)
def _w6j(tj1: int, tj2: int, tj3: int, tj4: int, tj5: int, tj6: int) -> float:
    triads = (
        (tj1, tj2, tj3),
        (tj1, tj5, tj6),
        (tj4, tj2, tj6),
        (tj4, tj5, tj3),
    )
    for ta, tb, tc in triads:
        if not _triangle_ok(ta, tb, tc):
            return 0.0

    prefactor = Fraction(1)
    for ta, tb, tc in triads:
        prefactor *= _triangle_coeff(ta, tb, tc)

    t1 = (tj1 + tj2 + tj3) // 2
    t2 = (tj1 + tj5 + tj6) // 2
    t3 = (tj4 + tj2 + tj6) // 2
    t4 = (tj4 + tj5 + tj3) // 2
    q1 = (tj1 + tj2 + tj4 + tj5) // 2
    q2 = (tj2 + tj3 + tj5 + tj6) // 2
    q3 = (tj3 + tj1 + tj6 + tj4) // 2

    total = Fraction(0)
    for z in range(max(t1, t2, t3, t4), min(q1, q2, q3) + 1):
        den = (
            _fact(z - t1)
            * _fact(z - t2)
            * _fact(z - t3)
            * _fact(z - t4)
            * _fact(q1 - z)
            * _fact(q2 - z)
            * _fact(q3 - z)
        )
        total += Fraction((-1 if z % 2 else 1) * _fact(z + 1), den)
    if total == 0:
        return 0.0

    sign = 1
    if total < 0:
        sign, total = -1, -total
    return _signed_sqrt(sign, prefactor * total * total)


def wigner3j(j1, j2, j3, m1, m2, m3) -> float:
    """Wigner 3j symbol (j1 j2 j3; m1 m2 m3).

    Arguments may be ints, exact half-integer floats, or HalfInt.
    Returns 0 when the triangle rule or m1+m2+m3 = 0 is violated;
    raises ValueError for malformed (j, m) pairs.
    """
    js = [HalfInt.of(j).twice for j in (j1, j2, j3)]
    ms = [HalfInt.of(m).twice for m in (m1, m2, m3)]
    for tj, tm in zip(js, ms):
        _check_jm(tj, tm)
    return _w3j(js[0], js[1], js[2], ms[0], ms[1], ms[2])


def wigner6j(j1, j2, j3, j4, j5, j6) -> float:
    """Wigner 6j symbol {j1 j2 j3; j4 j5 j6}.

    Returns 0 when any of the four triads violates the triangle rule.
    """
    tjs = []
    for j in (j1, j2, j3, j4, j5, j6):
        tj = HalfInt.of(j).twice
        if tj < 0:
            raise ValueError(f"angular momentum magnitude must be >= 0, got {tj/2}")
        tjs.append(tj)
    return _w6j(*tjs)


@dataclass(frozen=True)
class AngularBasis:
    """|L,S,J,mJ> product basis over an ordered list of J manifolds."""

    L: HalfInt
    S: HalfInt
    J_list: tuple

    def __post_init__(self):
        lo = abs(self.L.twice - self.S.twice)
        hi = self.L.twice + self.S.twice
        for J in self.J_list:
            if not lo <= J.twice <= hi or (J.twice - lo) % 2 != 0:
                raise ValueError(f"J={J} outside the |L-S|..L+S ladder")

    @staticmethod
    def build(L, S, J_list) -> "AngularBasis":
        return AngularBasis(
            HalfInt.of(L), HalfInt.of(S), tuple(HalfInt.of(J) for J in J_list)
        )

    @staticmethod
    def erbium_4I() -> "AngularBasis":
        """The 52-state 4I term basis of Er3+ (L=6, S=3/2)."""
        return AngularBasis.build(6, 1.5, [7.5, 6.5, 5.5, 4.5])

    @property
    def states(self) -> tuple:
        """Ordered (J, mJ) pairs; mJ ascending within each J block."""
        out = []
        for J in self.J_list:
            for tm in range(-J.twice, J.twice + 1, 2):
                out.append((J, HalfInt(tm)))
        return tuple(out)

    @property
    def dim(self) -> int:
        return sum(J.twice + 1 for J in self.J_list)

    def block_slice(self, J) -> slice:
        """Index slice of the 2J+1 states belonging to one manifold."""
        J = HalfInt.of(J)
        start = 0
        for Jb in self.J_list:
            if Jb == J:
                return slice(start, start + Jb.twice + 1)
            start += Jb.twice + 1
        raise KeyError(f"J={J} not in basis")

    def j_weights(self, vector: np.ndarray) -> dict:
        """Probability weight of each J manifold in a state vector."""
        return {
            J: float(np.sum(np.abs(vector[self.block_slice(J)]) ** 2))
            for J in self.J_list
        }


@dataclass
class OperatorMatrix:
    """Dense complex matrix tagged with its basis and units.

    Hamiltonians carry units="GHz"; bare angular-momentum operators are
    dimensionless. Operators combine only when their basis tags match.
    """

    basis: object
    entries: np.ndarray
    units: str = "dimensionless"

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ValueError("operator matrices must be square")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def dagger(self) -> "OperatorMatrix":
        return OperatorMatrix(self.basis, self.entries.conj().T, self.units)

    def hermiticity_defect(self) -> float:
        """max |H - H^dag| relative to the largest entry (0 for zero matrix)."""
        scale = np.max(np.abs(self.entries))
        if scale == 0:
            return 0.0
        return float(np.max(np.abs(self.entries - self.entries.conj().T)) / scale)

    def _require_compatible(self, other: "OperatorMatrix") -> None:
        if self.entries.shape != other.entries.shape:
            raise ValueError("operator dimensions differ")
        if self.basis != other.basis:
            raise ValueError("operator bases differ")

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._require_compatible(other)
        units = self.units if self.units != "dimensionless" else other.units
        return OperatorMatrix(self.basis, self.entries + other.entries, units)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._require_compatible(other)
        units = self.units if self.units != "dimensionless" else other.units
        return OperatorMatrix(self.basis, self.entries - other.entries, units)

    def __mul__(self, scalar) -> "OperatorMatrix":
        return OperatorMatrix(self.basis, self.entries * scalar, self.units)

    __rmul__ = __mul__

    def __matmul__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._require_compatible(other)
        return OperatorMatrix(self.basis, self.entries @ other.entries, self.units)


def _reduced_within_term(basis: AngularBasis, tk: int, part: str, reduced_L: float):
    """Reduced matrix elements <(LS)J'||T^k||(LS)J> for all J pairs.

    A rank-k tensor acting on the orbital part (part="L") or the spin
    part (part="S") of the coupled |(LS)J> states, recoupled with a 6j.
    reduced_L is the term-level reduced element of the tensor on the part
    it acts on (ignored for part="S", where <S||S||S> is used).
    """
    tL, tS = basis.L.twice, basis.S.twice
    out = {}
    for Jp in basis.J_list:
        for J in basis.J_list:
            tJp, tJ = Jp.twice, J.twice
            norm = math.sqrt((tJp + 1.0) * (tJ + 1.0))
            if part == "L":
                expo = (tL + tS + tJ) // 2 + tk // 2
                six = _w6j(tL, tJp, tS, tJ, tL, tk)
                red = reduced_L
            elif part == "S":
                expo = (tL + tS + tJp) // 2 + tk // 2
                six = _w6j(tS, tJp, tL, tJ, tS, tk)
                s = tS / 2
                red = math.sqrt(s * (s + 1) * (tS + 1))
            else:
                raise ValueError(part)
            sign = -1 if expo % 2 else 1
            out[(Jp, J)] = sign * norm * six * red
    return out


def _wigner_eckart_matrix(basis: AngularBasis, tk: int, tq: int, reduced) -> np.ndarray:
    """<J' mJ'|T^k_q|J mJ> = (-1)^(J'-mJ') 3j(J' k J; -mJ' q mJ) <J'||T^k||J>."""
    states = basis.states
    n = len(states)
    mat = np.zeros((n, n), dtype=complex)
    for row, (Jp, mp) in enumerate(states):
        for col, (J, m) in enumerate(states):
            if mp.twice - m.twice != tq:
                continue
            red = reduced[(Jp, J)]
            if red == 0.0:
                continue
            three = _w3j(Jp.twice, tk, J.twice, -mp.twice, tq, m.twice)
            if three == 0.0:
                continue
            sign = -1 if ((Jp.twice - mp.twice) // 2) % 2 else 1
            mat[row, col] = sign * three * red
    return mat


def tensor_operator(k: int, q: int, basis: AngularBasis, reduced_U: float,
                    sign: int = 1) -> OperatorMatrix:
    """Spherical tensor operator C^(k)_q over the term basis.

    reduced_U is the term-level orbital reduced matrix element
    <LS||T^k||LS> supplied by the caller (for crystal fields: the
    many-electron reduced element of sum_i C^(k)_q(i), see
    load_reduced_elements). ``sign`` flips the overall phase to bridge
    crystal-field sign-convention differences in the literature.
    """
    if k not in (2, 4, 6):
        raise ValueError(f"tensor rank k={k} not supported (expected 2, 4 or 6)")
    if abs(q) > k:
        raise ValueError(f"|q| <= k violated: k={k}, q={q}")
    reduced = _reduced_within_term(basis, 2 * k, "L", reduced_U)
    mat = _wigner_eckart_matrix(basis, 2 * k, 2 * q, reduced)
    return OperatorMatrix(basis, sign * mat)


def _vector_operator(basis: AngularBasis, part: str, component: str) -> np.ndarray:
    reduced_L = 0.0
    if part == "L":
        l = basis.L.twice / 2
        reduced_L = math.sqrt(l * (l + 1) * (basis.L.twice + 1))
    spherical = {
        tq: _wigner_eckart_matrix(
            basis, 2, tq, _reduced_within_term(basis, 2, part, reduced_L)
        )
        for tq in (-2, 0, 2)
    }
    # Vector from spherical components: V+1 = -(Vx + iVy)/sqrt2, V0 = Vz.
    plus = -math.sqrt(2) * spherical[2]
    minus = math.sqrt(2) * spherical[-2]
    if component == "z":
        return spherical[0]
    if component == "+":
        return plus
    if component == "-":
        return minus
    if component == "x":
        return (plus + minus) / 2
    if component == "y":
        return (plus - minus) / 2j
    raise ValueError(f"unknown component {component!r}")


def spin_operator(component: str, basis: AngularBasis) -> OperatorMatrix:
    """Spin operator S_component (x, y, z, + or -) including inter-J blocks."""
    return OperatorMatrix(basis, _vector_operator(basis, "S", component))


def orbital_operator(component: str, basis: AngularBasis) -> OperatorMatrix:
    """Orbital operator L_component (x, y, z, + or -) including inter-J blocks."""
    return OperatorMatrix(basis, _vector_operator(basis, "L", component))


def load_reduced_elements(path=None) -> dict:
    """Load the term-level reduced elements <4I||sum_i C^(k)(i)||4I>.

    File format: one line per rank, ``k value``, for k in {2, 4, 6}.
    Defaults to the data table bundled with the package, which holds the
    values for the 4I term of the f^11 configuration.
    """
    if path is None:
        text = (
            resources.files("ergvo").joinpath("data/reduced_ck.txt").read_text()
        )
    else:
        with open(path) as fh:
            text = fh.read()
    out = {}
    for line in text.splitlines():
        line = line.split("#")[0].strip()
        if not line:
            continue
        k_str, value_str = line.split()
        out[int(k_str)] = float(value_str)
    missing = {2, 4, 6} - set(out)
    if missing:
        raise ValueError(f"reduced-element table is missing ranks {sorted(missing)}")
    return out
