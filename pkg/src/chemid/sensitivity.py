"""Piecewise-linear representation of the chemotactic sensitivity a(c).

a(c) is expanded over hat functions on L uniform knots spanning a
concentration interval I = [c_min, c_max]:

    a(c) = sum_k coeffs[k] * phi_k(c)

Outside I the value is clamped to the nearest endpoint coefficient. The
exact L2(I) Gram matrix of the hat basis feeds the Tikhonov penalty
(a - a*)^T B (a - a*), which equals the continuous ||a - a*||^2_{L2(I)}
whenever both functions live on the same knots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np
from scipy.linalg import cholesky

from .errors import (
    IncompatibleBasisError,
    InvalidStateError,
    ZeroWidthIntervalError,
)

if TYPE_CHECKING:
    from .pde import StateTrajectory

#: Default knot count; resolves 2/c on [0.1, 0.7] to about 1% interpolation error.
DEFAULT_N_BASIS = 16

#: Default symmetric padding fraction applied to an observed c-range.
DEFAULT_PADDING = 0.1


@dataclass(frozen=True, eq=False)
class SensitivityFunction:
    """Hat-basis expansion of a(c) on uniform knots over [c_min, c_max]."""

    c_min: float
    c_max: float
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float, copy=True)
        coeffs.setflags(write=False)
        if coeffs.ndim != 1 or coeffs.shape[0] < 2:
            raise InvalidStateError(
                f"need at least 2 basis coefficients (got shape {coeffs.shape})"
            )
        if not np.all(np.isfinite(coeffs)):
            raise InvalidStateError("coefficients contain non-finite values")
        if not self.c_max > self.c_min:
            raise ZeroWidthIntervalError(
                f"empty concentration interval [{self.c_min}, {self.c_max}]"
            )
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n_basis(self) -> int:
        return self.coeffs.shape[0]

    def knots(self) -> np.ndarray:
        return np.linspace(self.c_min, self.c_max, self.n_basis)

    def __call__(self, c):
        """Evaluate a(c); accepts scalars or arrays, clamps outside the interval."""
        c = np.asarray(c, dtype=float)
        if not np.all(np.isfinite(c)):
            raise InvalidStateError("sensitivity evaluated at non-finite c")
        out = np.interp(c, self.knots(), self.coeffs)
        return float(out) if out.ndim == 0 else out

    def with_coeffs(self, coeffs) -> "SensitivityFunction":
        """Same interval, new coefficient vector."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.n_basis,):
            raise IncompatibleBasisError(
                f"expected {self.n_basis} coefficients, got shape {coeffs.shape}"
            )
        return SensitivityFunction(self.c_min, self.c_max, coeffs)

    def max_slope_jump(self) -> float:
        """Largest change of slope between adjacent segments.

        Diagnostic for the smoothness of a recovered sensitivity; not
        enforced as a constraint anywhere.
        """
        slopes = np.diff(self.coeffs) / self.knot_spacing
        return float(np.max(np.abs(np.diff(slopes)))) if len(slopes) > 1 else 0.0

    @property
    def knot_spacing(self) -> float:
        return (self.c_max - self.c_min) / (self.n_basis - 1)

    @classmethod
    def constant(
        cls, value: float, c_min: float, c_max: float, n_basis: int = DEFAULT_N_BASIS
    ) -> "SensitivityFunction":
        return cls(c_min, c_max, np.full(n_basis, float(value)))

    @classmethod
    def from_function(
        cls,
        f: Callable,
        c_min: float,
        c_max: float,
        n_basis: int = DEFAULT_N_BASIS,
    ) -> "SensitivityFunction":
        """Sample f at the knots; exact for piecewise-linear f on the same knots."""
        knots = np.linspace(c_min, c_max, n_basis)
        coeffs = np.asarray([float(f(k)) for k in knots])
        return cls(c_min, c_max, coeffs)


@dataclass(frozen=True, eq=False)
class BasisMassMatrix:
    """Exact L2 Gram matrix B_ij = (phi_i, phi_j) of the hat basis."""

    entries: np.ndarray
    knot_spacing: float

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float, copy=True)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n_basis(self) -> int:
        return self.entries.shape[0]

    def cholesky_factor(self) -> np.ndarray:
        """Lower-triangular L_B with B = L_B L_B^T; fails iff B is not SPD."""
        return cholesky(self.entries, lower=True)


def mass_matrix(n_basis: int, c_min: float, c_max: float) -> BasisMassMatrix:
    """Assemble the tridiagonal hat-function Gram matrix on uniform knots.

    Closed form: interior diagonal 2*dc/3, endpoint diagonal dc/3,
    off-diagonal dc/6.
    """
    if n_basis < 2:
        raise InvalidStateError(f"n_basis must be >= 2 (got {n_basis})")
    if not c_max > c_min:
        raise ZeroWidthIntervalError(
            f"empty concentration interval [{c_min}, {c_max}]"
        )
    dc = (c_max - c_min) / (n_basis - 1)
    B = np.zeros((n_basis, n_basis))
    idx = np.arange(n_basis)
    B[idx, idx] = 2.0 * dc / 3.0
    B[0, 0] = B[-1, -1] = dc / 3.0
    B[idx[:-1], idx[:-1] + 1] = dc / 6.0
    B[idx[:-1] + 1, idx[:-1]] = dc / 6.0
    return BasisMassMatrix(entries=B, knot_spacing=dc)


def penalty(
    a: SensitivityFunction,
    a_star: SensitivityFunction,
    B: BasisMassMatrix | None = None,
) -> float:
    """Squared L2(I) distance (a - a*)^T B (a - a*) on a shared basis."""
    same = (
        a.n_basis == a_star.n_basis
        and math.isclose(a.c_min, a_star.c_min, rel_tol=1e-12, abs_tol=1e-12)
        and math.isclose(a.c_max, a_star.c_max, rel_tol=1e-12, abs_tol=1e-12)
    )
    if not same:
        raise IncompatibleBasisError(
            "sensitivities use different knots: "
            f"[{a.c_min}, {a.c_max}] x {a.n_basis} vs "
            f"[{a_star.c_min}, {a_star.c_max}] x {a_star.n_basis}"
        )
    if B is None:
        B = mass_matrix(a.n_basis, a.c_min, a.c_max)
    if B.n_basis != a.n_basis:
        raise IncompatibleBasisError(
            f"mass matrix is {B.n_basis}x{B.n_basis}, basis has {a.n_basis} knots"
        )
    d = a.coeffs - a_star.coeffs
    return float(d @ B.entries @ d)


def concentration_range(
    traj: "StateTrajectory", padding: float = DEFAULT_PADDING
) -> tuple[float, float]:
    """Observed [min c, max c] expanded symmetrically by padding * width."""
    if padding < 0:
        raise InvalidStateError(f"padding must be >= 0 (got {padding})")
    lo = min(float(f.c.min()) for f in traj.frames)
    hi = max(float(f.c.max()) for f in traj.frames)
    if not hi > lo:
        raise ZeroWidthIntervalError(
            f"concentration range is degenerate at c = {lo}"
        )
    pad = padding * (hi - lo)
    return lo - pad, hi + pad


# ---------------------------------------------------------------------------
# serialization


def write_sensitivity_csv(a: SensitivityFunction, path) -> None:
    """CSV of (knot, coefficient) pairs with an interval metadata header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"# c_min={a.c_min:.15g} c_max={a.c_max:.15g} "
            f"n_basis={a.n_basis} extension=clamp\n"
        )
        fh.write("c_knot,a_value\n")
        for ck, ak in zip(a.knots(), a.coeffs):
            fh.write(f"{ck:.15g},{ak:.15g}\n")


def read_sensitivity_csv(path) -> SensitivityFunction:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise InvalidStateError(f"{path}: missing metadata header")
    meta = {}
    for tok in lines[0].lstrip("#").split():
        if "=" not in tok:
            raise InvalidStateError(f"{path}: malformed metadata token {tok!r}")
        key, val = tok.split("=", 1)
        meta[key] = val
    for key in ("c_min", "c_max", "n_basis", "extension"):
        if key not in meta:
            raise InvalidStateError(f"{path}: metadata missing {key!r}")
    if meta["extension"] != "clamp":
        raise InvalidStateError(
            f"{path}: unsupported extension rule {meta['extension']!r}"
        )
    if len(lines) < 2 or lines[1] != "c_knot,a_value":
        raise InvalidStateError(f"{path}: expected header 'c_knot,a_value'")
    rows = np.array(
        [[float(v) for v in ln.split(",")] for ln in lines[2:]], dtype=float
    )
    n = int(meta["n_basis"])
    if rows.shape != (n, 2):
        raise InvalidStateError(f"{path}: expected {n} knot rows, got {rows.shape}")
    a = SensitivityFunction(float(meta["c_min"]), float(meta["c_max"]), rows[:, 1])
    if not np.allclose(rows[:, 0], a.knots(), rtol=1e-9, atol=1e-12):
        raise InvalidStateError(f"{path}: knot column inconsistent with metadata")
    return a
