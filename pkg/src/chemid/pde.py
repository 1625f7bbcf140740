"""Forward solver for the coupled cell/chemoattractant system.

The model on a 1-D interval with no-flux boundaries is

    u_t = M u_xx - (a(c) u c_x)_x
    c_t = D c_xx + b u/(u+h) - mu c

for the cell density u(x,t) and the chemoattractant concentration c(x,t).

Discretization: node-centered grid with half-width cells at the two
boundary nodes, so the trapezoidal integral of u is the exactly conserved
quantity.  Each step is IMEX:

  * the chemotactic flux divergence is advanced explicitly in conservative
    flux-difference form, with the advected face value of u chosen per
    face by a Peclet-weighted upwind/central rule (pure donor-cell
    upwinding is available as an option),
  * both diffusion operators and the linear decay -mu c are advanced
    implicitly (backward Euler, tridiagonal solves with ghost-node
    reflection for the Neumann boundaries),
  * the saturating production b u/(u+h) uses the beginning-of-step u so
    the c update stays linear.

``solve_forward`` re-checks the advective positivity bound
dt <= 0.45 dx / max|v| before every step and sub-steps adaptively when
it is violated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded

from .errors import (
    DomainMismatchError,
    InvalidStateError,
    LowerBoundViolationError,
    NumericalSolveError,
    PositivityViolationError,
    StepSizeError,
)

# a(c) is anything that maps an array of concentrations to an array of
# sensitivity values; SensitivityFunction satisfies this.
SensitivityLike = Callable[[np.ndarray], np.ndarray]

#: Advected face value rule: "blended" switches per face from a central
#: mean to donor-cell upwinding once the face Peclet number |v| dx / M
#: exceeds 2 (the positivity-critical regime); "upwind" always donates.
DEFAULT_ADVECTION = "blended"

#: Safety factor on the donor-cell positivity bound dt <= 0.5 dx / max|v|
#: (worst case: an interior cell draining through both faces, or a
#: half-width boundary cell draining through its one face).
CFL_SAFETY = 0.9

#: u below -POSITIVITY_FLOOR * max(1, max u) after a step is a solver
#: error; smaller negatives are round-off and are clipped to zero.
POSITIVITY_FLOOR = 1.0e-12

#: Relative slack on the c(x,t) >= min(c0) exp(-mu t) lower bound.
LOWER_BOUND_SLACK = 1.0e-8


@dataclass(frozen=True)
class PhysicalParams:
    """Physical coefficients of the coupled system.

    M, D are the cell and chemical diffusivities, b and h the maximum
    rate and half-saturation constant of the production term b u/(u+h),
    and mu the chemical decay rate.
    """

    M: float
    D: float
    b: float
    h: float
    mu: float

    def __post_init__(self):
        if not (self.M > 0 and self.D > 0 and self.h > 0):
            raise InvalidStateError(
                f"M, D, h must be positive (got M={self.M}, D={self.D}, h={self.h})"
            )
        if self.b < 0 or self.mu < 0:
            raise InvalidStateError(
                f"b and mu must be nonnegative (got b={self.b}, mu={self.mu})"
            )

    @classmethod
    def dimensionless(cls, M: float, D: float) -> "PhysicalParams":
        """Dimensionless preset b = h = mu = 1."""
        return cls(M=M, D=D, b=1.0, h=1.0, mu=1.0)

    @classmethod
    def myerscough(cls) -> "PhysicalParams":
        """Limb-bud morphogenesis parameter set: M=0.25, D=1, h=1, b=mu=50."""
        return cls(M=0.25, D=1.0, b=50.0, h=1.0, mu=50.0)


@dataclass(frozen=True)
class SimulationGrid:
    """Uniform space/time discretization of [x_left, x_right] x [0, t_final]."""

    x_left: float
    x_right: float
    n_nodes: int
    t_final: float
    n_steps: int

    def __post_init__(self):
        if self.n_nodes < 3:
            raise InvalidStateError(f"n_nodes must be >= 3 (got {self.n_nodes})")
        if self.n_steps < 1:
            raise InvalidStateError(f"n_steps must be >= 1 (got {self.n_steps})")
        if not self.x_right > self.x_left:
            raise InvalidStateError(
                f"domain is empty: [{self.x_left}, {self.x_right}]"
            )
        if not self.t_final > 0:
            raise InvalidStateError(f"t_final must be positive (got {self.t_final})")

    @property
    def dx(self) -> float:
        return (self.x_right - self.x_left) / (self.n_nodes - 1)

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    def xs(self) -> np.ndarray:
        return np.linspace(self.x_left, self.x_right, self.n_nodes)

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_steps + 1)

    def cell_widths(self) -> np.ndarray:
        """Trapezoidal cell widths: dx/2 at both boundary nodes, dx inside."""
        w = np.full(self.n_nodes, self.dx)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def with_resolution(self, n_nodes: int, n_steps: int) -> "SimulationGrid":
        """Same domain and horizon at a different resolution."""
        return SimulationGrid(self.x_left, self.x_right, n_nodes, self.t_final, n_steps)


def _readonly(a) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class StateField:
    """Cell density u and chemoattractant c on the grid nodes at time t."""

    u: np.ndarray
    c: np.ndarray
    t: float

    def __post_init__(self):
        u = _readonly(self.u)
        c = _readonly(self.c)
        if u.ndim != 1 or u.shape != c.shape:
            raise InvalidStateError(
                f"u and c must be 1-D arrays of equal length (got {u.shape}, {c.shape})"
            )
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "c", c)


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """Ordered frames of the solution from t = 0 to t = t_final."""

    grid: SimulationGrid
    frames: tuple

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) != self.grid.n_steps + 1:
            raise InvalidStateError(
                f"expected {self.grid.n_steps + 1} frames, got {len(frames)}"
            )
        dt = self.grid.dt
        for j, f in enumerate(frames):
            if f.u.shape[0] != self.grid.n_nodes:
                raise InvalidStateError(f"frame {j} has wrong node count")
            if not math.isclose(f.t, j * dt, rel_tol=1e-9, abs_tol=1e-12 * dt):
                raise InvalidStateError(
                    f"frame {j} is at t={f.t}, expected {j * dt}"
                )
        object.__setattr__(self, "frames", frames)

    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.frames])

    def u_matrix(self) -> np.ndarray:
        """All u frames stacked, shape (n_steps + 1, n_nodes)."""
        return np.stack([f.u for f in self.frames])

    def c_matrix(self) -> np.ndarray:
        return np.stack([f.c for f in self.frames])

    @property
    def final(self) -> StateField:
        return self.frames[-1]


def mass(u, grid: SimulationGrid) -> float:
    """Trapezoidal integral of u over the spatial domain."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise InvalidStateError("mass: u contains non-finite values")
    return float(np.dot(grid.cell_widths(), u))


def space_time_sq_norm(values, grid: SimulationGrid) -> float:
    """Squared discrete space-time L2 norm with uniform dx*dt weights.

    ``values`` has one row per frame (n_steps + 1 rows, n_nodes columns).
    This is the quadrature used both for the data-misfit objective and
    for measuring noise levels, so the two stay mutually consistent.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_steps + 1, grid.n_nodes):
        raise InvalidStateError(
            f"expected shape {(grid.n_steps + 1, grid.n_nodes)}, got {values.shape}"
        )
    return grid.dx * grid.dt * float(np.sum(values * values))


def trajectory_distance(a: StateTrajectory, b: StateTrajectory) -> float:
    """Space-time L2 distance between two trajectories over both fields."""
    if a.grid != b.grid:
        raise DomainMismatchError("trajectories live on different grids")
    du2 = space_time_sq_norm(a.u_matrix() - b.u_matrix(), a.grid)
    dc2 = space_time_sq_norm(a.c_matrix() - b.c_matrix(), a.grid)
    return math.sqrt(du2 + dc2)


def chemotactic_face_velocity(
    c, a: SensitivityLike, grid: SimulationGrid
) -> np.ndarray:
    """Advective velocities a(c) c_x at the n_nodes - 1 cell faces.

    The face concentration is the arithmetic mean of the two node values;
    the gradient is the one-sided difference across the face.
    """
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise InvalidStateError("face velocity: c contains non-finite values")
    return _face_velocities(c, a, grid.dx)


def _face_velocities(c: np.ndarray, a: SensitivityLike, dx: float) -> np.ndarray:
    face_c = 0.5 * (c[:-1] + c[1:])
    return np.asarray(a(face_c), dtype=float) * (np.diff(c) / dx)


def _advected_face_values(
    u: np.ndarray, v: np.ndarray, dx: float, M: float, advection: str
) -> np.ndarray:
    upwind = np.where(v >= 0.0, u[:-1], u[1:])
    if advection == "upwind":
        return upwind
    if advection == "blended":
        central = 0.5 * (u[:-1] + u[1:])
        peclet = v * (dx / M)
        return np.where(np.abs(peclet) <= 2.0, central, upwind)
    raise InvalidStateError(f"unknown advection scheme {advection!r}")


def _implicit_banded(n: int, r: float, extra_diag: float) -> np.ndarray:
    """Banded form of I + extra_diag*I - r*L, L the Neumann Laplacian stencil."""
    ab = np.zeros((3, n))
    ab[1, :] = 1.0 + extra_diag + 2.0 * r
    ab[0, 1] = -2.0 * r
    ab[0, 2:] = -r
    ab[2, : n - 2] = -r
    ab[2, n - 2] = -2.0 * r
    return ab


def _advance(
    u: np.ndarray,
    c: np.ndarray,
    params: PhysicalParams,
    a: SensitivityLike,
    dx: float,
    dt: float,
    advection: str,
) -> tuple[np.ndarray, np.ndarray]:
    """One IMEX step of size dt; returns new (u, c) node arrays."""
    n = u.shape[0]

    v = _face_velocities(c, a, dx)
    flux = v * _advected_face_values(u, v, dx, params.M, advection)
    div = np.empty(n)
    div[0] = flux[0] / (0.5 * dx)
    div[1:-1] = (flux[1:] - flux[:-1]) / dx
    div[-1] = -flux[-1] / (0.5 * dx)
    ustar = u - dt * div

    try:
        u_new = solve_banded(
            (1, 1),
            _implicit_banded(n, dt * params.M / dx**2, 0.0),
            ustar,
            check_finite=False,
        )
        # production uses the beginning-of-step u, keeping the solve linear
        rhs = c + dt * params.b * (u / (u + params.h))
        c_new = solve_banded(
            (1, 1),
            _implicit_banded(n, dt * params.D / dx**2, dt * params.mu),
            rhs,
            check_finite=False,
        )
    except np.linalg.LinAlgError as exc:  # degenerate dt/dx combination
        raise NumericalSolveError(f"tridiagonal solve failed: {exc}") from exc

    u_min = u_new.min()
    if u_min < -POSITIVITY_FLOOR * max(1.0, float(u_new.max())):
        raise PositivityViolationError(
            f"cell density reached {u_min:.3e} after a step of dt={dt:.3e}"
        )
    if u_min < 0.0:
        u_new = np.where(u_new < 0.0, 0.0, u_new)
    return u_new, c_new


def step(
    state: StateField,
    params: PhysicalParams,
    a: SensitivityLike,
    grid: SimulationGrid,
    *,
    advection: str = DEFAULT_ADVECTION,
) -> StateField:
    """Advance one IMEX step of size grid.dt.

    The advective stability bound is assumed to hold for grid.dt; callers
    that cannot guarantee it should go through ``solve_forward``, which
    re-checks the bound and sub-steps as needed.
    """
    if not (np.all(np.isfinite(state.u)) and np.all(np.isfinite(state.c))):
        raise InvalidStateError("step: state contains non-finite values")
    u, c = _advance(state.u, state.c, params, a, grid.dx, grid.dt, advection)
    return StateField(u=u, c=c, t=state.t + grid.dt)


def solve_forward(
    u0,
    c0,
    params: PhysicalParams,
    a: SensitivityLike,
    grid: SimulationGrid,
    *,
    advection: str = DEFAULT_ADVECTION,
    max_substeps: int = 4096,
) -> StateTrajectory:
    """Solve the coupled system from (u0, c0), one frame per grid time step.

    Before every (sub-)step the advective positivity bound
    dt <= 0.45 dx / max|v| is evaluated from the current state; a
    violating frame step is split into equal sub-steps, at most
    ``max_substeps`` per frame.

    Raises
    ------
    StepSizeError
        if a frame needs more than ``max_substeps`` sub-steps.
    PositivityViolationError, LowerBoundViolationError
        if the computed fields violate the solution lower bounds.
    """
    u = np.array(u0, dtype=float)
    c = np.array(c0, dtype=float)
    if u.shape != (grid.n_nodes,) or c.shape != (grid.n_nodes,):
        raise InvalidStateError(
            f"initial fields must have length n_nodes={grid.n_nodes}"
        )
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(c))):
        raise InvalidStateError("initial fields contain non-finite values")
    if u.min() < 0:
        raise InvalidStateError(f"u0 must be nonnegative (min {u.min():.3e})")
    c0_floor = c.min()
    if c0_floor <= 0:
        raise InvalidStateError(f"c0 must be positive (min {c0_floor:.3e})")

    dx, dt = grid.dx, grid.dt
    times = grid.times()
    frames = [StateField(u=u, c=c, t=0.0)]

    for j in range(grid.n_steps):
        remaining = dt
        used = 0
        while True:
            vmax = float(np.max(np.abs(_face_velocities(c, a, dx))))
            limit = CFL_SAFETY * 0.5 * dx / vmax if vmax > 0 else math.inf
            if remaining <= limit * (1.0 + 1e-12):
                u, c = _advance(u, c, params, a, dx, remaining, advection)
                break
            if used >= max_substeps:
                raise StepSizeError(
                    f"frame {j + 1} needs more than {max_substeps} sub-steps "
                    f"(dt={dt:.3e}, stable limit {limit:.3e})"
                )
            sub = remaining / math.ceil(remaining / limit)
            u, c = _advance(u, c, params, a, dx, sub, advection)
            remaining -= sub
            used += 1

        t = times[j + 1]
        bound = c0_floor * math.exp(-params.mu * t) * (1.0 - LOWER_BOUND_SLACK)
        if c.min() < bound:
            raise LowerBoundViolationError(
                f"min c = {c.min():.6e} fell below {bound:.6e} at t={t:.6g}"
            )
        frames.append(StateField(u=u, c=c, t=t))

    return StateTrajectory(grid=grid, frames=tuple(frames))


def restrict(traj: StateTrajectory, coarse: SimulationGrid) -> StateTrajectory:
    """Interpolate a trajectory onto another grid (linear in x and in t).

    The target grid must span the same space-time domain; its nodes and
    times need not be subsets of the source ones.
    """
    fine = traj.grid
    tol_x = 1e-12 * max(1.0, abs(fine.x_left), abs(fine.x_right))
    tol_t = 1e-12 * max(1.0, fine.t_final)
    if (
        coarse.x_left < fine.x_left - tol_x
        or coarse.x_right > fine.x_right + tol_x
        or coarse.t_final > fine.t_final + tol_t
    ):
        raise DomainMismatchError(
            f"target domain [{coarse.x_left}, {coarse.x_right}] x [0, {coarse.t_final}] "
            f"exceeds source [{fine.x_left}, {fine.x_right}] x [0, {fine.t_final}]"
        )

    src_t, src_x = fine.times(), fine.xs()
    qt = np.clip(coarse.times(), src_t[0], src_t[-1])
    qx = np.clip(coarse.xs(), src_x[0], src_x[-1])
    pts_t, pts_x = np.meshgrid(qt, qx, indexing="ij")
    query = np.column_stack([pts_t.ravel(), pts_x.ravel()])

    shape = (coarse.n_steps + 1, coarse.n_nodes)
    u_c = RegularGridInterpolator((src_t, src_x), traj.u_matrix())(query).reshape(shape)
    c_c = RegularGridInterpolator((src_t, src_x), traj.c_matrix())(query).reshape(shape)

    coarse_times = coarse.times()
    frames = tuple(
        StateField(u=u_c[j], c=c_c[j], t=coarse_times[j])
        for j in range(coarse.n_steps + 1)
    )
    return StateTrajectory(grid=coarse, frames=frames)


# ---------------------------------------------------------------------------
# serialization


def write_trajectory_csv(traj: StateTrajectory, path) -> None:
    """CSV with header t,x,u,c; row-major by frame then node; 15 sig. digits."""
    with open(path, "w", encoding="utf-8") as fh:
        _write_frames(fh, traj.grid, traj.u_matrix(), traj.c_matrix())


def _write_frames(fh, grid: SimulationGrid, U: np.ndarray, C: np.ndarray) -> None:
    xs = grid.xs()
    times = grid.times()
    fh.write("t,x,u,c\n")
    for j, t in enumerate(times):
        for i, x in enumerate(xs):
            fh.write(f"{t:.15g},{x:.15g},{U[j, i]:.15g},{C[j, i]:.15g}\n")


def _read_frame_csv(path, expect_comment: bool = False):
    """Parse a t,x,u,c table back into (grid, U, C, comment_line)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    comment = None
    if lines and lines[0].startswith("#"):
        comment = lines[0]
        lines = lines[1:]
    elif expect_comment:
        raise InvalidStateError(f"{path}: missing metadata header line")
    if not lines or lines[0] != "t,x,u,c":
        raise InvalidStateError(f"{path}: expected header 't,x,u,c'")
    data = np.array(
        [[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float
    )
    if data.ndim != 2 or data.shape[1] != 4:
        raise InvalidStateError(f"{path}: malformed rows")

    ts = np.unique(data[:, 0])
    xs = np.unique(data[:, 1])
    n_t, n_x = len(ts), len(xs)
    if n_t * n_x != data.shape[0]:
        raise InvalidStateError(f"{path}: incomplete frame/node table")
    for name, vals in (("t", ts), ("x", xs)):
        d = np.diff(vals)
        if len(d) and not np.allclose(d, d[0], rtol=1e-6, atol=1e-12 * max(1, abs(vals[-1]))):
            raise InvalidStateError(f"{path}: non-uniform {name} spacing")
    grid = SimulationGrid(
        x_left=float(xs[0]),
        x_right=float(xs[-1]),
        n_nodes=n_x,
        t_final=float(ts[-1]),
        n_steps=n_t - 1,
    )
    U = data[:, 2].reshape(n_t, n_x)
    C = data[:, 3].reshape(n_t, n_x)
    return grid, U, C, comment


def read_trajectory_csv(path) -> StateTrajectory:
    grid, U, C, _ = _read_frame_csv(path)
    times = grid.times()
    frames = tuple(
        StateField(u=U[j], c=C[j], t=times[j]) for j in range(grid.n_steps + 1)
    )
    return StateTrajectory(grid=grid, frames=frames)


_PARAM_KEYS = ("M", "D", "b", "h", "mu")
_GRID_KEYS = ("x_left", "x_right", "n_nodes", "t_final", "n_steps")


def write_params(params: PhysicalParams, grid: SimulationGrid, path) -> None:
    """Key-value text file with the physical and grid parameters."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in _PARAM_KEYS:
            fh.write(f"{key} = {getattr(params, key):.15g}\n")
        fh.write(f"x_left = {grid.x_left:.15g}\n")
        fh.write(f"x_right = {grid.x_right:.15g}\n")
        fh.write(f"n_nodes = {grid.n_nodes}\n")
        fh.write(f"t_final = {grid.t_final:.15g}\n")
        fh.write(f"n_steps = {grid.n_steps}\n")


def read_params(path) -> tuple[PhysicalParams, SimulationGrid]:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            if "=" not in ln:
                raise InvalidStateError(f"{path}: malformed line {ln!r}")
            key, raw = (part.strip() for part in ln.split("=", 1))
            if key not in _PARAM_KEYS + _GRID_KEYS:
                raise InvalidStateError(f"{path}: unknown key {key!r}")
            values[key] = raw
    missing = [k for k in _PARAM_KEYS + _GRID_KEYS if k not in values]
    if missing:
        raise InvalidStateError(f"{path}: missing keys {missing}")
    params = PhysicalParams(**{k: float(values[k]) for k in _PARAM_KEYS})
    grid = SimulationGrid(
        x_left=float(values["x_left"]),
        x_right=float(values["x_right"]),
        n_nodes=int(values["n_nodes"]),
        t_final=float(values["t_final"]),
        n_steps=int(values["n_steps"]),
    )
    return params, grid
