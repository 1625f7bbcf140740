"""Independent reference implementations used as test oracles.

Everything here is deliberately written the slow way (scalar loops, dense
matrices, generic quadrature) and shares no code with the package, so
agreement is evidence rather than tautology.
"""

import numpy as np


def dense_one_step(u, c, params, a_func, dx, dt, advection="blended"):
    """One IMEX step via dense operator matrices and scalar loops.

    Mirrors the documented scheme: explicit conservative flux difference
    for the chemotaxis term, implicit diffusion with ghost-node
    reflection, implicit decay, production frozen at the current u.
    """
    u = np.asarray(u, dtype=float)
    c = np.asarray(c, dtype=float)
    n = len(u)

    v = np.zeros(n - 1)
    for k in range(n - 1):
        cm = 0.5 * (c[k] + c[k + 1])
        v[k] = float(a_func(cm)) * (c[k + 1] - c[k]) / dx

    flux = np.zeros(n - 1)
    for k in range(n - 1):
        if advection == "upwind":
            uf = u[k] if v[k] >= 0 else u[k + 1]
        elif advection == "blended":
            if abs(v[k] * dx / params.M) <= 2.0:
                uf = 0.5 * (u[k] + u[k + 1])
            else:
                uf = u[k] if v[k] >= 0 else u[k + 1]
        else:
            raise ValueError(advection)
        flux[k] = v[k] * uf

    w = np.full(n, dx)
    w[0] = w[-1] = 0.5 * dx
    ustar = np.zeros(n)
    for i in range(n):
        right = flux[i] if i < n - 1 else 0.0
        left = flux[i - 1] if i > 0 else 0.0
        ustar[i] = u[i] - dt * (right - left) / w[i]

    lap = np.zeros((n, n))
    lap[0, 0], lap[0, 1] = -2.0, 2.0
    lap[n - 1, n - 1], lap[n - 1, n - 2] = -2.0, 2.0
    for i in range(1, n - 1):
        lap[i, i - 1 : i + 2] = (1.0, -2.0, 1.0)
    lap /= dx * dx

    eye = np.eye(n)
    u_new = np.linalg.solve(eye - dt * params.M * lap, ustar)
    rhs = c + dt * params.b * u / (u + params.h)
    c_new = np.linalg.solve((1.0 + params.mu * dt) * eye - dt * params.D * lap, rhs)
    u_new = np.where((u_new < 0.0) & (u_new > -1e-12), 0.0, u_new)
    return u_new, c_new


def dense_diffusion_solve(u0, c0, params, grid):
    """Reference solve with the chemotaxis term removed entirely.

    Separate code path (no flux assembly at all), for a-equiv-0 controls.
    """
    n = grid.n_nodes
    dx, dt = grid.dx, grid.dt
    lap = np.zeros((n, n))
    lap[0, 0], lap[0, 1] = -2.0, 2.0
    lap[n - 1, n - 1], lap[n - 1, n - 2] = -2.0, 2.0
    for i in range(1, n - 1):
        lap[i, i - 1 : i + 2] = (1.0, -2.0, 1.0)
    lap /= dx * dx
    eye = np.eye(n)
    au = eye - dt * params.M * lap
    ac = (1.0 + params.mu * dt) * eye - dt * params.D * lap

    u = np.asarray(u0, dtype=float).copy()
    c = np.asarray(c0, dtype=float).copy()
    us, cs = [u.copy()], [c.copy()]
    for _ in range(grid.n_steps):
        rhs = c + dt * params.b * u / (u + params.h)
        u = np.linalg.solve(au, u)
        c = np.linalg.solve(ac, rhs)
        us.append(u.copy())
        cs.append(c.copy())
    return np.array(us), np.array(cs)


def simpson_gram_entry(i, j, n_basis, c_min, c_max, n_panels=4000):
    """Numerical integral of phi_i * phi_j over [c_min, c_max]."""
    knots = np.linspace(c_min, c_max, n_basis)

    def hat(k, x):
        y = 1.0 - np.abs(x - knots[k]) / (knots[1] - knots[0])
        return np.maximum(y, 0.0)

    xs = np.linspace(c_min, c_max, 2 * n_panels + 1)
    vals = hat(i, xs) * hat(j, xs)
    h = (c_max - c_min) / (2 * n_panels)
    weights = np.ones_like(xs)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    return h / 3.0 * float(np.dot(weights, vals))


def quadrature_sq_distance(a_func, b_func, c_min, c_max, breakpoints=None):
    """Simpson integral of (a - b)^2 over [c_min, c_max].

    When breakpoints (e.g. hat knots) are given, each subinterval is
    integrated separately, making the rule exact for piecewise-linear
    a and b up to roundoff.
    """
    if breakpoints is None:
        breakpoints = np.linspace(c_min, c_max, 2001)
    total = 0.0
    for lo, hi in zip(breakpoints[:-1], breakpoints[1:]):
        xs = np.linspace(lo, hi, 21)
        vals = (np.asarray(a_func(xs)) - np.asarray(b_func(xs))) ** 2
        h = (hi - lo) / 20
        weights = np.ones_like(xs)
        weights[1:-1:2] = 4.0
        weights[2:-1:2] = 2.0
        total += h / 3.0 * float(np.dot(weights, vals))
    return total


def small_problem(alpha=1e-4, delta=1e-3, seed=3, n_basis=4, truth_value=1.5):
    """Compact same-mesh inverse problem: cheap, smooth, identifiable.

    The basis interval is fitted to the realized concentration range so
    every knot is informed by data.  Same-mesh data generation is fine at
    unit level; the mesh-separation guard is exercised in the synthdata
    tests.
    """
    from chemid.inversion import TikhonovProblem
    from chemid.pde import PhysicalParams, SimulationGrid, solve_forward
    from chemid.sensitivity import SensitivityFunction, concentration_range
    from chemid.synthdata import add_noise, myerscough_initial_data

    p = PhysicalParams(M=0.25, D=1.0, b=8.0, h=1.0, mu=8.0)
    g = SimulationGrid(0.0, 1.0, 21, 0.5, 120)
    u0, c0 = myerscough_initial_data(g)
    a_const = SensitivityFunction.constant(truth_value, 0.3, 0.8, n_basis)
    truth = solve_forward(u0, c0, p, a_const, g)
    lo, hi = concentration_range(truth, padding=0.05)
    a_true = SensitivityFunction.constant(truth_value, lo, hi, n_basis)
    data = add_noise(truth, delta, seed)
    a_star = SensitivityFunction.constant(1.0, lo, hi, n_basis)
    prob = TikhonovProblem(
        data=data, alpha=alpha, a_star=a_star, params=p, u0=u0, c0=c0
    )
    return prob, a_true, truth
