"""Self-consistent spectral density, its edge behaviour and log potential.

The density of the limiting eigenvalue distribution is radially symmetric,
a function of tau = |zeta|^2 alone, supported on the disk tau <= rho with
rho the spectral radius of the covariance super-operator.  Two independent
evaluation routes are implemented:

* stability route: sigma = <Y, (1 - T F^2 T) Y> / (pi tau) with Y the
  deflated solve of (1 - F T) against (K2^2, K1^2) at eta = 0,
* derivative route: sigma = d/dtau [ tau <U(tau, 0)> ] / pi by central
  finite differences of bulk solutions.

They agree on interior points and cross-validate each other.  At the edge
the density drops discontinuously to zero; the jump height has the closed
form <S1 S2>^2 / (pi rho <(S1 S2)^2>) in the Perron eigenmatrices, and the
approach to it is linear in 1 - |zeta|/sqrt(rho).  The log potential

    L(zeta) = (<V1 S[V2]> - <log(tau + S*[V1] S[V2])>) / 2

(inside; -log|zeta| outside) ties the density to the Brown measure:
its distributional Laplacian is -2 pi sigma.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .covariance import (
    CovarianceOperator,
    PerronData,
    check_flatness,
    op_fingerprint,
    spectral_radius,
)
from .dyson import DysonSolution, solve_bulk
from .linalg import avg_trace, hs_inner
from .stability import _deflated_solve_info, build

# below this fraction of rho the 1/tau prefactor makes the stability
# formula ill-conditioned and the derivative route takes over
FD_SWITCH = 0.05
# grid points beyond this fraction of rho come from the edge fit
EDGE_WINDOW = 0.995


class DensityError(ValueError):
    pass


@dataclass(frozen=True)
class DensityProfile:
    """Radial density profile sigma(tau) with normalization bookkeeping."""

    rho: float
    tau_grid: np.ndarray
    sigma_values: np.ndarray
    jump: float
    normalization: float
    methods: tuple[str, ...]
    model_hash: str

    def to_rows(self):
        """Rows (tau, abs_zeta, sigma, method) for delimited output."""
        for t, s, m in zip(self.tau_grid, self.sigma_values, self.methods):
            yield float(t), float(np.sqrt(t)), float(s), m

    def metadata(self) -> dict:
        return {
            "model_hash": self.model_hash,
            "rho": self.rho,
            "jump": self.jump,
            "normalization": self.normalization,
        }


@dataclass(frozen=True)
class LogPotential:
    zeta: complex
    l_value: float


def _sigma_stability(
    op: CovarianceOperator, tau: float, perron: PerronData,
    warm_start: DysonSolution | None = None,
):
    """Density via the deflated stability solve; returns (sigma, sol, ok)."""
    sol = solve_bulk(op, tau, perron=perron, warm_start=warm_start)
    bundle = build(sol)
    y, _, ok = _deflated_solve_info(bundle, bundle.perron_pair())
    z = y - bundle.apply_T(bundle.apply_F(bundle.apply_F(bundle.apply_T(y))))
    sigma = y.inner(z).real / (np.pi * tau)
    return sigma, sol, ok


def _sigma_derivative(
    op: CovarianceOperator, tau: float, perron: PerronData,
    warm_start: DysonSolution | None = None,
):
    """Density via finite differences of tau <U(tau, 0)>; returns (sigma, sol)."""
    rho = perron.rho
    h = max(1e-5, 1e-3 * (rho - tau))
    h = min(h, 0.45 * (rho * (1.0 - 2e-3) - tau)) if tau + h >= rho * 0.997 else h

    def g(t, ws):
        s = solve_bulk(op, t, perron=perron, warm_start=ws)
        return t * avg_trace(s.u).real, s

    center = solve_bulk(op, tau, perron=perron, warm_start=warm_start)
    if tau >= h:
        g_plus, _ = g(tau + h, center)
        g_minus, _ = g(tau - h, center)
        sigma = (g_plus - g_minus) / (2 * h * np.pi)
    else:
        g_plus, _ = g(tau + h, center)
        sigma = (g_plus - tau * avg_trace(center.u).real) / (h * np.pi)
    return sigma, center


def sigma_at(
    op: CovarianceOperator,
    tau: float,
    perron: PerronData | None = None,
    method: str = "auto",
    warm_start: DysonSolution | None = None,
    margin_factor: float = 1e-3,
) -> float:
    """Density value at tau = |zeta|^2 inside the bulk.

    ``method`` is "stability", "finite_difference" or "auto" (stability with
    the derivative route for small tau and as a fallback when the deflated
    solve stagnates).
    """
    if perron is None:
        perron = spectral_radius(op)
    rho = perron.rho
    if tau < 0:
        raise DensityError("tau must be nonnegative")
    if tau >= rho * (1.0 - margin_factor):
        raise DensityError(
            f"tau={tau:g} too close to the edge rho={rho:g}; "
            "use jump_height / the edge expansion there"
        )
    if method not in ("auto", "stability", "finite_difference"):
        raise DensityError(f"unknown method {method!r}")
    use_fd = method == "finite_difference" or (
        method == "auto" and tau < FD_SWITCH * rho
    )
    if not use_fd:
        sigma, _, ok = _sigma_stability(op, tau, perron, warm_start)
        if ok:
            return sigma
        if method == "stability":
            warnings.warn("deflated solve stagnated; returning degraded value",
                          stacklevel=2)
            return sigma
        warnings.warn(
            "deflated solve stagnated; falling back to the derivative route",
            stacklevel=2,
        )
    sigma, _ = _sigma_derivative(op, tau, perron, warm_start)
    return sigma


def jump_height(op: CovarianceOperator, perron: PerronData | None = None) -> float:
    """Boundary value of the density at the edge, <S1 S2>^2/(pi rho <(S1 S2)^2>)."""
    if perron is None:
        perron = spectral_radius(op)
    s1s2 = perron.s1 @ perron.s2
    num = avg_trace(s1s2).real ** 2
    den = avg_trace(s1s2 @ s1s2).real
    return num / (np.pi * perron.rho * den)


def edge_fit(
    op: CovarianceOperator,
    perron: PerronData | None = None,
    window: tuple[float, float] = (0.9, 0.99),
    points: int = 8,
):
    """Linear fit of sigma in the edge variable 1 - sqrt(tau/rho).

    Returns (intercept, slope, max_residual): ``intercept`` is the
    extrapolated boundary value, directly comparable to ``jump_height``,
    and sigma(tau) ~ intercept + slope * (1 - sqrt(tau/rho)) on the window.
    """
    if perron is None:
        perron = spectral_radius(op)
    rho = perron.rho
    taus = np.linspace(window[0] * rho, window[1] * rho, points)
    vals = []
    ws = None
    for t in taus:
        sigma, ws, _ = _sigma_stability(op, t, perron, warm_start=ws)
        vals.append(sigma)
    vals = np.array(vals)
    x = 1.0 - np.sqrt(taus / rho)
    coeffs = np.polyfit(x, vals, 1)
    fit = np.polyval(coeffs, x)
    resid = float(np.max(np.abs(fit - vals)))
    return float(coeffs[1]), float(coeffs[0]), resid


def sigma_profile(
    op: CovarianceOperator,
    points: int = 64,
    span: float = 0.95,
    tau_grid: np.ndarray | None = None,
    perron: PerronData | None = None,
    threads: int = 1,
) -> DensityProfile:
    """Tabulate sigma on a radial grid and compute its normalization.

    The total mass pi * integral of sigma over [0, rho] is assembled by
    trapezoidal quadrature on the grid plus the edge correction that
    interpolates linearly between the last grid value and the jump height.
    Grid points beyond the solver's edge window are filled from the edge
    fit rather than the solver.
    """
    if perron is None:
        perron = spectral_radius(op)
    rho = perron.rho
    if tau_grid is None:
        if points < 2:
            raise DensityError("insufficient grid: at least 2 points required")
        if not 0 < span < 1:
            raise DensityError("span must lie in (0, 1)")
        tau_grid = np.linspace(0.0, span * rho, points)
    else:
        tau_grid = np.asarray(tau_grid, dtype=float)
        if tau_grid.size < 2:
            raise DensityError("insufficient grid: at least 2 points required")
        if np.any(np.diff(tau_grid) <= 0) or tau_grid[0] < 0 or tau_grid[-1] >= rho:
            raise DensityError("grid must be ascending inside [0, rho)")

    jump = jump_height(op, perron)
    solver_mask = tau_grid < EDGE_WINDOW * rho * (1.0 - 1e-3)
    edge_params = None
    if not solver_mask.all():
        intercept, slope, _ = edge_fit(op, perron)
        edge_params = (intercept, slope)

    def run_block(block):
        ws = None
        out = []
        for t in block:
            if t < FD_SWITCH * rho:
                sigma, ws = _sigma_derivative(op, t, perron, warm_start=ws)
                out.append((sigma, "finite_difference"))
            else:
                sigma, ws, ok = _sigma_stability(op, t, perron, warm_start=ws)
                if not ok:
                    sigma, ws = _sigma_derivative(op, t, perron, warm_start=ws)
                    out.append((sigma, "finite_difference"))
                else:
                    out.append((sigma, "stability"))
        return out

    solver_taus = tau_grid[solver_mask]
    blocks = np.array_split(solver_taus, max(1, min(threads, len(solver_taus))))
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run_block, blocks))
    else:
        results = [run_block(b) for b in blocks]
    solved = [item for block in results for item in block]

    sigma_values = np.empty_like(tau_grid)
    methods = []
    i = 0
    for k, t in enumerate(tau_grid):
        if solver_mask[k]:
            sigma_values[k], m = solved[i]
            methods.append(m)
            i += 1
        else:
            intercept, slope = edge_params
            sigma_values[k] = intercept + slope * (1.0 - np.sqrt(t / rho))
            methods.append("edge_fit")

    body = np.trapezoid(sigma_values, tau_grid)
    tail = 0.5 * (sigma_values[-1] + jump) * (rho - tau_grid[-1])
    normalization = float(np.pi * (body + tail))
    return DensityProfile(
        rho=rho,
        tau_grid=tau_grid,
        sigma_values=sigma_values,
        jump=jump,
        normalization=normalization,
        methods=tuple(methods),
        model_hash=op_fingerprint(op),
    )


def solve_edge_cubic(
    op: CovarianceOperator,
    tau: float,
    eta: float = 0.0,
    perron: PerronData | None = None,
) -> float:
    """Leading edge coefficient alpha with V_i ~ alpha S_i near the edge.

    In normalized units alpha solves
        alpha^3 <(S1 S2)^2> + alpha (tau - 1) <S1 S2> - eta = 0;
    general operators are rescaled covariantly.  Returns the positive root,
    or the real root closest to positive when none exists (with a warning).
    """
    if perron is None:
        perron = spectral_radius(op)
    rho = perron.rho
    if abs(tau - rho) > 0.2 * rho:
        raise DensityError(
            f"edge expansion only valid within 20% of the edge (tau={tau:g}, rho={rho:g})"
        )
    s1s2 = perron.s1 @ perron.s2
    m1 = avg_trace(s1s2).real
    m2 = avg_trace(s1s2 @ s1s2).real
    tau_n = tau / rho
    eta_n = eta / np.sqrt(rho)
    roots = np.roots([m2, 0.0, (tau_n - 1.0) * m1, -eta_n])
    real_roots = roots[np.abs(roots.imag) < 1e-10].real
    positive = real_roots[real_roots > 0]
    if positive.size:
        alpha_n = float(positive.max())
    else:
        alpha_n = float(real_roots[np.argmin(np.abs(real_roots))]) if real_roots.size else 0.0
        warnings.warn(f"no positive root of the edge cubic; nearest real root {alpha_n:g}",
                      stacklevel=2)
    return alpha_n / np.sqrt(rho)


def _log_potential_inside(op, sol, tau):
    sv2 = op.apply(sol.v2)
    sv1 = op.apply(sol.v1, adjoint=True)
    cross = hs_inner(sol.v1, sv2).real
    mu = np.linalg.eigvals(sv1 @ sv2)
    if np.any(mu.real <= -1e-12) or np.any(np.abs(mu.imag) > 1e-8 * (1 + np.abs(mu.real))):
        raise DensityError(
            "eigenvalues of S*[V1] S[V2] not positive; solver output inaccurate"
        )
    return 0.5 * (cross - float(np.mean(np.log(tau + mu.real))))


def log_potential(
    op: CovarianceOperator,
    zeta: complex,
    perron: PerronData | None = None,
    warm_start: DysonSolution | None = None,
) -> LogPotential:
    """Logarithmic potential of the density at a spectral point.

    Inside the disk L = (<V1 S[V2]> - <log det(tau + S*[V1] S[V2])>/n)/2,
    collapsing the symmetric product via det(tau + AB) = det(tau + BA);
    outside L = -log|zeta| exactly, and the two branches meet continuously
    at the edge.
    """
    if perron is None:
        perron = spectral_radius(op)
    rho = perron.rho
    tau = abs(zeta) ** 2
    if tau >= rho * (1.0 - 1e-3):
        if tau == 0:
            raise DensityError("zeta = 0 cannot be outside the disk")
        return LogPotential(zeta=complex(zeta), l_value=-float(np.log(abs(zeta))))
    sol = solve_bulk(op, tau, perron=perron, warm_start=warm_start)
    return LogPotential(zeta=complex(zeta), l_value=_log_potential_inside(op, sol, tau))


def _log_potential_sweep(op, taus, perron):
    """L(tau) for many radii with one warm-start chain (sorted internally)."""
    order = np.argsort(taus)
    values = np.empty(len(taus))
    ws = None
    rho = perron.rho
    for idx in order:
        t = taus[idx]
        if t >= rho * (1.0 - 1e-3):
            values[idx] = -0.5 * np.log(t)
        else:
            sol = solve_bulk(op, t, perron=perron, warm_start=ws)
            values[idx] = _log_potential_inside(op, sol, t)
            ws = sol
    return values


def laplacian_check(
    op: CovarianceOperator,
    centers,
    h: float,
    perron: PerronData | None = None,
) -> float:
    """Max relative deviation of the five-point Laplacian of L from -2 pi sigma.

    ``centers`` is an iterable of complex points; every stencil must stay at
    least three steps inside the edge.
    """
    if perron is None:
        perron = spectral_radius(op)
    rho = perron.rho
    centers = [complex(z) for z in centers]
    for z in centers:
        if abs(z) + 3 * h > np.sqrt(rho):
            raise DensityError(
                f"center {z:g} closer than 3 grid steps to the edge"
            )
    stencil = []
    for z in centers:
        stencil += [z, z + h, z - h, z + 1j * h, z - 1j * h]
    taus = np.array([abs(z) ** 2 for z in stencil])
    l_vals = _log_potential_sweep(op, taus, perron)

    worst = 0.0
    ws = None
    for i, z in enumerate(centers):
        l0, lxp, lxm, lyp, lym = l_vals[5 * i : 5 * i + 5]
        lap = (lxp + lxm + lyp + lym - 4 * l0) / h**2
        sigma = sigma_at(op, abs(z) ** 2, perron=perron, warm_start=ws)
        dev = abs(lap + 2 * np.pi * sigma) / (2 * np.pi * sigma)
        worst = max(worst, dev)
    return worst


def brown_measure(coefficients, points: int = 64, span: float = 0.95,
                  threads: int = 1) -> DensityProfile:
    """Density of the Brown measure of sum_j a_j (x) c_j, c_j free circular.

    Builds the matching covariance super-operator S[A] = sum_j a_j A a_j^*
    and delegates to the radial profile.  A failing flatness probe only
    warns: the density may then lose its strict positivity guarantees.
    """
    op = CovarianceOperator.kronecker(coefficients)
    check_flatness(op)
    return sigma_profile(op, points=points, span=span, threads=threads)
