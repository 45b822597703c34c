"""Coupled matrix Dyson equations of the Hermitized ensemble.

For a covariance pair (S, S*), a radial parameter tau = |zeta|^2 and a
regularization eta > 0 the equations

    1/V1 = eta + S[V2] + tau (eta + S*[V1])^{-1},
    1/V2 = eta + S*[V1] + tau (eta + S[V2])^{-1},

have a unique positive-definite solution (V1, V2).  Together with

    U = (tau + (eta + S*[V1])(eta + S[V2]))^{-1}

they assemble the 2n x 2n solution of the matrix Dyson equation

    -M^{-1} = i eta + Z + S_blk[M],     M = [[i V1, -zeta U], [-conj(zeta) U*, i V2]],

whose normalized trace is the Stieltjes transform of the singular-value
distribution of X - zeta.  The eta -> 0 limit inside the bulk (tau below the
spectral radius) feeds the spectral-density formulas; outside the bulk the
limit is V_i = 0, U = 1/tau.

Solver scheme (not dictated by the theory; validated by the test suite):
damped alternating fixed-point iteration with Hermitian projection each
step, geometric eta-continuation with warm starts, one Richardson step to
eta = 0 and a trace-renormalized polish of the eta = 0 equations.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .covariance import CovarianceOperator, PerronData, spectral_radius
from .linalg import avg_trace, herm, hs_norm

DEFAULT_TOL = 1e-11
DEFAULT_ETA0 = 1.0
DEFAULT_RATIO = 0.5
ETA_FLOOR = 1e-9
DEFAULT_MARGIN = 1e-3


class ConvergenceError(RuntimeError):
    """Fixed-point iteration or continuation failed to converge."""


class EdgeProximityError(ValueError):
    """Requested tau is too close to (or on the wrong side of) the edge."""


@dataclass(frozen=True)
class DysonSolution:
    """Solution (V1, V2, U) of the coupled equations at one point (tau, eta)."""

    op: CovarianceOperator
    tau: float
    eta: float
    v1: np.ndarray
    v2: np.ndarray
    u: np.ndarray
    residual_dyson: float
    residual_u: float
    iterations: int
    converged: bool
    continuation_path: tuple[float, ...] = ()

    @property
    def avg_v1(self) -> float:
        return avg_trace(self.v1).real

    @property
    def avg_v2(self) -> float:
        return avg_trace(self.v2).real

    @property
    def avg_u(self) -> complex:
        return avg_trace(self.u)

    def to_json(self) -> str:
        """Serialize for regression fixtures (complex arrays as re/im)."""

        def cplx(a):
            a = np.asarray(a)
            return {"re": a.real.tolist(), "im": a.imag.tolist()}

        return json.dumps(
            {
                "tau": self.tau,
                "eta": self.eta,
                "v1": cplx(self.v1),
                "v2": cplx(self.v2),
                "u": cplx(self.u),
                "residual_dyson": self.residual_dyson,
                "residual_u": self.residual_u,
                "iterations": self.iterations,
                "converged": self.converged,
                "continuation_path": list(self.continuation_path),
            }
        )


@dataclass(frozen=True)
class BlockSolution:
    """Assembled 2n x 2n matrix Dyson solution at a spectral point."""

    zeta: complex
    eta: float
    m: np.ndarray
    mde_residual: float


def _gram_pair(op, v1, v2, eta):
    """(eta + S*[V1], eta + S[V2]) for the current iterate."""
    n = op.dimension
    eye = np.eye(n)
    c = eta * eye + op.apply(v1, adjoint=True)
    d = eta * eye + op.apply(v2)
    return c, d


def _residual(op, v1, v2, tau, eta):
    """Max normalized Frobenius residual of the two coupled equations."""
    n = op.dimension
    eye = np.eye(n)
    c, d = _gram_pair(op, v1, v2, eta)
    b1 = d + tau * np.linalg.inv(c) if tau != 0 else d
    b2 = c + tau * np.linalg.inv(d) if tau != 0 else c
    return max(hs_norm(eye - b1 @ v1), hs_norm(eye - b2 @ v2))


def _compute_u(op, v1, v2, tau, eta):
    n = op.dimension
    c, d = _gram_pair(op, v1, v2, eta)
    u = np.linalg.inv(tau * np.eye(n) + c @ d)
    res = max(
        hs_norm(u - v1 @ np.linalg.inv(c)),
        hs_norm(u - np.linalg.solve(d, v2)),
    )
    return u, res


def solve_at(
    op: CovarianceOperator,
    tau: float,
    eta: float,
    warm_start: DysonSolution | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = 20_000,
    theta: float = 0.5,
) -> DysonSolution:
    """Solve the coupled equations at eta > 0 by damped fixed-point iteration.

    Each sweep replaces V1 by a convex combination of the old iterate and
    Herm[(eta + S[V2] + tau (eta + S*[V1])^{-1})^{-1}], then updates V2
    symmetrically with the fresh V1.  The damping is halved whenever the
    equation residual increases.  Returns the best iterate flagged as
    non-converged if ``max_iter`` is exhausted.

    Every sweep ends with the rescaling (V1, V2) -> (s V1, V2/s) that
    equalizes the normalized traces.  The exact solution satisfies
    <V1> = <V2>, so the fixed point is unchanged, but the rescaling removes
    the near-neutral scale mode (V1, -V2) whose contraction factor
    degenerates like 1 - O(eta) as eta -> 0.
    """
    if eta <= 0:
        raise ValueError("solve_at requires eta > 0; use solve_bulk for the limit")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    n = op.dimension
    eye = np.eye(n)
    if warm_start is not None:
        v1 = np.array(warm_start.v1, dtype=complex)
        v2 = np.array(warm_start.v2, dtype=complex)
    else:
        guess = 1.0 / (1.0 + eta + np.sqrt(tau))
        v1 = guess * eye.astype(complex)
        v2 = v1.copy()

    theta0 = theta
    res_prev = np.inf
    best = (v1, v2, np.inf)
    it = 0
    for it in range(1, max_iter + 1):
        c = eta * eye + op.apply(v1, adjoint=True)
        d = eta * eye + op.apply(v2)
        b1 = d + tau * np.linalg.inv(c) if tau != 0 else d
        v1 = (1 - theta) * v1 + theta * herm(np.linalg.inv(b1))
        c = eta * eye + op.apply(v1, adjoint=True)
        b2 = c + tau * np.linalg.inv(d) if tau != 0 else c
        v2 = (1 - theta) * v2 + theta * herm(np.linalg.inv(b2))
        s = np.sqrt(avg_trace(v2).real / avg_trace(v1).real)
        v1, v2 = v1 * s, v2 / s

        res = _residual(op, v1, v2, tau, eta)
        if res < best[2]:
            best = (v1.copy(), v2.copy(), res)
        if res <= tol:
            break
        # only damp on a clear increase; plain convergence may fluctuate
        if res > 1.5 * res_prev:
            theta = max(theta / 2, theta0 / 16)
        else:
            theta = min(theta * 1.1, theta0)
        res_prev = res
    v1, v2, res = best
    converged = res <= tol
    if not converged:
        warnings.warn(
            f"dyson iteration stalled at residual {res:.3e} "
            f"(tau={tau:g}, eta={eta:g}); returning best iterate",
            stacklevel=2,
        )
    if min(np.linalg.eigvalsh(v1)[0], np.linalg.eigvalsh(v2)[0]) <= 0:
        raise ConvergenceError(
            f"iterate lost positive definiteness at tau={tau:g}, eta={eta:g}"
        )
    u, res_u = _compute_u(op, v1, v2, tau, eta)
    return DysonSolution(
        op=op, tau=float(tau), eta=float(eta), v1=v1, v2=v2, u=u,
        residual_dyson=res, residual_u=res_u, iterations=it,
        converged=converged, continuation_path=(float(eta),),
    )


def _polish_bulk(op, v1, v2, tau, tol, max_iter, theta=0.5):
    """Damped iteration of the eta = 0 equations with trace renormalization.

    The eta = 0 system is invariant under (V1, V2) -> (t V1, V2/t); the
    rescaling after every sweep pins the trace constraint <V1> = <V2> and
    removes that neutral direction from the iteration.
    """
    n = op.dimension
    eye = np.eye(n)
    theta0 = theta
    res_prev = np.inf
    best = (v1, v2, np.inf)
    it = 0
    for it in range(1, max_iter + 1):
        c = op.apply(v1, adjoint=True)
        d = op.apply(v2)
        b1 = d + tau * np.linalg.inv(c) if tau != 0 else d
        v1 = (1 - theta) * v1 + theta * herm(np.linalg.inv(b1))
        c = op.apply(v1, adjoint=True)
        b2 = c + tau * np.linalg.inv(d) if tau != 0 else c
        v2 = (1 - theta) * v2 + theta * herm(np.linalg.inv(b2))
        s = np.sqrt(avg_trace(v2).real / avg_trace(v1).real)
        v1, v2 = v1 * s, v2 / s

        res = _residual(op, v1, v2, tau, 0.0)
        if res < best[2]:
            best = (v1.copy(), v2.copy(), res)
        if res <= tol:
            break
        if res > 1.5 * res_prev:
            theta = max(theta / 2, theta0 / 16)
        else:
            theta = min(theta * 1.1, theta0)
        res_prev = res
    return best + (it,)


def solve_bulk(
    op: CovarianceOperator,
    tau: float,
    perron: PerronData | None = None,
    warm_start: DysonSolution | None = None,
    tol: float = DEFAULT_TOL,
    eta0: float = DEFAULT_ETA0,
    ratio: float = DEFAULT_RATIO,
    eta_floor: float = ETA_FLOOR,
    margin: float | None = None,
) -> DysonSolution:
    """Bulk (eta -> 0) solution for tau inside the spectral disk.

    Geometric eta-continuation eta_k = eta0 * ratio^k down to ``eta_floor``
    with warm starts, one first-order Richardson step to eta = 0, then a
    polish of the eta = 0 equations under the trace constraint.  Refuses
    tau within ``margin`` of the spectral radius: the eta^{1/3} edge scaling
    breaks the fixed eta floor there and the edge expansion takes over.
    """
    if perron is None:
        perron = spectral_radius(op)
    rho = perron.rho
    if margin is None:
        margin = DEFAULT_MARGIN * rho
    if tau >= rho - margin:
        raise EdgeProximityError(
            f"tau={tau:g} is within margin {margin:g} of the edge rho={rho:g}"
        )
    if tau < 0:
        raise ValueError("tau must be nonnegative")

    # continuation ladder: geometric until just above the floor, then the
    # two rungs 2*eta_floor, eta_floor used by the Richardson step
    etas = []
    eta = eta0
    while eta > 4 * eta_floor:
        etas.append(eta)
        eta *= ratio
    etas += [2 * eta_floor, eta_floor]

    sol = warm_start
    path = []
    sols = {}
    for eta_k in etas:
        # intermediate rungs only seed the next warm start; the eta = 0
        # polish below is what sets the final accuracy
        rung_tol = max(tol, 1e-8 if eta_k <= 4 * eta_floor else 1e-7)
        sol = solve_at(op, tau, eta_k, warm_start=sol, tol=rung_tol)
        path.append(eta_k)
        sols[eta_k] = sol
        if not sol.converged:
            raise ConvergenceError(
                f"continuation stalled at eta={eta_k:g} "
                f"(residual {sol.residual_dyson:.3e}, tau={tau:g})"
            )

    # first-order Richardson: V(0) = 2 V(eta) - V(2 eta) + O(eta^2)
    v1 = herm(2 * sols[eta_floor].v1 - sols[2 * eta_floor].v1)
    v2 = herm(2 * sols[eta_floor].v2 - sols[2 * eta_floor].v2)

    v1, v2, res, it = _polish_bulk(op, v1, v2, tau, tol, max_iter=50_000)
    if res > max(tol, 1e-8):
        raise ConvergenceError(
            f"eta=0 polish stalled at residual {res:.3e} for tau={tau:g}"
        )
    u, res_u = _compute_u(op, v1, v2, tau, 0.0)
    total_iter = sum(s.iterations for s in sols.values()) + it
    return DysonSolution(
        op=op, tau=float(tau), eta=0.0, v1=v1, v2=v2, u=u,
        residual_dyson=res, residual_u=res_u, iterations=total_iter,
        converged=True, continuation_path=tuple(path),
    )


def solve_outside(
    op: CovarianceOperator,
    tau: float,
    eta: float = 0.0,
    perron: PerronData | None = None,
    margin: float | None = None,
    tol: float = DEFAULT_TOL,
) -> DysonSolution:
    """Solution for tau beyond the spectral radius.

    At eta = 0 the limit is exact: V1 = V2 = 0 and U = identity/tau (the
    off-diagonal blocks of M extend continuously to -1/zeta).  For eta > 0
    this delegates to ``solve_at`` and checks the V ~ eta/tau scaling.
    """
    if perron is None:
        perron = spectral_radius(op)
    rho = perron.rho
    if margin is None:
        margin = DEFAULT_MARGIN * rho
    if tau <= rho + margin:
        raise EdgeProximityError(
            f"tau={tau:g} is not outside the bulk (rho={rho:g}, margin={margin:g})"
        )
    n = op.dimension
    if eta == 0.0:
        zero = np.zeros((n, n), dtype=complex)
        u = np.eye(n, dtype=complex) / tau
        # residual of the quadratic U identity at the exact limit
        res_u = hs_norm(u - tau * (u @ u))
        return DysonSolution(
            op=op, tau=float(tau), eta=0.0, v1=zero, v2=zero.copy(), u=u,
            residual_dyson=0.0, residual_u=res_u, iterations=0,
            converged=True, continuation_path=(0.0,),
        )
    sol = solve_at(op, tau, eta, tol=tol)
    ratio = sol.avg_v1 / (eta / tau)
    if not 0.01 <= ratio <= 100:
        warnings.warn(
            f"<V1> = {sol.avg_v1:.3e} far from the eta/tau = {eta / tau:.3e} "
            "scaling expected outside the bulk",
            stacklevel=2,
        )
    return sol


def assemble_block(sol: DysonSolution, zeta: complex) -> BlockSolution:
    """Assemble M = [[iV1, -zeta U], [-conj(zeta) U*, iV2]] and its residual.

    The residual is || 1 + (i eta + Z + S_blk[M]) M ||_hs with
    Z = [[0, zeta], [conj(zeta), 0]] and S_blk[M] = diag(S[M_22], S*[M_11]).
    """
    zeta = complex(zeta)
    if abs(abs(zeta) ** 2 - sol.tau) > 1e-12 * max(1.0, sol.tau):
        raise ValueError(f"|zeta|^2 = {abs(zeta)**2:g} does not match tau = {sol.tau:g}")
    op = sol.op
    n = op.dimension
    m = np.block(
        [
            [1j * sol.v1, -zeta * sol.u],
            [-np.conj(zeta) * sol.u.conj().T, 1j * sol.v2],
        ]
    )
    z = np.block(
        [
            [np.zeros((n, n)), zeta * np.eye(n)],
            [np.conj(zeta) * np.eye(n), np.zeros((n, n))],
        ]
    )
    s_blk = np.block(
        [
            [op.apply(m[n:, n:]), np.zeros((n, n))],
            [np.zeros((n, n)), op.apply(m[:n, :n], adjoint=True)],
        ]
    )
    eye2 = np.eye(2 * n)
    residual = hs_norm(eye2 + (1j * sol.eta * eye2 + z + s_blk) @ m)
    return BlockSolution(zeta=zeta, eta=sol.eta, m=m, mde_residual=residual)


def identity_suite(sol: DysonSolution) -> dict[str, float]:
    """Residuals of the exact algebraic identities satisfied by a solution.

    Checks the quadratic relation U = V1 V2 + tau U^2, the sandwich identity
    (eta + S*[V1]) V1^{-1} = V2^{-1} (eta + S[V2]) (skipped when the V_i are
    singular, e.g. at the exact outside limit), the two quadratic forms of
    the imaginary part of the matrix Dyson equation, and the trace identity.
    Returns the individual residuals plus their maximum under ``"max"``.
    """
    op, tau, eta = sol.op, sol.tau, sol.eta
    v1, v2, u = sol.v1, sol.v2, sol.u
    n = op.dimension
    eye = np.eye(n)
    sv2 = op.apply(v2)
    sv1 = op.apply(v1, adjoint=True)

    report: dict[str, float] = {}
    report["u_quadratic"] = hs_norm(u - (v1 @ v2 + tau * u @ u))
    report["trace"] = abs(avg_trace(v1).real - avg_trace(v2).real)

    ev1 = np.linalg.eigvalsh(v1)
    ev2 = np.linalg.eigvalsh(v2)
    if min(ev1[0], ev2[0]) > 1e-13:
        lhs = (eta * eye + sv1) @ np.linalg.inv(v1)
        rhs = np.linalg.inv(v2) @ (eta * eye + sv2)
        report["sandwich"] = hs_norm(lhs - rhs)
    uus = u @ u.conj().T
    usu = u.conj().T @ u
    report["im_mde_1"] = hs_norm(
        v1 - eta * (v1 @ v1 + tau * uus) - v1 @ sv2 @ v1
        - tau * u @ sv1 @ u.conj().T
    )
    report["im_mde_2"] = hs_norm(
        v2 - eta * (v2 @ v2 + tau * usu) - v2 @ sv1 @ v2
        - tau * u.conj().T @ sv2 @ u
    )
    report["max"] = max(v for k, v in report.items() if k != "max")
    return report


def v_scale_bound(tau: float, eta: float, rho: float = 1.0) -> float:
    """Order-of-magnitude size of <V_i> predicted by the scale function.

    Piecewise in normalized units (spectral radius one); inputs for a
    general operator are rescaled covariantly.
    """
    t, e = tau / rho, eta / np.sqrt(rho)
    if e >= 1.0:
        val = e / (e**2 + t)
    elif t <= 1.0:
        val = np.sqrt(1.0 - t) + e ** (1.0 / 3.0)
    else:
        val = e / (t - 1.0 + e ** (2.0 / 3.0))
    return float(val * np.sqrt(rho))
