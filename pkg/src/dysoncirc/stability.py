"""Stability operators of the coupled Dyson system at a solution point.

The linearization of the coupled equations acts on pairs of n x n matrices
with the scalar product <(A1,B1),(A2,B2)> = (<A1,A2> + <B1,B2>)/2.  Its
reduced form

    L[(A, B)] = (A - tau U S*[A] U^* + V1 S[B] V1,
                 B - tau U^* S[B] U + V2 S*[A] V2)

factorizes as L = V^{-1} (1 - T F) V through three auxiliary operators
built from

    P = V1^{-1/2} U V2^{-1/2},     K1 = (1 + tau P^* P)^{-1/4},
                                   K2 = (1 + tau P P^*)^{-1/4}.

T is a self-adjoint contraction, F is self-adjoint, positivity preserving
and has norm one exactly in the eta -> 0 bulk limit, where (K2^2, K1^2) is
its Perron eigenvector and V[V_-] = (K2^2, -K1^2) spans the kernel of
1 - F T.  The spectral-density formula consumes the solve of (1 - F T)
deflated against that one-dimensional kernel.

Everything here is matrix-free; dense materializations of the operators on
the 2n^2-dimensional pair space are provided as brute-force oracles for
moderate n.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .covariance import CovarianceOperator
from .dyson import DysonSolution
from .linalg import herm, herm_power, hs_inner

V_EIG_FLOOR = 1e-13
DENSE_PAIR_LIMIT = 24


class EdgeTooCloseError(ValueError):
    """V_i has eigenvalues below the floor; the bundle would be garbage."""


@dataclass(frozen=True)
class MatrixPair:
    """Pair of n x n matrices with the averaged scalar product."""

    first: np.ndarray
    second: np.ndarray

    def __add__(self, other):
        return MatrixPair(self.first + other.first, self.second + other.second)

    def __sub__(self, other):
        return MatrixPair(self.first - other.first, self.second - other.second)

    def __mul__(self, scalar):
        return MatrixPair(scalar * self.first, scalar * self.second)

    __rmul__ = __mul__

    def inner(self, other: "MatrixPair") -> complex:
        return 0.5 * (
            hs_inner(self.first, other.first) + hs_inner(self.second, other.second)
        )

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self).real))

    def to_vec(self) -> np.ndarray:
        return np.concatenate([self.first.ravel(), self.second.ravel()])

    @staticmethod
    def from_vec(vec: np.ndarray, n: int) -> "MatrixPair":
        return MatrixPair(vec[: n * n].reshape(n, n), vec[n * n :].reshape(n, n))

    @staticmethod
    def e_minus(n: int) -> "MatrixPair":
        return MatrixPair(np.eye(n, dtype=complex), -np.eye(n, dtype=complex))

    @staticmethod
    def e_plus(n: int) -> "MatrixPair":
        return MatrixPair(np.eye(n, dtype=complex), np.eye(n, dtype=complex))


@dataclass(frozen=True)
class StabilityBundle:
    """Precomputed matrices and operator handles at a Dyson solution."""

    sol: DysonSolution
    p: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    sqrt_v1: np.ndarray
    sqrt_v2: np.ndarray
    inv_sqrt_v1: np.ndarray
    inv_sqrt_v2: np.ndarray

    @property
    def op(self) -> CovarianceOperator:
        return self.sol.op

    @property
    def n(self) -> int:
        return self.sol.op.dimension

    # cached squares (cheap to recompute; K_i are Hermitian)
    @property
    def k1_sq(self) -> np.ndarray:
        return self.k1 @ self.k1

    @property
    def k2_sq(self) -> np.ndarray:
        return self.k2 @ self.k2

    def deflation_direction(self) -> MatrixPair:
        """V[V_-] = (K2^2, -K1^2), the kernel direction of 1 - F T at eta=0."""
        return MatrixPair(self.k2_sq, -self.k1_sq)

    def perron_pair(self) -> MatrixPair:
        """V[V_+] = (K2^2, K1^2), the Perron eigenvector of F at eta=0."""
        return MatrixPair(self.k2_sq, self.k1_sq)

    # -- operator applications --------------------------------------------

    def apply_T(self, x: MatrixPair) -> MatrixPair:
        """Self-adjoint contraction T built from P, K1, K2."""
        tau = self.sol.tau
        k1, k2, p = self.k1, self.k2, self.p
        a = k1 @ x.second @ k1
        b = k2 @ x.first @ k2
        first = -self.k2_sq @ x.first @ self.k2_sq + tau * (k2 @ p @ a @ p.conj().T @ k2)
        second = tau * (k1 @ p.conj().T @ b @ p @ k1) - self.k1_sq @ x.second @ self.k1_sq
        return MatrixPair(first, second)

    def apply_F(self, x: MatrixPair) -> MatrixPair:
        """Self-adjoint, positivity-preserving swap operator F."""
        op = self.op
        ik1 = np.linalg.inv(self.k1)
        ik2 = np.linalg.inv(self.k2)
        inner2 = self.sqrt_v2 @ ik1 @ x.second @ ik1 @ self.sqrt_v2
        first = ik2 @ self.sqrt_v1 @ op.apply(inner2) @ self.sqrt_v1 @ ik2
        inner1 = self.sqrt_v1 @ ik2 @ x.first @ ik2 @ self.sqrt_v1
        second = ik1 @ self.sqrt_v2 @ op.apply(inner1, adjoint=True) @ self.sqrt_v2 @ ik1
        return MatrixPair(first, second)

    def apply_V(self, x: MatrixPair) -> MatrixPair:
        first = self.k2 @ self.inv_sqrt_v1 @ x.first @ self.inv_sqrt_v1 @ self.k2
        second = self.k1 @ self.inv_sqrt_v2 @ x.second @ self.inv_sqrt_v2 @ self.k1
        return MatrixPair(first, second)

    def apply_V_inv(self, x: MatrixPair) -> MatrixPair:
        ik1 = np.linalg.inv(self.k1)
        ik2 = np.linalg.inv(self.k2)
        first = self.sqrt_v1 @ ik2 @ x.first @ ik2 @ self.sqrt_v1
        second = self.sqrt_v2 @ ik1 @ x.second @ ik1 @ self.sqrt_v2
        return MatrixPair(first, second)

    def apply_L(self, x: MatrixPair) -> MatrixPair:
        """Reduced stability operator, applied through its explicit blocks."""
        op, tau = self.op, self.sol.tau
        v1, v2, u = self.sol.v1, self.sol.v2, self.sol.u
        sa = op.apply(x.first, adjoint=True)
        sb = op.apply(x.second)
        first = x.first - tau * (u @ sa @ u.conj().T) + v1 @ sb @ v1
        second = x.second - tau * (u.conj().T @ sb @ u) + v2 @ sa @ v2
        return MatrixPair(first, second)

    def apply_L_adjoint(self, x: MatrixPair) -> MatrixPair:
        """Adjoint of L with respect to the pair scalar product."""
        op, tau = self.op, self.sol.tau
        v1, v2, u = self.sol.v1, self.sol.v2, self.sol.u
        first = (
            x.first
            - tau * op.apply(u.conj().T @ x.first @ u)
            + op.apply(v2 @ x.second @ v2)
        )
        second = (
            x.second
            - tau * op.apply(u @ x.second @ u.conj().T, adjoint=True)
            + op.apply(v1 @ x.first @ v1, adjoint=True)
        )
        return MatrixPair(first, second)


def build(sol: DysonSolution) -> StabilityBundle:
    """Construct the stability bundle at a positive-definite solution.

    Matrix roots go through Hermitian eigendecompositions; V_i with
    eigenvalues at or below the floor (too close to the edge) are rejected.
    """
    v1, v2 = sol.v1, sol.v2
    if min(np.linalg.eigvalsh(herm(v1))[0], np.linalg.eigvalsh(herm(v2))[0]) <= V_EIG_FLOOR:
        raise EdgeTooCloseError(
            "V_i not safely positive definite; stability bundle undefined"
        )
    sqrt_v1 = herm_power(v1, 0.5)
    sqrt_v2 = herm_power(v2, 0.5)
    inv_sqrt_v1 = herm_power(v1, -0.5)
    inv_sqrt_v2 = herm_power(v2, -0.5)
    p = inv_sqrt_v1 @ sol.u @ inv_sqrt_v2
    tau = sol.tau
    n = sol.op.dimension
    eye = np.eye(n)
    k1 = herm_power(eye + tau * (p.conj().T @ p), -0.25)
    k2 = herm_power(eye + tau * (p @ p.conj().T), -0.25)
    return StabilityBundle(
        sol=sol, p=p, k1=k1, k2=k2,
        sqrt_v1=sqrt_v1, sqrt_v2=sqrt_v2,
        inv_sqrt_v1=inv_sqrt_v1, inv_sqrt_v2=inv_sqrt_v2,
    )


def f_spectral_radius(
    bundle: StabilityBundle, tol: float = 1e-13, max_iter: int = 50_000
) -> float:
    """||F||_hs by power iteration on F^2.

    F^2 acts block-diagonally on pair components, so each component is
    iterated within the positive cone; the square root of the Rayleigh
    quotient is the norm.  Exactly one at eta = 0 in the bulk.
    """
    norm, _ = _f_top_eigpair(bundle, tol, max_iter)
    return norm


def _f_top_eigpair(bundle: StabilityBundle, tol: float = 1e-13, max_iter: int = 50_000):
    x = bundle.perron_pair()
    x = (1.0 / x.norm()) * x
    mu_prev = np.inf
    for it in range(1, max_iter + 1):
        y = bundle.apply_F(bundle.apply_F(x))
        mu = y.inner(x).real
        nrm = y.norm()
        if nrm <= 0:
            raise RuntimeError("power iteration on F^2 collapsed to zero")
        x = (1.0 / nrm) * y
        if abs(mu - mu_prev) <= tol * max(abs(mu), 1e-300):
            break
        mu_prev = mu
    else:
        raise RuntimeError("power iteration on F^2 did not converge")
    x = MatrixPair(herm(x.first), herm(x.second))
    x = (1.0 / x.norm()) * x
    return float(np.sqrt(max(mu, 0.0))), x


def f_norm_closed_form(bundle: StabilityBundle) -> float:
    """||F||_hs from the closed first-order formula in eta.

    1 - ||F|| = eta (<F1, K2^{-1} V1 K2^{-1}> + <F2, K1^{-1} V2 K1^{-1}>)
                / (2 <F_+, V[V_+]>),
    with F_+ = (F1, F2) the Perron eigenvector of F.  Independent of the
    power-iteration route only through the eigenvector, which is shared.
    """
    sol = bundle.sol
    _, fpair = _f_top_eigpair(bundle)
    ik1 = np.linalg.inv(bundle.k1)
    ik2 = np.linalg.inv(bundle.k2)
    num = (
        hs_inner(fpair.first, ik2 @ sol.v1 @ ik2).real
        + hs_inner(fpair.second, ik1 @ sol.v2 @ ik1).real
    )
    den = 2.0 * fpair.inner(bundle.perron_pair()).real
    return 1.0 - sol.eta * num / den


def _deflated_solve_info(
    bundle: StabilityBundle,
    rhs: MatrixPair,
    tol: float = 1e-9,
    maxiter: int | None = None,
):
    """GMRES core of the deflated solve; returns (x, achieved_residual, ok)."""
    n = bundle.n
    w = bundle.deflation_direction()
    wnorm2 = w.inner(w).real
    b = rhs - (w.inner(rhs) / wnorm2) * w
    if b.norm() == 0.0:
        zero = np.zeros((n, n), dtype=complex)
        return MatrixPair(zero, zero.copy()), 0.0, True

    wvec = w.to_vec()
    wvec_norm2 = float(np.vdot(wvec, wvec).real)

    def project(vec):
        return vec - wvec * (np.vdot(wvec, vec) / wvec_norm2)

    def matvec(vec):
        x = MatrixPair.from_vec(project(vec), n)
        y = x - bundle.apply_F(bundle.apply_T(x))
        out = project(y.to_vec())
        # keep the operator nonsingular along w without touching the complement
        return out + wvec * (np.vdot(wvec, vec) / wvec_norm2)

    dim = 2 * n * n
    linop = spla.LinearOperator((dim, dim), matvec=matvec, dtype=complex)
    bvec = project(b.to_vec())
    xvec, info = spla.gmres(
        linop, bvec, x0=bvec.copy(), rtol=1e-13, atol=0.0,
        restart=min(dim, 200), maxiter=maxiter or 50,
    )
    xvec = project(xvec)
    x = MatrixPair.from_vec(xvec, n)
    achieved = (x - bundle.apply_F(bundle.apply_T(x)) - MatrixPair.from_vec(bvec, n)).norm()
    ok = info == 0 and achieved <= tol * max(1.0, b.norm())
    return x, achieved, ok


def deflated_solve(
    bundle: StabilityBundle,
    rhs: MatrixPair,
    tol: float = 1e-9,
    maxiter: int | None = None,
) -> MatrixPair:
    """Solve (1 - F T) x = Q rhs on the orthogonal complement of V[V_-].

    Q is the rank-one orthogonal projection against w = V[V_-]; the solve
    runs GMRES on the projected operator Q (1 - F T) Q + P_w using only
    operator applications.  Right-hand sides with a noticeable component
    along w are projected first (with a warning), and stagnation is reported
    with the achieved residual.
    """
    w = bundle.deflation_direction()
    overlap = w.inner(rhs)
    rhs_norm = rhs.norm()
    if rhs_norm > 0 and abs(overlap) / (w.norm() * rhs_norm) > 1e-8:
        warnings.warn(
            f"rhs has overlap {abs(overlap):.2e} with the deflation direction; "
            "projecting it out",
            stacklevel=2,
        )
    x, achieved, ok = _deflated_solve_info(bundle, rhs, tol=tol, maxiter=maxiter)
    if not ok:
        warnings.warn(
            f"deflated solve stagnated: achieved residual {achieved:.3e} "
            f"(target {tol:.1e}); values near the edge are ill-conditioned",
            stacklevel=2,
        )
    return x


# -- dense oracles ---------------------------------------------------------


def dense_pair_operator(apply_fn, n: int) -> np.ndarray:
    """Materialize a pair operator as a 2n^2 x 2n^2 matrix (brute force)."""
    if n > DENSE_PAIR_LIMIT:
        raise ValueError(f"dense pair materialization limited to n <= {DENSE_PAIR_LIMIT}")
    dim = 2 * n * n
    mat = np.zeros((dim, dim), dtype=complex)
    e = np.zeros(dim, dtype=complex)
    for j in range(dim):
        e[j] = 1.0
        mat[:, j] = apply_fn(MatrixPair.from_vec(e, n)).to_vec()
        e[j] = 0.0
    return mat


def deflated_solve_dense(bundle: StabilityBundle, rhs: MatrixPair) -> MatrixPair:
    """Dense counterpart of ``deflated_solve`` used as an oracle."""
    n = bundle.n
    mat = dense_pair_operator(
        lambda x: x - bundle.apply_F(bundle.apply_T(x)), n
    )
    wvec = bundle.deflation_direction().to_vec()
    wvec = wvec / np.linalg.norm(wvec)
    q = np.eye(2 * n * n) - np.outer(wvec, wvec.conj())
    a = q @ mat @ q + np.outer(wvec, wvec.conj())
    b = q @ rhs.to_vec()
    x = np.linalg.solve(a, b)
    return MatrixPair.from_vec(q @ x, n)


def operator_spectrum_dump(bundle: StabilityBundle):
    """Eigenvalues of the dense T, F and L operators (diagnostics, n small)."""
    n = bundle.n
    t_eig = np.linalg.eigvals(dense_pair_operator(bundle.apply_T, n))
    f_eig = np.linalg.eigvals(dense_pair_operator(bundle.apply_F, n))
    l_eig = np.linalg.eigvals(dense_pair_operator(bundle.apply_L, n))
    return {"T": np.sort_complex(t_eig), "F": np.sort_complex(f_eig),
            "L": np.sort_complex(l_eig)}
