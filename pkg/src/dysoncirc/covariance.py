"""Covariance super-operators of correlated matrix ensembles.

The pair of linear maps on n x n matrices

    S[A]  = E[X A X^*],        S*[A] = E[X^* A X]

encodes all second-order statistics of a centered random matrix X that are
relevant for its limiting spectral density.  Four concrete parametrizations
are supported:

* ``averaging``        S[A] = scale * <A> * 1   (i.i.d. entries),
* ``variance_profile`` (S[A])_ii = sum_j s_ij A_jj, zero off-diagonal output
                       (independent entries with variances s_ij),
* ``kronecker``        S[A] = sum_j a_j A a_j^*  (matrix coefficients of a
                       sum of free circular elements),
* ``full_tensor``      S assembled from the full covariance tensor
                       kappa[(i,j),(k,l)] = E[x_ij conj(x_kl)] of a centered
                       Gaussian family.

Both maps preserve the cone of positive semidefinite matrices and are
mutual adjoints with respect to <A, B> = tr(A^* B)/n.  Operators are
immutable after construction; ``apply`` is pure and thread-safe.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import avg_trace, herm, hs_norm, random_psd

FORMS = ("averaging", "variance_profile", "kronecker", "full_tensor")

# Materializing S as a dense n^2 x n^2 matrix is a diagnostic; keep it small.
DENSE_LIMIT = 64


class CovarianceError(ValueError):
    """Raised on malformed operator data or dimension mismatches."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CovarianceOperator:
    """Immutable representation of the pair (S, S*).

    Use the ``averaging`` / ``variance_profile`` / ``kronecker`` /
    ``full_tensor`` constructors rather than instantiating directly.
    """

    dimension: int
    form: str
    scale: float = 1.0
    s_matrix: np.ndarray | None = None
    coefficients: tuple[np.ndarray, ...] | None = None
    kappa: np.ndarray | None = None

    # -- constructors ------------------------------------------------------

    @staticmethod
    def averaging(dimension: int, scale: float = 1.0) -> "CovarianceOperator":
        if dimension < 1:
            raise CovarianceError("dimension must be positive")
        if scale <= 0:
            raise CovarianceError("averaging scale must be positive")
        return CovarianceOperator(dimension, "averaging", scale=float(scale))

    @staticmethod
    def variance_profile(s: np.ndarray) -> "CovarianceOperator":
        s = np.asarray(s, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise CovarianceError("variance profile must be a square matrix")
        if np.any(s < 0):
            raise CovarianceError("variance profile entries must be nonnegative")
        return CovarianceOperator(s.shape[0], "variance_profile", s_matrix=_freeze(s))

    @staticmethod
    def kronecker(coefficients) -> "CovarianceOperator":
        coeffs = tuple(np.asarray(a, dtype=complex) for a in coefficients)
        if not coeffs:
            raise CovarianceError("kronecker form needs at least one coefficient")
        n = coeffs[0].shape[0]
        for a in coeffs:
            if a.shape != (n, n):
                raise CovarianceError("all kronecker coefficients must be n x n")
        return CovarianceOperator(
            n, "kronecker", coefficients=tuple(_freeze(a) for a in coeffs)
        )

    @staticmethod
    def full_tensor(kappa: np.ndarray, dimension: int) -> "CovarianceOperator":
        """Covariance tensor given as an n^2 x n^2 matrix on row-major pairs.

        ``kappa[i*n+j, k*n+l] = E[x_ij conj(x_kl)]`` must be Hermitian
        positive semidefinite (it is the covariance matrix of vec(X)).
        """
        kappa = np.asarray(kappa, dtype=complex)
        n = dimension
        if kappa.shape != (n * n, n * n):
            raise CovarianceError("kappa must be n^2 x n^2 for dimension n")
        if hs_norm(kappa - kappa.conj().T) > 1e-10 * max(1.0, hs_norm(kappa)):
            raise CovarianceError("kappa must be Hermitian")
        wmin = float(np.linalg.eigvalsh(herm(kappa))[0])
        if wmin < -1e-10 * max(1.0, float(np.abs(kappa).max())):
            raise CovarianceError("kappa must be positive semidefinite")
        return CovarianceOperator(n, "full_tensor", kappa=_freeze(kappa))

    # -- application -------------------------------------------------------

    def apply(self, a: np.ndarray, adjoint: bool = False) -> np.ndarray:
        """Return S[A], or S*[A] when ``adjoint`` is set."""
        a = np.asarray(a)
        n = self.dimension
        if a.shape != (n, n):
            raise CovarianceError(f"matrix must be {n} x {n}, got {a.shape}")
        if self.form == "averaging":
            return self.scale * avg_trace(a) * np.eye(n, dtype=complex)
        if self.form == "variance_profile":
            s = self.s_matrix.T if adjoint else self.s_matrix
            return np.diag(s @ np.diag(a)).astype(complex)
        if self.form == "kronecker":
            out = np.zeros((n, n), dtype=complex)
            for c in self.coefficients:
                if adjoint:
                    out += c.conj().T @ a @ c
                else:
                    out += c @ a @ c.conj().T
            return out
        # full tensor: (S A)_ik = sum_jl kappa[(i,j),(k,l)] A_jl and
        # (S* A)_jl = sum_ik conj(kappa[(i,j),(k,l)]) A_ik
        k4 = self.kappa.reshape(n, n, n, n)
        if adjoint:
            return np.einsum("ijkl,ik->jl", k4.conj(), a, optimize=True)
        return np.einsum("ijkl,jl->ik", k4, a, optimize=True)

    def __call__(self, a: np.ndarray, adjoint: bool = False) -> np.ndarray:
        return self.apply(a, adjoint=adjoint)

    def dense_matrix(self, adjoint: bool = False) -> np.ndarray:
        """Materialize the super-operator as an n^2 x n^2 matrix.

        Row-major vec convention: vec(S[A]) = dense_matrix() @ vec(A).
        Diagnostic only; refuses dimensions above ``DENSE_LIMIT``.
        """
        n = self.dimension
        if n > DENSE_LIMIT:
            raise CovarianceError(f"dense materialization limited to n <= {DENSE_LIMIT}")
        if self.form == "kronecker" and not adjoint:
            return sum(np.kron(c, c.conj()) for c in self.coefficients)
        mat = np.zeros((n * n, n * n), dtype=complex)
        basis = np.zeros((n, n), dtype=complex)
        for j in range(n):
            for k in range(n):
                basis[j, k] = 1.0
                mat[:, j * n + k] = self.apply(basis, adjoint=adjoint).ravel()
                basis[j, k] = 0.0
        return mat

    # -- scaling -----------------------------------------------------------

    def scaled(self, factor: float) -> "CovarianceOperator":
        """Operator with S replaced by factor * S."""
        if factor <= 0:
            raise CovarianceError("scaling factor must be positive")
        if self.form == "averaging":
            return CovarianceOperator.averaging(self.dimension, self.scale * factor)
        if self.form == "variance_profile":
            return CovarianceOperator.variance_profile(self.s_matrix * factor)
        if self.form == "kronecker":
            root = np.sqrt(factor)
            return CovarianceOperator.kronecker([root * c for c in self.coefficients])
        return CovarianceOperator.full_tensor(self.kappa * factor, self.dimension)


def op_fingerprint(op: CovarianceOperator) -> str:
    """Stable short hash of the operator data, for output provenance."""
    import hashlib

    h = hashlib.sha256()
    h.update(op.form.encode())
    h.update(str(op.dimension).encode())
    if op.form == "averaging":
        h.update(np.float64(op.scale).tobytes())
    elif op.form == "variance_profile":
        h.update(np.ascontiguousarray(op.s_matrix).tobytes())
    elif op.form == "kronecker":
        for c in op.coefficients:
            h.update(np.ascontiguousarray(c).tobytes())
    else:
        h.update(np.ascontiguousarray(op.kappa).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class PerronData:
    """Perron-Frobenius data of a covariance super-operator.

    ``s1`` and ``s2`` are the left/right eigenmatrices, S*[s1] = rho s1 and
    S[s2] = rho s2, positive definite and normalized to <s1> = <s2> = 1.
    ``collatz_bounds`` is the certified interval from the final
    Collatz-Wielandt quotients.
    """

    rho: float
    s1: np.ndarray
    s2: np.ndarray
    residual_right: float
    residual_left: float
    collatz_bounds: tuple[float, float]
    iterations: int


class PowerIterationError(RuntimeError):
    """Power iteration failed to converge or hit a zero operator."""


def _collatz_interval(op: CovarianceOperator, a: np.ndarray, adjoint: bool):
    """Bounds min/max eig of A^{-1/2} S[A] A^{-1/2} around the Perron root."""
    w, q = np.linalg.eigh(herm(a))
    w = np.maximum(w, 1e-300)
    inv_root = (q * w**-0.5) @ q.conj().T
    quotient = herm(inv_root @ op.apply(a, adjoint=adjoint) @ inv_root)
    ev = np.linalg.eigvalsh(quotient)
    return float(ev[0]), float(ev[-1])


def _power_iterate(op: CovarianceOperator, adjoint: bool, tol: float, max_iter: int):
    n = op.dimension
    a = np.eye(n, dtype=complex)
    lower, upper = _collatz_interval(op, a, adjoint)
    it = 0
    for it in range(1, max_iter + 1):
        b = herm(op.apply(a, adjoint=adjoint))
        norm = avg_trace(b).real
        if norm <= 0:
            raise PowerIterationError("operator annihilates the cone interior")
        a = b / norm
        lower, upper = _collatz_interval(op, a, adjoint)
        if upper - lower <= tol * max(upper, 1e-300):
            break
    else:
        raise PowerIterationError(
            f"power iteration did not reach gap {tol:g} in {max_iter} steps "
            f"(interval [{lower:.3e}, {upper:.3e}])"
        )
    return a, lower, upper, it


def spectral_radius(
    op: CovarianceOperator, tol: float = 1e-10, max_iter: int = 100_000
) -> PerronData:
    """Perron root and eigenmatrices of S by cone power iteration.

    Iterates A <- S[A]/<S[A]> from the identity (strictly inside the cone);
    the Collatz-Wielandt quotients of the final iterate certify the interval
    around the spectral radius.  The left data comes from iterating S*.
    """
    s2, lo2, up2, it2 = _power_iterate(op, adjoint=False, tol=tol, max_iter=max_iter)
    s1, lo1, up1, it1 = _power_iterate(op, adjoint=True, tol=tol, max_iter=max_iter)
    rho = 0.5 * (lo2 + up2)
    s2 = herm(s2) / avg_trace(s2).real
    s1 = herm(s1) / avg_trace(s1).real
    res_r = hs_norm(op.apply(s2) - rho * s2)
    res_l = hs_norm(op.apply(s1, adjoint=True) - rho * s1)
    return PerronData(
        rho=rho,
        s1=_freeze(s1),
        s2=_freeze(s2),
        residual_right=res_r,
        residual_left=res_l,
        collatz_bounds=(min(lo1, lo2), max(up1, up2)),
        iterations=it1 + it2,
    )


def flatness_bounds(
    op: CovarianceOperator, probes: int = 32, seed: int = 0
) -> tuple[float, float]:
    """Estimate (c, C) with c <A> <= S[A] <= C <A> over random PSD probes.

    Probes are seeded random PSD matrices plus the identity and rank-one
    projectors.  This is an estimator, not a certificate: the true cone
    extremes live in an n^2-dimensional optimization.  A probe violating the
    lower cone bound reports c_est = 0.
    """
    if probes < 1:
        raise CovarianceError("probes must be >= 1")
    n = op.dimension
    rng = np.random.default_rng(seed)
    mats = [np.eye(n, dtype=complex)]
    for _ in range(probes):
        mats.append(random_psd(rng, n))
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        mats.append(np.outer(x, x.conj()))
    c_est, big_c = np.inf, 0.0
    for a in mats:
        mean = avg_trace(a).real
        if mean <= 0:
            continue
        ev = np.linalg.eigvalsh(herm(op.apply(a)))
        c_est = min(c_est, max(float(ev[0]), 0.0) / mean)
        big_c = max(big_c, float(ev[-1]) / mean)
    return float(c_est), float(big_c)


def normalize(
    op: CovarianceOperator, perron: PerronData | None = None
) -> tuple[CovarianceOperator, float]:
    """Rescale the operator so its spectral radius is one.

    Returns the normalized operator and the factor lam = 1/rho.  Downstream
    quantities transform covariantly: tau -> lam*tau, eta -> sqrt(lam)*eta,
    V_i -> V_i/sqrt(lam).
    """
    if perron is None:
        perron = spectral_radius(op)
    rho = perron.rho
    if rho <= 0:
        raise CovarianceError("cannot normalize an operator with zero spectral radius")
    lam = 1.0 / rho
    if abs(rho - 1.0) <= 1e-14:
        return op, 1.0
    return op.scaled(lam), lam


def check_flatness(op: CovarianceOperator, probes: int = 8, seed: int = 1,
                   threshold: float = 1e-6) -> bool:
    """Quick two-sided comparability probe; warns when the lower bound fails."""
    c_est, big_c = flatness_bounds(op, probes=probes, seed=seed)
    flat = big_c > 0 and c_est > threshold * big_c
    if not flat:
        warnings.warn(
            f"covariance operator looks non-flat (c_est={c_est:.3e}, "
            f"C_est={big_c:.3e}); spectral-density accuracy may degrade",
            stacklevel=2,
        )
    return flat
