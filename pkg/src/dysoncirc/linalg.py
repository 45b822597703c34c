"""Small dense linear-algebra helpers shared across the package.

All norms and scalar products are the *normalized* (Hilbert-Schmidt) ones,
    <A, B> = tr(A^* B) / n,      ||A||_hs = sqrt(<A, A>),
which keep residuals dimension-free.  Matrix roots go through Hermitian
eigendecompositions with an eigenvalue floor so that fourth roots of
nearly-singular matrices do not blow up in float arithmetic.
"""

from __future__ import annotations

import numpy as np

# Eigenvalues below this floor are clamped before taking inverse roots.
EIG_FLOOR = 1e-14


def herm(a: np.ndarray) -> np.ndarray:
    """Hermitian part (A + A^*)/2; cancels floating-point drift."""
    return 0.5 * (a + a.conj().T)


def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Normalized scalar product tr(A^* B)/n."""
    n = a.shape[0]
    return complex(np.tensordot(a.conj(), b, axes=2)) / n


def hs_norm(a: np.ndarray) -> float:
    """Normalized Frobenius norm sqrt(tr(A^* A)/n)."""
    return float(np.linalg.norm(a)) / np.sqrt(a.shape[0])


def avg_trace(a: np.ndarray) -> complex:
    """Normalized trace tr(A)/n."""
    return complex(np.trace(a)) / a.shape[0]


def is_hermitian(a: np.ndarray, tol: float = 1e-10) -> bool:
    return hs_norm(a - a.conj().T) <= tol * max(1.0, hs_norm(a))


def min_eig_herm(a: np.ndarray) -> float:
    """Smallest eigenvalue of the Hermitian part of ``a``."""
    return float(np.linalg.eigvalsh(herm(a))[0])


def herm_power(a: np.ndarray, power: float, floor: float = EIG_FLOOR) -> np.ndarray:
    """Principal power A^power of a Hermitian positive (semi)definite matrix.

    Eigenvalues are clamped at ``floor`` before the power is applied, which
    matters for the negative fourth roots used by the stability operators.
    """
    w, q = np.linalg.eigh(herm(a))
    w = np.maximum(w, floor)
    return (q * w**power) @ q.conj().T


def sqrtm_pd(a: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    return herm_power(a, 0.5, floor)


def inv_sqrtm_pd(a: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    return herm_power(a, -0.5, floor)


def random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return herm(g)


def random_psd(rng: np.random.Generator, n: int) -> np.ndarray:
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return g @ g.conj().T / n


def random_matrix(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
