"""Finite-n sampling of the supported ensembles and desk-scale law checks.

Sampling is bit-reproducible: every (seed, sample index) pair owns one
Philox counter-based stream (``key = seed``, counter word set to the sample
index), and entries are drawn in a fixed documented order within the
stream, so results are independent of platform and thread count.

The checks compare sampled spectra against the deterministic predictions:
no eigenvalues beyond the spectral radius, closeness of the resolvent trace
to the matrix Dyson solution, counts of small singular values, eigenvector
delocalization, and the log-determinant route to linear eigenvalue
statistics (Girko's identity) evaluated by Monte Carlo over spectral
points.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covariance import CovarianceOperator
from .density import DensityProfile
from .dyson import BlockSolution
from .linalg import avg_trace


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleSpec:
    """What to sample: model, matrix size, field, seed and sample count."""

    model: CovarianceOperator
    n: int
    seed: int
    samples: int = 1
    fielding: str = "complex"

    def __post_init__(self):
        if self.n < 1:
            raise EnsembleError("invalid dimension: n must be positive")
        if self.fielding not in ("complex", "real"):
            raise EnsembleError("field must be 'complex' or 'real'")
        m = self.model
        if m.form in ("variance_profile", "kronecker") and self.n % m.dimension:
            raise EnsembleError(
                f"sampling size {self.n} must be a multiple of the model "
                f"dimension {m.dimension}"
            )
        if m.form == "full_tensor" and self.n != m.dimension:
            raise EnsembleError("full_tensor models sample at the model dimension")


@dataclass(frozen=True)
class EmpiricalSpectrum:
    """Eigenvalues of one sample with full provenance."""

    eigenvalues: np.ndarray
    spec: EnsembleSpec
    sample_index: int

    @property
    def n(self) -> int:
        return len(self.eigenvalues)


def _stream(seed: int, sample_index: int) -> np.random.Generator:
    """One Philox stream per (seed, sample index); entries in draw order."""
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, sample_index]))


def _gaussian(rng, shape, fielding):
    if fielding == "complex":
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return rng.standard_normal(shape).astype(complex)


def sample(spec: EnsembleSpec, sample_index: int = 0) -> np.ndarray:
    """Draw one centered n x n sample matching the model's covariances.

    * averaging:        i.i.d. entries, E|x_ij|^2 = scale/n;
    * variance_profile: independent entries whose variances follow the
      block blow-up of the profile (factor dim/n keeps the spectral radius);
    * kronecker:        X = sum_j a_j (x) C_j with independent Ginibre blocks
      C_j of size n/dim and entry variance dim/n;
    * full_tensor:      vec(X) = L g with kappa = L L^* (Cholesky with
      diagonal jitter on numerically semidefinite input).
    """
    rng = _stream(spec.seed, sample_index)
    n, model = spec.n, spec.model
    if model.form == "averaging":
        g = _gaussian(rng, (n, n), spec.fielding)
        return np.sqrt(model.scale / n) * g
    if model.form == "variance_profile":
        d = model.dimension
        reps = n // d
        s_big = np.kron(model.s_matrix, np.ones((reps, reps))) * (d / n)
        g = _gaussian(rng, (n, n), spec.fielding)
        return np.sqrt(s_big) * g
    if model.form == "kronecker":
        d = model.dimension
        nb = n // d
        x = np.zeros((n, n), dtype=complex)
        for a in model.coefficients:
            c = _gaussian(rng, (nb, nb), spec.fielding) / np.sqrt(nb)
            x += np.kron(a, c)
        return x
    # full tensor
    kappa = np.asarray(model.kappa)
    if spec.fielding == "real" and np.abs(kappa.imag).max() > 1e-12:
        raise EnsembleError("real-field sampling needs a real covariance tensor")
    w, q = np.linalg.eigh(0.5 * (kappa + kappa.conj().T))
    if w[0] < -1e-8 * max(1.0, w[-1]):
        raise EnsembleError("covariance factorization failed: kappa indefinite")
    factor = q * np.sqrt(np.maximum(w, 1e-12))
    g = _gaussian(rng, (n * n,), spec.fielding)
    return (factor @ g).reshape(n, n)


def spectrum(x: np.ndarray, spec: EnsembleSpec | None = None,
             sample_index: int = 0) -> EmpiricalSpectrum:
    """Complex eigenvalues of a sample."""
    if not np.all(np.isfinite(x)):
        raise EnsembleError("matrix has non-finite entries")
    eigs = np.linalg.eigvals(x)
    return EmpiricalSpectrum(eigenvalues=eigs, spec=spec, sample_index=sample_index)


def hermitization(x: np.ndarray, zeta: complex) -> np.ndarray:
    """2n x 2n Hermitian matrix whose spectrum is +-(singular values of X - zeta)."""
    n = x.shape[0]
    shifted = x - zeta * np.eye(n)
    z = np.zeros((n, n))
    return np.block([[z, shifted], [shifted.conj().T, z]])


# -- spectral checks --------------------------------------------------------


def outlier_check(spec: EmpiricalSpectrum, rho: float, tau_star: float):
    """No eigenvalue may satisfy |zeta|^2 > rho + tau_star."""
    r2 = np.abs(spec.eigenvalues) ** 2
    excess = float(r2.max() - (rho + tau_star))
    return excess <= 0, excess


def resolvent_check(
    x: np.ndarray, zeta: complex, eta: float, block: BlockSolution
) -> float:
    """|<G - M>| with G the Hermitized resolvent at (zeta, i eta).

    G comes from the Hermitian eigendecomposition of the Hermitization, so
    only eigenvalues are needed for the normalized trace.
    """
    lam = np.linalg.eigvalsh(hermitization(x, zeta))
    g_avg = np.mean(1.0 / (lam - 1j * eta))
    return float(abs(g_avg - avg_trace(block.m)))


def small_singular_count(x: np.ndarray, zeta: complex, eta: float) -> int:
    """Number of Hermitization eigenvalues in [-eta, eta]."""
    s = np.linalg.svd(x - zeta * np.eye(x.shape[0]), compute_uv=False)
    return int(2 * np.count_nonzero(s <= eta))


def smallest_singular_guard(x: np.ndarray, zeta: complex, eps: float = 0.5):
    """Guard s_min(X - zeta) > exp(-n^eps) before log-determinant work."""
    n = x.shape[0]
    s = np.linalg.svd(x - zeta * np.eye(n), compute_uv=False)
    threshold = np.exp(-float(n) ** eps)
    smin = float(s.min())
    return smin > threshold, smin, threshold


def delocalization_check(
    x: np.ndarray,
    rho: float,
    tau_star: float,
    probes: int,
    seed: int = 0,
) -> float:
    """Max overlap |<v, u>|/(||v|| ||u||) of bulk eigenvectors with probes.

    Probes are the full coordinate basis plus ``probes`` seeded random
    vectors; eigenvectors are kept when their eigenvalue lies in the
    shrunken disk |zeta|^2 <= rho - tau_star.
    """
    if probes < 1:
        raise EnsembleError("no probes: probes must be >= 1")
    n = x.shape[0]
    vals, vecs = np.linalg.eig(x)
    keep = np.abs(vals) ** 2 <= rho - tau_star
    if not keep.any():
        return 0.0
    u = vecs[:, keep]
    u = u / np.linalg.norm(u, axis=0)
    # coordinate probes: the largest |<e_i, u>| is the largest component
    worst = float(np.abs(u).max())
    rng = np.random.default_rng(seed)
    for _ in range(probes):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v /= np.linalg.norm(v)
        worst = max(worst, float(np.abs(v.conj() @ u).max()))
    return worst


# -- linear statistics ------------------------------------------------------


@dataclass(frozen=True)
class GirkoReport:
    direct: float
    hermitized: float
    gap: float
    mc_points: int
    resampled: int
    low_confidence: bool


def girko_statistic(
    x: np.ndarray,
    f,
    laplacian_f,
    mc_points: int,
    seed: int,
    omega_radius: float,
    cutoff: float = 30.0,
    threads: int = 1,
) -> GirkoReport:
    """Linear eigenvalue statistic of f, directly and through log determinants.

    Direct route: mean of f over the eigenvalues.  Hermitized route: the
    identity (1/n) sum f = (1/2 pi n) integral of Lap(f)(zeta)
    log|det(X - zeta)| turns into a Monte-Carlo average over ``mc_points``
    uniform samples of the disk of ``omega_radius`` (which must contain
    supp f), with log|det| evaluated through singular values.  Sample
    points where X - zeta is nearly singular, s_min <= exp(-cutoff), are
    resampled and counted.  Runs with very few points are flagged.

    Since the integral of Lap(f) vanishes, any constant may be subtracted
    from the log-determinant values without biasing the estimator; a small
    pilot set (excluded from the average) estimates the best constant,
    which removes the dominant variance contribution.
    """
    if mc_points < 1:
        raise EnsembleError("mc_points must be >= 1")
    n = x.shape[0]
    eigs = np.linalg.eigvals(x)
    direct = float(np.mean([f(z) for z in eigs]).real)

    rng = np.random.default_rng(seed)
    floor = np.exp(-cutoff)
    eye = np.eye(n)

    def draw_batch(k):
        r = omega_radius * np.sqrt(rng.uniform(size=k))
        phi = rng.uniform(0.0, 2 * np.pi, size=k)
        return r * np.exp(1j * phi)

    def log_det_per_n(z):
        s = np.linalg.svd(x - z * eye, compute_uv=False)
        if s.min() <= floor:
            return None
        return float(np.sum(np.log(s))) / n

    # candidates are drawn sequentially from one stream and reduced in
    # submission order, so the result is independent of the thread count
    pilot_size = 32 if mc_points >= 48 else 0
    points = []
    resampled = 0
    while len(points) < mc_points + pilot_size:
        batch = draw_batch(mc_points + pilot_size - len(points))
        values = map_ordered(log_det_per_n, batch, threads=threads)
        for z, val in zip(batch, values):
            if val is None:
                resampled += 1
            else:
                points.append((z, val))
        if resampled > 10 * mc_points + 100:
            raise EnsembleError("resampling budget exhausted near-singular points")

    shift = float(np.mean([v for _, v in points[:pilot_size]])) if pilot_size else 0.0
    main = points[pilot_size:]
    # the uniform-measure average carries the area |Omega| = pi R^2
    vals = np.array([laplacian_f(z).real * (v - shift) for z, v in main])
    hermitized = float(omega_radius**2 / 2.0 * np.mean(vals))
    gap = abs(direct - hermitized)
    return GirkoReport(
        direct=direct,
        hermitized=hermitized,
        gap=gap,
        mc_points=mc_points,
        resampled=resampled,
        low_confidence=mc_points < 16,
    )


def local_window_statistic(
    spec: EmpiricalSpectrum,
    profile: DensityProfile,
    zeta0: complex,
    alpha: float,
    f,
    support_radius: float,
    tau_star: float = 0.05,
    quad_points: int = 121,
) -> float:
    """Gap between windowed linear statistics and the density prediction.

    The window rescales f to f_w(zeta) = n^{2 alpha} f(n^alpha (zeta -
    zeta0)); the empirical average over eigenvalues is compared with the
    integral of f against the density, evaluated by tensor quadrature using
    the tabulated radial profile.  The window must stay inside the bulk.
    """
    if not 0.0 <= alpha < 0.5:
        raise EnsembleError("alpha must lie in [0, 1/2)")
    n = spec.n
    scale = float(n) ** alpha
    rho = profile.rho
    if abs(zeta0) ** 2 > rho - tau_star:
        raise EnsembleError("window exits the bulk: |zeta0|^2 > rho - tau_star")
    if (abs(zeta0) + support_radius / scale) ** 2 > rho + tau_star:
        raise EnsembleError("window exits the bulk")

    vals = scale**2 * np.array([f(scale * (z - zeta0)) for z in spec.eigenvalues])
    empirical = float(np.mean(vals).real)

    # integral of f_w against sigma: substitute w = n^alpha (zeta - zeta0)
    grid = np.linspace(-support_radius, support_radius, quad_points)
    step = grid[1] - grid[0]
    wx, wy = np.meshgrid(grid, grid)
    w = wx + 1j * wy
    zeta = zeta0 + w / scale
    tau = np.abs(zeta) ** 2
    sigma = _interp_sigma(profile, tau)
    fvals = np.vectorize(f)(w).real
    integral = float(np.sum(fvals * sigma) * step * step)
    return abs(empirical - integral)


def _interp_sigma(profile: DensityProfile, tau: np.ndarray) -> np.ndarray:
    """Piecewise-linear density from the profile; edge segment to the jump."""
    grid = profile.tau_grid
    vals = profile.sigma_values
    out = np.interp(tau, grid, vals, left=vals[0], right=0.0)
    # between the last grid point and the edge: linear down to the jump value
    tail = (tau > grid[-1]) & (tau < profile.rho)
    if np.any(tail):
        t = (tau[tail] - grid[-1]) / (profile.rho - grid[-1])
        out[tail] = (1 - t) * vals[-1] + t * profile.jump
    out[tau >= profile.rho] = 0.0
    return out


def radial_ks_distance(spec: EmpiricalSpectrum, rho: float = 1.0) -> float:
    """Kolmogorov distance of the radial CDF to F(r) = r^2 / rho."""
    r = np.sort(np.abs(spec.eigenvalues))
    n = len(r)
    theory = np.minimum(r**2 / rho, 1.0)
    upper = np.abs(np.arange(1, n + 1) / n - theory)
    lower = np.abs(np.arange(0, n) / n - theory)
    return float(np.maximum(upper, lower).max())


def angular_uniformity_pvalue(spec: EmpiricalSpectrum) -> float:
    """Kolmogorov-Smirnov p-value of eigenvalue arguments vs uniformity."""
    from scipy import stats

    angles = np.angle(spec.eigenvalues)
    u = (angles + np.pi) / (2 * np.pi)
    return float(stats.kstest(u, "uniform").pvalue)


def map_ordered(fn, items, threads: int = 1):
    """Map preserving submission order; parallel pool when threads > 1."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(item) for item in items]
