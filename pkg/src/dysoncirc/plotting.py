"""Figure rendering for the CLI report paths.

Figures are written next to the delimited output with a non-interactive
backend and deterministic metadata, so repeated runs produce identical
bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PNG_METADATA = {"Software": "dysoncirc"}

plt.rcParams.update(
    {
        "figure.figsize": (6.0, 4.0),
        "figure.dpi": 130,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 10,
    }
)


def save_density_figure(profile, path) -> None:
    """Radial density sigma(|zeta|) with the edge jump marked."""
    fig, ax = plt.subplots()
    r = np.sqrt(profile.tau_grid)
    ax.plot(r, profile.sigma_values, "-", lw=1.5, color="tab:blue", label="density")
    edge = np.sqrt(profile.rho)
    ax.plot([edge], [profile.jump], "o", ms=5, color="tab:red", label="edge jump")
    ax.vlines(edge, 0.0, profile.jump, color="tab:red", lw=1.0, ls="--", alpha=0.6)
    ax.set_xlabel(r"$|\zeta|$")
    ax.set_ylabel(r"$\sigma$")
    ax.set_ylim(bottom=0.0)
    ax.legend(loc="best")
    ax.set_title(f"spectral density (norm = {profile.normalization:.6f})")
    fig.tight_layout()
    fig.savefig(path, metadata=PNG_METADATA)
    plt.close(fig)


def save_spectrum_figure(eigenvalues, rho, path) -> None:
    """Scatter of sampled eigenvalues against the predicted support disk."""
    fig, ax = plt.subplots(figsize=(4.8, 4.8))
    ax.scatter(eigenvalues.real, eigenvalues.imag, s=4, alpha=0.5, lw=0,
               color="tab:blue", label="eigenvalues")
    theta = np.linspace(0, 2 * np.pi, 400)
    r = np.sqrt(rho)
    ax.plot(r * np.cos(theta), r * np.sin(theta), "-", color="tab:red", lw=1.2,
            label="support edge")
    ax.set_aspect("equal")
    ax.set_xlabel(r"$\mathrm{Re}\,\zeta$")
    ax.set_ylabel(r"$\mathrm{Im}\,\zeta$")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=PNG_METADATA)
    plt.close(fig)
