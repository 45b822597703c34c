"""Batch front-end: config in, tables + reports + figures out.

Commands: ``density`` (radial density profile), ``simulate`` (ensemble
sampling plus comparison report), ``check`` (invariant suite), ``brown``
(Brown-measure profile of a matrix circular family).  Exit codes: 0
success, 1 check failure, 2 usage or schema error.  Every output embeds the
config hash and tool version; given config + seed, outputs are
byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .covariance import CovarianceOperator, spectral_radius
from .density import (
    DensityError,
    brown_measure,
    jump_height,
    laplacian_check,
    sigma_at,
    sigma_profile,
)
from .dyson import EdgeProximityError, assemble_block, identity_suite, solve_at, solve_bulk
from .ensemble import (
    EnsembleError,
    EnsembleSpec,
    delocalization_check,
    outlier_check,
    radial_ks_distance,
    resolvent_check,
    sample,
    small_singular_count,
    smallest_singular_guard,
    spectrum,
)
from .linalg import random_matrix
from .models import ModelDocumentError
from .stability import MatrixPair, build


class CheckFailure(RuntimeError):
    pass


def _provenance(cfg: RunConfig) -> dict:
    return {
        "tool": "dysoncirc",
        "version": __version__,
        "config_sha256": cfg.config_hash,
    }


def _write_csv(path: Path, cfg: RunConfig, columns, rows) -> None:
    """Full-precision scientific CSV with provenance header comments."""
    with open(path, "w") as fh:
        fh.write(f"# dysoncirc {__version__}\n")
        fh.write(f"# config_sha256={cfg.config_hash}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for value in row:
                if isinstance(value, float):
                    cells.append(f"{value:.16e}")
                elif isinstance(value, (int, np.integer)):
                    cells.append(str(int(value)))
                else:
                    cells.append(str(value))
            fh.write(",".join(cells) + "\n")


def _write_json(path: Path, obj: dict) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("DYSON_CIRC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DYSON_CIRC_THREADS is not an integer: {env!r}") from None
    return 1


# -- commands ---------------------------------------------------------------


def cmd_density(cfg: RunConfig, out: Path, threads: int, fmt: str) -> int:
    op = cfg.build_model()
    params = cfg.density
    profile = sigma_profile(
        op, points=params["points"], span=params["span"], threads=threads
    )
    report = {
        "provenance": _provenance(cfg),
        "profile": profile.metadata(),
    }
    if fmt == "csv":
        _write_csv(out / "density.csv", cfg,
                   ("tau", "abs_zeta", "sigma", "method"), profile.to_rows())
    else:
        report["table"] = [
            {"tau": t, "abs_zeta": r, "sigma": s, "method": m}
            for t, r, s, m in profile.to_rows()
        ]
    _write_json(out / "density.json", report)
    from .plotting import save_density_figure

    save_density_figure(profile, out / "density.png")
    return 0


def cmd_brown(cfg: RunConfig, out: Path, threads: int, fmt: str) -> int:
    op = cfg.build_model()
    if op.form != "kronecker":
        raise ConfigError("brown command requires a kronecker model document")
    params = cfg.brown
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        profile = brown_measure(
            op.coefficients, points=params["points"], span=params["span"],
            threads=threads,
        )
    notes = [str(w.message) for w in caught]
    for note in notes:
        print(f"warning: {note}", file=sys.stderr)
    report = {
        "provenance": _provenance(cfg),
        "profile": profile.metadata(),
        "warnings": notes,
    }
    if fmt == "csv":
        _write_csv(out / "brown.csv", cfg,
                   ("tau", "abs_zeta", "sigma", "method"), profile.to_rows())
    else:
        report["table"] = [
            {"tau": t, "abs_zeta": r, "sigma": s, "method": m}
            for t, r, s, m in profile.to_rows()
        ]
    _write_json(out / "brown.json", report)
    from .plotting import save_density_figure

    save_density_figure(profile, out / "brown.png")
    return 0


def cmd_simulate(cfg: RunConfig, out: Path, threads: int, fmt: str,
                 seed_override: int | None) -> int:
    op = cfg.build_model()
    params = dict(cfg.simulate)
    if seed_override is not None:
        params["seed"] = seed_override
    spec = EnsembleSpec(
        model=op, n=params["n"], seed=params["seed"],
        samples=params["samples"], fielding=params["field"],
    )
    perron = spectral_radius(op)
    rho = perron.rho
    tau_star = params["tau_star"]
    zeta = complex(params["resolvent_zeta"][0], params["resolvent_zeta"][1])
    eta_res = params["resolvent_eta"]
    eta_small = params["eta_small"]

    rows = []
    spectra = []
    for idx in range(spec.samples):
        x = sample(spec, idx)
        sp = spectrum(x, spec, idx)
        spectra.append((x, sp))
        rows.extend((idx, z.real, z.imag) for z in sp.eigenvalues)

    x0, sp0 = spectra[0]
    checks = {}
    passed, excess = outlier_check(sp0, rho, tau_star)
    checks["outliers"] = {
        "passed": bool(passed), "max_excess": excess,
        "bound": rho + tau_star,
    }
    sol = solve_at(op, abs(zeta) ** 2, eta_res)
    gap = resolvent_check(x0, zeta, eta_res, assemble_block(sol, zeta))
    checks["resolvent"] = {
        "passed": bool(gap <= 10.0 / spec.n), "gap": gap, "bound": 10.0 / spec.n,
        "zeta": [zeta.real, zeta.imag], "eta": eta_res,
    }
    count = small_singular_count(x0, zeta, eta_small)
    bound = 3.0 * spec.n * eta_small
    checks["small_singular_values"] = {
        "passed": bool(count <= bound), "count": count, "bound": bound,
        "eta": eta_small,
    }
    overlap = delocalization_check(x0, rho, tau_star, probes=params["probes"],
                                   seed=params["seed"])
    checks["delocalization"] = {
        "passed": bool(overlap <= spec.n ** -0.25), "max_overlap": overlap,
        "bound": spec.n ** -0.25,
    }
    guard, smin, thr = smallest_singular_guard(x0, zeta)
    checks["smallest_singular_guard"] = {
        "passed": bool(guard), "smin": smin, "threshold": thr,
    }
    if op.form == "averaging":
        ks = radial_ks_distance(sp0, rho)
        checks["radial_cdf"] = {"passed": bool(ks <= 0.05), "ks_distance": ks,
                                "bound": 0.05}

    report = {
        "provenance": _provenance(cfg),
        "spec": {
            "model": cfg.model_doc["model"]["type"],
            "dimension": op.dimension,
            "n": spec.n,
            "seed": spec.seed,
            "samples": spec.samples,
            "field": spec.fielding,
        },
        "rho": rho,
        "checks": checks,
    }
    if fmt == "csv":
        _write_csv(out / "spectrum.csv", cfg, ("sample", "re", "im"), rows)
    else:
        report["eigenvalues"] = [
            {"sample": s, "re": re, "im": im} for s, re, im in rows
        ]
    _write_json(out / "spectrum.json", report)
    from .plotting import save_spectrum_figure

    save_spectrum_figure(sp0.eigenvalues, rho, out / "spectrum.png")
    return 0


def _entry(name, value, tol, extra=None):
    item = {"name": name, "status": "pass" if value <= tol else "fail",
            "value": float(value), "tolerance": tol}
    if extra:
        item.update(extra)
    return item


def cmd_check(cfg: RunConfig, out: Path, threads: int) -> int:
    op = cfg.build_model()
    params = cfg.check
    tols = cfg.check_tolerances
    perron = spectral_radius(op)
    rho = perron.rho
    entries = []

    for tau in params["taus"]:
        label = f"tau={tau:g}"
        try:
            sol = solve_bulk(op, tau, perron=perron)
        except (EdgeProximityError, ValueError) as exc:
            entries.append({"name": f"dyson_residual[{label}]",
                            "status": "precondition-rejected", "reason": str(exc)})
            continue
        entries.append(_entry(f"dyson_residual[{label}]", sol.residual_dyson,
                              tols["dyson_residual"]))
        entries.append(_entry(f"trace_identity[{label}]",
                              abs(sol.avg_v1 - sol.avg_v2), tols["trace_identity"]))
        entries.append(_entry(f"identity_suite[{label}]",
                              identity_suite(sol)["max"], tols["identity_suite"]))
        if tau >= 0.05 * rho:
            s_stab = sigma_at(op, tau, perron=perron, method="stability")
            s_fd = sigma_at(op, tau, perron=perron, method="finite_difference")
            entries.append(_entry(f"dual_path_sigma[{label}]", abs(s_stab - s_fd),
                                  tols["dual_path"],
                                  {"stability": s_stab, "finite_difference": s_fd}))
        else:
            entries.append({"name": f"dual_path_sigma[{label}]",
                            "status": "precondition-rejected",
                            "reason": "stability formula not used below 0.05 rho"})

    # scaling covariance
    tau_ref = params["taus"][len(params["taus"]) // 2] if params["taus"] else 0.5
    if tau_ref < rho * (1 - 2e-3):
        base = solve_bulk(op, tau_ref, perron=perron)
        sigma_base = sigma_at(op, tau_ref, perron=perron)
        for lam in params["scaling_lambdas"]:
            scaled_op = op.scaled(lam)
            scaled_perron = spectral_radius(scaled_op)
            scaled = solve_bulk(scaled_op, lam * tau_ref, perron=scaled_perron)
            dev = max(
                float(np.abs(scaled.v1 - base.v1 / np.sqrt(lam)).max()),
                float(np.abs(scaled.v2 - base.v2 / np.sqrt(lam)).max()),
            )
            entries.append(_entry(f"scaling_v[lambda={lam:g}]", dev, tols["scaling_v"]))
            sigma_scaled = sigma_at(scaled_op, lam * tau_ref, perron=scaled_perron)
            entries.append(_entry(
                f"scaling_sigma[lambda={lam:g}]",
                abs(sigma_scaled - sigma_base / lam), tols["scaling_sigma"] / lam
                if lam < 1 else tols["scaling_sigma"],
            ))

        # stability operator invariants at (tau_ref, eta)
        eta = params["eta"]
        sol_eta = solve_at(op, tau_ref, eta)
        bundle = build(sol_eta)
        rng = np.random.default_rng(params["seed"])
        n = op.dimension
        worst_sym = 0.0
        worst_fact = 0.0
        worst_t = 0.0
        for _ in range(8):
            xp = MatrixPair(random_matrix(rng, n), random_matrix(rng, n))
            yp = MatrixPair(random_matrix(rng, n), random_matrix(rng, n))
            fx, fy = bundle.apply_F(xp), bundle.apply_F(yp)
            tx, ty = bundle.apply_T(xp), bundle.apply_T(yp)
            worst_sym = max(
                worst_sym,
                abs(xp.inner(fy) - fx.inner(yp)),
                abs(xp.inner(ty) - tx.inner(yp)),
            )
            vx = bundle.apply_V(xp)
            lx = bundle.apply_L(xp)
            fact = bundle.apply_V_inv(vx - bundle.apply_T(bundle.apply_F(vx)))
            worst_fact = max(worst_fact, (lx - fact).norm() / xp.norm())
            worst_t = max(worst_t, tx.norm() / xp.norm())
        entries.append(_entry("stability_selfadjoint", worst_sym,
                              tols["stability_selfadjoint"]))
        entries.append(_entry("stability_factorization", worst_fact,
                              tols["stability_factorization"]))
        entries.append(_entry("stability_T_contraction", max(0.0, worst_t - 1.0),
                              1e-10))
        lv = MatrixPair(eta * np.eye(n) + op.apply(sol_eta.v2),
                        -eta * np.eye(n) - op.apply(sol_eta.v1, adjoint=True))
        left = bundle.apply_L_adjoint(lv) - eta * MatrixPair.e_minus(n)
        entries.append(_entry("stability_left_eigenvector", left.norm(), 1e-9))

    try:
        centers = [complex(c[0], c[1]) for c in params["laplacian_centers"]]
        dev = laplacian_check(op, centers, params["laplacian_h"], perron=perron)
        entries.append(_entry("laplacian_identity", dev, tols["laplacian"]))
    except DensityError as exc:
        entries.append({"name": "laplacian_identity",
                        "status": "precondition-rejected", "reason": str(exc)})

    failed = [e for e in entries if e["status"] == "fail"]
    report = {
        "provenance": _provenance(cfg),
        "rho": rho,
        "entries": entries,
        "passed": not failed,
    }
    _write_json(out / "check.json", report)
    return 1 if failed else 0


# -- entry point -------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dysoncirc",
        description="Self-consistent spectral densities of correlated "
                    "non-Hermitian ensembles",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("density", "tabulate the radial spectral density"),
        ("simulate", "sample the ensemble and compare against predictions"),
        ("check", "run the invariant suite"),
        ("brown", "Brown-measure density of a matrix circular family"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (fallback: DYSON_CIRC_THREADS)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed (simulate)")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="tabular output format")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        threads = _resolve_threads(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "density":
            return cmd_density(cfg, out, threads, args.format)
        if args.command == "brown":
            return cmd_brown(cfg, out, threads, args.format)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, threads, args.format, args.seed)
        if args.command == "check":
            return cmd_check(cfg, out, threads)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ModelDocumentError, EnsembleError) as exc:
        json.dump({"error": {"type": "schema", "message": str(exc)}},
                  sys.stderr, indent=2)
        sys.stderr.write("\n")
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        json.dump({"error": {"type": "internal", "message": str(exc)}},
                  sys.stderr, indent=2)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
