"""Experiment pipelines: band scans, dynamics runs, and epsilon sweeps.

Every pipeline takes an ExperimentConfig, writes CSV tables (plus JSON
summaries and raw field exports) under the config's output directory, and
returns the summary dict.  All integrators are fixed step and all grids are
derived from the config, so identical configs produce identical bytes; each
output row carries the config hash.

The expensive epsilon-independent work (trajectory, envelope evolution,
band data at the sample times) is prepared once and shared by the per
epsilon cells; with jobs > 1 the cells run in a process pool and each
worker rebuilds that shared state from the config instead.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assembly import make_grid_for, synthesize_app, synthesize_packet, write_field
from .bloch import build_bloch_hamiltonian, default_cutoff
from .config import ExperimentConfig
from .corrector import build_U0, build_U1, build_U2
from .envelope import (
    coefficients_along,
    evolve_gaussian,
    evolve_grid_envelope,
    gaussian_invariant_defects,
    grid_envelope_from_gaussian,
    sigma_norm,
)
from .errors import BlochpacketError
from .flow import integrate_flow, total_energy
from .reference import SolverParams, l2_error, pde_residual, solve_schrodinger

logger = logging.getLogger("blochpacket")

TIME_KEY_DIGITS = 12


def _tkey(t: float) -> float:
    return round(float(t), TIME_KEY_DIGITS)


def _write_csv(path: Path, fieldnames, rows, config_hash: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames) + ["config"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "config": config_hash})
    return path


def _write_summary(path: Path, summary: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path


def loglog_fit(epsilons, values) -> dict:
    """OLS fit of ln(value) against ln(epsilon); no outlier rejection."""
    eps = np.asarray(epsilons, dtype=float)
    val = np.asarray(values, dtype=float)
    keep = np.isfinite(val) & (val > 0)
    if np.sum(keep) < 3:
        return {"slope": None, "intercept": None, "points": int(np.sum(keep))}
    slope, intercept = np.polyfit(np.log(eps[keep]), np.log(val[keep]), 1)
    return {"slope": float(slope), "intercept": float(intercept), "points": int(np.sum(keep))}


# ---------------------------------------------------------------------------
# shared epsilon-independent dynamics


@dataclass
class DynamicsBundle:
    """Trajectory, envelope, and band data shared by every epsilon cell."""

    config: ExperimentConfig
    band: object
    external: object
    lattice: object
    lattice_potential: object
    trajectory: object
    coefficients: object
    entries: dict  # time -> (TrajectoryState, BlochEigenpair, GaussianEnvelope)

    def at(self, t: float):
        return self.entries[_tkey(t)]


def prepare_dynamics(config: ExperimentConfig, times) -> DynamicsBundle:
    """Integrate the flow once and chain the Gaussian envelope through the
    requested times, capturing the matching Bloch eigenpair at each stop."""
    band = config.make_band()
    external = config.make_external()
    lattice = config.make_lattice()
    lattice_potential = config.make_lattice_potential()

    wanted = sorted({_tkey(t) for t in times} | {0.0})
    horizon = max(max(wanted), config.flow_dt)
    trajectory = integrate_flow(
        config.q0, config.p0, horizon, config.flow_dt, band, external
    )
    coefficients = coefficients_along(trajectory, band, external)

    entries = {}
    gauss = config.make_gaussian()
    for t in wanted:
        if t > gauss.t:
            gauss = evolve_gaussian(gauss, coefficients, t, config.envelope_dt)
        state = trajectory.state_at(t)
        pair = band.eigenpair(state.p)
        entries[t] = (state, pair, gauss)
    return DynamicsBundle(
        config=config,
        band=band,
        external=external,
        lattice=lattice,
        lattice_potential=lattice_potential,
        trajectory=trajectory,
        coefficients=coefficients,
        entries=entries,
    )


def _leading_packet(bundle: DynamicsBundle, t: float, epsilon: float, grid):
    state, pair, gauss = bundle.at(t)
    return synthesize_packet(gauss, state, pair, epsilon, grid)


def _corrected_packet(
    bundle: DynamicsBundle,
    t: float,
    epsilon: float,
    grid,
    *,
    ablate: bool = False,
    base_time: float | None = None,
):
    """Three-term packet at t.  With base_time set, the envelope is carried
    from the prepared entry at base_time by a short exact-landing hop, so
    the residual's off-center snapshots stay consistent with the envelope
    dynamics instead of being re-integrated from zero."""
    config = bundle.config
    if base_time is None:
        state, pair, gauss = bundle.at(t)
    else:
        _, _, gauss = bundle.at(base_time)
        if abs(t - gauss.t) > 0:
            gauss = evolve_gaussian(
                gauss, bundle.coefficients, t, max(abs(t - gauss.t), 1e-12)
            )
        state = bundle.trajectory.state_at(t)
        pair = bundle.band.eigenpair(state.p)
    u = grid_envelope_from_gaussian(
        gauss, config.envelope_half_width, config.envelope_points
    )
    u0 = build_U0(u, pair)
    if ablate:
        u1 = u2 = None
    else:
        derivs = bundle.band.derivatives(state.p)
        u1 = build_U1(u, pair, derivs)
        u2 = build_U2(u, state, bundle.band, bundle.external)
    return synthesize_app(u0, u1, u2, state, epsilon, grid)


def _initial_field(bundle: DynamicsBundle, epsilon: float, grid):
    if bundle.config.initial_data == "well_prepared":
        return _corrected_packet(bundle, 0.0, epsilon, grid)
    return _leading_packet(bundle, 0.0, epsilon, grid)


def _make_grid(config: ExperimentConfig, epsilon: float):
    return make_grid_for(
        epsilon,
        config.dimension,
        half_width=config.half_width,
        lattice_period=config.lattice_period,
        points_per_period=config.points_per_period,
    )


# ---------------------------------------------------------------------------
# band scan


def run_bands(config: ExperimentConfig) -> dict:
    config.validate()
    out = Path(config.output_dir)
    lattice = config.make_lattice()
    potential = config.make_lattice_potential()
    cutoff = config.cutoff if config.cutoff is not None else default_cutoff(config.dimension)
    band = config.make_band()
    m = config.band_index

    fracs = np.linspace(-0.5, 0.5, config.k_samples)
    direction = lattice.dual_basis[0]
    fd_step = 1e-4

    rows = []
    failures = []
    max_grad_dev = 0.0
    max_hess_dev = 0.0
    for frac in fracs:
        k = frac * direction
        h = build_bloch_hamiltonian(lattice, potential, k, cutoff)
        evals = np.linalg.eigvalsh(h)[: config.num_bands]
        row = {"k_frac": frac}
        for j, val in enumerate(np.atleast_1d(k)):
            row[f"k_{j}"] = val
        for n, e in enumerate(evals, start=1):
            row[f"E_{n}"] = e
        others = np.delete(evals, m - 1) if evals.size > 1 else np.array([])
        row["gap_m"] = float(np.min(np.abs(others - evals[m - 1]))) if others.size else float("nan")
        rows.append(row)

        try:
            grad = band.grad_energy(k)
            hess = band.hess_energy(k)
            d = lattice.dimension
            fd_grad = np.zeros(d)
            fd_hess = np.zeros((d, d))
            for j in range(d):
                step = fd_step * np.eye(d)[j]
                fd_grad[j] = (band.energy(k + step) - band.energy(k - step)) / (
                    2 * fd_step
                )
                fd_hess[:, j] = (
                    band.grad_energy(k + step) - band.grad_energy(k - step)
                ) / (2 * fd_step)
            max_grad_dev = max(max_grad_dev, float(np.max(np.abs(grad - fd_grad))))
            max_hess_dev = max(
                max_hess_dev, float(np.max(np.abs(hess - 0.5 * (fd_hess + fd_hess.T))))
            )
        except BlochpacketError as exc:
            failures.append({"k_frac": float(frac), "reason": str(exc)})

    fieldnames = list(rows[0].keys())
    csv_path = _write_csv(out / "bands.csv", fieldnames, rows, config.config_hash())
    summary = {
        "kind": "bands",
        "config": config.config_hash(),
        "k_samples": config.k_samples,
        "num_bands": config.num_bands,
        "band_index": m,
        "max_grad_deviation": max_grad_dev,
        "max_hess_deviation": max_hess_dev,
        "derivative_failures": failures,
        "csv": str(csv_path),
    }
    _write_summary(out / "bands_summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# flow and envelope runs


def run_flow(config: ExperimentConfig) -> dict:
    config.validate()
    out = Path(config.output_dir)
    band = config.make_band()
    external = config.make_external()
    trajectory = integrate_flow(
        config.q0, config.p0, config.t_final, config.flow_dt, band, external
    )
    state0 = trajectory.node_state(0)
    e0 = total_energy(state0, band, external)

    rows = []
    max_drift = 0.0
    for i in range(trajectory.ts.size):
        state = trajectory.node_state(i)
        energy = total_energy(state, band, external)
        drift = abs(energy - e0)
        max_drift = max(max_drift, drift)
        row = {"t": state.t}
        for j in range(state.dimension):
            row[f"q_{j}"] = state.q[j]
        for j in range(state.dimension):
            row[f"p_{j}"] = state.p[j]
        row.update({"S": state.S, "theta": state.theta, "energy": energy, "energy_drift": drift})
        rows.append(row)

    csv_path = _write_csv(out / "flow.csv", list(rows[0].keys()), rows, config.config_hash())
    summary = {
        "kind": "flow",
        "config": config.config_hash(),
        "t_final": config.t_final,
        "dt": config.flow_dt,
        "max_energy_drift": max_drift,
        "csv": str(csv_path),
    }
    _write_summary(out / "flow_summary.json", summary)
    return summary


def run_envelope(config: ExperimentConfig) -> dict:
    config.validate()
    out = Path(config.output_dir)
    times = sorted({_tkey(t) for t in config.sample_times} | {_tkey(config.t_final)})
    bundle = prepare_dynamics(config, times)

    u_grid = grid_envelope_from_gaussian(
        config.make_gaussian(), config.envelope_half_width, config.envelope_points
    )
    mass0 = u_grid.mass()

    rows = []
    max_defect = 0.0
    max_mass_drift = 0.0
    max_diff = 0.0
    for t in times:
        _, _, gauss = bundle.at(t)
        defects = gaussian_invariant_defects(gauss)
        worst = max(defects["symmetry"], defects["inverse_width"], defects["det_branch"])
        max_defect = max(max_defect, worst)
        if t > u_grid.t:
            u_grid = evolve_grid_envelope(
                u_grid, bundle.coefficients, t, config.grid_envelope_dt
            )
        sampled = grid_envelope_from_gaussian(
            gauss, config.envelope_half_width, config.envelope_points
        )
        dz = u_grid.dz() ** config.dimension
        diff = float(np.sqrt(np.sum(np.abs(u_grid.values - sampled.values) ** 2) * dz))
        drift = abs(u_grid.mass() - mass0)
        max_mass_drift = max(max_mass_drift, drift)
        max_diff = max(max_diff, diff)
        rows.append(
            {
                "t": t,
                "gaussian_symmetry_defect": defects["symmetry"],
                "gaussian_width_defect": defects["inverse_width"],
                "gaussian_det_branch_defect": defects["det_branch"],
                "gaussian_min_width_eig": defects["min_re_eig"],
                "grid_mass": u_grid.mass(),
                "grid_mass_drift": drift,
                "grid_boundary_fraction": u_grid.boundary_mass_fraction(),
                "grid_vs_gaussian_l2": diff,
                "sigma1_norm": sigma_norm(u_grid, 1),
            }
        )

    csv_path = _write_csv(out / "envelope.csv", list(rows[0].keys()), rows, config.config_hash())
    summary = {
        "kind": "envelope",
        "config": config.config_hash(),
        "max_gaussian_defect": max_defect,
        "max_grid_mass_drift": max_mass_drift,
        "max_grid_vs_gaussian_l2": max_diff,
        "csv": str(csv_path),
    }
    _write_summary(out / "envelope_summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# packet synthesis and reference propagation


def run_packet(config: ExperimentConfig) -> dict:
    config.validate()
    out = Path(config.output_dir)
    bundle = prepare_dynamics(config, [0.0])
    rows = []
    for i, eps in enumerate(config.epsilons):
        grid = _make_grid(config, eps)
        field = _initial_field(bundle, eps, grid)
        stem = out / f"packet_eps{i}"
        write_field(field, stem)
        rows.append(
            {
                "epsilon": eps,
                "npoints": grid.npoints,
                "mass": field.mass(),
                "boundary_fraction": field.boundary_mass_fraction(),
                "stem": stem.name,
            }
        )
    csv_path = _write_csv(out / "packet.csv", list(rows[0].keys()), rows, config.config_hash())
    summary = {
        "kind": "packet",
        "config": config.config_hash(),
        "initial_data": config.initial_data,
        "csv": str(csv_path),
    }
    _write_summary(out / "packet_summary.json", summary)
    return summary


def run_reference(config: ExperimentConfig) -> dict:
    config.validate()
    out = Path(config.output_dir)
    times = sorted({_tkey(t) for t in config.sample_times})
    bundle = prepare_dynamics(config, [0.0])
    rows = []
    max_drift = 0.0
    for i, eps in enumerate(config.epsilons):
        grid = _make_grid(config, eps)
        psi0 = _initial_field(bundle, eps, grid)
        mass0 = psi0.mass()
        params = SolverParams(dt=config.reference_dt_factor * eps)
        snaps = solve_schrodinger(
            psi0, bundle.lattice, bundle.lattice_potential, bundle.external, times, params
        )
        for t, snap in zip(times, snaps):
            drift = abs(snap.mass() - mass0)
            max_drift = max(max_drift, drift)
            rows.append({"epsilon": eps, "t": t, "mass": snap.mass(), "mass_drift": drift})
        write_field(snaps[-1], out / f"reference_eps{i}")
    csv_path = _write_csv(out / "reference.csv", list(rows[0].keys()), rows, config.config_hash())
    summary = {
        "kind": "reference",
        "config": config.config_hash(),
        "max_mass_drift": max_drift,
        "csv": str(csv_path),
    }
    _write_summary(out / "reference_summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# epsilon sweeps: error law, residual law, Ehrenfest horizon


def _error_cell(bundle: DynamicsBundle, eps: float) -> list:
    config = bundle.config
    grid = _make_grid(config, eps)
    times = sorted({_tkey(t) for t in config.sample_times})
    psi0 = _initial_field(bundle, eps, grid)
    params = SolverParams(dt=config.reference_dt_factor * eps)
    snaps = solve_schrodinger(
        psi0, bundle.lattice, bundle.lattice_potential, bundle.external, times, params
    )
    rows = []
    for t, snap in zip(times, snaps):
        packet = _leading_packet(bundle, t, eps, grid)
        rows.append(
            {
                "epsilon": eps,
                "time": t,
                "error": l2_error(snap, packet),
                "reference_mass": snap.mass(),
                "packet_mass": packet.mass(),
            }
        )
    return rows


def _residual_cell(bundle: DynamicsBundle, eps: float) -> list:
    config = bundle.config
    grid = _make_grid(config, eps)
    t_star = _tkey(config.residual_time)
    delta = config.residual_delta_factor * eps**2
    rows = []
    for label, ablate in (("full", False), ("leading", True)):
        fields = [
            _corrected_packet(
                bundle, t_star + off, eps, grid, ablate=ablate, base_time=t_star
            )
            for off in (-delta, 0.0, delta)
        ]
        value = pde_residual(
            fields[0], fields[1], fields[2],
            bundle.lattice, bundle.lattice_potential, bundle.external,
        )
        rows.append({"label": label, "residual": value})
    return [
        {
            "epsilon": eps,
            "time": t_star,
            "delta": delta,
            "residual_full": rows[0]["residual"],
            "residual_leading": rows[1]["residual"],
        }
    ]


def _ehrenfest_cell(bundle: DynamicsBundle, eps: float) -> list:
    config = bundle.config
    grid = _make_grid(config, eps)
    horizon_times = sorted({_tkey(c0 * np.log(1.0 / eps)) for c0 in config.c0_list})
    psi0 = _initial_field(bundle, eps, grid)
    params = SolverParams(dt=config.reference_dt_factor * eps)
    snaps = solve_schrodinger(
        psi0, bundle.lattice, bundle.lattice_potential, bundle.external, horizon_times, params
    )
    by_time = dict(zip(horizon_times, snaps))
    rows = []
    for c0 in config.c0_list:
        t = _tkey(c0 * np.log(1.0 / eps))
        packet = _leading_packet(bundle, t, eps, grid)
        rows.append(
            {
                "epsilon": eps,
                "c0": c0,
                "time": t,
                "error": l2_error(by_time[t], packet),
            }
        )
    return rows


_CELL_RUNNERS = {
    "error": _error_cell,
    "residual": _residual_cell,
    "ehrenfest": _ehrenfest_cell,
}


def _needed_times(config: ExperimentConfig, mode: str) -> list:
    if mode == "error":
        return sorted({_tkey(t) for t in config.sample_times})
    if mode == "residual":
        # pad the horizon so the +delta residual snapshot stays inside the
        # trajectory's dense-output range for every epsilon
        pad = config.residual_delta_factor * max(config.epsilons) ** 2
        return [_tkey(config.residual_time), _tkey(config.residual_time + 2 * pad)]
    times = set()
    for eps in config.epsilons:
        for c0 in config.c0_list:
            times.add(_tkey(c0 * np.log(1.0 / eps)))
    return sorted(times)


def _sweep_worker(payload: str) -> tuple:
    data = json.loads(payload)
    config = ExperimentConfig.from_dict(data["config"])
    mode = data["mode"]
    eps = data["epsilon"]
    bundle = prepare_dynamics(config, _needed_times(config, mode))
    try:
        return eps, _CELL_RUNNERS[mode](bundle, eps), None
    except BlochpacketError as exc:
        return eps, [], f"{type(exc).__name__}: {exc}"


def _run_sweep(config: ExperimentConfig, mode: str) -> tuple:
    """Rows and failures for every epsilon, in config order."""
    if config.jobs > 1:
        payloads = [
            json.dumps({"config": config.to_dict(), "mode": mode, "epsilon": eps})
            for eps in config.epsilons
        ]
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_sweep_worker, payloads))
    else:
        bundle = prepare_dynamics(config, _needed_times(config, mode))
        results = []
        for eps in config.epsilons:
            logger.info("%s sweep: epsilon = %g", mode, eps)
            try:
                results.append((eps, _CELL_RUNNERS[mode](bundle, eps), None))
            except BlochpacketError as exc:
                results.append((eps, [], f"{type(exc).__name__}: {exc}"))
    rows = [row for _, cell_rows, _ in results for row in cell_rows]
    failures = [
        {"epsilon": eps, "reason": reason} for eps, _, reason in results if reason
    ]
    return rows, failures


def run_convergence(config: ExperimentConfig) -> dict:
    config.validate()
    out = Path(config.output_dir)
    mode = config.convergence_mode
    rows, failures = _run_sweep(config, mode)

    if mode == "error":
        fieldnames = ["epsilon", "time", "error", "reference_mass", "packet_mass"]
        slopes = {}
        for t in sorted({row["time"] for row in rows}):
            sub = [row for row in rows if row["time"] == t]
            fit = loglog_fit([r["epsilon"] for r in sub], [r["error"] for r in sub])
            slopes[f"{t:.6g}"] = fit
        extra = {"slopes": slopes}
    else:
        fieldnames = ["epsilon", "time", "delta", "residual_full", "residual_leading"]
        extra = {
            "slope_full": loglog_fit(
                [r["epsilon"] for r in rows], [r["residual_full"] for r in rows]
            ),
            "slope_leading": loglog_fit(
                [r["epsilon"] for r in rows], [r["residual_leading"] for r in rows]
            ),
        }

    csv_path = _write_csv(out / "convergence.csv", fieldnames, rows, config.config_hash())
    summary = {
        "kind": "convergence",
        "mode": mode,
        "config": config.config_hash(),
        "initial_data": config.initial_data,
        "failures": failures,
        "csv": str(csv_path),
        **extra,
    }
    _write_summary(out / "convergence_summary.json", summary)
    return summary


def run_ehrenfest(config: ExperimentConfig) -> dict:
    config.validate()
    out = Path(config.output_dir)
    rows, failures = _run_sweep(config, "ehrenfest")

    monotone = {}
    for c0 in config.c0_list:
        sub = [row for row in rows if row["c0"] == c0]
        # largest epsilon first; the horizon error should fall as eps does
        sub.sort(key=lambda row: -row["epsilon"])
        errs = [row["error"] for row in sub]
        monotone[f"{c0:.6g}"] = {
            "errors": errs,
            "epsilons": [row["epsilon"] for row in sub],
            "monotone_decreasing": bool(
                len(errs) >= 2 and all(b < a for a, b in zip(errs, errs[1:]))
            ),
        }

    csv_path = _write_csv(
        out / "ehrenfest.csv", ["epsilon", "c0", "time", "error"], rows, config.config_hash()
    )
    summary = {
        "kind": "ehrenfest",
        "config": config.config_hash(),
        "failures": failures,
        "horizons": monotone,
        "csv": str(csv_path),
    }
    _write_summary(out / "ehrenfest_summary.json", summary)
    return summary


RUNNERS = {
    "bands": run_bands,
    "flow": run_flow,
    "envelope": run_envelope,
    "packet": run_packet,
    "reference": run_reference,
    "convergence": run_convergence,
    "ehrenfest": run_ehrenfest,
}


def run_experiment(config: ExperimentConfig) -> dict:
    try:
        runner = RUNNERS[config.kind]
    except KeyError:
        raise BlochpacketError(f"no runner for experiment kind {config.kind!r}")
    return runner(config)
