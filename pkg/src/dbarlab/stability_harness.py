"""End-to-end experiments: round trips, error-vs-delta and error-vs-E sweeps, envelope fits.

The envelope fitted to the sweep records is

    bound(E, delta) = C1 * (E delta^tau + (sqrt(E) + (1 - tau) log(3 + 1/delta))^-(m-2)),

and the logarithmic one is ``C2 * log(3 + 1/delta)^-alpha``.

Perturbed data in the delta sweep come from the DtN difference identities with
the traces of the unperturbed potential (first order in the perturbation).  The
b identity amplifies DtN noise like ``exp(2 |Im k(lambda)|)``, so r is only
kept on the annulus ``1/a < |lambda| < a`` with ``a = 1 + kappa log(3 + 1/delta) / sqrt(E)``
and ``kappa = (1 - tau) / (4 (diam D + 1))``.  At tau = 1 this keeps no r at all and
the reconstruction uses rho alone; exact data (delta = 0) keep everything.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .dtn_map import BoundaryOperator, assemble_dtn, boundary_nodes, opnorm_linf, perturb_dtn
from .errors import ConfigError, DegenerateFit, InsufficientSpan, SolverError
from .forward_faddeev import solve_mu
from .grids_norms import PotentialField, SpatialGrid, SpectralGrid, as_energy, build_potential, sup_norm_D
from .rh_solver import LogPolarGrid, ReconstructionResult, RHSolver, reconstruct_v, work_grid_for
from .scattering_transform import (ScatteringData, TorusSolutions, b_on_grid, compute_scattering,
                                   diff_f_kernel, h12_from_hpm, hpm_from_f, r_on_grid, solve_rho,
                                   torus_kernel)

D_DIAMETER = 2.0
ROUTE = "abc_formula"


# ------------------------------------------------------------ records and fits

@dataclass
class StabilityRecord:
    E: float
    delta: float
    tau: float
    sup_error: float
    bound_value: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.delta < 0 or self.sup_error < 0:
            raise ValueError("delta and sup_error must be nonnegative")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")


@dataclass
class SweepReport:
    records: list
    fitted_C1: float
    fit_residual: float
    monotonicity_flags: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def csv(self) -> str:
        """``flag`` is 1 when a record continues the monotone trend from its predecessor."""
        lines = ["E,delta,tau,sup_error,bound_value,flag"]
        steps = self.info.get("step_flags", [True] * len(self.records))
        for rec, ok in zip(self.records, steps):
            lines.append(",".join([fileio.fmt(rec.E), fileio.fmt(rec.delta), fileio.fmt(rec.tau),
                                   fileio.fmt(rec.sup_error), fileio.fmt(rec.bound_value),
                                   "1" if ok else "0"]))
        return "\n".join(lines) + "\n"


def bound_shape(E: float, delta: float, tau: float, m: int) -> float:
    """The bracket of the envelope; delta = 0 keeps only the energy term."""
    E = float(E)
    hold = E * delta ** tau if delta > 0 else 0.0
    base = np.sqrt(E)
    if tau < 1:
        base += (1 - tau) * (np.log(3 + 1 / delta) if delta > 0 else np.inf)
    return float(hold + base ** (-(m - 2)))


def fit_bound(records, m: int, tau: float):
    """C1 so that the envelope majorizes every record; returns (C1, pre-clamp residual).

    C1 is first fitted by least squares in log space (the geometric mean of
    error/shape), then raised by the worst ratio, which is the reported residual.
    """
    recs = list(records)
    if len(recs) < 1:
        raise DegenerateFit("no records to fit")
    shapes = np.array([bound_shape(r.E, r.delta, tau, m) for r in recs])
    errs = np.array([r.sup_error for r in recs])
    pos = errs > 0
    if not np.any(pos):
        raise DegenerateFit("all sweep errors are zero")
    with np.errstate(divide="ignore"):
        C_ls = float(np.exp(np.mean(np.log(errs[pos] / shapes[pos]))))
        # an exact record (zero error) sits on any envelope, even a zero one
        ratios = np.where(pos, errs / np.where(pos, C_ls * shapes, 1.0), 0.0)
    residual = float(np.max(ratios))
    C1 = C_ls * max(1.0, residual)
    for r, s in zip(recs, shapes):
        r.bound_value = C1 * s
    return C1, residual


def fit_log_bound(records, m: int):
    """Regression of log error on log log(3 + 1/delta); returns (C2, alpha_hat).

    ``m`` is accepted for symmetry with :func:`fit_bound`; the comparison value is m - 2.
    """
    recs = [r for r in records if r.delta > 0 and r.sup_error > 0]
    if len(recs) < 4:
        raise InsufficientSpan("log fit needs at least 4 records with positive delta and error")
    Es = {r.E for r in recs}
    if len(Es) != 1:
        raise InsufficientSpan("log fit needs records at a single energy")
    d = np.array([r.delta for r in recs])
    if np.log10(d.max() / d.min()) < 2 - 1e-9:
        raise InsufficientSpan("log fit needs delta spanning at least two decades")
    x = np.log(np.log(3 + 1 / d))
    y = np.log([r.sup_error for r in recs])
    slope, icpt = np.polyfit(x, y, 1)
    return float(np.exp(icpt)), float(-slope)


def kappa_for(tau: float) -> float:
    """Cutoff rate tied to the Hoelder exponent: tau = 1 - 4 kappa (diam D + 1)."""
    return (1 - tau) / (4 * (D_DIAMETER + 1))


def cutoff_radius(delta: float, E, tau: float = 1.0, kappa: float | None = None) -> float:
    """Outer radius a of the annulus on which perturbed r is kept."""
    if delta <= 0:
        return np.inf
    kappa = kappa_for(tau) if kappa is None or kappa < 0 else kappa
    return 1 + kappa * np.log(3 + 1 / delta) / as_energy(E).sqrtE


def _monotone(vals, strict: bool, increasing: bool):
    steps = [True]
    for a, b in zip(vals[:-1], vals[1:]):
        if increasing:
            steps.append(b > a if strict else b >= a)
        else:
            steps.append(b < a if strict else b <= a)
    return all(steps), steps


# ------------------------------------------------------------ pipeline pieces

def _solver(scat: ScatteringData, wgrid=None, cutoff=None) -> RHSolver:
    return RHSolver(scat, wgrid or work_grid_for(scat), cutoff=cutoff)


def _reconstruct(scat, grid: SpatialGrid, route: str, truth=None, wgrid=None, cutoff=None):
    try:
        return reconstruct_v(scat, grid, route, truth=truth, solver=_solver(scat, wgrid, cutoff))
    except SolverError as exc:
        exc.args = (f"[reconstruction] {exc}",)
        raise


def _scattering(v: PotentialField, E, sgrid: SpectralGrid) -> ScatteringData:
    try:
        return compute_scattering(v, E, sgrid, sgrid.n_circle)
    except SolverError as exc:
        exc.args = (f"[scattering] {exc}",)
        raise


def run_roundtrip(cfg: fileio.RunConfig, out: str | None = None, E: float | None = None):
    """potential -> scattering data -> reconstruction; returns (result, report)."""
    grid = cfg.spatial
    v = potential_from_config(cfg, grid)
    E = float(E if E is not None else cfg.experiment_E_list[0])
    sgrid = cfg.spectral
    t0 = time.time()
    scat = _scattering(v, E, sgrid)
    wg = _work_grid(cfg, scat)
    res = _reconstruct(scat, grid, cfg.rh_route, truth=v, wgrid=wg)
    scale = max(float(np.max(np.abs(v.values))), 1e-300)
    report = {"E": E, "route": cfg.rh_route, "sup_error": res.error_vs_truth,
              "relative_sup_error": res.error_vs_truth / scale if np.any(v.values) else res.error_vs_truth,
              "imag_sup": res.imag_sup}
    report.update({k: val for k, val in res.diagnostics.items() if k.startswith("max_")})
    for k, val in scat.diagnostics.items():
        report[f"scattering_{k}"] = val
    report["wall_time"] = time.time() - t0
    if out is not None:
        _write_reconstruction(out, res, grid, cfg, report)
    return res, report


def potential_from_config(cfg: fileio.RunConfig, grid: SpatialGrid, second: bool = False):
    kind = cfg.potential2_kind if second else cfg.potential_kind
    params = cfg.potential2_params if second else cfg.potential_params
    if kind == "zero":
        params = ()
    return build_potential(kind, params, grid, order=cfg.potential_order, m=cfg.potential_m)


def _work_grid(cfg: fileio.RunConfig, scat: ScatteringData) -> LogPolarGrid:
    return work_grid_for(scat, cfg.rh_n_radii or None, cfg.rh_n_theta or None)


# ------------------------------------------------------------ linearized data from DtN perturbations

class DtnLinearization:
    """Scattering data of a perturbed DtN map, to first order around a potential.

    Holds the boundary traces of ``v1``: psi(x, k(lambda)) on annulus nodes with
    ``|lambda| < a_max`` and the outgoing solutions on the torus nodes, together
    with b1 and f1.  ``rho`` is always taken through the chain f -> h+- -> h1, h2 -> rho
    so that a zero perturbation returns exactly the baseline.
    """

    def __init__(self, v1: PotentialField, E, sgrid: SpectralGrid, N_b: int = 64,
                 a_max: float = np.inf):
        self.v1, self.E, self.sgrid, self.N_b = v1, as_energy(E), sgrid, N_b
        self.nodes = boundary_nodes(N_b)
        self.b1 = b_on_grid(v1, self.E, sgrid)
        lam = sgrid.lam
        nr, nt = lam.shape
        self.rows = [i for i in range(nr // 2, nr) if sgrid.radii[i] < a_max]
        self.traces = np.zeros((len(self.rows), nt, N_b), complex)
        for a, i in enumerate(self.rows):
            for j in range(nt):
                sol = solve_mu(v1, lam[i, j], self.E)
                self.traces[a, j] = self._psi(sol, lam[i, j])
        phi = TorusSolutions(v1, self.E, sgrid.n_circle, "phi", offset_h=sgrid.offset_h,
                             keep_kernels=False, trace_nodes=self.nodes)
        self.f1 = torus_kernel(v1, self.E, sgrid.n_circle, "f", sols=phi)
        self.phi_traces = phi.traces

    def _psi(self, sol, lam) -> np.ndarray:
        from .forward_faddeev import lambda_to_k
        k = lambda_to_k(lam, self.E)
        return sol.mu_at(self.nodes) * np.exp(1j * (self.nodes @ k))

    def delta_b(self, dphi: np.ndarray) -> np.ndarray:
        """First-order b2 - b1 on the annulus rows with traces (zero elsewhere)."""
        nr, nt = self.sgrid.lam.shape
        db = np.zeros((nr, nt), complex)
        c = (2 * np.pi / self.N_b) / (2 * np.pi) ** 2
        half = nt // 2
        for a, i in enumerate(self.rows):
            T = self.traces[a]
            # psi(x, conj k(lambda)) = conj psi(x, k(-lambda)) for real v
            Tc = np.conj(np.roll(T, -half, axis=0))
            db[i] = c * np.einsum("jb,bc,jc->j", Tc, dphi, T)
            db[nr - 1 - i] = np.conj(np.roll(db[i], -half))
        return db

    def scattering(self, phi1: BoundaryOperator, phi2: BoundaryOperator | np.ndarray,
                   a: float = np.inf):
        """Perturbed data and the radius a of the annulus on which r is kept."""
        P2 = phi2.matrix if isinstance(phi2, BoundaryOperator) else np.asarray(phi2)
        dphi = P2 - phi1.matrix
        sg = self.sgrid
        t = sg.radii
        b = self.b1 + self.delta_b(dphi)
        keep = (t < a) & (t > 1 / a)
        outer = np.arange(sg.n_radii) >= sg.n_radii // 2
        if np.any(dphi) and set(np.flatnonzero(keep & outer)) - set(self.rows):
            raise ConfigError("cutoff radius exceeds the radius covered by the stored traces")
        b[~keep] = 0.0
        df = diff_f_kernel(phi1, P2, self.phi_traces, self.phi_traces)
        f = self.f1.__class__(self.f1.values + df, "f")
        hp, hm = hpm_from_f(f, "plus"), hpm_from_f(f, "minus")
        h1, h2 = h12_from_hpm(hp, hm)
        rho = solve_rho(h1, h2, check=False)
        diag = dict(rho.diagnostics)
        diag["contraction_hpm"] = max(hp.diagnostics["contraction"], hm.diagnostics["contraction"])
        scat = ScatteringData(r_on_grid(b, sg), rho.values, self.E, sg, b, diag)
        return scat


def sweep_delta(v1: PotentialField, E, delta_list, mode: str = "rank_one", *, tau: float = 1.0,
                m: int | None = None, seed: int = 0, kappa: float | None = None,
                sgrid: SpectralGrid | None = None, N_b: int = 64, route: str = ROUTE,
                wgrid: LogPolarGrid | None = None, second_potential=None,
                progress=None) -> SweepReport:
    """Reconstruction error against measured DtN distance at one energy.

    ``sup_error`` is ``||v_tilde - v1_rec||`` on D, where v1_rec is reconstructed
    from the unperturbed data through the same chain.
    """
    deltas = [float(d) for d in delta_list]
    if any(d < 0 for d in deltas):
        raise ConfigError("delta_list must be nonnegative")
    if deltas != sorted(deltas):
        raise ConfigError("delta_list must be sorted ascending")
    E = as_energy(E)
    m = v1.m if m is None else m
    sgrid = sgrid or SpectralGrid()
    if not 0 < tau <= 1:
        raise ConfigError("tau must lie in (0, 1]")
    kappa = kappa_for(tau) if kappa is None or kappa < 0 else kappa
    a_max = max(cutoff_radius(d, E, tau, kappa) for d in deltas if d > 0) if any(deltas) else 1.0
    lin = DtnLinearization(v1, E, sgrid, N_b, a_max=a_max)
    phi1 = assemble_dtn(v1, E, N_b)
    base = lin.scattering(phi1, phi1)
    grid = v1.grid
    wg = wgrid or work_grid_for(base)
    v1_rec = _reconstruct(base, grid, route, wgrid=wg)
    records = []
    for n, d in enumerate(deltas):
        phi2 = perturb_dtn(phi1, d, mode, seed=seed, second_potential=second_potential)
        meas = phi2.diagnostics["delta"]
        a = cutoff_radius(meas, E, tau, kappa)
        if meas == 0:
            rec = v1_rec
            scat = base
        else:
            scat = lin.scattering(phi1, phi2, a)
            rec = _reconstruct(scat, grid, route, wgrid=wg, cutoff=a)
        err = sup_norm_D(rec.v_rec - v1_rec.v_rec, grid)
        dr = scat.r_values - base.r_values
        t = sgrid.radii[:, None] * np.ones(sgrid.lam.shape)
        inside = (t < a) & (t > 1 / a)
        diag = {"delta_target": d, "a": a, "delta_r_a": float(np.max(np.abs(dr[inside]), initial=0.0)),
                "nodes_kept": int(np.sum(inside)), "imag_sup": rec.imag_sup}
        diag.update({k: float(v) for k, v in scat.diagnostics.items()})
        diag.update({k: v for k, v in rec.diagnostics.items() if k.startswith("max_")})
        records.append(StabilityRecord(E.E, meas, tau, err, diagnostics=diag))
        if progress is not None:
            progress(n + 1, len(deltas))
    records.sort(key=lambda r: r.delta)
    ok, steps = _monotone([r.sup_error for r in records], strict=False, increasing=True)
    flags = {"nondecreasing_in_delta": ok}
    C1, resid = _fit_or_nan(records, m, tau)
    return SweepReport(records, C1, resid, flags, {"step_flags": steps, "m": m, "kappa": kappa,
                                                   "mode": mode, "seed": seed})


def _fit_or_nan(records, m, tau):
    try:
        return fit_bound(records, m, tau)
    except DegenerateFit:
        for r in records:
            r.bound_value = 0.0
        return 0.0, 0.0


def sweep_energy(v1: PotentialField, v2: PotentialField, E_list, *, tau: float = 1.0,
                 m: int | None = None, sgrid: SpectralGrid | None = None, N_b: int = 64,
                 route: str = ROUTE, work_grids: dict | None = None,
                 progress=None) -> SweepReport:
    """Two-potential pipeline over energies.

    ``sup_error`` is the error of the reconstructed difference,
    ``||(v2_rec - v1_rec) - (v2 - v1)||`` on D; delta is the measured DtN distance.
    """
    Es = [float(E) for E in E_list]
    if Es != sorted(Es):
        raise ConfigError("E_list must be sorted ascending")
    m = v1.m if m is None else m
    sgrid = sgrid or SpectralGrid()
    grid = v1.grid
    same = v2 is v1 or np.array_equal(v1.values, v2.values)
    records = []
    for n, E in enumerate(Es):
        s1 = _scattering(v1, E, sgrid)
        wg = (work_grids or {}).get(E) or work_grid_for(s1)
        r1 = _reconstruct(s1, grid, route, truth=v1, wgrid=wg)
        if same:
            delta, r2 = 0.0, r1
        else:
            s2 = _scattering(v2, E, sgrid)
            r2 = _reconstruct(s2, grid, route, truth=v2, wgrid=wg)
            delta = opnorm_linf(assemble_dtn(v2, E, N_b).matrix - assemble_dtn(v1, E, N_b).matrix)
        err = sup_norm_D((r2.v_rec - r1.v_rec) - (v2.values - v1.values), grid)
        diag = {"roundtrip_error_1": r1.error_vs_truth, "roundtrip_error_2": r2.error_vs_truth,
                "imag_sup": max(r1.imag_sup, r2.imag_sup)}
        for key in r1.diagnostics:
            if key.startswith("max_"):
                diag[key] = max(r1.diagnostics[key], r2.diagnostics.get(key, 0.0))
        records.append(StabilityRecord(E, delta, tau, err, diagnostics=diag))
        if progress is not None:
            progress(n + 1, len(Es))
    dec, steps = _monotone([r.sup_error for r in records], strict=True, increasing=False)
    ds = [r.delta for r in records if r.delta > 0]
    drift_ok = bool(ds) and max(ds) <= 2 * min(ds)
    flags = {"strictly_decreasing_in_E": dec, "delta_within_2x": drift_ok,
             "increasing_stability": dec and drift_ok}
    C1, resid = _fit_or_nan(records, m, tau)
    return SweepReport(records, C1, resid, flags, {"step_flags": steps, "m": m})


# ------------------------------------------------------------ artifacts

def _write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _deterministic(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "wall_time"}


def _write_reconstruction(prefix, res: ReconstructionResult, grid: SpatialGrid, cfg, report):
    _ensure_parent(prefix)
    fileio.write_complex_field(f"{prefix}_v", res.v_rec, grid.L)
    _write_text(f"{prefix}_v.csv", fileio.field_csv(res.v_rec, grid))
    fileio.write_metadata(f"{prefix}_meta.ini", cfg, _deterministic(report))


def _ensure_parent(prefix):
    parent = os.path.dirname(os.path.abspath(prefix))
    os.makedirs(parent, exist_ok=True)


def write_sweep(prefix, report: SweepReport, cfg):
    _ensure_parent(prefix)
    _write_text(f"{prefix}_sweep.csv", report.csv())
    run = {"fitted_C1": report.fitted_C1, "fit_residual": report.fit_residual}
    run.update({k: str(v).lower() for k, v in report.monotonicity_flags.items()})
    for i, rec in enumerate(report.records):
        for k, v in rec.diagnostics.items():
            if k != "wall_time" and v is not None:
                run[f"record{i}.{k}"] = v
    fileio.write_metadata(f"{prefix}_meta.ini", cfg, run)


# ------------------------------------------------------------ command line

def _log(msg: str):
    print(msg, file=sys.stderr)


def _cmd_forward(args, cfg):
    grid = cfg.spatial
    v = potential_from_config(cfg, grid)
    E = cfg.experiment_E_list[0]
    _ensure_parent(args.out)
    fileio.write_field(f"{args.out}_potential.bin", v.values, grid.L, "realonly")
    _write_text(f"{args.out}_potential.csv", fileio.field_csv(v.values, grid))
    lam = complex(args.lam)
    sol = solve_mu(v, lam, E)
    fileio.write_complex_field(f"{args.out}_mu", sol.values, grid.L)
    _write_text(f"{args.out}_mu.csv", fileio.field_csv(sol.values, grid))
    fileio.write_metadata(f"{args.out}_meta.ini", cfg, {
        "E": E, "lambda_re": lam.real, "lambda_im": lam.imag, "residual": sol.residual,
        "iterations": sol.iterations})


def _cmd_dtn(args, cfg):
    v = potential_from_config(cfg, cfg.spatial)
    E = cfg.experiment_E_list[0]
    phi = assemble_dtn(v, E, cfg.dtn_N_b)
    _ensure_parent(args.out)
    fileio.write_dtn(f"{args.out}_dtn.bin", phi)
    _write_text(f"{args.out}_dtn.csv", fileio.dtn_csv(phi))
    run = {"E": E}
    run.update({k: v_ for k, v_ in phi.diagnostics.items() if np.isscalar(v_)})
    fileio.write_metadata(f"{args.out}_meta.ini", cfg, run)


def _cmd_scatter(args, cfg):
    v = potential_from_config(cfg, cfg.spatial)
    E = cfg.experiment_E_list[0]
    scat = _scattering(v, E, cfg.spectral)
    _ensure_parent(args.out)
    fileio.write_scattering(f"{args.out}_scat.bin", scat)
    a, b = fileio.scattering_csvs(scat)
    _write_text(f"{args.out}_r.csv", a)
    _write_text(f"{args.out}_rho.csv", b)
    run = {"E": E}
    run.update({k: v_ for k, v_ in scat.diagnostics.items() if np.isscalar(v_)})
    fileio.write_metadata(f"{args.out}_meta.ini", cfg, run)


def _cmd_reconstruct(args, cfg):
    if not os.path.isfile(args.scat):
        raise ConfigError(f"scattering file {args.scat} not found")
    scat = fileio.read_scattering(args.scat, cfg.spectral_lambda_max, cfg.spectral_offset_h)
    grid = SpatialGrid(args.grid, cfg.grid_L)
    route = {"abc": "abc_formula"}.get(args.route, args.route)
    t0 = time.time()
    res = _reconstruct(scat, grid, route, wgrid=_work_grid(cfg, scat))
    report = {"route": route, "E": scat.E.E, "imag_sup": res.imag_sup}
    report.update({k: v for k, v in res.diagnostics.items() if k.startswith("max_")})
    _write_reconstruction(args.out, res, grid, cfg, report)
    _log(f"reconstruct: wall time {time.time() - t0:.1f} s, sup |v_rec| = "
         f"{float(np.max(np.abs(res.v_rec))):.3e}")


def _cmd_sweep_delta(args, cfg):
    v1 = potential_from_config(cfg, cfg.spatial)
    reports = []
    for E in cfg.experiment_E_list:
        rep = sweep_delta(v1, E, cfg.experiment_delta_list, cfg.experiment_mode,
                          tau=cfg.experiment_tau, m=cfg.potential_m, seed=cfg.experiment_seed,
                          kappa=cfg.experiment_kappa, sgrid=cfg.spectral, N_b=cfg.dtn_N_b,
                          route=cfg.rh_route)
        reports.append(rep)
    rep = _merge(reports, cfg.potential_m, cfg.experiment_tau)
    write_sweep(args.out, rep, cfg)


def _merge(reports, m, tau) -> SweepReport:
    if len(reports) == 1:
        return reports[0]
    recs = [r for rep in reports for r in rep.records]
    recs.sort(key=lambda r: (r.E, r.delta))
    C1, resid = _fit_or_nan(recs, m, tau)
    flags = {f"E{rep.records[0].E:g}.{k}": v for rep in reports for k, v in rep.monotonicity_flags.items()}
    steps = [s for rep in reports for s in rep.info["step_flags"]]
    return SweepReport(recs, C1, resid, flags, {"step_flags": steps})


def _cmd_sweep_energy(args, cfg):
    grid = cfg.spatial
    v1 = potential_from_config(cfg, grid)
    v2 = potential_from_config(cfg, grid, second=True)
    wgs = None
    if cfg.rh_n_radii or cfg.rh_n_theta:
        wgs = {E: _work_grid(cfg, ScatteringData.zero(E, cfg.spectral, cfg.spectral_n_circle))
               for E in cfg.experiment_E_list}
    rep = sweep_energy(v1, v2, cfg.experiment_E_list, tau=cfg.experiment_tau, m=cfg.potential_m,
                       sgrid=cfg.spectral, N_b=cfg.dtn_N_b, route=cfg.rh_route, work_grids=wgs)
    write_sweep(args.out, rep, cfg)


def selftest(out=None) -> bool:
    """Fast checks with closed-form answers; prints one line per check."""
    out = out or sys.stdout
    from .dtn_map import bessel_dtn_eigenvalue
    from .rh_solver import cauchy_solid

    checks = []
    g = SpatialGrid(32)
    zero = build_potential("zero", (), g)
    sg = SpectralGrid(8.0, 16, 16, 32)
    scat = compute_scattering(zero, 100.0, sg, 32)
    res = reconstruct_v(scat, g, "spectral_dz")
    checks.append(("free pipeline gives v_rec = 0", float(np.max(np.abs(res.v_rec))) <= 1e-6))
    phi = assemble_dtn(zero, 10.0, 64)
    lam0 = float(np.real(phi.fourier[32, 32])) if phi.fourier is not None else np.nan
    checks.append(("free DtN mode 0 equals the Bessel quotient",
                   abs(lam0 - bessel_dtn_eigenvalue(0, 10.0)) <= 1e-3 * max(1.0, abs(lam0))))
    wg = LogPolarGrid(np.log(4.0), 64, 32)
    ind = (np.abs(wg.lam) < 1).astype(complex)
    pts = np.array([0.3 + 0.1j, 2.0 - 1.0j])
    got = cauchy_solid(ind, wg, pts)
    want = np.where(np.abs(pts) < 1, np.conj(pts), 1 / pts)
    checks.append(("Cauchy transform of the disc indicator", np.max(np.abs(got - want)) <= 1e-3))
    cfg = fileio.RunConfig()
    checks.append(("config text round trip", fileio.parse_config(fileio.config_text(cfg)) == cfg))
    ok = True
    for name, passed in checks:
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'}  {name}", file=out)
    return ok


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dbarlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("forward", "dtn", "scatter", "sweep-delta", "sweep-energy"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=name.startswith("sweep"),
                       help="INI run configuration (defaults when omitted)")
        s.add_argument("--out", default=f"out/{name.replace('-', '_')}", help="output prefix")
        if name == "forward":
            s.add_argument("--lam", default="1.5", help="spectral parameter, e.g. 1.5 or 0.3+1.2j")
    s = sub.add_parser("reconstruct")
    s.add_argument("--scat", required=True, help="scattering data file")
    s.add_argument("--grid", type=int, default=64, help="spatial grid size n")
    s.add_argument("--route", choices=("spectral_dz", "abc", "abc_formula"), default="spectral_dz")
    s.add_argument("--config", help="INI configuration (spectral grid, working grid)")
    s.add_argument("--out", default="out/reconstruct")
    sub.add_parser("selftest")
    return p


_COMMANDS = {"forward": _cmd_forward, "dtn": _cmd_dtn, "scatter": _cmd_scatter,
             "reconstruct": _cmd_reconstruct, "sweep-delta": _cmd_sweep_delta,
             "sweep-energy": _cmd_sweep_energy}


def cli_main(argv=None) -> int:
    """Exit codes: 0 success, 2 configuration error, 3 solver failure."""
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        if args.command == "selftest":
            return 0 if selftest() else 3
        cfg = fileio.load_config(args.config) if args.config else fileio.RunConfig()
        _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        _log(f"dbarlab {args.command}: configuration error: {exc}")
        return 2
    except SolverError as exc:
        _log(f"dbarlab {args.command}: solver failure: {exc}")
        return 3
    return 0


def main():
    sys.exit(cli_main())
