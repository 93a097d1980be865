"""Artifact files and run configuration.

Binary artifacts are one ASCII header line followed by little-endian 64-bit
floats in row-major order (complex blocks interleave real and imaginary
parts).  Tables are CSV with 17 significant digits so that a float survives a
write/read cycle bit for bit.

The run configuration is an INI file; a key ``grid.n`` lives in section
``[grid]`` under ``n``.  Lists are comma separated.
"""
from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from .dtn_map import BoundaryOperator
from .errors import ConfigError
from .grids_norms import OFFSET_H, SpatialGrid, SpectralGrid, as_energy
from .scattering_transform import ScatteringData

FIELD_PARTS = ("re", "im", "realonly")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_blob(path, header: str, data: np.ndarray):
    with open(path, "wb") as fh:
        fh.write((header + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def _read_blob(path, magic: str):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        raw = fh.read()
    if header[:3] != ["DBARLAB", magic, "v1"]:
        raise ConfigError(f"{path}: not a DBARLAB {magic} v1 file")
    return header[3:], np.frombuffer(raw, dtype="<f8")


# ------------------------------------------------------------ fields

def write_field(path, values: np.ndarray, L: float, part: str = "realonly"):
    """One real part of an ``n x n`` field; ``realonly`` requires a real field."""
    values = np.asarray(values)
    if part not in FIELD_PARTS:
        raise ValueError(f"part must be one of {FIELD_PARTS}")
    if part == "realonly" and np.iscomplexobj(values) and np.any(values.imag):
        raise ValueError("realonly field has a nonzero imaginary part")
    data = values.imag if part == "im" else values.real
    n = values.shape[0]
    _write_blob(path, f"DBARLAB FIELD v1 {n} {fmt(L)} {part}", data)


def read_field(path):
    """Returns (values, L, part)."""
    (n, L, part), data = _read_blob(path, "FIELD")
    n = int(n)
    if data.size != n * n:
        raise ConfigError(f"{path}: expected {n * n} values, found {data.size}")
    return data.reshape(n, n).copy(), float(L), part


def write_complex_field(prefix, values: np.ndarray, L: float):
    write_field(f"{prefix}_re.bin", values, L, "re")
    write_field(f"{prefix}_im.bin", values, L, "im")


def field_csv(values: np.ndarray, grid: SpatialGrid) -> str:
    X, Y = grid.mesh()
    values = np.asarray(values, complex)
    buf = io.StringIO()
    buf.write("x,y,re,im\n")
    for x, y, v in zip(X.ravel(), Y.ravel(), values.ravel()):
        buf.write(f"{fmt(x)},{fmt(y)},{fmt(v.real)},{fmt(v.imag)}\n")
    return buf.getvalue()


# ------------------------------------------------------------ DtN

def write_dtn(path, phi: BoundaryOperator):
    data = phi.matrix.astype(complex).view(float)
    _write_blob(path, f"DBARLAB DTN v1 {phi.N_b} {fmt(phi.E.E)}", data)


def read_dtn(path) -> BoundaryOperator:
    (N, E), data = _read_blob(path, "DTN")
    N = int(N)
    if data.size != 2 * N * N:
        raise ConfigError(f"{path}: truncated DTN matrix")
    mat = data.view(complex).reshape(N, N).copy()
    return BoundaryOperator(mat, as_energy(float(E)), N)


def dtn_csv(phi: BoundaryOperator) -> str:
    buf = io.StringIO()
    buf.write("row,col,re,im\n")
    for (i, j), v in np.ndenumerate(phi.matrix):
        buf.write(f"{i},{j},{fmt(v.real)},{fmt(v.imag)}\n")
    return buf.getvalue()


# ------------------------------------------------------------ scattering data

def write_scattering(path, scat: ScatteringData):
    g = scat.grid
    header = f"DBARLAB SCAT v1 {fmt(scat.E.E)} {g.n_radii} {g.n_theta} {scat.N_T}"
    data = np.concatenate([scat.r_values.astype(complex).ravel(),
                           scat.rho_values.astype(complex).ravel()]).view(float)
    _write_blob(path, header, data)


def read_scattering(path, lambda_max: float = 8.0, offset_h: float = OFFSET_H) -> ScatteringData:
    """The header does not carry ``lambda_max``; it must match the writer's grid."""
    (E, nr, nt, NT), data = _read_blob(path, "SCAT")
    nr, nt, NT = int(nr), int(nt), int(NT)
    z = data.view(complex)
    if z.size != nr * nt + NT * NT:
        raise ConfigError(f"{path}: block sizes do not match the header")
    grid = SpectralGrid(lambda_max, nr, nt, NT, offset_h)
    r = z[:nr * nt].reshape(nr, nt).copy()
    rho = z[nr * nt:].reshape(NT, NT).copy()
    lam = grid.lam
    b = r * np.conj(lam) / np.pi * np.sign(np.abs(lam) ** 2 - 1)
    return ScatteringData(r, rho, as_energy(float(E)), grid, b)


def scattering_csvs(scat: ScatteringData) -> tuple[str, str]:
    lam = scat.grid.lam
    a = io.StringIO()
    a.write("abs_lambda,arg_lambda,re_r,im_r\n")
    for l, v in zip(lam.ravel(), scat.r_values.ravel()):
        a.write(f"{fmt(abs(l))},{fmt(np.angle(l))},{fmt(v.real)},{fmt(v.imag)}\n")
    b = io.StringIO()
    b.write("arg_lambda,arg_lambda_prime,re_rho,im_rho\n")
    th = 2 * np.pi * np.arange(scat.N_T) / scat.N_T
    for (i, j), v in np.ndenumerate(scat.rho_values):
        b.write(f"{fmt(th[i])},{fmt(th[j])},{fmt(v.real)},{fmt(v.imag)}\n")
    return a.getvalue(), b.getvalue()


# ------------------------------------------------------------ configuration

@dataclass(frozen=True)
class RunConfig:
    grid_n: int = 64
    grid_L: float = 1.5
    spectral_lambda_max: float = 8.0
    spectral_n_radii: int = 64
    spectral_n_theta: int = 64
    spectral_n_circle: int = 256
    spectral_offset_h: float = OFFSET_H
    spectral_alpha: float = 0.5
    experiment_type: str = "roundtrip"
    experiment_E_list: tuple = (100.0,)
    experiment_delta_list: tuple = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    experiment_tau: float = 1.0
    experiment_seed: int = 0
    experiment_mode: str = "rank_one"
    experiment_kappa: float = -1.0  # negative: tied to tau
    potential_kind: str = "bump"
    potential_params: tuple = (1.0, 0.5)
    potential_order: float = 0.0
    potential_m: int = 3
    potential2_kind: str = "bump"
    potential2_params: tuple = (1.0, 0.5, 0.05, 0.0)
    dtn_N_b: int = 64
    rh_route: str = "abc_formula"
    rh_n_radii: int = 0  # 0: automatic working grid
    rh_n_theta: int = 0

    @property
    def spatial(self) -> SpatialGrid:
        return SpatialGrid(self.grid_n, self.grid_L)

    @property
    def spectral(self) -> SpectralGrid:
        return SpectralGrid(self.spectral_lambda_max, self.spectral_n_radii, self.spectral_n_theta,
                            self.spectral_n_circle, self.spectral_offset_h)

    def items(self):
        """(dotted key, value) pairs in declaration order."""
        for f in fields(self):
            sec, key = f.name.split("_", 1)
            yield f"{sec}.{key}", getattr(self, f.name)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(name: str, text: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple":
            return tuple(float(t) for t in text.replace("[", "").replace("]", "").split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {name.replace('_', '.', 1)}") from None
    return text.strip().strip("'\"")


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case sensitive (E_list)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    vals = {}
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            name = f"{sec}_{key}"
            if name not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key {sec}.{key}")
            vals[name] = _convert(name, raw)
    cfg = replace(RunConfig(), **vals)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path} not found")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def validate(cfg: RunConfig):
    if cfg.experiment_type not in ("roundtrip", "sweep_delta", "sweep_energy"):
        raise ConfigError(f"unknown experiment.type {cfg.experiment_type!r}")
    if not cfg.experiment_E_list or any(E <= 0 for E in cfg.experiment_E_list):
        raise ConfigError("experiment.E_list must hold positive energies")
    if list(cfg.experiment_E_list) != sorted(cfg.experiment_E_list):
        raise ConfigError("experiment.E_list must be sorted ascending")
    if any(d < 0 for d in cfg.experiment_delta_list):
        raise ConfigError("experiment.delta_list must be nonnegative")
    if not 0 < cfg.experiment_tau <= 1:
        raise ConfigError("experiment.tau must lie in (0, 1]")
    if cfg.rh_route not in ("spectral_dz", "abc_formula"):
        raise ConfigError(f"unknown rh.route {cfg.rh_route!r}")
    # grids validate themselves
    cfg.spatial
    cfg.spectral


def _render(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(fmt(v) for v in value)
    if isinstance(value, float):
        return fmt(value)
    return str(value)


def config_text(cfg: RunConfig, extra: dict | None = None) -> str:
    """INI text of ``cfg`` (plus optional extra sections); parses back to ``cfg``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for dotted, value in cfg.items():
        sec, key = dotted.split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, _render(value))
    for sec, kv in (extra or {}).items():
        cp.add_section(sec)
        for k, v in kv.items():
            cp.set(sec, k, _render(v))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def write_metadata(path, cfg: RunConfig, run: dict):
    """Run-metadata file: the full config, package versions and run values."""
    import scipy

    from . import __version__
    versions = {"dbarlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_text(cfg, {"versions": versions, "run": run}))
