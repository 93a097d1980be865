"""Dirichlet-to-Neumann map of ``-Delta + v - E`` on the unit disc.

Interior problems are solved by second-order finite differences on a
Cartesian grid with Shortley-Weller stencils at the circle.  The Neumann data
are not differentiated numerically; instead Green's second identity against
the free solutions ``w_m = J_m(sqrt(E) r) / J_m(sqrt(E)) e^{i m theta}`` gives,
in the Fourier basis ``e^{i n theta}`` of the boundary,

    C[m, n] = beta_n delta_mn + (1/2pi) int_D v w_{-m} u_n dA,
    beta_n = sqrt(E) J_n'(sqrt(E)) / J_n(sqrt(E)),

where ``u_n`` solves the interior problem with data ``e^{i n theta}``.  Only the
smooth volume term depends on the finite-difference solution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse, special
from scipy.sparse.linalg import LinearOperator, onenormest, splu

from .errors import ConfigError, DirichletEigenvalueHit
from .grids_norms import EnergyContext, PotentialField, as_energy

DIRICHLET_COND = 1e8
RESOLVENT_MAX = 1e6
MAX_INTERIOR = 512


def default_interior(E) -> int:
    """Interior grid size: about 27 points per wavelength, a multiple of 64 in [192, 512]."""
    k = as_energy(E).sqrtE
    return int(min(MAX_INTERIOR, max(192, 64 * np.ceil(54 * k / 64))))


@dataclass(eq=False)
class BoundaryOperator:
    """Nodal DtN matrix on ``N_b`` equispaced nodes of the unit circle.

    ``matrix @ f`` maps Dirichlet samples to Neumann samples.  ``fourier`` holds the
    same operator in the basis ``e^{i n theta}``, ``n = -N_b/2 .. N_b/2 - 1``.
    """

    matrix: np.ndarray
    E: EnergyContext
    N_b: int
    fourier: np.ndarray | None = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.N_b < 8:
            raise ConfigError("N_b must be at least 8")
        if self.matrix.shape != (self.N_b, self.N_b):
            raise ConfigError("matrix shape does not match N_b")

    @property
    def nodes(self) -> np.ndarray:
        return boundary_nodes(self.N_b)

    @property
    def weight(self) -> float:
        return 2 * np.pi / self.N_b

    def __sub__(self, other: "BoundaryOperator") -> np.ndarray:
        return self.matrix - other.matrix


def boundary_nodes(N_b: int) -> np.ndarray:
    th = 2 * np.pi * np.arange(N_b) / N_b
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


def mode_numbers(N_b: int) -> np.ndarray:
    return np.arange(-(N_b // 2), N_b - N_b // 2)


def bessel_dtn_eigenvalue(n: int, E) -> float:
    """Free-space DtN eigenvalue on the unit disc for mode e^{i n theta}."""
    k = as_energy(E).sqrtE
    return float(k * special.jvp(n, k) / special.jv(n, k))


# ------------------------------------------------------------- interior FD

@dataclass(eq=False)
class DiscFD:
    """Shortley-Weller discretization of ``-Delta`` on the unit disc."""

    M: int
    x: np.ndarray = field(init=False)
    h: float = field(init=False)
    idx: np.ndarray = field(init=False, repr=False)
    pts: np.ndarray = field(init=False, repr=False)
    lap: sparse.csr_matrix = field(init=False, repr=False)
    bnd_rows: np.ndarray = field(init=False, repr=False)
    bnd_angles: np.ndarray = field(init=False, repr=False)
    bnd_coef: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        M = self.M
        self.h = h = 2.0 / M
        self.x = x = -1.0 + h * np.arange(M + 1)
        X, Y = np.meshgrid(x, x)
        inside = X ** 2 + Y ** 2 < 1.0 - 1e-12
        idx = -np.ones(X.shape, int)
        idx[inside] = np.arange(int(inside.sum()))
        self.idx = idx
        iy, ix = np.nonzero(inside)
        self.pts = np.stack([x[ix], x[iy]], axis=-1)
        rows, cols, vals = [], [], []
        brow, bang, bcoef = [], [], []
        diag = np.zeros(len(iy))
        for axis in (0, 1):
            # distances to the neighbours (or the circle) in both directions
            th = {}
            for sgn in (1, -1):
                jy, jx = (iy + sgn, ix) if axis == 0 else (iy, ix + sgn)
                nb = idx[jy, jx]
                t = np.ones(len(iy))
                out = nb < 0
                px, py = x[ix[out]], x[iy[out]]
                if axis == 1:
                    t[out] = (sgn * np.sqrt(1 - py ** 2) - px) * sgn / h
                else:
                    t[out] = (sgn * np.sqrt(1 - px ** 2) - py) * sgn / h
                th[sgn] = (t, nb, out)
            tp, tm = th[1][0], th[-1][0]
            diag += 2.0 / (h * h * tp * tm)
            for sgn, other in ((1, -1), (-1, 1)):
                t, nb, out = th[sgn]
                to = th[other][0]
                c = -2.0 / (h * h * t * (t + to))
                ok = ~out
                rows.append(np.nonzero(ok)[0])
                cols.append(nb[ok])
                vals.append(c[ok])
                k = np.nonzero(out)[0]
                px, py = x[ix[k]], x[iy[k]]
                if axis == 1:
                    bx, by = px + sgn * t[k] * h, py
                else:
                    bx, by = px, py + sgn * t[k] * h
                brow.append(k)
                bang.append(np.arctan2(by, bx))
                bcoef.append(c[k])
        n = len(iy)
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag)
        self.lap = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        self.bnd_rows = np.concatenate(brow)
        self.bnd_angles = np.concatenate(bang)
        self.bnd_coef = np.concatenate(bcoef)

    @property
    def n_unknowns(self) -> int:
        return self.pts.shape[0]

    def rhs_for_modes(self, modes: np.ndarray) -> np.ndarray:
        """Right-hand sides moving Dirichlet data e^{i n theta} to the interior equations."""
        b = np.zeros((self.n_unknowns, len(modes)), complex)
        vals = np.exp(1j * np.outer(self.bnd_angles, modes)) * self.bnd_coef[:, None]
        np.add.at(b, self.bnd_rows, -vals)
        return b


@lru_cache(maxsize=4)
def disc_fd(M: int) -> DiscFD:
    return DiscFD(M)


def interior_solutions(v: PotentialField, E, modes, M: int | None = None):
    """Finite-difference solutions u_n at the interior nodes; returns (fd, U, cond)."""
    E = as_energy(E)
    fd = disc_fd(M or default_interior(E))
    vv = v.sample(fd.pts[:, 0], fd.pts[:, 1])
    A = (fd.lap + sparse.diags(vv - E.E)).tocsc()
    try:
        lu = splu(A)
    except RuntimeError as exc:  # exactly singular
        raise DirichletEigenvalueHit(str(exc), stage="assemble_dtn") from exc
    # ||A^-1|| is grid independent away from Dirichlet eigenvalues, unlike cond(A)
    anorm, inorm = _norm_estimates(A, lu)
    if not np.isfinite(inorm) or inorm > RESOLVENT_MAX:
        raise DirichletEigenvalueHit(
            f"E={E.E} is close to a Dirichlet eigenvalue (||A^-1||_1 ~ {inorm:.2e})",
            stage="assemble_dtn", resolvent_norm=inorm)
    cond = anorm * inorm
    B = fd.rhs_for_modes(np.asarray(modes))
    U = lu.solve(np.ascontiguousarray(B.real)) + 1j * lu.solve(np.ascontiguousarray(B.imag))
    return fd, U, cond


def _norm_estimates(A, lu):
    n = A.shape[0]
    inv = LinearOperator((n, n), matvec=lambda b: lu.solve(np.asarray(b, float).ravel()),
                         rmatvec=lambda b: lu.solve(np.asarray(b, float).ravel(), trans="T"),
                         dtype=float)
    # onenormest draws random sign vectors from the global generator; pin them so the
    # recorded estimate is reproducible
    state = np.random.get_state()
    try:
        np.random.seed(0)
        anorm = float(onenormest(A))
        np.random.seed(1)
        return anorm, float(onenormest(inv))
    finally:
        np.random.set_state(state)


def _volume_term(v, E, modes, M):
    fd, U, cond = interior_solutions(v, E, modes, M)
    k = as_energy(E).sqrtE
    r = np.hypot(fd.pts[:, 0], fd.pts[:, 1])
    th = np.arctan2(fd.pts[:, 1], fd.pts[:, 0])
    vv = v.sample(fd.pts[:, 0], fd.pts[:, 1])
    # w_{-m} = J_{-m}(k r)/J_{-m}(k) e^{-i m theta}
    W = np.stack([special.jv(-m, k * r) / special.jv(-m, k) * np.exp(-1j * m * th)
                  for m in modes], axis=0)
    S = (W * vv[None, :]) @ U * fd.h ** 2 / (2 * np.pi)
    return S, cond


def assemble_dtn(v: PotentialField, E, N_b: int = 64, M: int | None = None,
                 richardson: bool = True) -> BoundaryOperator:
    """Nodal DtN matrix for potential ``v`` at energy ``E``.

    With ``richardson`` the volume term is extrapolated from grids M and M/2,
    cancelling the leading O(h^2) finite-difference error.
    """
    E = as_energy(E)
    M = M or default_interior(E)
    if N_b < 64:
        raise ConfigError("N_b must be at least 64")
    modes = mode_numbers(N_b)
    beta = np.array([bessel_dtn_eigenvalue(n, E) for n in modes])
    if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > DIRICHLET_COND:
        raise DirichletEigenvalueHit(
            f"sqrt(E) is (close to) a Bessel zero at E={E.E}", stage="assemble_dtn")
    C = np.diag(beta).astype(complex)
    diag = {"interior_M": M}
    if not v.is_zero:
        # |n| large decouples: u_n ~ r^|n| on the support; those columns stay free
        sym = modes[1:]  # -N/2+1 .. N/2-1, closed under negation; Nyquist stays free
        S, cond = _volume_term(v, E, sym, M)
        if richardson:
            S2, _ = _volume_term(v, E, sym, M // 2)
            S = (4 * S - S2) / 3
        # the boundary bilinear form is symmetric, i.e. S[m, n] = S[-n, -m]
        St = S[::-1, ::-1].T
        diag.update(condition=cond, asymmetry=float(np.max(np.abs(S - St))))
        C[1:, 1:] += 0.5 * (S + St)
    F = np.exp(1j * np.outer(2 * np.pi * np.arange(N_b) / N_b, modes))  # nodes x modes
    mat = F @ C @ F.conj().T / N_b
    diag["imag_part"] = float(np.max(np.abs(mat.imag)))
    return BoundaryOperator(mat, E, N_b, C, diag)


def opnorm_linf(delta) -> float:
    """Discrete L-infinity operator norm: max over rows of the absolute row sum.

    A nodal matrix already carries the quadrature weight |dD|/N_b of its kernel,
    so this is the weighted row sum of the kernel.
    """
    D = delta.matrix if isinstance(delta, BoundaryOperator) else np.asarray(delta)
    if D.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(D), axis=1)))


def perturb_dtn(phi: BoundaryOperator, delta_target: float, mode: str = "rank_one",
                seed: int = 0, second_potential: PotentialField | None = None,
                M: int | None = None) -> BoundaryOperator:
    """Perturbed copy of ``phi`` at measured operator distance ``delta_target``.

    Synthetic modes are real and symmetric (so the perturbed map stays the map of a
    self-adjoint problem) and smooth along the boundary.
    """
    if mode == "second_potential":
        if second_potential is None:
            raise ConfigError("second_potential mode needs a potential")
        out = assemble_dtn(second_potential, phi.E, phi.N_b, M)
        out.diagnostics["delta"] = opnorm_linf(out.matrix - phi.matrix)
        return out
    if delta_target < 0:
        raise ConfigError("delta_target must be nonnegative")
    if delta_target == 0:
        out = BoundaryOperator(phi.matrix.copy(), phi.E, phi.N_b,
                               None if phi.fourier is None else phi.fourier.copy(),
                               dict(phi.diagnostics))
        out.diagnostics["delta"] = 0.0
        return out
    rng = np.random.default_rng(seed)
    N = phi.N_b
    th = 2 * np.pi * np.arange(N) / N
    if mode == "rank_one":
        c = rng.standard_normal(9)
        a = c[0] + sum(c[2 * j - 1] * np.cos(j * th) + c[2 * j] * np.sin(j * th)
                       for j in range(1, 5))
        P = np.outer(a, a)
    elif mode == "random_uniform":
        B = rng.uniform(-1, 1, (N, N))
        P = 0.5 * (B + B.T)
    else:
        raise ConfigError(f"unknown perturbation mode {mode!r}")
    P = P * (delta_target / opnorm_linf(P))
    mat = phi.matrix + P
    out = BoundaryOperator(mat, phi.E, N, None, dict(phi.diagnostics))
    out.diagnostics["delta"] = opnorm_linf(out.matrix - phi.matrix)
    return out
