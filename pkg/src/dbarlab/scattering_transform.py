"""Scattering data: b and r on the annulus, f, h+-, h1, h2 and rho on the torus.

Conventions (E > 0 throughout):

* ``b(lambda) = (2pi)^-2 int exp[(i/2) sqrt(E)(1 + 1/|lambda|^2)(z conj(lambda) + lambda conj(z))] v mu dA``,
  i.e. the moment of ``v mu`` at the real frequency ``p = 2 Re k(lambda)``.
* ``r(lambda) = (pi / conj(lambda)) sgn(|lambda|^2 - 1) b(lambda)``.
* On the torus ``T x T`` a kernel ``K[i, j]`` is ``K(lambda_i, lambda'_j)`` with
  ``lambda_j = exp(2 pi i j / N_T)``; integrals over ``|dlambda''|`` use the
  trapezoid weight ``2 pi / N_T`` (arc length).
* ``f(lambda, lambda')`` is the moment of ``v phi+(., k(lambda))`` at frequency
  ``-sqrt(E) lambda'`` (as a 2-vector); ``h+-`` use the one-sided limits.

Volume moments are evaluated on a refined grid (``REFINE`` times finer) with v
sampled from its evaluator and ``mu`` transferred by Fourier interpolation;
at large ``|lambda|`` the moment frequency exceeds the Nyquist frequency of
the solver grid and plain grid quadrature would alias.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dtn_map import BoundaryOperator, boundary_nodes
from .errors import InconsistentPair, SingularSystem, ZeroLambda
from .forward_faddeev import lambda_to_k, mu_pm, phi_plus, solve_mu
from .grids_norms import OFFSET_H, EnergyContext, PotentialField, SpectralGrid, as_energy

REFINE = 4
CONTRACTION_LIMIT = 1.0
PAIR_TOL = 1e-2


# ------------------------------------------------------------ quadrature

def _window(r, r0=1.05, r1=1.4):
    t = np.clip((r - r0) / (r1 - r0), 0.0, 1.0)
    # C-infinity step from 1 to 0
    a = np.where(t < 1, np.exp(-1.0 / np.maximum(1 - t, 1e-300)), 0.0)
    b = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    return a / (a + b)


def fourier_refine(values: np.ndarray, factor: int) -> np.ndarray:
    """Periodic trigonometric interpolation of a square array onto a grid ``factor`` times finer."""
    n = values.shape[0]
    F = np.fft.fftshift(np.fft.fft2(values))
    nf = n * factor
    G = np.zeros((nf, nf), complex)
    o = (nf - n) // 2
    G[o:o + n, o:o + n] = F
    return np.fft.ifft2(np.fft.ifftshift(G)) * factor ** 2


class MomentQuadrature:
    """Moments ``(2pi)^-2 int exp(i p.x) v(x) mu(x) dx`` of solver outputs."""

    def __init__(self, v: PotentialField, refine: int = REFINE):
        g = v.grid
        self.v = v
        self.refine = refine
        self.hf = g.h / refine
        xf = -g.L + self.hf * np.arange(g.n * refine)
        Xf, Yf = np.meshgrid(xf, xf)
        if v.evaluator is not None:
            vf = v.evaluator(Xf, Yf)
        else:
            vf = fourier_refine(v.values, refine).real
            vf[Xf ** 2 + Yf ** 2 >= 1.0] = 0.0
        self.mask = vf != 0
        self.vf = vf[self.mask]
        self.pts = np.stack([Xf[self.mask], Yf[self.mask]], axis=-1)
        X, Y = g.mesh()
        self.win = _window(np.hypot(X, Y))

    def density(self, mu: np.ndarray) -> np.ndarray:
        """``v mu`` at the refined support nodes."""
        if self.refine == 1:
            return self.vf * mu[self.mask]
        m1 = fourier_refine((mu - 1.0) * self.win, self.refine)
        return self.vf * (1.0 + m1[self.mask])

    def moments(self, freqs: np.ndarray, dens: np.ndarray) -> np.ndarray:
        """Moments at real frequencies ``freqs`` (shape (Q, 2)) of one density."""
        freqs = np.atleast_2d(np.asarray(freqs, float))
        ph = np.exp(1j * (freqs @ self.pts.T))
        return ph @ dens * self.hf ** 2 / (2 * np.pi) ** 2


# ------------------------------------------------------------ annulus data

def b_frequency(lam: complex, E) -> np.ndarray:
    """Real frequency ``2 Re k(lambda)`` of the b moment."""
    return 2 * np.real(lambda_to_k(lam, E))


def compute_b(v: PotentialField, lam: complex, E, sol=None, quad: MomentQuadrature | None = None,
              method: str = "auto") -> complex:
    E = as_energy(E)
    if v.is_zero:
        return 0j
    if sol is None:
        sol = solve_mu(v, lam, E, method)
    quad = quad or MomentQuadrature(v)
    return complex(quad.moments(b_frequency(lam, E), quad.density(sol.values))[0])


def r_of_lambda(b_value: complex, lam: complex) -> complex:
    lam = complex(lam)
    if lam == 0:
        raise ZeroLambda("r(lambda) undefined at lambda = 0")
    s = abs(lam) ** 2 - 1.0
    if s == 0:
        return 0j
    return np.pi / np.conj(lam) * np.sign(s) * complex(b_value)


def r_phase(z, lam, E):
    """Unimodular factor exp[-(i/2) sqrt(E)(1 + 1/|lambda|^2)(z conj(lambda) + lambda conj(z))]."""
    lam = np.asarray(lam, complex)
    z = np.asarray(z, complex)
    s = as_energy(E).sqrtE
    return np.exp(-1j * s * (1 + 1 / np.abs(lam) ** 2) * np.real(z * np.conj(lam)))


def r_of_z_lambda(r_value, z, lam, E):
    if np.any(np.asarray(lam) == 0):
        raise ZeroLambda("r(z, lambda) undefined at lambda = 0")
    return np.asarray(r_value) * r_phase(z, lam, E)


def b_on_grid(v: PotentialField, E, sgrid: SpectralGrid, use_symmetry: bool = True,
              method: str = "auto", radial: bool = False) -> np.ndarray:
    """b at every annulus node, shape (n_radii, n_theta).

    For real v, ``b(-1/conj(lambda)) = conj(b(lambda))``, so only ``|lambda| > 1`` is
    solved when ``use_symmetry``.  ``radial`` solves one angle per radius and copies
    it around (valid for radial v only).
    """
    E = as_energy(E)
    sgrid.check_symmetric()
    lam = sgrid.lam
    nr, nt = lam.shape
    b = np.zeros((nr, nt), complex)
    if v.is_zero:
        return b
    quad = MomentQuadrature(v)
    rows = range(nr // 2, nr) if use_symmetry else range(nr)
    cols = [0] if radial else range(nt)
    for i in rows:
        for j in cols:
            b[i, j] = compute_b(v, lam[i, j], E, quad=quad, method=method)
        if radial:
            b[i, :] = b[i, 0]
    if use_symmetry:
        for i in range(nr // 2):
            # -1/conj(lambda): radius index mirrored, angle shifted by pi
            b[i] = np.conj(np.roll(b[nr - 1 - i], -(nt // 2)))
    return b


def r_on_grid(b: np.ndarray, sgrid: SpectralGrid) -> np.ndarray:
    lam = sgrid.lam
    return np.pi / np.conj(lam) * np.sign(np.abs(lam) ** 2 - 1) * b


# ------------------------------------------------------------ torus kernels

KINDS = ("f", "h_plus", "h_minus", "h1", "h2", "rho")


@dataclass(eq=False)
class TorusKernel:
    values: np.ndarray
    kind: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown torus kernel kind {self.kind!r}")
        v = np.asarray(self.values, complex)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("torus kernel must be square")
        if not np.all(np.isfinite(v)):
            raise ValueError("torus kernel has non-finite entries")
        self.values = v

    @property
    def N_T(self) -> int:
        return self.values.shape[0]

    @property
    def nodes(self) -> np.ndarray:
        return torus_nodes(self.N_T)


def torus_nodes(N_T: int) -> np.ndarray:
    return np.exp(2j * np.pi * np.arange(N_T) / N_T)


def heaviside(x):
    """Heaviside step with the value 1/2 at 0."""
    x = np.asarray(x, float)
    return np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5))


def _sin_diff(N_T: int) -> np.ndarray:
    """``S[a, b] = sin(phi_b - phi_a)``, exactly zero on the diagonal and antipodes."""
    d = (np.arange(N_T)[None, :] - np.arange(N_T)[:, None]) % N_T
    s = np.sin(2 * np.pi * d / N_T)
    s[(d == 0) | (2 * d == N_T)] = 0.0
    return s


def side_mask(N_T: int, side: str) -> np.ndarray:
    """``theta[+-(1/i)(lambda''/lambda - lambda/lambda'')]`` indexed [lambda, lambda'']."""
    sgn = {"plus": 1.0, "minus": -1.0}[side]
    return heaviside(sgn * _sin_diff(N_T))


def torus_moment_freqs(N_T: int, E) -> np.ndarray:
    """Frequencies ``-sqrt(E) lambda'`` for all torus nodes (the e^{-i l x} factor)."""
    s = as_energy(E).sqrtE
    lam = torus_nodes(N_T)
    return -s * np.stack([lam.real, lam.imag], axis=-1)


class TorusSolutions:
    """Boundary-value solutions of one potential on the torus nodes.

    ``kind`` is ``phi`` (outgoing solution), ``plus`` or ``minus`` (one-sided limits).
    Values are stored as ``mu``; the real-momentum phase is applied on use.
    With ``trace_nodes`` the psi traces at those points are recorded while the
    kernels are still alive (``traces[i]`` belongs to torus node i).
    """

    def __init__(self, v: PotentialField, E, N_T: int, kind: str, offset_h: float = OFFSET_H,
                 use_symmetry: bool = True, method: str = "auto", keep_kernels: bool = True,
                 trace_nodes: np.ndarray | None = None, _sols=None, _traces=None):
        self.v, self.E, self.N_T, self.kind = v, as_energy(E), N_T, kind
        self.nodes = torus_nodes(N_T)
        self.sols = [None] * N_T
        self.traces = _traces
        if _sols is not None:
            self.sols = _sols
            return
        rec = []
        if trace_nodes is not None:
            pts = np.asarray(trace_nodes, float)
            if v.is_zero:
                self.traces = np.stack([np.exp(1j * pts @ self.momentum(i)) for i in range(N_T)])
            else:
                self.traces = rec
        if v.is_zero:
            return
        def keep(sol):
            if trace_nodes is not None:
                i = len(rec)
                rec.append(sol.mu_at(pts) * np.exp(1j * pts @ self.momentum(i)))
            if not keep_kernels:
                sol.kernel = None  # values only; mu_at becomes unavailable
            return sol

        if kind == "phi":
            for i, lam in enumerate(self.nodes):
                self.sols[i] = keep(phi_plus(v, lam, self.E, offset_h))
        elif kind in ("plus", "minus"):
            if use_symmetry and N_T % 2 == 0:
                # mu_-(lambda) = conj(mu_+(-lambda)) for real v (offset radius 1/(1-h))
                for i, lam in enumerate(self.nodes):
                    self.sols[i] = keep(mu_pm(v, lam, "plus", self.E, offset_h, method))
                if kind == "minus":
                    half = N_T // 2
                    self.sols = [_ConjSolution(self.sols[(i + half) % N_T]) for i in range(N_T)]
            else:
                for i, lam in enumerate(self.nodes):
                    self.sols[i] = keep(mu_pm(v, lam, kind, self.E, offset_h, method))
        else:
            raise ValueError(f"unknown torus solution kind {kind!r}")
        if trace_nodes is not None:
            self.traces = np.stack(rec)
            if kind == "minus" and use_symmetry and N_T % 2 == 0:
                self.traces = np.conj(np.roll(self.traces, -(N_T // 2), axis=0))

    def conjugate_side(self) -> "TorusSolutions":
        """The ``minus`` family from a ``plus`` family (real v, even N_T)."""
        if self.kind != "plus" or self.N_T % 2:
            raise ValueError("conjugate_side needs a plus family with even N_T")
        half = self.N_T // 2
        sols = [None if self.sols[(i + half) % self.N_T] is None
                else _ConjSolution(self.sols[(i + half) % self.N_T]) for i in range(self.N_T)]
        tr = None if self.traces is None else np.conj(np.roll(self.traces, -half, axis=0))
        return TorusSolutions(self.v, self.E, self.N_T, "minus", _sols=sols, _traces=tr)

    def mu_values(self, i: int) -> np.ndarray:
        s = self.sols[i]
        if s is None:
            return np.ones((self.v.grid.n,) * 2, complex)
        return s.values

    def mu_at(self, i: int, pts: np.ndarray) -> np.ndarray:
        s = self.sols[i]
        if s is None:
            return np.ones(np.asarray(pts).shape[:-1], complex)
        return s.mu_at(pts)

    def momentum(self, i: int) -> np.ndarray:
        lam = self.nodes[i]
        return self.E.sqrtE * np.array([lam.real, lam.imag])

    def psi_at(self, i: int, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        return self.mu_at(i, pts) * np.exp(1j * pts @ self.momentum(i))


class _ConjSolution:
    def __init__(self, sol):
        self._sol = sol

    @property
    def values(self):
        return np.conj(self._sol.values)

    def mu_at(self, pts):
        return np.conj(self._sol.mu_at(pts))


def torus_kernel(v: PotentialField, E, N_T: int = 256, kind: str = "f", sols=None,
                 quad: MomentQuadrature | None = None, **kw) -> TorusKernel:
    """f (kind ``f``) or h+- (``h_plus``/``h_minus``) on all torus pairs."""
    E = as_energy(E)
    if v.is_zero:
        return TorusKernel(np.zeros((N_T, N_T), complex), kind)
    skind = {"f": "phi", "h_plus": "plus", "h_minus": "minus"}[kind]
    sols = sols or TorusSolutions(v, E, N_T, skind, **kw)
    quad = quad or MomentQuadrature(v)
    lfreq = torus_moment_freqs(N_T, E)
    out = np.empty((N_T, N_T), complex)
    for i in range(N_T):
        dens = quad.density(sols.mu_values(i))
        out[i] = quad.moments(lfreq + sols.momentum(i)[None, :], dens)
    return TorusKernel(out, kind)


def compute_f(v: PotentialField, lam: complex, lam_p: complex, E, offset_h: float = OFFSET_H) -> complex:
    E = as_energy(E)
    _check_unit(lam, lam_p)
    if v.is_zero:
        return 0j
    sol = phi_plus(v, lam, E, offset_h)
    return _single_moment(v, sol.values, lam, lam_p, E)


def compute_h_pm(v: PotentialField, lam: complex, lam_p: complex, side: str, E,
                 offset_h: float = OFFSET_H) -> complex:
    E = as_energy(E)
    _check_unit(lam, lam_p)
    if v.is_zero:
        return 0j
    sol = mu_pm(v, lam, side, E, offset_h)
    return _single_moment(v, sol.values, lam, lam_p, E)


def _single_moment(v, mu, lam, lam_p, E):
    q = MomentQuadrature(v)
    s = E.sqrtE
    p = s * np.array([lam.real - lam_p.real, lam.imag - lam_p.imag])
    return complex(q.moments(p, q.density(mu))[0])


def _check_unit(*lams):
    for lam in lams:
        if abs(abs(complex(lam)) - 1) > 1e-12:
            raise ValueError("torus arguments must have unit modulus")


# ------------------------------------------------------------ torus equations

def hpm_from_f(f: TorusKernel, side: str) -> TorusKernel:
    """Solve ``h - pi i int h(lambda, l'') theta_side f(l'', lambda') |dl''| = f`` row by row."""
    N = f.N_T
    F = f.values
    kind = "h_plus" if side == "plus" else "h_minus"
    if not np.any(F):
        return TorusKernel(np.zeros_like(F), kind, {"contraction": 0.0})
    w = 2 * np.pi / N
    mask = side_mask(N, side)
    h = np.empty_like(F)
    cmax = 0.0
    for i in range(N):
        P = -1j * np.pi * w * mask[i][:, None] * F  # (P u)_l = sum_j u_j P[j, l]
        cmax = max(cmax, float(np.linalg.norm(P, 2)))
        A = np.eye(N) + P
        try:
            h[i] = scipy.linalg.solve(A.T, F[i])
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"h{side} torus system singular", stage="hpm_from_f") from exc
    if cmax >= CONTRACTION_LIMIT * 10:
        raise SingularSystem(f"torus operator norm {cmax:.3g} far outside the contraction regime",
                             stage="hpm_from_f", contraction=cmax)
    return TorusKernel(h, kind, {"contraction": cmax})


def h12_from_hpm(h_plus: TorusKernel, h_minus: TorusKernel):
    """Masked combinations of h+ and h-; the mask argument is 2 sin(arg lambda' - arg lambda)."""
    if h_plus.N_T != h_minus.N_T:
        raise ValueError("kernels on different torus grids")
    s = _sin_diff(h_plus.N_T)
    tp, tm = heaviside(s), heaviside(-s)
    hp, hm = h_plus.values, h_minus.values
    h1 = tm * hp - tp * hm
    h2 = tm * hm - tp * hp
    parts = {"h_minus": hm}
    return TorusKernel(h1, "h1", dict(parts)), TorusKernel(h2, "h2", dict(parts))


def _rho_one(M: np.ndarray, rhs: np.ndarray):
    N = M.shape[0]
    w = 2 * np.pi / N
    A = np.eye(N) + 1j * np.pi * w * M  # rho[i] (I + pi i w M) = rhs[i]
    norm = float(np.linalg.norm(np.pi * w * M, 2))
    try:
        rho = scipy.linalg.solve(A.T, rhs.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("rho torus system singular", stage="solve_rho") from exc
    return rho, norm


def _one_sided(K: np.ndarray, offsets) -> np.ndarray:
    """Quadratic extrapolation to the torus offset 0 from three offsets on one side."""
    N = K.shape[0]
    i = np.arange(N)
    a, b, c = (K[i, (i + o) % N] for o in offsets)
    return 3 * a - 3 * b + c


def _minus_limits(h1: TorusKernel, h2: TorusKernel):
    """h- at the torus nodes where the masks jump (diagonal and antipode).

    Taken from the h+- kernels that built h1/h2 when available, otherwise
    extrapolated from the side where h2 = h- (sin(arg lambda' - arg lambda) < 0).
    """
    N = h1.N_T
    hm = h1.diagnostics.get("h_minus")
    i = np.arange(N)
    if hm is not None:
        return hm[i, i], hm[i, (i + N // 2) % N]
    diag = _one_sided(h2.values, (-1, -2, -3))
    anti = _one_sided(h2.values, (N // 2 + 1, N // 2 + 2, N // 2 + 3))
    return diag, anti


def solve_rho(h1: TorusKernel, h2: TorusKernel, check: bool = True, tol: float = PAIR_TOL) -> TorusKernel:
    """Jump kernel rho from both masked equations; the second one is returned.

    The masked kernels ``theta h1`` and ``theta h2`` reduce to ``-theta(s) h-`` and
    ``theta(-s) h-`` off the jump set; at the jump nodes they take the mean of the
    one-sided limits so that the trapezoid rule stays second order.  The first
    equation is solved as a cross-check and the relative discrepancy is stored.
    """
    N = h1.N_T
    if not np.any(h1.values) and not np.any(h2.values):
        return TorusKernel(np.zeros((N, N), complex), "rho", {"pair_discrepancy": 0.0})
    s = _sin_diff(N)  # s[j, l] = sin(phi_l - phi_j), rows lambda'', columns lambda'
    M1 = heaviside(s) * h1.values
    M2 = heaviside(-s) * h2.values
    d_lim, a_lim = _minus_limits(h1, h2)
    i = np.arange(N)
    for M, sgn in ((M1, -0.5), (M2, 0.5)):
        M[i, i] = sgn * d_lim
        if N % 2 == 0:
            M[i, (i + N // 2) % N] = sgn * a_lim
    rho1, c1 = _rho_one(M1, -1j * np.pi * h1.values)
    rho2, c2 = _rho_one(M2, -1j * np.pi * h2.values)
    disc = float(np.linalg.norm(rho1 - rho2) / max(np.linalg.norm(rho2), 1e-300))
    diag = {"pair_discrepancy": disc, "contraction_1": c1, "contraction_2": c2}
    if check and disc > tol:
        raise InconsistentPair(f"the two rho equations disagree by {disc:.2e}",
                               stage="solve_rho", **diag)
    return TorusKernel(rho2, "rho", diag)


def rho_phase(z, lam, lam_p, E):
    """exp[(i sqrt(E)/2)((lambda' - lambda) conj(z) + (1/lambda' - 1/lambda) z)]."""
    s = as_energy(E).sqrtE
    lam = np.asarray(lam, complex)
    lam_p = np.asarray(lam_p, complex)
    z = np.asarray(z, complex)
    return np.exp(0.5j * s * ((lam_p - lam) * np.conj(z) + (1 / lam_p - 1 / lam) * z))


def rho_of_z(rho_value, lam, lam_p, z, E):
    return np.asarray(rho_value) * rho_phase(z, lam, lam_p, E)


# ------------------------------------------------------------ boundary identities

def boundary_quadrature(u1: np.ndarray, dphi: np.ndarray, u2: np.ndarray) -> complex:
    """``(2pi)^-2 int_{dD} u1 (dPhi u2) ds`` by the trapezoid rule on the nodes."""
    N = len(u1)
    return complex(u1 @ (dphi @ u2) * (2 * np.pi / N) / (2 * np.pi) ** 2)


def _dphi(phi1, phi2):
    a = phi1.matrix if isinstance(phi1, BoundaryOperator) else np.asarray(phi1)
    b = phi2.matrix if isinstance(phi2, BoundaryOperator) else np.asarray(phi2)
    return b - a


def diff_b_from_dtn(phi1, phi2, psi1_conj_k: np.ndarray, psi2_k: np.ndarray) -> complex:
    """``b2 - b1`` from ``psi1(x, conj k)`` and ``psi2(x, k)`` traces at the boundary nodes."""
    return boundary_quadrature(psi1_conj_k, _dphi(phi1, phi2), psi2_k)


def diff_f_from_dtn(phi1, phi2, phi1_minus_kp: np.ndarray, phi2_k: np.ndarray) -> complex:
    """``f2 - f1`` from ``phi1+(x, -k(lambda'))`` and ``phi2+(x, k(lambda))`` traces."""
    return boundary_quadrature(phi1_minus_kp, _dphi(phi1, phi2), phi2_k)


def b_traces(v: PotentialField, lam: complex, E, N_b: int, method: str = "auto"):
    """Boundary traces ``psi(x, k(lambda))`` and ``psi(x, conj k(lambda))``.

    ``conj k(lambda) = k(1/conj(lambda))``.
    """
    E = as_energy(E)
    nodes = boundary_nodes(N_b)
    out = []
    for l in (complex(lam), 1 / np.conj(complex(lam))):
        k = lambda_to_k(l, E)
        sol = solve_mu(v, l, E, method)
        out.append(sol.mu_at(nodes) * np.exp(1j * (nodes @ k)))
    return out[0], out[1]


def torus_traces(sols: TorusSolutions, N_b: int) -> np.ndarray:
    """psi traces (rows: torus nodes, columns: boundary nodes)."""
    nodes = boundary_nodes(N_b)
    return np.stack([sols.psi_at(i, nodes) for i in range(sols.N_T)])


def diff_f_kernel(phi1, phi2, traces1: np.ndarray, traces2: np.ndarray) -> np.ndarray:
    """``f2 - f1`` on all torus pairs.

    ``traces1[j]`` is ``phi1+(x, k(lambda_j))``; ``-k(lambda'_j) = k(-lambda'_j)`` is the
    antipodal node, so the lambda' factor is a half-turn roll of ``traces1``.
    """
    N = traces1.shape[0]
    D = _dphi(phi1, phi2)
    anti = np.roll(traces1, -(N // 2), axis=0)
    Nb = D.shape[0]
    return traces2 @ D.T @ anti.T * (2 * np.pi / Nb) / (2 * np.pi) ** 2


# ------------------------------------------------------------ bundle

@dataclass(eq=False)
class ScatteringData:
    r_values: np.ndarray
    rho_values: np.ndarray
    E: EnergyContext
    grid: SpectralGrid
    b_values: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.E = as_energy(self.E)
        if self.r_values.shape != self.grid.lam.shape:
            raise ValueError("r_values shape does not match the spectral grid")
        if not np.all(np.isfinite(self.r_values)) or not np.all(np.isfinite(self.rho_values)):
            raise ValueError("scattering data must be finite")

    @property
    def N_T(self) -> int:
        return self.rho_values.shape[0]

    @classmethod
    def zero(cls, E, grid: SpectralGrid, N_T: int = 256) -> "ScatteringData":
        return cls(np.zeros(grid.lam.shape, complex), np.zeros((N_T, N_T), complex),
                   as_energy(E), grid, np.zeros(grid.lam.shape, complex))


def decay_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log y against log x (positive entries only)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def torus_decay_profile(K: np.ndarray, E) -> tuple[np.ndarray, np.ndarray]:
    """Max |K| per torus offset against ``1 + E|lambda - lambda'|^2``."""
    N = K.shape[0]
    E = as_energy(E).E
    d = (np.arange(N)[None, :] - np.arange(N)[:, None]) % N
    ds = np.arange(N // 2 + 1)
    amp = np.array([np.max(np.abs(K[(d == j) | (d == (N - j) % N)])) for j in ds])
    dist2 = np.abs(1 - np.exp(2j * np.pi * ds / N)) ** 2
    return 1 + E * dist2, amp


def compute_scattering(v: PotentialField, E, sgrid: SpectralGrid, N_T: int = 256,
                       radial: bool = False, check_pair: bool = False) -> ScatteringData:
    """Scattering data (r on the annulus, rho on the torus) of a potential."""
    E = as_energy(E)
    if v.is_zero:
        return ScatteringData.zero(E, sgrid, N_T)
    b = b_on_grid(v, E, sgrid, radial=radial)
    r = r_on_grid(b, sgrid)
    quad = MomentQuadrature(v)
    plus = TorusSolutions(v, E, N_T, "plus", offset_h=sgrid.offset_h, keep_kernels=False)
    hp = torus_kernel(v, E, N_T, "h_plus", sols=plus, quad=quad)
    hm = torus_kernel(v, E, N_T, "h_minus", sols=plus.conjugate_side(), quad=quad)
    h1, h2 = h12_from_hpm(hp, hm)
    rho = solve_rho(h1, h2, check=check_pair)
    return ScatteringData(r, rho.values, E, sgrid, b, dict(rho.diagnostics))
