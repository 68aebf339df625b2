"""Slow-scale envelope propagation along a trajectory.

The envelope solves i u_t + 0.5 div_z(M(t) grad_z u) = 0.5 <z, Q(t) z> u
+ i beta(t) u, with M(t) the band Hessian at p(t), Q(t) the external
Hessian at q(t) and beta(t) the (purely imaginary) geometric rate. Two
propagators are provided: an exact Gaussian parameter flow A' = i M B,
B' = i Q A for Gaussian data, and a Strang-split Fourier scheme on a
periodic z-grid for general data. Both evolve the same unknown: the
Gaussian state accumulates the integral of beta so its values include the
geometric factor, and the grid scheme applies that factor per step.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .errors import EnvelopeError

BOUNDARY_SHELL = 0.1           # outer fraction of the box watched for mass
BOUNDARY_THRESHOLD = 1e-8      # max mass fraction allowed in the shell
INVARIANT_TOL = 1e-6           # Gaussian structure drift that raises
SPECTRAL_TAIL_FRACTION = 1 / 3  # top spectrum band used by the tail monitor
SPECTRAL_TAIL_TOL = 1e-6
SIGMA_MAX_ORDER = 5


class HomogenizedCoefficients:
    """Time-dependent envelope coefficients M(t), Q(t), beta(t).

    Evaluated pointwise at trajectory states obtained from the trajectory's
    own dense-output interpolation, so the coefficient smoothness matches
    the flow data. Node samples are exposed for export and tests.
    """

    def __init__(self, trajectory, band, potential):
        self.trajectory = trajectory
        self.band = band
        self.potential = potential
        self.dimension = trajectory.dimension

    def dispersion(self, t: float) -> np.ndarray:
        """Band Hessian M(t) at the trajectory momentum."""
        return self.band.hess_energy(self.trajectory.state_at(t).p)

    def vhess(self, t: float) -> np.ndarray:
        """External Hessian Q(t) at the trajectory position."""
        return self.potential.hess(self.trajectory.state_at(t).q)

    def berry_rate(self, t: float) -> complex:
        """Purely imaginary rate <chi, grad_k chi> . grad V at time t."""
        state = self.trajectory.state_at(t)
        rate = complex(self.band.berry(state.p) @ self.potential.grad(state.q))
        return 1j * rate.imag

    def node_samples(self) -> dict:
        ts = self.trajectory.ts
        return {
            "t": ts.copy(),
            "dispersion": np.stack([self.dispersion(t) for t in ts]),
            "vhess": np.stack([self.vhess(t) for t in ts]),
            "berry_rate": np.array([self.berry_rate(t) for t in ts]),
        }


class ConstantCoefficients:
    """Fixed M, Q, beta; handy for closed-form checks."""

    def __init__(self, dispersion, vhess, berry_rate: complex = 0.0, dimension: int | None = None):
        m = np.atleast_2d(np.asarray(dispersion, dtype=float))
        q = np.atleast_2d(np.asarray(vhess, dtype=float))
        self.dimension = dimension or m.shape[0]
        self._m, self._q = m, q
        self._beta = complex(berry_rate)

    def dispersion(self, t: float) -> np.ndarray:
        return self._m

    def vhess(self, t: float) -> np.ndarray:
        return self._q

    def berry_rate(self, t: float) -> complex:
        return self._beta


def coefficients_along(trajectory, band, potential) -> HomogenizedCoefficients:
    """Coefficient provider bound to a trajectory and its band data."""
    return HomogenizedCoefficients(trajectory, band, potential)


# ---------------------------------------------------------------------------
# Gaussian parameter flow


@dataclass(frozen=True)
class GaussianEnvelope:
    """Gaussian envelope det(A)^(-1/2) exp(-0.5 <z, B A^-1 z>) times the
    accumulated geometric factor.

    log_det tracks the continued logarithm of det A along the evolution, so
    the amplitude never jumps branches. berry_integral is the integral of
    beta (purely imaginary).
    """

    A: np.ndarray
    B: np.ndarray
    log_det: complex
    berry_integral: complex
    t: float

    @property
    def dimension(self) -> int:
        return self.A.shape[0]

    def width_matrix(self) -> np.ndarray:
        return self.B @ np.linalg.inv(self.A)


def gaussian_invariant_defects(env: GaussianEnvelope) -> dict:
    """Structure defects of the Gaussian parameter pair (symmetry,
    positivity, inverse-width identity, determinant branch)."""
    a, b = env.A, env.B
    w = b @ np.linalg.inv(a)
    sym = float(np.max(np.abs(w - w.T)))
    re_w = 0.5 * (w + w.conj().T).real
    eigs = np.linalg.eigvalsh(re_w)
    pos = float(eigs.min())
    inv_identity = float(
        np.max(np.abs(np.linalg.inv(re_w) - a @ a.conj().T))
    )
    det_branch = float(abs(np.exp(env.log_det) - np.linalg.det(a)))
    return {"symmetry": sym, "min_re_eig": pos, "inverse_width": inv_identity, "det_branch": det_branch}


def gaussian_init(A, B) -> GaussianEnvelope:
    """Validated Gaussian envelope state at t = 0.

    Requires invertible A, B, symmetric width matrix B A^-1 with positive
    definite real part, and Re(B A^-1)^-1 = A A^*; rejects anything else.
    """
    a = np.atleast_2d(np.asarray(A, dtype=complex))
    b = np.atleast_2d(np.asarray(B, dtype=complex))
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise EnvelopeError("Gaussian parameters must be square and same shape")
    for name, mat in (("A", a), ("B", b)):
        if abs(np.linalg.det(mat)) < 1e-12:
            raise EnvelopeError(f"Gaussian parameter {name} is singular")
    env = GaussianEnvelope(
        A=a, B=b, log_det=complex(np.log(np.linalg.det(a))), berry_integral=0.0 + 0.0j, t=0.0
    )
    defects = gaussian_invariant_defects(env)
    if defects["symmetry"] > 1e-10:
        raise EnvelopeError(f"width matrix not symmetric: {defects['symmetry']:.3e}")
    if defects["min_re_eig"] <= 1e-10:
        raise EnvelopeError("width matrix real part not positive definite")
    if defects["inverse_width"] > 1e-10:
        raise EnvelopeError(
            f"inverse width identity violated: {defects['inverse_width']:.3e}"
        )
    return env


def evolve_gaussian(
    env: GaussianEnvelope,
    coefficients,
    t_final: float,
    dt: float,
    *,
    invariant_tol: float = INVARIANT_TOL,
) -> GaussianEnvelope:
    """RK4 on (A, B, log det A, integral of beta) from env.t to t_final.

    The determinant logarithm is integrated as trace(A^-1 A') alongside the
    parameters and then snapped onto the exact modulus with the continued
    branch, so evaluation uses a smooth square root of det A.
    """
    t0, t1 = env.t, float(t_final)
    if t1 == t0:
        return env
    if dt <= 0:
        raise EnvelopeError("dt must be positive")
    nsteps = max(1, int(np.ceil(abs(t1 - t0) / dt - 1e-12)))
    h = (t1 - t0) / nsteps
    d = env.dimension

    def rhs(t, a, b):
        m = coefficients.dispersion(t)
        q = coefficients.vhess(t)
        da = 1j * m @ b
        db = 1j * q @ a
        dld = 1j * np.trace(np.linalg.solve(a, m @ b))
        dbr = coefficients.berry_rate(t)
        return da, db, dld, dbr

    a, b = env.A.copy(), env.B.copy()
    ld, br = env.log_det, env.berry_integral
    t = t0
    for _ in range(nsteps):
        k1 = rhs(t, a, b)
        k2 = rhs(t + 0.5 * h, a + 0.5 * h * k1[0], b + 0.5 * h * k1[1])
        k3 = rhs(t + 0.5 * h, a + 0.5 * h * k2[0], b + 0.5 * h * k2[1])
        k4 = rhs(t + h, a + h * k3[0], b + h * k3[1])
        a = a + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        b = b + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        ld = ld + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        br = br + (h / 6.0) * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        t += h

    # Branch snap: exact modulus, tracked argument continued to the nearest
    # 2 pi branch of the principal argument.
    det = np.linalg.det(a)
    turns = np.round((ld.imag - np.angle(det)) / (2 * np.pi))
    ld = complex(np.log(abs(det)), np.angle(det) + 2 * np.pi * turns)
    br = 1j * br.imag  # beta is purely imaginary; drop roundoff real part

    out = GaussianEnvelope(A=a, B=b, log_det=ld, berry_integral=br, t=t1)
    defects = gaussian_invariant_defects(out)
    worst = max(defects["symmetry"], defects["inverse_width"], defects["det_branch"])
    if worst > invariant_tol or defects["min_re_eig"] <= 0:
        raise EnvelopeError(
            f"Gaussian invariants drifted to {worst:.3e}; use a smaller dt"
        )
    return out


def gaussian_eval(env: GaussianEnvelope, points) -> np.ndarray:
    """Envelope values at z points (..., d) (or (...,) when d = 1)."""
    z = _zpoints(points, env.dimension)
    w = env.width_matrix()
    quad = np.einsum("...i,ij,...j->...", z, w, z)
    amp = np.exp(-0.5 * env.log_det + env.berry_integral)
    return amp * np.exp(-0.5 * quad)


def gaussian_eval_with_derivatives(env: GaussianEnvelope, points):
    """(u, grad u, hess u) at z points; closed forms of the Gaussian."""
    z = _zpoints(points, env.dimension)
    u = gaussian_eval(env, points)
    w = env.width_matrix()
    wz = z @ w.T  # (..., d)
    grad = -wz * u[..., None]
    outer = wz[..., :, None] * wz[..., None, :]
    hess = (outer - w) * u[..., None, None]
    return u, grad, hess


def _zpoints(points, dimension: int) -> np.ndarray:
    z = np.asarray(points, dtype=float)
    if dimension == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    return z


# ---------------------------------------------------------------------------
# Grid propagator


@dataclass(frozen=True)
class GridEnvelope:
    """Envelope samples on a periodic z-box [-half_width, half_width)^d."""

    values: np.ndarray
    half_width: float
    t: float

    @property
    def dimension(self) -> int:
        return self.values.ndim

    @property
    def npoints(self) -> int:
        return self.values.shape[0]

    def axis(self) -> np.ndarray:
        n = self.npoints
        return -self.half_width + (2.0 * self.half_width / n) * np.arange(n)

    def dz(self) -> float:
        return 2.0 * self.half_width / self.npoints

    def points(self) -> np.ndarray:
        """Grid points flattened to (N^d, d)."""
        mesh = np.meshgrid(*([self.axis()] * self.dimension), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def freq_axis(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.npoints, d=self.dz())

    def mass(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.dz() ** self.dimension))

    def boundary_mass_fraction(self) -> float:
        ax = np.abs(self.axis())
        edge = ax > (1.0 - BOUNDARY_SHELL) * self.half_width
        mask = np.zeros(self.values.shape, dtype=bool)
        for axi in range(self.dimension):
            shape = [1] * self.dimension
            shape[axi] = self.npoints
            mask |= edge.reshape(shape)
        total = float(np.sum(np.abs(self.values) ** 2))
        if total == 0.0:
            return 0.0
        return float(np.sum(np.abs(self.values[mask]) ** 2) / total)

    def spectral_tail_fraction(self) -> float:
        spec = np.abs(np.fft.fftn(self.values)) ** 2
        freq = np.abs(self.freq_axis())
        cut = (1.0 - SPECTRAL_TAIL_FRACTION) * freq.max()
        tail = np.zeros(spec.shape, dtype=bool)
        for axi in range(self.dimension):
            shape = [1] * self.dimension
            shape[axi] = self.npoints
            tail |= (freq > cut).reshape(shape)
        total = float(spec.sum())
        if total == 0.0:
            return 0.0
        return float(spec[tail].sum() / total)


def grid_envelope_from_gaussian(
    env: GaussianEnvelope, half_width: float, npoints: int
) -> GridEnvelope:
    """Sample a Gaussian state onto a periodic z-grid."""
    probe = GridEnvelope(
        values=np.zeros((npoints,) * env.dimension, dtype=complex),
        half_width=half_width,
        t=env.t,
    )
    pts = probe.points()
    vals = gaussian_eval(env, pts).reshape((npoints,) * env.dimension)
    return replace(probe, values=vals)


def quadratic_form_grid(u: GridEnvelope, mat: np.ndarray) -> np.ndarray:
    """<z, mat z> evaluated on the grid, shaped like u.values."""
    pts = u.points()
    form = np.einsum("pi,ij,pj->p", pts, mat, pts)
    return form.reshape(u.values.shape)


def _kinetic_symbol(u: GridEnvelope, mat: np.ndarray) -> np.ndarray:
    axes = [u.freq_axis()] * u.dimension
    mesh = np.meshgrid(*axes, indexing="ij")
    zeta = np.stack([m.ravel() for m in mesh], axis=-1)
    form = np.einsum("pi,ij,pj->p", zeta, mat, zeta)
    return form.reshape(u.values.shape)


def evolve_grid_envelope(
    u: GridEnvelope,
    coefficients,
    t_final: float,
    dt: float,
    *,
    boundary_threshold: float = BOUNDARY_THRESHOLD,
) -> GridEnvelope:
    """Strang-split Fourier stepping of the envelope equation.

    Each step applies a half quadratic phase, a full Fourier kinetic factor
    with the dispersion frozen at the step midpoint, the second half phase,
    and the exact (unimodular) geometric factor from a Simpson rule on
    beta. Every factor has unit modulus, so the grid mass is conserved to
    rounding; a boundary-shell monitor guards the periodic box.
    """
    t0, t1 = u.t, float(t_final)
    if t1 == t0:
        return u
    if dt <= 0:
        raise EnvelopeError("dt must be positive")
    if u.boundary_mass_fraction() > boundary_threshold:
        raise EnvelopeError("initial envelope already touches the box boundary")
    nsteps = max(1, int(np.ceil(abs(t1 - t0) / dt - 1e-12)))
    h = (t1 - t0) / nsteps

    vals = u.values.astype(complex, copy=True)
    t = t0
    for _ in range(nsteps):
        mid = t + 0.5 * h
        q = coefficients.vhess(mid)
        m = coefficients.dispersion(mid)
        half_phase = np.exp(-0.25j * h * quadratic_form_grid(u, q))
        kinetic = np.exp(-0.5j * h * _kinetic_symbol(u, m))
        beta_int = (h / 6.0) * (
            coefficients.berry_rate(t)
            + 4.0 * coefficients.berry_rate(mid)
            + coefficients.berry_rate(t + h)
        )
        vals = half_phase * vals
        vals = np.fft.ifftn(kinetic * np.fft.fftn(vals))
        vals = half_phase * vals
        vals = np.exp(1j * beta_int.imag) * vals
        t += h
        state = GridEnvelope(values=vals, half_width=u.half_width, t=t)
        if state.boundary_mass_fraction() > boundary_threshold:
            raise EnvelopeError(
                f"envelope mass reached the box boundary near t = {t:.6g};"
                " enlarge the z-box"
            )
    return GridEnvelope(values=vals, half_width=u.half_width, t=t1)


def spectral_gradient(u: GridEnvelope) -> list[np.ndarray]:
    """First z-derivatives of the grid envelope, one array per axis."""
    hat = np.fft.fftn(u.values)
    out = []
    for axi in range(u.dimension):
        shape = [1] * u.dimension
        shape[axi] = u.npoints
        zeta = u.freq_axis().reshape(shape)
        out.append(np.fft.ifftn(1j * zeta * hat))
    return out


def spectral_hessian(u: GridEnvelope) -> np.ndarray:
    """Second z-derivatives, shape (d, d) of grid arrays."""
    hat = np.fft.fftn(u.values)
    d = u.dimension
    out = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(i, d):
            shape_i = [1] * d
            shape_i[i] = u.npoints
            shape_j = [1] * d
            shape_j[j] = u.npoints
            zi = u.freq_axis().reshape(shape_i)
            zj = u.freq_axis().reshape(shape_j)
            val = np.fft.ifftn(-(zi * zj) * hat)
            out[i, j] = val
            out[j, i] = val
    return out


def sigma_norm(u: GridEnvelope, order: int) -> float:
    """Weighted Sobolev norm: sum of L2 norms of z^a d^b u, |a| + |b| <= order.

    Derivatives are spectral; a spectral-tail monitor rejects grids too
    coarse to differentiate reliably at the requested order.
    """
    if order < 0 or order > SIGMA_MAX_ORDER:
        raise EnvelopeError(f"order must be in [0, {SIGMA_MAX_ORDER}]")
    if order > 0 and u.spectral_tail_fraction() > SPECTRAL_TAIL_TOL:
        raise EnvelopeError("spectral tail too large for the requested order")
    d = u.dimension
    pts = u.points()
    vol = u.dz() ** d
    hat = np.fft.fftn(u.values)
    freq = [None] * d
    for axi in range(d):
        shape = [1] * d
        shape[axi] = u.npoints
        freq[axi] = u.freq_axis().reshape(shape)

    total = 0.0
    for a in _multi_indices(d, order):
        rest = order - sum(a)
        for b in _multi_indices(d, rest):
            mult = np.ones(u.values.shape, dtype=complex)
            for axi in range(d):
                if b[axi]:
                    mult = mult * (1j * freq[axi]) ** b[axi]
            db = np.fft.ifftn(mult * hat)
            weight = np.ones(pts.shape[0])
            for axi in range(d):
                if a[axi]:
                    weight = weight * pts[:, axi] ** a[axi]
            term = db.ravel() * weight
            total += float(np.sqrt(np.sum(np.abs(term) ** 2) * vol))
    return total


def _multi_indices(dimension: int, max_total: int):
    """All multi-indices with |a| <= max_total."""
    for combo in itertools.product(range(max_total + 1), repeat=dimension):
        if sum(combo) <= max_total:
            yield combo
