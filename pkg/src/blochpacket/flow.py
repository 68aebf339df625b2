"""Band-driven classical flow: trajectory, action and geometric phase.

The trajectory solves q' = grad E(p), p' = -grad V(q) with the band energy
playing the role of the kinetic Hamiltonian. Alongside it we accumulate the
action integral of p . grad E(p) - E(p) - V(q) and the real geometric phase
whose rate is -i <chi, grad_k chi> . grad V(q). Momenta are never folded
here; spectral lookups fold internally, phases always see the unfolded p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FlowError, PotentialError

DEFAULT_Q_BOUND = 1e6


@dataclass(frozen=True)
class QuadraticPotential:
    """V(x) = constant + <linear, x> + 0.5 <x, hessian x>."""

    constant: float
    linear: np.ndarray
    hessian: np.ndarray

    @classmethod
    def harmonic(cls, dimension: int, strength: float = 1.0) -> "QuadraticPotential":
        return cls.create(dimension, hessian=strength * np.eye(dimension))

    @classmethod
    def zero(cls, dimension: int) -> "QuadraticPotential":
        return cls.create(dimension)

    @classmethod
    def create(cls, dimension: int, constant=0.0, linear=None, hessian=None):
        lin = np.zeros(dimension) if linear is None else np.asarray(linear, float)
        hes = np.zeros((dimension, dimension)) if hessian is None else np.asarray(hessian, float)
        if lin.shape != (dimension,) or hes.shape != (dimension, dimension):
            raise PotentialError("quadratic potential shapes inconsistent")
        if np.max(np.abs(hes - hes.T)) > 1e-12 * max(1.0, np.max(np.abs(hes))):
            raise PotentialError("quadratic potential needs a symmetric Hessian")
        return cls(constant=float(constant), linear=lin, hessian=0.5 * (hes + hes.T))

    @property
    def dimension(self) -> int:
        return self.linear.shape[0]

    def value(self, x) -> np.ndarray:
        x = _pointize(x, self.dimension)
        quad = 0.5 * np.einsum("...i,ij,...j->...", x, self.hessian, x)
        return self.constant + x @ self.linear + quad

    def grad(self, x) -> np.ndarray:
        x = _pointize(x, self.dimension)
        return self.linear + x @ self.hessian

    def hess(self, x) -> np.ndarray:
        return self.hessian.copy()

    def hess_bound(self) -> float:
        return float(np.linalg.norm(self.hessian, 2))

    def third_bound(self) -> float:
        return 0.0


@dataclass(frozen=True)
class CosineWellPotential:
    """V(x) = amplitude * sum_j (1 - cos(frequency_j x_j)), bounded derivatives."""

    amplitude: float
    frequencies: np.ndarray

    @classmethod
    def create(cls, amplitude: float, frequencies) -> "CosineWellPotential":
        freq = np.atleast_1d(np.asarray(frequencies, dtype=float))
        if amplitude < 0 or np.any(freq <= 0):
            raise PotentialError("cosine well needs amplitude >= 0, frequencies > 0")
        return cls(amplitude=float(amplitude), frequencies=freq)

    @property
    def dimension(self) -> int:
        return self.frequencies.shape[0]

    def value(self, x) -> np.ndarray:
        x = _pointize(x, self.dimension)
        return self.amplitude * np.sum(1.0 - np.cos(self.frequencies * x), axis=-1)

    def grad(self, x) -> np.ndarray:
        x = _pointize(x, self.dimension)
        return self.amplitude * self.frequencies * np.sin(self.frequencies * x)

    def hess(self, x) -> np.ndarray:
        x = _pointize(x, self.dimension)
        if x.ndim != 1:
            raise PotentialError("hess expects a single point")
        return np.diag(self.amplitude * self.frequencies**2 * np.cos(self.frequencies * x))

    def hess_bound(self) -> float:
        return float(self.amplitude * np.max(self.frequencies**2))

    def third_bound(self) -> float:
        return float(self.amplitude * np.max(self.frequencies**3))


def _pointize(x, dimension: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if dimension == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return x


def validate_gradients(potential, probes, step: float = 1e-4, tol: float = 1e-5) -> float:
    """Max deviation between grad() and centered differences of value()."""
    worst = 0.0
    for x in np.atleast_2d(np.asarray(probes, dtype=float)):
        g = potential.grad(x)
        for j in range(x.shape[0]):
            e = np.zeros_like(x)
            e[j] = step
            fd = (potential.value(x + e) - potential.value(x - e)) / (2 * step)
            worst = max(worst, abs(float(fd) - g[j]))
    if worst > tol:
        raise PotentialError(f"gradient check failed: deviation {worst:.3e}")
    return worst


@dataclass(frozen=True)
class TrajectoryState:
    """Flow state at one time: positions, momentum, action, geometric phase."""

    t: float
    q: np.ndarray
    p: np.ndarray      # unfolded momentum
    S: float
    theta: float

    @property
    def dimension(self) -> int:
        return np.asarray(self.q).shape[0]


def flow_rhs(q, p, band, potential) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Time derivatives (dq, dp, dS, dtheta) of the band-driven flow."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    grad_e = band.grad_energy(p)
    grad_v = potential.grad(q)
    dq = grad_e
    dp = -grad_v
    ds = float(p @ grad_e - band.energy(p) - potential.value(q))
    berry = band.berry(p)
    rate = complex(berry @ grad_v)
    if abs(rate.real) > 1e-10 * max(1.0, abs(rate.imag)):
        raise FlowError("geometric phase rate has a real part")
    dtheta = rate.imag  # theta' = -i * rate with rate purely imaginary
    return dq, dp, ds, dtheta


class Trajectory:
    """Fixed-step trajectory with cubic Hermite dense output.

    Stores states and their exact time derivatives at the nodes; evaluation
    between nodes uses the Hermite interpolant, so node queries reproduce
    stored states exactly and intermediate queries are fourth order.
    """

    def __init__(self, ts: np.ndarray, states: np.ndarray, derivs: np.ndarray, dimension: int):
        self.ts = ts
        self.states = states      # (N+1, 2d+2): q, p, S, theta
        self.derivs = derivs
        self.dimension = dimension

    @property
    def t_final(self) -> float:
        return float(self.ts[-1])

    def node_state(self, i: int) -> TrajectoryState:
        return self._make_state(float(self.ts[i]), self.states[i])

    def _make_state(self, t: float, y: np.ndarray) -> TrajectoryState:
        d = self.dimension
        return TrajectoryState(
            t=t, q=y[:d].copy(), p=y[d : 2 * d].copy(), S=float(y[2 * d]), theta=float(y[2 * d + 1])
        )

    def state_at(self, t: float) -> TrajectoryState:
        ts = self.ts
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise FlowError(f"time {t} outside trajectory window [{ts[0]}, {ts[-1]}]")
        t = min(max(t, float(ts[0])), float(ts[-1]))
        i = int(np.searchsorted(ts, t, side="right") - 1)
        i = min(max(i, 0), len(ts) - 2)
        h = ts[i + 1] - ts[i]
        s = (t - ts[i]) / h
        if s == 0.0:
            return self._make_state(float(ts[i]), self.states[i])
        if s == 1.0:
            return self._make_state(float(ts[i + 1]), self.states[i + 1])
        y0, y1 = self.states[i], self.states[i + 1]
        f0, f1 = self.derivs[i], self.derivs[i + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s**2 * (3 - 2 * s)
        h11 = s**2 * (s - 1)
        y = h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
        return self._make_state(t, y)


def integrate_flow(
    q0,
    p0,
    t_final: float,
    dt: float,
    band,
    potential,
    *,
    reverse: bool = False,
    q_bound: float = DEFAULT_Q_BOUND,
) -> Trajectory:
    """Classical RK4 on (q, p, S, theta) over a uniform grid.

    The step is shrunk to divide t_final exactly. With reverse=True the
    vector field is negated, which retraces a forward trajectory from its
    endpoint back to its start (up to the integrator's own error).
    """
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    d = q0.shape[0]
    if p0.shape != (d,):
        raise FlowError("q0 and p0 dimensions differ")
    if t_final <= 0 or dt <= 0:
        raise FlowError("time window and step must be positive")
    nsteps = max(1, int(np.ceil(t_final / dt - 1e-12)))
    h = t_final / nsteps
    sign = -1.0 if reverse else 1.0

    def rhs(y: np.ndarray) -> np.ndarray:
        dq, dp, ds, dth = flow_rhs(y[:d], y[d : 2 * d], band, potential)
        return sign * np.concatenate([dq, dp, [ds], [dth]])

    ts = np.linspace(0.0, t_final, nsteps + 1)
    states = np.empty((nsteps + 1, 2 * d + 2))
    derivs = np.empty_like(states)
    y = np.concatenate([q0, p0, [0.0], [0.0]])
    states[0] = y
    derivs[0] = rhs(y)
    for i in range(nsteps):
        k1 = derivs[i]
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.linalg.norm(y[:d]) > q_bound:
            raise FlowError(f"trajectory blow-up near t = {ts[i + 1]:.6g}")
        states[i + 1] = y
        derivs[i + 1] = rhs(y)
    return Trajectory(ts=ts, states=states, derivs=derivs, dimension=d)


def phase_at(trajectory: Trajectory, t: float, x) -> np.ndarray:
    """Eikonal phase S(t) + <p(t), x - q(t)> at spatial points x (..., d)."""
    state = trajectory.state_at(t)
    pts = np.asarray(x, dtype=float)
    if trajectory.dimension == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
        pts = pts[..., None]
    return state.S + (pts - state.q) @ state.p


def total_energy(state: TrajectoryState, band, potential) -> float:
    """Conserved Hamiltonian E(p) + V(q) of the flow."""
    return float(band.energy(state.p) + potential.value(state.q))
