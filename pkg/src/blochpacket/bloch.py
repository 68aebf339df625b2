"""Plane-wave Bloch eigenproblem: bands, cell functions, k-derivatives.

The fiber Hamiltonian at quasimomentum k acts on cell-periodic functions as
0.5 * (-i grad_y + k)^2 + V(y). In the plane-wave basis e_n = exp(i<G_n, y>)
(indices |n|_inf <= cutoff, lexicographic order) it is dense Hermitian with
kinetic diagonal 0.5 * |G_n + k|^2 and potential entries vhat(n - n').

Eigenvector coefficients are stored in the "cell" scaling c_n, normalized so
that |Y| * sum |c_n|^2 = 1, i.e. the cell function has unit L^2(Y) norm.
Inner products over the cell in this scaling are |Y| * sum conj(a) b.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateBandError, EigensolverError, GaugeError
from .lattice import FourierPotential, LatticeSpec

EIG_RESIDUAL_TOL = 1e-9
GAP_TOL_RELATIVE = 1e-8
ORTHO_TOL = 1e-12
OVERLAP_FLOOR = 1e-6
MOMENTUM_QUANTUM = 1e-12  # cache key resolution for quasimomenta


@functools.lru_cache(maxsize=None)
def pw_indices(dimension: int, cutoff: int) -> np.ndarray:
    """Integer multi-indices |n|_inf <= cutoff in lexicographic order, (M, d)."""
    axes = [np.arange(-cutoff, cutoff + 1)] * dimension
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class BlochEigenpair:
    """One Bloch band value and gauge-fixed cell function at one k."""

    k: np.ndarray            # quasimomentum, possibly outside the first zone
    m: int                   # band index, 1-based, bands sorted ascending
    energy: float
    coeffs: np.ndarray       # cell-scaled plane-wave coefficients, lex order
    cutoff: int
    lattice: LatticeSpec
    gauge: str               # "raw", "pinned" or "transport"

    @property
    def dimension(self) -> int:
        return self.lattice.dimension

    def unit_coeffs(self) -> np.ndarray:
        """Coefficients in the orthonormal-basis scaling (unit 2-norm)."""
        return self.coeffs * np.sqrt(self.lattice.cell_volume)


@dataclass(frozen=True)
class BandDerivatives:
    """First and second k-derivatives of one band at one k."""

    grad: np.ndarray       # (d,) gradient of the band energy
    hess: np.ndarray       # (d, d) symmetric Hessian of the band energy
    dk_coeffs: np.ndarray  # (d, M) cell-scaled coefficients of d_k(cell function)
    berry: np.ndarray      # (d,) purely imaginary <chi, d_k chi> in the pinned gauge


def cell_inner(lattice: LatticeSpec, a: np.ndarray, b: np.ndarray) -> complex:
    """L^2(Y) inner product of cell functions given cell-scaled coefficients."""
    return lattice.cell_volume * complex(np.vdot(a, b))


def build_bloch_hamiltonian(
    lattice: LatticeSpec,
    potential: FourierPotential,
    k,
    cutoff: int,
) -> np.ndarray:
    """Dense fiber Hamiltonian in the plane-wave basis at quasimomentum k."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    d = lattice.dimension
    if k.shape != (d,):
        raise EigensolverError(f"quasimomentum shape {k.shape} != ({d},)")
    if not np.all(np.isfinite(k)):
        raise EigensolverError("quasimomentum must be finite")
    if cutoff < potential.cutoff:
        raise EigensolverError(
            f"cutoff {cutoff} below potential support {potential.cutoff}"
        )
    n = pw_indices(d, cutoff)
    g = lattice.dual_vectors(n)
    kinetic = 0.5 * np.sum((g + k) ** 2, axis=1)

    # Dense cube of coefficients over index differences, fancy-indexed below.
    width = 4 * cutoff + 1
    cube = np.zeros((width,) * d, dtype=complex)
    for idx, v in potential.coeffs:
        cube[tuple(c + 2 * cutoff for c in idx)] = v
    diff = n[:, None, :] - n[None, :, :] + 2 * cutoff
    h = cube[tuple(diff[..., j] for j in range(d))]
    if potential.is_real_matrix:
        h = h.real.copy()
    h[np.diag_indices_from(h)] += kinetic
    return h


def _deterministic_degenerate_basis(vectors: np.ndarray) -> np.ndarray:
    """Re-orthonormalize a degenerate eigenspace in a basis-independent way.

    Projects unit plane-wave axes (in lexicographic order) onto the subspace
    and Gram-Schmidts the nonzero projections, so the returned basis depends
    only on the subspace, not on the eigensolver's arbitrary rotation.
    """
    dim, r = vectors.shape
    basis = []
    for axis in range(dim):
        proj = vectors @ np.conj(vectors[axis, :])
        for b in basis:
            proj = proj - b * np.vdot(b, proj)
        norm = np.linalg.norm(proj)
        if norm > 1e-8:
            basis.append(proj / norm)
        if len(basis) == r:
            break
    if len(basis) < r:
        raise EigensolverError("failed to fix a degenerate eigenspace basis")
    return np.stack(basis, axis=1)


def solve_bands(
    h: np.ndarray,
    lattice: LatticeSpec,
    num_bands: int,
    *,
    k,
    cutoff: int,
) -> list[BlochEigenpair]:
    """Lowest num_bands eigenpairs of a fiber Hamiltonian, pinned gauge."""
    dim = h.shape[0]
    if num_bands < 1 or num_bands > dim:
        raise EigensolverError(f"num_bands {num_bands} outside [1, {dim}]")
    try:
        evals, evecs = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"dense eigensolve failed: {exc}") from exc

    # Deterministic bases inside (numerically) degenerate clusters.
    scale = max(float(evals[-1] - evals[0]), 1.0)
    tol = 1e-12 * scale
    start = 0
    while start < num_bands:
        stop = start + 1
        while stop < dim and evals[stop] - evals[stop - 1] <= tol:
            stop += 1
        if stop - start > 1:
            evecs[:, start:stop] = _deterministic_degenerate_basis(
                evecs[:, start:stop]
            )
        start = stop

    k = np.atleast_1d(np.asarray(k, dtype=float))
    pairs = []
    for m in range(1, num_bands + 1):
        vec = evecs[:, m - 1]
        residual = np.linalg.norm(h @ vec - evals[m - 1] * vec)
        if residual > EIG_RESIDUAL_TOL:
            raise EigensolverError(
                f"eigen-residual {residual:.3e} above {EIG_RESIDUAL_TOL:.1e}"
                f" for band {m}"
            )
        pair = BlochEigenpair(
            k=k,
            m=m,
            energy=float(evals[m - 1]),
            coeffs=vec.astype(complex) / np.sqrt(lattice.cell_volume),
            cutoff=cutoff,
            lattice=lattice,
            gauge="raw",
        )
        pairs.append(gauge_fix(pair))
    return pairs


def _pin_index(coeffs: np.ndarray) -> int:
    """Index of the largest-modulus coefficient, first (lowest lex) on ties."""
    return int(np.argmax(np.abs(coeffs)))


def gauge_fix(pair: BlochEigenpair, reference: BlochEigenpair | None = None) -> BlochEigenpair:
    """Fix the overall phase of a cell function.

    Without a reference the largest-modulus coefficient is rotated to the
    positive real axis (ties break to the lowest lexicographic index). With
    a reference the phase is chosen so <chi_ref, chi> is real positive,
    which is one discrete parallel-transport step.
    """
    if reference is None:
        j = _pin_index(pair.coeffs)
        c = pair.coeffs[j]
        if abs(c) == 0.0:
            raise GaugeError("cell function has no nonzero coefficient to pin")
        phase = np.conj(c) / abs(c)
        return replace(pair, coeffs=pair.coeffs * phase, gauge="pinned")
    if reference.cutoff != pair.cutoff or reference.dimension != pair.dimension:
        raise GaugeError("reference eigenpair lives on a different basis")
    overlap = cell_inner(pair.lattice, reference.coeffs, pair.coeffs)
    if abs(overlap) < OVERLAP_FLOOR:
        raise GaugeError(
            f"overlap modulus {abs(overlap):.3e} too small for phase transport"
        )
    phase = np.conj(overlap) / abs(overlap)
    return replace(pair, coeffs=pair.coeffs * phase, gauge="transport")


def _check_isolated(evals: np.ndarray, m: int) -> float:
    """Gap from band m (1-based) to its nearest neighbor at the same k."""
    others = np.delete(evals, m - 1)
    gap = float(np.min(np.abs(others - evals[m - 1])))
    scale = max(float(evals[-1] - evals[0]), 1.0)
    if gap < GAP_TOL_RELATIVE * scale:
        raise DegenerateBandError(
            f"band {m} gap {gap:.3e} below {GAP_TOL_RELATIVE:.1e} * {scale:.3e}"
        )
    return gap


def reduced_resolvent_solve(
    h: np.ndarray, energy: float, chi_unit: np.ndarray, rhs: np.ndarray
) -> np.ndarray:
    """Solve (H - E) x = P_perp rhs subject to <chi, x> = 0.

    Uses the bordered system [[H - E, chi], [chi^*, 0]] which is nonsingular
    exactly when the band is simple.
    """
    dim = h.shape[0]
    bordered = np.zeros((dim + 1, dim + 1), dtype=complex)
    bordered[:dim, :dim] = h - energy * np.eye(dim)
    bordered[:dim, dim] = chi_unit
    bordered[dim, :dim] = np.conj(chi_unit)
    rhs_perp = rhs - chi_unit * np.vdot(chi_unit, rhs)
    full = np.concatenate([rhs_perp, [0.0]])
    try:
        sol = np.linalg.solve(bordered, full)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"reduced-resolvent solve failed: {exc}") from exc
    x = sol[:dim]
    residual = np.linalg.norm((h - energy * np.eye(dim)) @ x - rhs_perp)
    if residual > 1e-8 * max(1.0, np.linalg.norm(rhs_perp)):
        raise EigensolverError(f"reduced-resolvent residual {residual:.3e}")
    if abs(np.vdot(chi_unit, x)) > ORTHO_TOL:
        raise EigensolverError("reduced-resolvent solution not orthogonal")
    return x


def band_derivatives(
    lattice: LatticeSpec,
    potential: FourierPotential,
    k,
    m: int,
    cutoff: int,
) -> tuple[BlochEigenpair, BandDerivatives]:
    """Eigenpair plus grad/Hessian/k-derivative data for one simple band.

    The gradient is the velocity expectation <chi, (-i grad_y + k) chi>. The
    coefficient derivative combines the reduced-resolvent solution x_j (the
    component orthogonal to chi) with the phase rate of the pinned gauge; the
    latter is also returned as the purely imaginary connection vector.
    """
    d = lattice.dimension
    k = np.atleast_1d(np.asarray(k, dtype=float))
    h = build_bloch_hamiltonian(lattice, potential, k, cutoff)
    try:
        evals, evecs = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"dense eigensolve failed: {exc}") from exc
    _check_isolated(evals, m)
    vec = evecs[:, m - 1].astype(complex)
    residual = np.linalg.norm(h @ vec - evals[m - 1] * vec)
    if residual > EIG_RESIDUAL_TOL:
        raise EigensolverError(f"eigen-residual {residual:.3e} for band {m}")
    pair = gauge_fix(
        BlochEigenpair(
            k=k,
            m=m,
            energy=float(evals[m - 1]),
            coeffs=vec / np.sqrt(lattice.cell_volume),
            cutoff=cutoff,
            lattice=lattice,
            gauge="raw",
        )
    )

    n = pw_indices(d, cutoff)
    g_plus_k = lattice.dual_vectors(n) + k
    a = pair.unit_coeffs()
    grad = (np.abs(a) ** 2) @ g_plus_k

    h_c = h.astype(complex)
    xs = []
    for j in range(d):
        rhs = -(g_plus_k[:, j] * a)
        xs.append(reduced_resolvent_solve(h_c, pair.energy, a, rhs))

    hess = np.eye(d)
    for j in range(d):
        for l in range(j, d):
            term = np.vdot(a, g_plus_k[:, j] * xs[l]) + np.vdot(
                a, g_plus_k[:, l] * xs[j]
            )
            if abs(term.imag) > 1e-9 * max(1.0, abs(term.real)):
                raise EigensolverError("Hessian assembly produced imaginary part")
            hess[j, l] += term.real
            if l != j:
                hess[l, j] += term.real

    # Phase rate of the pinned gauge: differentiating Im c_pin = 0 gives
    # alpha_j = -Im(x_j at pin) / c_pin with c_pin real positive.
    pin = _pin_index(a)
    if abs(a[pin].imag) > 1e-10 or a[pin].real <= 0:
        raise GaugeError("derivatives require the pinned gauge")
    alphas = np.array([-x[pin].imag / a[pin].real for x in xs])
    berry = 1j * alphas

    scale = 1.0 / np.sqrt(lattice.cell_volume)
    dk = np.stack(
        [(xs[j] + 1j * alphas[j] * a) * scale for j in range(d)], axis=0
    )
    derivs = BandDerivatives(grad=grad, hess=hess, dk_coeffs=dk, berry=berry)
    return pair, derivs


def gap_check(
    lattice: LatticeSpec,
    potential: FourierPotential,
    m: int,
    k_samples,
    num_bands: int,
    cutoff: int,
    bz_points: int = 129,
) -> float:
    """Worst isolation margin of band m against all other bands.

    For each sampled quasimomentum, band m's value is compared against every
    other band over a full Brillouin-zone grid (bz_points per axis); the
    minimum of |E_m(k_sample) - E_n(k')| over n != m and k' is returned.
    """
    if num_bands < 2:
        raise DegenerateBandError("gap check needs at least two bands")
    d = lattice.dimension
    fracs = np.linspace(-0.5, 0.5, bz_points)
    mesh = np.meshgrid(*([fracs] * d), indexing="ij")
    grid_k = np.stack([g.ravel() for g in mesh], axis=-1) @ lattice.dual_basis

    grid_bands = np.empty((grid_k.shape[0], num_bands))
    for i, kk in enumerate(grid_k):
        h = build_bloch_hamiltonian(lattice, potential, kk, cutoff)
        grid_bands[i] = np.linalg.eigvalsh(h)[:num_bands]
    others = np.delete(grid_bands, m - 1, axis=1)

    worst = np.inf
    for ks in np.atleast_2d(np.asarray(k_samples, dtype=float)):
        h = build_bloch_hamiltonian(lattice, potential, ks, cutoff)
        e_m = np.linalg.eigvalsh(h)[m - 1]
        worst = min(worst, float(np.min(np.abs(others - e_m))))
    return worst


def evaluate_cell_coeffs(lattice, cutoff: int, coeffs: np.ndarray, points) -> np.ndarray:
    """Values of sum_n c_n exp(i <G_n, y>) at points (..., d) for any c."""
    d = lattice.dimension
    pts = np.asarray(points, dtype=float)
    if d == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
        pts = pts[..., None]
    n = pw_indices(d, cutoff)
    g = lattice.dual_vectors(n)
    # chunked to bound memory on large point sets
    flat = pts.reshape(-1, d)
    out = np.empty(flat.shape[0], dtype=complex)
    step = 1 << 14
    for start in range(0, flat.shape[0], step):
        block = flat[start : start + step]
        out[start : start + step] = np.exp(1j * (block @ g.T)) @ coeffs
    return out.reshape(pts.shape[:-1])


def evaluate_bloch(pair: BlochEigenpair, points) -> np.ndarray:
    """Cell function values sum_n c_n exp(i <G_n, y>) at points (..., d)."""
    return evaluate_cell_coeffs(pair.lattice, pair.cutoff, pair.coeffs, points)


def _shift_coeffs(coeffs: np.ndarray, winding: np.ndarray, dimension: int, cutoff: int) -> np.ndarray:
    """Coefficients of exp(-i <G_w, y>) * chi given those of chi.

    Re-indexes c'_n = c_{n + w}; entries pushed past the cutoff box are
    dropped (they sit in the spectral tail for converged cutoffs).
    """
    w = np.asarray(winding, dtype=int)
    if not np.any(w):
        return coeffs
    side = 2 * cutoff + 1
    src = coeffs.reshape((side,) * dimension)
    dst = np.zeros_like(src)
    src_slices, dst_slices = [], []
    for ax in range(dimension):
        shift = int(w[ax])
        lo = max(0, shift)
        hi = min(side, side + shift)
        src_slices.append(slice(lo, hi))
        dst_slices.append(slice(lo - shift, hi - shift))
    dst[tuple(dst_slices)] = src[tuple(src_slices)]
    return dst.ravel()


class BlochBand:
    """Memoized spectral data for one band of one periodic potential.

    Quasimomenta are folded into the first zone for the eigensolve; cell
    functions at unfolded momenta are recovered by the exact integer
    re-indexing chi(k + G_w) = exp(-i <G_w, y>) chi(k). Band energy and its
    k-derivatives are periodic, so they are served from the folded cache
    directly. The cache is keyed on the folded momentum quantized at 1e-12;
    instances are safe for concurrent reads once warmed, and a single
    trajectory integration should own its instance while writing.
    """

    def __init__(
        self,
        lattice: LatticeSpec,
        potential: FourierPotential,
        m: int,
        cutoff: int | None = None,
    ):
        if cutoff is None:
            cutoff = default_cutoff(lattice.dimension)
        self.lattice = lattice
        self.potential = potential
        self.m = int(m)
        self.cutoff = int(cutoff)
        self._cache: dict[tuple, tuple[BlochEigenpair, BandDerivatives]] = {}

    @property
    def dimension(self) -> int:
        return self.lattice.dimension

    def _folded(self, p) -> tuple[np.ndarray, np.ndarray, tuple]:
        folded, winding = self.lattice.fold(np.atleast_1d(np.asarray(p, dtype=float)))
        key = tuple(np.round(folded / MOMENTUM_QUANTUM).astype(np.int64).tolist())
        return folded, winding, key

    def _entry(self, p) -> tuple[BlochEigenpair, BandDerivatives, np.ndarray]:
        folded, winding, key = self._folded(p)
        hit = self._cache.get(key)
        if hit is None:
            hit = band_derivatives(
                self.lattice, self.potential, folded, self.m, self.cutoff
            )
            self._cache[key] = hit
        return hit[0], hit[1], winding

    def energy(self, p) -> float:
        return self._entry(p)[0].energy

    def grad_energy(self, p) -> np.ndarray:
        return self._entry(p)[1].grad

    def hess_energy(self, p) -> np.ndarray:
        return self._entry(p)[1].hess

    def berry(self, p) -> np.ndarray:
        return self._entry(p)[1].berry

    def eigenpair(self, p) -> BlochEigenpair:
        """Cell function at the unfolded momentum p (pinned gauge)."""
        pair, _, winding = self._entry(p)
        p = np.atleast_1d(np.asarray(p, dtype=float))
        coeffs = _shift_coeffs(pair.coeffs, winding, self.dimension, self.cutoff)
        return replace(pair, k=p, coeffs=coeffs)

    def derivatives(self, p) -> BandDerivatives:
        pair, derivs, winding = self._entry(p)
        if not np.any(winding):
            return derivs
        dk = np.stack(
            [
                _shift_coeffs(row, winding, self.dimension, self.cutoff)
                for row in derivs.dk_coeffs
            ],
            axis=0,
        )
        return BandDerivatives(
            grad=derivs.grad, hess=derivs.hess, dk_coeffs=dk, berry=derivs.berry
        )


class QuadraticBand:
    """Analytic dispersion E(k) = |k|^2 / 2, used to exercise the flow alone."""

    def __init__(self, dimension: int = 1):
        self._d = dimension

    @property
    def dimension(self) -> int:
        return self._d

    def energy(self, p) -> float:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        return float(0.5 * np.dot(p, p))

    def grad_energy(self, p) -> np.ndarray:
        return np.atleast_1d(np.asarray(p, dtype=float)).copy()

    def hess_energy(self, p) -> np.ndarray:
        return np.eye(self._d)

    def berry(self, p) -> np.ndarray:
        return np.zeros(self._d, dtype=complex)


def default_cutoff(dimension: int) -> int:
    """Plane-wave cutoff defaults giving converged desk-scale spectra."""
    return 32 if dimension == 1 else 12
