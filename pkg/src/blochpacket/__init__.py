"""Semiclassical wave-packet propagation on Bloch bands of periodic potentials.

The package splits the problem the way the analysis does: spectral data of
the periodic operator (`bloch`), the band-driven classical flow (`flow`),
the homogenized envelope equation (`envelope`), corrector fields restoring
the expansion order (`corrector`), fine-grid synthesis (`assembly`), a
direct oscillatory solver for validation (`reference`), and experiment
pipelines plus a CLI (`config`, `experiments`, `cli`).
"""

from .assembly import (
    GridWaveField,
    SpatialGrid,
    fourier_interpolate,
    make_grid_for,
    read_field,
    superpose,
    synthesize_app,
    synthesize_packet,
    write_field,
)
from .bloch import (
    BandDerivatives,
    BlochBand,
    BlochEigenpair,
    QuadraticBand,
    band_derivatives,
    build_bloch_hamiltonian,
    cell_inner,
    default_cutoff,
    evaluate_bloch,
    gap_check,
    gauge_fix,
    solve_bands,
)
from .config import ExperimentConfig, ExternalPotentialSpec, LatticePotentialSpec
from .corrector import (
    CorrectorField,
    build_U0,
    build_U1,
    build_U2,
    solvability_defect,
    system_residuals,
)
from .envelope import (
    ConstantCoefficients,
    GaussianEnvelope,
    GridEnvelope,
    HomogenizedCoefficients,
    coefficients_along,
    evolve_gaussian,
    evolve_grid_envelope,
    gaussian_eval,
    gaussian_init,
    gaussian_invariant_defects,
    grid_envelope_from_gaussian,
    sigma_norm,
)
from .errors import (
    BlochpacketError,
    ConfigError,
    DegenerateBandError,
    EigensolverError,
    EnvelopeError,
    FlowError,
    GaugeError,
    GridError,
    LatticeError,
    PotentialError,
    SolverError,
)
from .flow import (
    CosineWellPotential,
    QuadraticPotential,
    Trajectory,
    TrajectoryState,
    integrate_flow,
    phase_at,
    total_energy,
)
from .lattice import FourierPotential, LatticeSpec
from .reference import (
    SolverParams,
    l2_error,
    pde_residual,
    self_convergence_ratio,
    solve_schrodinger,
)

__version__ = "0.1.0"
