"""Experiment configuration: JSON schema, validation, and object builders.

A config is a plain JSON document.  Potentials are restricted to forms the
theory admits: any trigonometric polynomial for the lattice potential, and
a whitelist of external potentials whose growth is at most quadratic with
bounded higher derivatives ("quadratic", "cosine-well").  Every derived
output row carries sha256(canonical config)[:12] for provenance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bloch import BlochBand, default_cutoff
from .envelope import GaussianEnvelope, gaussian_init
from .errors import ConfigError
from .flow import CosineWellPotential, QuadraticPotential
from .lattice import FourierPotential, LatticeSpec

EXPERIMENT_KINDS = (
    "bands",
    "flow",
    "envelope",
    "packet",
    "reference",
    "convergence",
    "ehrenfest",
)
INITIAL_DATA_KINDS = ("packet", "well_prepared")
CONVERGENCE_MODES = ("error", "residual")
EXTERNAL_KINDS = ("quadratic", "cosine-well")
LATTICE_POTENTIAL_KINDS = ("cosine", "fourier", "zero")


@dataclass(frozen=True)
class LatticePotentialSpec:
    """Periodic potential as a named form or explicit Fourier data."""

    type: str = "cosine"
    amplitude: float = 1.0
    # explicit coefficients for type="fourier": ((index...), re, im) rows
    coeffs: tuple = ()

    def validate(self, dimension: int):
        if self.type not in LATTICE_POTENTIAL_KINDS:
            raise ConfigError(f"unknown lattice potential type {self.type!r}")
        if self.type == "fourier" and not self.coeffs:
            raise ConfigError("fourier lattice potential needs coefficients")
        for row in self.coeffs:
            if len(row) != 3 or len(row[0]) != dimension:
                raise ConfigError("fourier coefficient rows are ((n,)*d, re, im)")

    def build(self, dimension: int) -> FourierPotential:
        self.validate(dimension)
        if self.type == "cosine":
            return FourierPotential.cosine(dimension, self.amplitude)
        if self.type == "zero":
            return FourierPotential.zero(dimension)
        mapping = {tuple(int(c) for c in n): complex(re, im) for n, re, im in self.coeffs}
        return FourierPotential.from_coeffs(mapping)

    def to_dict(self) -> dict:
        return {
            "type": self.type,
            "amplitude": self.amplitude,
            "coeffs": [[list(n), re, im] for n, re, im in self.coeffs],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LatticePotentialSpec":
        coeffs = tuple(
            (tuple(int(c) for c in row[0]), float(row[1]), float(row[2]))
            for row in data.get("coeffs", [])
        )
        return cls(
            type=str(data.get("type", "cosine")),
            amplitude=float(data.get("amplitude", 1.0)),
            coeffs=coeffs,
        )


@dataclass(frozen=True)
class ExternalPotentialSpec:
    """Slow external potential from the admissible whitelist.

    The quadratic form is given by (constant, linear, hessian), which makes
    the growth condition checkable syntactically; cosine wells have bounded
    derivatives of every order.
    """

    type: str = "quadratic"
    constant: float = 0.0
    linear: tuple = ()
    hessian: tuple = ()
    amplitude: float = 1.0
    frequencies: tuple = ()

    def validate(self, dimension: int):
        if self.type not in EXTERNAL_KINDS:
            raise ConfigError(
                f"external potential {self.type!r} is not in the admissible"
                f" whitelist {EXTERNAL_KINDS}"
            )
        if self.type == "quadratic":
            if self.linear and len(self.linear) != dimension:
                raise ConfigError("linear term has the wrong dimension")
            if self.hessian:
                rows = [tuple(r) for r in self.hessian]
                if len(rows) != dimension or any(len(r) != dimension for r in rows):
                    raise ConfigError("hessian must be d x d")
        else:
            if self.frequencies and len(self.frequencies) != dimension:
                raise ConfigError("frequencies have the wrong dimension")

    def build(self, dimension: int):
        self.validate(dimension)
        if self.type == "quadratic":
            linear = np.asarray(self.linear or (0.0,) * dimension, dtype=float)
            hessian = (
                np.asarray(self.hessian, dtype=float)
                if self.hessian
                else np.eye(dimension)
            )
            return QuadraticPotential.create(
                dimension, constant=self.constant, linear=linear, hessian=hessian
            )
        freqs = np.asarray(self.frequencies or (1.0,) * dimension, dtype=float)
        return CosineWellPotential.create(self.amplitude, freqs)

    def to_dict(self) -> dict:
        return {
            "type": self.type,
            "constant": self.constant,
            "linear": list(self.linear),
            "hessian": [list(r) for r in self.hessian],
            "amplitude": self.amplitude,
            "frequencies": list(self.frequencies),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExternalPotentialSpec":
        return cls(
            type=str(data.get("type", "quadratic")),
            constant=float(data.get("constant", 0.0)),
            linear=tuple(float(v) for v in data.get("linear", [])),
            hessian=tuple(tuple(float(v) for v in r) for r in data.get("hessian", [])),
            amplitude=float(data.get("amplitude", 1.0)),
            frequencies=tuple(float(v) for v in data.get("frequencies", [])),
        )


def _matrix_tuple(rows, dimension: int, name: str) -> tuple:
    if not rows:
        return tuple(tuple(float(v) for v in r) for r in np.eye(dimension))
    out = tuple(tuple(float(v) for v in r) for r in rows)
    if len(out) != dimension or any(len(r) != dimension for r in out):
        raise ConfigError(f"{name} must be a {dimension} x {dimension} matrix")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: model, initial data, sweep values, and step sizes."""

    kind: str = "convergence"
    dimension: int = 1
    lattice_period: float = 2.0 * np.pi
    lattice_potential: LatticePotentialSpec = field(default_factory=LatticePotentialSpec)
    external: ExternalPotentialSpec = field(default_factory=ExternalPotentialSpec)
    band_index: int = 1
    cutoff: int | None = None

    q0: tuple = (0.0,)
    p0: tuple = (0.3,)
    envelope_a: tuple = ()
    envelope_b: tuple = ()
    initial_data: str = "packet"

    epsilons: tuple = (0.0625, 0.03125, 0.015625, 0.0078125)
    t_final: float = 1.0
    flow_dt: float = 1e-3
    envelope_dt: float = 1e-3
    grid_envelope_dt: float = 2.5e-4
    reference_dt_factor: float = 0.01
    sample_times: tuple = ()
    residual_time: float = 0.5
    residual_delta_factor: float = 0.25  # delta = factor * eps^2
    convergence_mode: str = "error"
    c0_list: tuple = (0.1,)

    half_width: float = 16.0
    points_per_period: int = 16
    envelope_half_width: float = 16.0
    envelope_points: int = 512

    k_samples: int = 65
    num_bands: int = 8
    output_dir: str = "out"
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "q0", tuple(float(v) for v in self.q0))
        object.__setattr__(self, "p0", tuple(float(v) for v in self.p0))
        object.__setattr__(
            self, "envelope_a", _matrix_tuple(self.envelope_a, self.dimension, "envelope_a")
        )
        object.__setattr__(
            self, "envelope_b", _matrix_tuple(self.envelope_b, self.dimension, "envelope_b")
        )
        object.__setattr__(self, "epsilons", tuple(float(v) for v in self.epsilons))
        object.__setattr__(
            self,
            "sample_times",
            tuple(float(v) for v in self.sample_times) or (float(self.t_final),),
        )
        object.__setattr__(self, "c0_list", tuple(float(v) for v in self.c0_list))

    def validate(self) -> "ExperimentConfig":
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.dimension < 1:
            raise ConfigError("dimension must be >= 1")
        if self.lattice_period <= 0:
            raise ConfigError("lattice period must be positive")
        self.lattice_potential.validate(self.dimension)
        self.external.validate(self.dimension)
        if self.band_index < 1:
            raise ConfigError("band index is 1-based")
        if self.band_index > self.num_bands:
            raise ConfigError(
                f"band index {self.band_index} exceeds num_bands {self.num_bands}"
            )
        if len(self.q0) != self.dimension or len(self.p0) != self.dimension:
            raise ConfigError("q0 and p0 must have length = dimension")
        if self.initial_data not in INITIAL_DATA_KINDS:
            raise ConfigError(f"unknown initial data kind {self.initial_data!r}")
        if not self.epsilons:
            raise ConfigError("need at least one epsilon")
        if any(not 0.0 < e < 1.0 for e in self.epsilons):
            raise ConfigError("every epsilon must lie in (0, 1)")
        if self.t_final <= 0:
            raise ConfigError("t_final must be positive")
        for name in ("flow_dt", "envelope_dt", "grid_envelope_dt", "reference_dt_factor"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.convergence_mode not in CONVERGENCE_MODES:
            raise ConfigError(f"unknown convergence mode {self.convergence_mode!r}")
        if not 0.0 < self.residual_time <= self.t_final:
            raise ConfigError("residual_time must lie in (0, t_final]")
        if any(t < 0 or t > self.t_final + 1e-12 for t in self.sample_times):
            raise ConfigError("sample times must lie in [0, t_final]")
        if self.kind == "ehrenfest" and not self.c0_list:
            raise ConfigError("ehrenfest runs need at least one C0 value")
        if min(self.half_width, self.envelope_half_width) <= 0:
            raise ConfigError("box half-widths must be positive")
        if self.points_per_period < 4:
            raise ConfigError("need at least 4 points per lattice oscillation")
        if self.envelope_points < 16:
            raise ConfigError("envelope grid is too coarse")
        if self.k_samples < 2 or self.num_bands < 1:
            raise ConfigError("band scan needs k_samples >= 2, num_bands >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        # eager build checks matrix shapes and symmetry
        self.make_gaussian()
        return self

    # ---- builders -------------------------------------------------------

    def make_lattice(self) -> LatticeSpec:
        return LatticeSpec.cubic(self.dimension, self.lattice_period)

    def make_lattice_potential(self) -> FourierPotential:
        return self.lattice_potential.build(self.dimension)

    def make_external(self):
        return self.external.build(self.dimension)

    def make_band(self) -> BlochBand:
        cutoff = self.cutoff if self.cutoff is not None else default_cutoff(self.dimension)
        return BlochBand(
            self.make_lattice(),
            self.make_lattice_potential(),
            self.band_index,
            cutoff,
        )

    def make_gaussian(self) -> GaussianEnvelope:
        a = np.asarray(self.envelope_a, dtype=complex)
        b = np.asarray(self.envelope_b, dtype=complex)
        return gaussian_init(a, b)

    # ---- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "lattice_period": self.lattice_period,
            "lattice_potential": self.lattice_potential.to_dict(),
            "external": self.external.to_dict(),
            "band_index": self.band_index,
            "cutoff": self.cutoff,
            "q0": list(self.q0),
            "p0": list(self.p0),
            "envelope_a": [list(r) for r in self.envelope_a],
            "envelope_b": [list(r) for r in self.envelope_b],
            "initial_data": self.initial_data,
            "epsilons": list(self.epsilons),
            "t_final": self.t_final,
            "flow_dt": self.flow_dt,
            "envelope_dt": self.envelope_dt,
            "grid_envelope_dt": self.grid_envelope_dt,
            "reference_dt_factor": self.reference_dt_factor,
            "sample_times": list(self.sample_times),
            "residual_time": self.residual_time,
            "residual_delta_factor": self.residual_delta_factor,
            "convergence_mode": self.convergence_mode,
            "c0_list": list(self.c0_list),
            "half_width": self.half_width,
            "points_per_period": self.points_per_period,
            "envelope_half_width": self.envelope_half_width,
            "envelope_points": self.envelope_points,
            "k_samples": self.k_samples,
            "num_bands": self.num_bands,
            "output_dir": self.output_dir,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        unknown = set(data) - set(cls().to_dict())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key == "lattice_potential":
                kwargs[key] = LatticePotentialSpec.from_dict(value)
            elif key == "external":
                kwargs[key] = ExternalPotentialSpec.from_dict(value)
            elif key in ("envelope_a", "envelope_b"):
                kwargs[key] = tuple(tuple(float(v) for v in r) for r in value)
            elif key in ("q0", "p0", "epsilons", "sample_times", "c0_list"):
                kwargs[key] = tuple(value)
            elif key == "cutoff":
                kwargs[key] = None if value is None else int(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def to_file(self, path):
        Path(path).write_text(self.to_json())

    def config_hash(self) -> str:
        # identifies the scientific configuration: output location and
        # parallelism do not change any computed number
        payload = self.to_dict()
        payload.pop("output_dir", None)
        payload.pop("jobs", None)
        canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def with_updates(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)
