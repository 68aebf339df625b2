import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blochpacket.config import (
    ExperimentConfig,
    ExternalPotentialSpec,
    LatticePotentialSpec,
)
from blochpacket.envelope import GaussianEnvelope
from blochpacket.errors import ConfigError
from blochpacket.flow import CosineWellPotential, QuadraticPotential


def test_defaults_validate():
    cfg = ExperimentConfig(kind="convergence")
    cfg.validate()
    assert cfg.dimension == 1
    assert cfg.band_index == 1
    assert cfg.p0 == (0.3,)
    assert cfg.epsilons == (2**-4, 2**-5, 2**-6, 2**-7)
    assert cfg.sample_times == (1.0,)  # empty input fills in the final time


def test_round_trip_json():
    cfg = ExperimentConfig(
        kind="convergence",
        convergence_mode="residual",
        epsilons=(0.1, 0.05),
        t_final=0.75,
        sample_times=(0.25, 0.75),
        c0_list=(0.1, 0.2),
        jobs=2,
    )
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg


def test_file_round_trip(tmp_path):
    cfg = ExperimentConfig(kind="bands", k_samples=17)
    path = tmp_path / "cfg.json"
    cfg.to_file(path)
    assert ExperimentConfig.from_file(path) == cfg


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "bands", "not_a_field": 1})


def test_validation_rejections():
    bad = [
        dict(kind="unknown-kind"),
        dict(kind="convergence", epsilons=(2.0,)),
        dict(kind="convergence", epsilons=()),
        dict(kind="convergence", band_index=0),
        dict(kind="convergence", dimension=0),
        dict(kind="convergence", q0=(0.0, 0.0)),  # wrong length for d=1
        dict(kind="convergence", t_final=-1.0),
        dict(kind="convergence", convergence_mode="bogus"),
        dict(kind="convergence", initial_data="bogus"),
        dict(kind="convergence", residual_time=2.0, t_final=1.0),
        dict(kind="ehrenfest", c0_list=()),
        dict(kind="convergence", flow_dt=0.0),
    ]
    for kwargs in bad:
        with pytest.raises(ConfigError):
            ExperimentConfig(**kwargs).validate()


def test_lattice_potential_spec_builders():
    cos = LatticePotentialSpec(type="cosine", amplitude=2.0).build(1)
    assert cos.coefficient((1,)) == pytest.approx(1.0)
    zero = LatticePotentialSpec(type="zero").build(1)
    assert zero.cutoff == 0
    general = LatticePotentialSpec(
        type="fourier", coeffs=(((1,), 0.5, 0.0), ((-1,), 0.5, 0.0))
    ).build(1)
    assert general.coefficient((1,)) == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        LatticePotentialSpec(type="bogus").build(1)


def test_external_potential_spec_builders():
    quad = ExternalPotentialSpec(type="quadratic").build(1)
    assert isinstance(quad, QuadraticPotential)
    # harmonic well by default: V = x^2 / 2
    assert quad.value(np.array([2.0])) == pytest.approx(2.0)
    well = ExternalPotentialSpec(type="cosine-well", amplitude=0.5, frequencies=(1.0,)).build(1)
    assert isinstance(well, CosineWellPotential)
    with pytest.raises(ConfigError):
        ExternalPotentialSpec(type="bogus").build(1)


def test_make_band_and_gaussian():
    cfg = ExperimentConfig(kind="convergence")
    band = cfg.make_band()
    assert band.energy(np.array([0.3])) == pytest.approx(-0.5333259639656098, abs=1e-12)
    g = cfg.make_gaussian()
    assert isinstance(g, GaussianEnvelope)
    assert np.allclose(g.A, np.eye(1))


def test_config_hash_ignores_operational_fields():
    a = ExperimentConfig(kind="convergence", output_dir="x", jobs=1)
    b = ExperimentConfig(kind="convergence", output_dir="y", jobs=8)
    c = ExperimentConfig(kind="convergence", t_final=2.0)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 12


def test_with_updates():
    cfg = ExperimentConfig(kind="convergence")
    cfg2 = cfg.with_updates(t_final=3.0)
    assert cfg2.t_final == 3.0
    assert cfg.t_final == 1.0


@given(
    eps=st.lists(
        st.sampled_from([2**-3, 2**-4, 2**-5, 2**-6]), min_size=1, max_size=4, unique=True
    ),
    t_final=st.floats(min_value=0.1, max_value=4.0),
    band=st.integers(min_value=1, max_value=4),
)
@settings(max_examples=20)
def test_round_trip_is_identity_on_valid_configs(eps, t_final, band):
    cfg = ExperimentConfig(
        kind="convergence",
        epsilons=tuple(eps),
        t_final=t_final,
        residual_time=t_final / 2,
        band_index=band,
    )
    cfg.validate()
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    assert cfg.config_hash() == ExperimentConfig.from_json(cfg.to_json()).config_hash()
