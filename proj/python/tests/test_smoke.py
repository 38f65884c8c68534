import math

import numpy as np
import pytest

import pomega


def test_kernels():
    assert pomega.kernel_g(0.0) == 0.5
    assert pomega.kernel_omega(0.0, 0.7) == pytest.approx(0.49 / math.pi, abs=1e-12)
    assert pomega.kernel_h(0.0, 1e-6) == pytest.approx(math.pi / 16, abs=1e-8)
    assert pomega.k_reduced(0.0, 0.7) == pytest.approx(0.20354992749, rel=1e-9)


def test_vacuum_reconstruction():
    x, phi = pomega.synth_quadratures("vacuum", n=200_000, seed=3)
    assert x.shape == phi.shape == (200_000,)
    grid = pomega.PhaseSpaceGrid.square(6.0, 0.5)
    field = pomega.reconstruct(x, phi, grid)
    assert field.values.shape == (grid.nq, grid.np)
    assert field.sigmas.shape == field.values.shape
    st = field.circular_stats()
    assert abs(st.variance - 1.0) < 0.02
    ref = pomega.omega_field(grid)
    assert np.all(np.abs(field.values - ref.values) < 6 * field.sigmas)


def test_coherent_phase_and_determinism():
    a = pomega.synth_quadratures("coherent", alpha=2.0, n=50_000, seed=9)
    b = pomega.synth_quadratures("coherent", alpha=2.0, n=50_000, seed=9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    field = pomega.reconstruct(*a, grid=pomega.PhaseSpaceGrid.square(6.0, 0.25))
    assert field.circular_stats().variance < 0.4
    with pytest.raises(ValueError):
        pomega.synth_quadratures("squeezed")


def test_postselection():
    rec = pomega.synth_records(2.5, 20_000, seed=4)
    assert set(rec) == {"t_index", "X1", "X2", "X3", "dphi"}
    x, phi = pomega.postselect(rec, s=5.0, w=1.0)
    assert 0 < len(x) < 20_000


def test_fitting():
    t = np.linspace(0, 3000, 50)
    v = 0.8 * np.exp(-t / 600) + 0.2
    fit = pomega.fit_decay(t, v)
    assert fit["tau"] == pytest.approx(600.0, rel=1e-6)
    ranked = pomega.compare_models(t, v * (1 + 0.01 * np.random.default_rng(0).standard_normal(50)))
    assert ranked[0]["model"] == "exponential"
    with pytest.raises(ValueError):
        pomega.fit_decay(t, np.full(50, 0.3))


def test_bridge_vacuum():
    rng = np.random.default_rng(5)
    z = rng.normal(0, 0.5, 20_000) + 1j * rng.normal(0, 0.5, 20_000)
    grid = pomega.PhaseSpaceGrid.square(3.0, 0.5)
    f = pomega.convolve_samples(z, grid, r_max=12.0)
    ref = pomega.omega_field(grid)
    assert np.all(np.abs(f.values - ref.values) < 6 * f.sigmas)


def test_twa_mode():
    p = pomega.ModelParams()
    p.N, p.L, p.dt = 16, 57.6, 0.2
    p.validate()
    assert p.homogeneous_threshold() == pytest.approx(4.0)
    samples = pomega.simulate_mode(p, 8, seed=2, times=[0.0, 5.0, 10.0], jobs=1)
    assert samples.shape == (3, 8)
    assert samples.dtype == np.complex128
    st = pomega.mode_stats(samples[-1])
    assert len(st.phase_samples) == 8
    p.N = 15
    with pytest.raises(ValueError):
        p.validate()
