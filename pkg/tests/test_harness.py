import numpy as np
import pytest

from vecpr import harness as H
from vecpr.optics import build_aperture, diversity_stack, embed_pupil
from vecpr.projectors import gauge_G
from vecpr.solvers import NumericalError, OperatorSpec


def test_generate_phase_range_and_determinism(ap32):
    for seed in range(100):
        ph = H.generate_phase(ap32, seed=seed)
        assert np.max(np.abs(ph)) <= np.pi
        assert np.all(ph[~ap32.mask] == 0)
        assert abs(ph[ap32.mask].mean()) < 1e-12
    assert np.array_equal(H.generate_phase(ap32, seed=9), H.generate_phase(ap32, seed=9))
    assert not np.array_equal(H.generate_phase(ap32, seed=9), H.generate_phase(ap32, seed=10))
    assert np.all(H.generate_phase(ap32, coefficients=np.zeros(5)) == 0)
    big = H.generate_phase(ap32, coefficients=[0, 0, 10.0])
    assert np.max(np.abs(big)) == pytest.approx(np.pi)
    small = H.generate_phase(ap32, coefficients=[0.1])
    assert np.max(np.abs(small)) < 1


def test_simulate_stack_examples(ap32):
    ms = H.simulate_stack(ap32, np.zeros((32, 32)), np.zeros((1, 32, 32)))
    assert ms.intensities.min() >= 0 and ms.intensities.sum() == pytest.approx(1.0)
    phase = H.generate_phase(ap32, seed=2)
    div, _ = diversity_stack(ap32, 4)
    ms = H.simulate_stack(ap32, phase, div)
    assert np.allclose(ms.intensities.sum(axis=(1, 2)), 1.0)
    x = embed_pupil(ap32, ms.field_scale * ap32.amplitude * np.exp(1j * phase))
    for r, phi in zip(ms.intensities, ms.diversities):
        assert np.max(np.abs(gauge_G(phi, x) ** 2 - r)) <= 1e-10


def test_table1_stack_shape():
    cfg = H.ExperimentConfig(realizations=1)
    ap = build_aperture(cfg.n, cfg.na, cfg.wavelength, cfg.pixel_size, cfg.amplitude, cfg.fill)
    phase, ms = H.realization_data(cfg, ap, 0)
    assert ms.intensities.shape == (7, 128, 128) and phase.shape == (128, 128)


def test_measurement_set_validation():
    with pytest.raises(ValueError):
        H.MeasurementSet(np.zeros((2, 4, 4)), np.zeros((3, 4, 4)))
    with pytest.raises(ValueError):
        H.MeasurementSet(-np.ones((1, 4, 4)), np.zeros((1, 4, 4)))


@pytest.fixture(scope="module")
def clean128():
    ap = build_aperture(128, 0.95)
    div, _ = diversity_stack(ap, 3)
    return H.simulate_stack(ap, H.generate_phase(ap, seed=1), div)


def test_noise(clean128):
    ms = clean128
    same = H.add_gaussian_noise(ms, np.inf)
    assert np.array_equal(same.intensities, ms.intensities) and np.all(same.noise_record == 0)
    a = H.add_gaussian_noise(ms, 30.0, seed=4)
    b = H.add_gaussian_noise(ms, 30.0, seed=4)
    assert np.array_equal(a.intensities, b.intensities)
    assert a.intensities.min() >= 0
    assert np.array_equal(a.intensities, np.clip(ms.intensities + a.noise_record, 0, None))
    snr = H.empirical_snr_db(ms.intensities, a.noise_record)
    assert np.all(np.abs(snr - 30.0) < 0.2)
    with pytest.raises(ValueError):
        H.add_gaussian_noise(ms, np.nan)


def test_relative_rms(ap32, rng):
    phi = H.generate_phase(ap32, seed=6)
    mask = ap32.mask
    assert H.relative_rms(phi, phi, mask) == 0.0
    assert H.relative_rms(phi + 1.3, phi, mask) < 1e-14
    wrapped = np.angle(np.exp(1j * (phi + 2.0)))
    assert H.relative_rms(wrapped, phi, mask) < 1e-12
    with pytest.raises(ValueError):
        H.relative_rms(phi, np.full_like(phi, 0.7), mask)


def test_relative_rms_negated_phase_oracle(ap32):
    # small phase: no wrapping, so the metric is plain piston-removed relative L2
    phi = H.generate_phase(ap32, seed=8, peak_range=(np.pi / 4, np.pi / 4))
    got = H.relative_rms(-phi, phi, ap32.mask)
    vals = [(i, j) for i in range(32) for j in range(32) if ap32.mask[i, j]]
    mean_t = sum(phi[p] for p in vals) / len(vals)
    num = den = 0.0
    for p in vals:
        t = phi[p] - mean_t
        e = -phi[p] + mean_t
        num += (e - t) ** 2
        den += t**2
    assert got == pytest.approx(np.sqrt(num / den), abs=1e-12)


def test_parse_algorithm():
    assert H.parse_algorithm("VAM") == ("AP", "pr3", False)
    assert H.parse_algorithm("SAM") == ("AP", "pr3", True)
    assert H.parse_algorithm("VAM+") == ("AP", "pr3p", False)
    assert H.parse_algorithm("raar", known_amplitude=True) == ("RAAR", "pr3p", False)
    assert H.parse_algorithm("DRAP", model="pr4") == ("DRAP", "pr4", False)
    assert H.parse_algorithm("CP") == ("CP", "pr1", False)
    assert H.parse_algorithm("CRAAR+") == ("CRAAR", "pr1p", False)
    for bad in ("XYZ", "SAM+"):
        with pytest.raises(ValueError):
            H.parse_algorithm(bad)
    with pytest.raises(ValueError):
        H.parse_algorithm("AP", model="pr1")
    with pytest.raises(ValueError):
        H.parse_algorithm("AP", model="pr9")


def test_parse_iterations():
    assert H.parse_iterations("100") == (100, 0)
    assert H.parse_iterations("30+20") == (30, 20)
    assert H.parse_iterations(7) == (7, 0)
    for bad in ("0", "a+b", "1+2+3", "-3+5"):
        with pytest.raises(ValueError):
            H.parse_iterations(bad)


@pytest.mark.parametrize("model", ["pr3", "pr3p", "pr4", "pr4p", "pr1", "pr1p"])
def test_initial_point_shapes(problem16, model):
    ap, _, ms = problem16
    x0 = H.initial_point(ap, ms, model)
    expect = {"pr1": (6, 16, 16), "pr1p": (6, 16, 16), "pr4": (4, 6, 16, 16), "pr4p": (4, 6, 16, 16)}
    assert x0.shape == expect.get(model, (3, 6, 16, 16))
    spec = H.build_problem(ap, ms, "CP" if model.startswith("pr1") else "AP", model)
    assert isinstance(spec, OperatorSpec)


def test_retrieve_each_model_noiseless(problem16):
    ap, phase, ms = problem16
    for alg, model in (("VAM", "pr3"), ("VAM+", "pr3"), ("DRAP", "pr4"), ("RAAR+", "pr4"), ("CP", "pr1")):
        est, trace = H.retrieve(ap, ms, alg, "60", model=model)
        assert H.relative_rms(est, phase, ap.mask) < 0.05, alg


def small_config(**kw):
    base = dict(n=32, m=5, realizations=2, noise="none",
                algorithms=[{"name": "VAM", "iterations": "100"}, {"name": "SAM", "iterations": "40"}])
    base.update(kw)
    return H.ExperimentConfig(**base)


def test_benchmark_noiseless_ap_and_report():
    rep = H.run_benchmark(small_config(realizations=1), workers=1)
    assert rep.mean("VAM") < 0.01
    assert all(r["error"] >= 0 for r in rep.records)
    sam = [r for r in rep.records if r["algorithm"] == "SAM"]
    assert all(r["flags"] == ["model-mismatched"] and r["model"] == "pr3-scalar" for r in sam)
    for name, s in rep.summary.items():
        assert s["mean"] == pytest.approx(np.mean(rep.errors(name)))
    lines = rep.table_csv().strip().splitlines()
    assert lines[0].startswith("algorithm,iterations,beta,error_percent")
    assert len(lines) == 3
    assert rep.boxplot_csv().splitlines()[0] == "algorithm,q1,median,q3,whisker_low,whisker_high,outliers"


def test_benchmark_is_deterministic():
    cfg = small_config(noise="gaussian", snr_db=30.0)
    a = H.run_benchmark(cfg, workers=1)
    b = H.run_benchmark(cfg, workers=2)
    assert [r["error"] for r in a.records] == [r["error"] for r in b.records]


def test_benchmark_records_failures(monkeypatch):
    def boom(*a, **k):
        raise NumericalError("diverged")

    monkeypatch.setattr(H, "retrieve", boom)
    rep = H.run_benchmark(small_config(realizations=1), workers=1)
    assert all(r["status"] == "failed" for r in rep.records)
    assert rep.summary["VAM"]["failures"] == 1 and np.isnan(rep.mean("VAM"))


def test_scalar_model_penalty_high_na():
    cfg = small_config(realizations=10, algorithms=[{"name": "VAM"}, {"name": "SAM"}])
    rep = H.run_benchmark(cfg, workers=1)
    assert rep.mean("SAM") >= rep.mean("VAM")


def test_averaging_stage_never_increases_gap():
    cfg = small_config(noise="gaussian", snr_db=30.0, m=7, realizations=10)
    ap = build_aperture(cfg.n, cfg.na, fill=cfg.fill)
    for i in range(cfg.realizations):
        _, ms = H.realization_data(cfg, ap, i)
        _, tr = H.retrieve(ap, ms, "RAAR", "30+20", 0.95)
        gaps = tr.gaps[31:]
        assert all(b <= a * (1 + 1e-10) for a, b in zip(gaps, gaps[1:]))


def test_config_validation():
    for kw in ({"realizations": 0}, {"snr_db": np.inf}, {"noise": "poisson"}, {"m": 0},
               {"algorithms": [{"name": "nope"}]}, {"algorithms": [{"name": "RAAR", "beta": 1.5}]},
               {"peak_range": (1.0, 4.0)}, {"model": "pr7"}):
        with pytest.raises(ValueError):
            H.ExperimentConfig(**kw)
    cfg = H.ExperimentConfig()
    assert [a.name for a in cfg.algorithms] == list(H.TABLE2_ALGORITHMS)
    assert H.ExperimentConfig(**cfg.to_dict()).to_dict() == cfg.to_dict()


def test_box_stats():
    b = H.box_stats([1, 2, 3, 4, 100])
    assert b["median"] == 3 and b["outliers"] == [100.0] and b["whisker_high"] == 4
    assert H.box_stats([])["median"] is None


def test_compare_psf_models():
    rows = H.compare_psf_models(n=64)
    d = [r["discrepancy"] for r in rows]
    assert d[0] < d[1] < d[2]
    assert d[0] < 0.1 * d[2]
    low = H.compare_psf_models((0.05, 0.15), n=64)
    assert low[0]["discrepancy"] < low[1]["discrepancy"]
    e = H.compare_psf_models((0.95,), n=64, normalization="energy")[0]
    assert e["flat_scalar"].shape == (64,)
    with pytest.raises(ValueError):
        H.compare_psf_models(normalization="max")


def test_thread_count(monkeypatch):
    monkeypatch.setenv("VECPR_THREADS", "3")
    assert H.thread_count() == 3
    monkeypatch.setenv("VECPR_THREADS", "junk")
    assert H.thread_count() == 1
