"""Simulated measurements, noise, error metrics and the benchmark runner."""
from __future__ import annotations

import csv
import io
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from vecpr import projectors as P
from vecpr.field import duplicate
from vecpr.optics import ApertureModel, build_aperture, diversity_stack, embed_pupil, model_psf, scalar_psf, vectorial_psf
from vecpr.solvers import (
    CYCLIC,
    DEFAULT_BETA,
    TWO_SET,
    NumericalError,
    check_beta,
    OperatorSpec,
    extract_phase,
    schedule_extrapolate_then_average,
)
from vecpr.zernike import noll_to_nm, zernike_basis

log = logging.getLogger(__name__)

MODELS = ("pr1", "pr3", "pr4", "pr1p", "pr3p", "pr4p")
TABLE2_ALGORITHMS = ("SAM", "VAM", "DRAP", "RAAR", "VAM+", "DRAP+", "RAAR+")


@dataclass
class MeasurementSet:
    """Intensity images with their phase diversities.

    ``field_scale`` maps the aperture amplitude onto the normalisation of the
    images: the noiseless stack is reproduced by the pupil
    ``field_scale * A * exp(j phase)``.
    """

    intensities: np.ndarray
    diversities: np.ndarray
    noise_record: Optional[np.ndarray] = None
    field_scale: float = 1.0

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities, dtype=float)
        self.diversities = np.asarray(self.diversities, dtype=float)
        if self.intensities.ndim != 3 or self.intensities.shape != self.diversities.shape:
            raise ValueError("intensities and diversities must both be (m, n, n)")
        if np.any(self.intensities < 0):
            raise ValueError("intensities must be nonnegative")

    @property
    def m(self) -> int:
        return len(self.intensities)


# -- phases -------------------------------------------------------------------


def generate_phase(
    ap: ApertureModel,
    seed: int = 0,
    coefficients=None,
    max_noll: int = 15,
    peak_range=(0.5 * np.pi, np.pi),
    decay: float = 1.0,
) -> np.ndarray:
    """Smooth piston-free random phase on the aperture with values in [-pi, pi].

    Zernike modes 2..``max_noll`` get standard-normal coefficients divided by
    (radial order)**``decay``; the map is then rescaled so its peak magnitude is drawn
    uniformly from ``peak_range``. Explicit ``coefficients`` (for modes
    2, 3, ...) bypass the draw and are only scaled down if they leave
    [-pi, pi].
    """
    rng = np.random.default_rng(seed)
    modes = range(2, max_noll + 1)
    if coefficients is None:
        basis = zernike_basis(ap, modes)
        orders = np.array([noll_to_nm(j)[0] for j in modes])
        coef = rng.standard_normal(len(basis)) / orders**decay
        target = rng.uniform(*peak_range)
    else:
        coef = np.asarray(coefficients, dtype=float)
        basis = zernike_basis(ap, range(2, 2 + len(coef)))
        target = None
    phase = np.tensordot(coef, basis, axes=1) if len(coef) else np.zeros((ap.n, ap.n))
    phase = np.where(ap.mask, phase - phase[ap.mask].mean(), 0.0)
    peak = np.max(np.abs(phase))
    if peak == 0:
        return phase
    if target is not None:
        phase *= target / peak
    elif peak > np.pi:
        phase *= np.pi / peak
    return phase


# -- measurements -------------------------------------------------------------


def simulate_stack(ap: ApertureModel, phase, diversities) -> MeasurementSet:
    """Noiseless PSF stack, each image scaled to unit total energy."""
    imgs = np.stack([model_psf(ap, phase, phi) for phi in diversities])
    energy = imgs.sum(axis=(1, 2))
    return MeasurementSet(
        intensities=imgs / energy[:, None, None],
        diversities=np.asarray(diversities),
        field_scale=float(1 / np.sqrt(energy[0])),
    )


def add_gaussian_noise(ms: MeasurementSet, snr_db: float, seed: int = 0) -> MeasurementSet:
    """Additive white Gaussian noise at ``snr_db`` = 10 log10(P / P0) per image.

    ``P`` is the mean squared pixel value of an image. The raw noise goes to
    ``noise_record``; the returned intensities are clipped at zero.
    """
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise ValueError(f"invalid SNR {snr_db}")
    if snr_db == np.inf:
        return MeasurementSet(ms.intensities.copy(), ms.diversities.copy(),
                              np.zeros_like(ms.intensities), ms.field_scale)
    rng = np.random.default_rng(seed)
    power = np.mean(ms.intensities**2, axis=(1, 2))
    sigma = np.sqrt(power * 10 ** (-snr_db / 10))
    noise = sigma[:, None, None] * rng.standard_normal(ms.intensities.shape)
    noisy = np.clip(ms.intensities + noise, 0.0, None)
    return MeasurementSet(noisy, ms.diversities.copy(), noise, ms.field_scale)


def empirical_snr_db(clean, noise) -> np.ndarray:
    clean, noise = np.asarray(clean), np.asarray(noise)
    axes = (-2, -1)
    return 10 * np.log10(np.mean(clean**2, axis=axes) / np.mean(noise**2, axis=axes))


def relative_rms(phi_hat, phi, mask) -> float:
    """Relative RMS phase error ||phi_hat - phi|| / ||phi|| over the mask, piston removed.

    The difference is wrapped to (-pi, pi], aligned by its circular mean and
    then has its mean removed, so constant offsets and 2 pi wraps cost nothing.
    """
    mask = np.asarray(mask, dtype=bool)
    a = np.asarray(phi_hat, dtype=float)[mask]
    b = np.asarray(phi, dtype=float)[mask]
    raw = np.linalg.norm(b)
    b = b - b.mean()
    ref = np.linalg.norm(b)
    if ref <= 1e-12 * max(raw, 1.0):
        raise ValueError("ground-truth phase has zero norm after piston removal")
    d = _wrap(a - b)
    d = _wrap(d - np.angle(np.sum(np.exp(1j * d))))
    d -= d.mean()
    return float(np.linalg.norm(d) / ref)


def _wrap(x):
    return np.pi - np.mod(np.pi - x, 2 * np.pi)


# -- problem assembly -----------------------------------------------------------


def parse_algorithm(name: str, known_amplitude: bool = False, model: str = "pr3"):
    """Resolve a benchmark label into (family, model, scalar).

    ``VAM`` is alternating projection, ``SAM`` alternating projection on the
    scalar forward model. A trailing ``+`` selects the known-amplitude model.
    """
    label = name.strip().upper()
    known = known_amplitude or label.endswith("+")
    base = label.rstrip("+").replace("-", "")
    scalar = base == "SAM"
    family = {"VAM": "AP", "SAM": "AP"}.get(base, base)
    if family not in TWO_SET + CYCLIC:
        raise ValueError(f"unknown algorithm {name!r}")
    model = model.lower()
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    if known and not model.endswith("p"):
        model += "p"
    if family in CYCLIC and model not in ("pr1", "pr1p"):
        model = "pr1p" if model.endswith("p") else "pr1"
    if family in TWO_SET and model in ("pr1", "pr1p"):
        raise ValueError(f"{family} is a two-set method; use pr3/pr4 models")
    if scalar and model.endswith("p"):
        raise ValueError("the scalar baseline is only defined for unknown amplitude")
    return family, model, scalar


def build_problem(ap: ApertureModel, ms: MeasurementSet, family: str, model: str, beta=None,
                  known_amplitude=None) -> OperatorSpec:
    """Constraint sets of a feasibility model wrapped into an operator."""
    omegas = P.data_sets(ms.intensities, ms.diversities)
    amp = ms.field_scale * ap.amplitude if known_amplitude is None else known_amplitude
    if model == "pr3":
        sets = (P.set_A(ap), P.set_B(omegas))
    elif model == "pr3p":
        sets = (P.set_A_chi(ap, amp), P.set_B(omegas))
    elif model == "pr4":
        sets = (P.Diagonal(), P.set_B_plus(ap, omegas))
    elif model == "pr4p":
        sets = (P.Diagonal(), P.set_B_chi(ap, omegas, amp))
    elif model == "pr1":
        sets = (P.Omega0(ap), *omegas)
    elif model == "pr1p":
        sets = (P.Chi(ap, amp), *omegas)
    else:
        raise ValueError(f"unknown model {model!r}")
    return OperatorSpec(family, sets, beta)


def initial_point(ap: ApertureModel, ms: MeasurementSet, model: str, amplitude=None,
                  random_phase: bool = False, seed: int = 0) -> np.ndarray:
    """Starting iterate: the lifted pupil ``amplitude * exp(j psi)``.

    ``psi`` is zero unless ``random_phase``. Without an amplitude the
    uniform pupil with the data's energy is used.
    """
    if amplitude is None:
        amplitude = ap.mask / np.sqrt(ap.channel_weight * ap.mask.sum())
    psi = np.random.default_rng(seed).uniform(-np.pi, np.pi, (ap.n, ap.n)) if random_phase else 0.0
    x = embed_pupil(ap, amplitude * np.exp(1j * psi))
    if model in ("pr1", "pr1p"):
        return x
    if model in ("pr4", "pr4p"):
        return duplicate(x, ms.m + 1)
    return duplicate(x, ms.m)


def parse_iterations(spec) -> tuple[int, int]:
    """'100' -> (100, 0); '30+20' -> (30, 20)."""
    if isinstance(spec, int):
        parts = [spec]
    elif isinstance(spec, (list, tuple)):
        parts = list(spec)
    else:
        parts = str(spec).split("+")
    try:
        k = [int(p) for p in parts]
    except (TypeError, ValueError):
        raise ValueError(f"bad iteration schedule {spec!r}") from None
    if not 1 <= len(k) <= 2 or min(k) < 0 or sum(k) < 1:
        raise ValueError(f"bad iteration schedule {spec!r}")
    return k[0], k[1] if len(k) == 2 else 0


def retrieve(ap: ApertureModel, ms: MeasurementSet, algorithm: str, iterations="100", beta=None,
             model: str = "pr3", known_amplitude: bool = False, random_phase: bool = False,
             seed: int = 0, tol_residual=None):
    """Run one algorithm on a measurement set; returns (phase estimate, trace)."""
    family, model, scalar = parse_algorithm(algorithm, known_amplitude, model)
    geom = ap.as_scalar() if scalar else ap
    known = model.endswith("p")
    amp = ms.field_scale * ap.amplitude if known else None
    spec = build_problem(geom, ms, family, model, beta, amp)
    x0 = initial_point(geom, ms, model, amp, random_phase, seed)
    k1, k2 = parse_iterations(iterations)
    trace = schedule_extrapolate_then_average(spec, x0, k1, k2, tol_residual=tol_residual)
    return extract_phase(trace.x, geom), trace


# -- benchmark -------------------------------------------------------------------


@dataclass
class AlgorithmConfig:
    name: str
    iterations: str = "100"
    beta: Optional[float] = None


def default_algorithms() -> list:
    out = []
    for name in TABLE2_ALGORITHMS:
        base = name.rstrip("+")
        if base in ("DRAP", "RAAR"):
            out.append(AlgorithmConfig(name, "30+20", 0.95))
        else:
            out.append(AlgorithmConfig(name, "100"))
    return out


@dataclass
class ExperimentConfig:
    n: int = 128
    na: float = 0.95
    wavelength: float = 0.3
    pixel_size: float = 0.06
    fill: float = 0.5
    amplitude: str = "truncated-gaussian"
    m: int = 7
    spacing_dof: float = 1.0
    noise: str = "gaussian"
    snr_db: float = 30.0
    phase_basis: str = "zernike"
    max_noll: int = 15
    peak_range: tuple = (0.5 * np.pi, np.pi)
    seed: int = 0
    realizations: int = 75
    known_amplitude: bool = False
    model: str = "pr3"
    random_init: bool = False
    algorithms: list = field(default_factory=default_algorithms)

    def __post_init__(self):
        self.algorithms = [a if isinstance(a, AlgorithmConfig) else AlgorithmConfig(**a)
                           if isinstance(a, dict) else AlgorithmConfig(str(a)) for a in self.algorithms]
        self.peak_range = tuple(float(v) for v in self.peak_range)
        self.validate()

    def validate(self):
        if self.realizations < 1:
            raise ValueError("realizations must be at least 1")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not np.isfinite(self.snr_db) and self.noise != "none":
            raise ValueError("SNR must be finite (use noise = none for noiseless runs)")
        if self.noise not in ("gaussian", "none"):
            raise ValueError(f"unknown noise model {self.noise!r}")
        if self.phase_basis != "zernike":
            raise ValueError(f"unknown phase basis {self.phase_basis!r}")
        if not (0 <= self.peak_range[0] <= self.peak_range[1] <= np.pi):
            raise ValueError("peak_range must satisfy 0 <= lo <= hi <= pi")
        for a in self.algorithms:
            family, _, _ = parse_algorithm(a.name, self.known_amplitude, self.model)
            check_beta(family, a.beta)
            parse_iterations(a.iterations)
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["peak_range"] = list(self.peak_range)
        return d


@dataclass
class BenchmarkReport:
    config: dict
    records: list
    summary: dict

    def to_dict(self) -> dict:
        return {"config": self.config, "records": self.records, "summary": self.summary}

    def errors(self, algorithm: str) -> np.ndarray:
        return np.array([r["error"] for r in self.records if r["algorithm"] == algorithm and r["status"] == "ok"])

    def mean(self, algorithm: str) -> float:
        return self.summary[algorithm]["mean"]

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["algorithm", "iterations", "beta", "error_percent", "std_percent", "runs", "failures", "model"])
        for name, s in self.summary.items():
            w.writerow([name, s["iterations"], "" if s["beta"] is None else s["beta"],
                        f"{100 * s['mean']:.4f}", f"{100 * np.sqrt(s['variance']):.4f}",
                        s["count"], s["failures"], s["model"]])
        return buf.getvalue()

    def boxplot_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["algorithm", "q1", "median", "q3", "whisker_low", "whisker_high", "outliers"])
        for name, s in self.summary.items():
            b = s["box"]
            w.writerow([name, b["q1"], b["median"], b["q3"], b["whisker_low"], b["whisker_high"],
                        " ".join(f"{v:.6g}" for v in b["outliers"])])
        return buf.getvalue()


def box_stats(values) -> dict:
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        return {"q1": None, "median": None, "q3": None, "whisker_low": None, "whisker_high": None, "outliers": []}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return {
        "q1": float(q1), "median": float(med), "q3": float(q3),
        "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
        "outliers": [float(x) for x in v if x < inside.min() or x > inside.max()],
    }


def realization_data(cfg: ExperimentConfig, ap: ApertureModel, index: int):
    """Ground-truth phase and (noisy) measurements of realization ``index``."""
    seed = cfg.seed + index
    phase = generate_phase(ap, seed=seed, max_noll=cfg.max_noll, peak_range=cfg.peak_range)
    div, _ = diversity_stack(ap, cfg.m, cfg.spacing_dof)
    ms = simulate_stack(ap, phase, div)
    if cfg.noise == "gaussian":
        ms = add_gaussian_noise(ms, cfg.snr_db, seed=10_000 + seed)
    return phase, ms


def _run_realization(cfg: ExperimentConfig, ap: ApertureModel, index: int) -> list:
    phase, ms = realization_data(cfg, ap, index)
    records = []
    for alg in cfg.algorithms:
        family, model, scalar = parse_algorithm(alg.name, cfg.known_amplitude, cfg.model)
        t0 = time.perf_counter()
        rec = {"algorithm": alg.name, "realization": index, "seed": cfg.seed + index,
               "family": family, "model": model + ("-scalar" if scalar else "")}
        try:
            est, trace = retrieve(ap, ms, alg.name, alg.iterations, alg.beta, cfg.model,
                                  cfg.known_amplitude, cfg.random_init, seed=cfg.seed + index)
            err = relative_rms(est, phase, ap.mask)
            if not np.isfinite(err):
                raise NumericalError("non-finite error")
            rec.update(error=err, status="ok", degenerate=int(sum(trace.degenerate_counts)),
                       final_gap=float(trace.gaps[-1]))
        except (NumericalError, FloatingPointError) as exc:
            rec.update(error=float("nan"), status="failed", reason=str(exc))
        if scalar:
            rec["flags"] = ["model-mismatched"]
        rec["runtime"] = time.perf_counter() - t0
        records.append(rec)
    return records


def thread_count(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("VECPR_THREADS", default)))
    except ValueError:
        return default


def run_benchmark(cfg: ExperimentConfig, workers: Optional[int] = None) -> BenchmarkReport:
    """Generate, simulate, retrieve and score every realization."""
    cfg.validate()
    ap = build_aperture(cfg.n, cfg.na, cfg.wavelength, cfg.pixel_size, cfg.amplitude, cfg.fill)
    workers = thread_count() if workers is None else workers
    indices = range(cfg.realizations)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda i: _run_realization(cfg, ap, i), indices))
    else:
        chunks = [_run_realization(cfg, ap, i) for i in indices]
    records = [r for chunk in chunks for r in chunk]

    summary = {}
    for alg in cfg.algorithms:
        recs = [r for r in records if r["algorithm"] == alg.name]
        errs = [r["error"] for r in recs if r["status"] == "ok"]
        family, model, scalar = parse_algorithm(alg.name, cfg.known_amplitude, cfg.model)
        beta = alg.beta if alg.beta is not None else DEFAULT_BETA.get(family)
        summary[alg.name] = {
            "mean": float(np.mean(errs)) if errs else float("nan"),
            "variance": float(np.var(errs)) if errs else float("nan"),
            "count": len(errs),
            "failures": len(recs) - len(errs),
            "iterations": str(alg.iterations),
            "beta": beta if family not in ("AP", "DR", "CP", "CDR") else None,
            "model": model + ("-scalar" if scalar else ""),
            "runtime_mean": float(np.mean([r["runtime"] for r in recs])),
            "box": box_stats(errs),
        }
    return BenchmarkReport(cfg.to_dict(), records, summary)


# -- scalar vs vectorial comparison -------------------------------------------------


def compare_psf_models(na_list=(0.15, 0.55, 0.95), n: int = 128, normalization: str = "peak",
                       amplitude: str = "uniform", aberration_seed: int = 7, fill: float = 0.5) -> list:
    """Central cross-sections of scalar and vectorial PSFs for each NA.

    Each entry has the cross-sections for an unaberrated and an aberrated
    pupil, normalised to unit peak or unit energy, and the relative L2
    discrepancy between the two models (``discrepancy`` combines both).
    """
    if normalization not in ("peak", "energy"):
        raise ValueError("normalization must be 'peak' or 'energy'")
    rows = []
    for na in na_list:
        ap = build_aperture(n, na, amplitude_spec=amplitude, fill=fill)
        aberr = generate_phase(ap, seed=aberration_seed, max_noll=11, peak_range=(np.pi / 2, np.pi / 2))
        entry = {"na": float(na)}
        total = 0.0
        for label, phase in (("flat", np.zeros((n, n))), ("aberrated", aberr)):
            s_img, v_img = scalar_psf(ap, phase), vectorial_psf(ap, phase)
            if normalization == "energy":
                s_img, v_img = s_img / s_img.sum(), v_img / v_img.sum()
            else:
                s_img, v_img = s_img / s_img.max(), v_img / v_img.max()
            s_cut, v_cut = s_img[n // 2], v_img[n // 2]
            disc = float(np.linalg.norm(v_cut - s_cut) / np.linalg.norm(s_cut))
            entry[f"{label}_scalar"] = s_cut
            entry[f"{label}_vectorial"] = v_cut
            entry[f"{label}_discrepancy"] = disc
            total += disc**2
        entry["discrepancy"] = float(np.sqrt(total / 2))
        rows.append(entry)
    return rows
