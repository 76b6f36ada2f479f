"""Projection-algorithm fixed-point operators and the iteration driver."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from vecpr.field import diagonal_average, frobenius_norm
from vecpr.optics import ApertureModel
from vecpr.projectors import ConstraintSet, omega0_pupil

log = logging.getLogger(__name__)

TWO_SET = ("AP", "DR", "KMDR", "HPR", "RAAR", "RRR", "DRAP")
CYCLIC = ("CP", "CDR", "CRAAR")
FAMILIES = TWO_SET + CYCLIC
_BETA_OPEN = ("KMDR", "HPR", "RAAR", "RRR", "CRAAR")

# defaults for families without a published tuning value are placeholders
DEFAULT_BETA = {"RAAR": 0.95, "DRAP": 0.95, "CRAAR": 0.95, "KMDR": 0.75, "HPR": 0.75, "RRR": 0.75}


class NumericalError(RuntimeError):
    """An iterate became non-finite."""


def check_beta(family: str, beta=None):
    """Validated tuning parameter of ``family`` (its default when ``beta`` is None)."""
    fam = family.upper().replace("-", "")
    if beta is None:
        return DEFAULT_BETA.get(fam)
    beta = float(beta)
    if fam in _BETA_OPEN and not (0 < beta <= 1):
        raise ValueError(f"{fam} requires beta in (0, 1], got {beta}")
    if fam == "DRAP" and not (0 <= beta <= 1):
        raise ValueError(f"DRAP requires beta in [0, 1], got {beta}")
    return beta


@dataclass(frozen=True)
class OperatorSpec:
    """A fixed-point operator: a family name, its tuning parameter and its sets.

    Two-set families take ``sets=(A, B)``; cyclic families take the ordered
    list ``(Omega_0, ..., Omega_m)``.
    """

    family: str
    sets: tuple
    beta: Optional[float] = None

    def __post_init__(self):
        fam = self.family.upper().replace("-", "")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "sets", tuple(self.sets))
        if fam not in FAMILIES:
            raise ValueError(f"unknown operator family {self.family!r}")
        if fam in TWO_SET and len(self.sets) != 2:
            raise ValueError(f"{fam} needs exactly two sets, got {len(self.sets)}")
        if fam in CYCLIC and len(self.sets) < 2:
            raise ValueError(f"{fam} needs at least two sets")
        object.__setattr__(self, "beta", check_beta(fam, self.beta))

    @property
    def cyclic(self) -> bool:
        return self.family in CYCLIC

    def with_family(self, family: str, beta=None) -> "OperatorSpec":
        return OperatorSpec(family, self.sets, beta)

    def averaging_stage(self) -> "OperatorSpec":
        """The plain projection operator on the same sets (AP, or CP for cycles)."""
        return OperatorSpec("CP" if self.cyclic else "AP", self.sets)


@dataclass
class RunTrace:
    """Record of an iteration run.

    ``residuals[k]`` is ``||x_{k+1} - x_k||``; ``gaps[k]`` is the distance from
    ``x_k`` to the inner (B-side) set evaluated during step ``k``.
    """

    x: np.ndarray
    residuals: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    degenerate_counts: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    iterates: Optional[list] = None
    rate_estimate: Optional[float] = None
    converged: bool = False

    @property
    def n_iter(self) -> int:
        return len(self.residuals)

    def to_dict(self) -> dict:
        return {
            "n_iter": self.n_iter,
            "residuals": [float(r) for r in self.residuals],
            "gaps": [float(g) for g in self.gaps],
            "degenerate_counts": [int(c) for c in self.degenerate_counts],
            "degenerate_total": int(sum(self.degenerate_counts)),
            "stages": self.stages,
            "rate_estimate": self.rate_estimate,
            "converged": self.converged,
        }


@dataclass
class AveragednessCertificate:
    epsilon: float
    alpha: float
    sample_count: int
    worst_ratio: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _project(s: ConstraintSet, x):
    res = s.project(x)
    return res.point, len(res.degenerate_pixels)


def _dr(pa: ConstraintSet, x, pbx):
    # P_A R_B x - P_B x + x, with P_B x supplied
    y, k = _project(pa, 2 * pbx - x)
    return y - pbx + x, k


def _two_set(spec: OperatorSpec, x):
    A, B = spec.sets
    beta = spec.beta
    pbx, k = _project(B, x)
    fam = spec.family
    if fam == "AP":
        out, k2 = _project(A, pbx)
    elif fam == "DR":
        out, k2 = _dr(A, x, pbx)
    elif fam == "KMDR":
        dr, k2 = _dr(A, x, pbx)
        out = beta * dr + (1 - beta) * x
    elif fam == "RAAR":
        dr, k2 = _dr(A, x, pbx)
        out = beta * dr + (1 - beta) * pbx
    elif fam == "HPR":
        y, k2 = _project(A, (1 + beta) * pbx - x)
        out = y - beta * pbx + x
    elif fam == "RRR":
        y, k2 = _project(A, 2 * pbx - x)
        out = beta * y - beta * pbx + x
    elif fam == "DRAP":
        y, k2 = _project(A, (1 + beta) * pbx - beta * x)
        out = y - beta * (pbx - x)
    else:  # pragma: no cover - guarded by OperatorSpec
        raise ValueError(fam)
    return out, pbx, k + k2


def _two_set_dr_like(fam, beta, A, B, x):
    pbx, k = _project(B, x)
    dr, k2 = _dr(A, x, pbx)
    if fam == "CRAAR":
        dr = beta * dr + (1 - beta) * pbx
    return dr, pbx, k + k2


def _cyclic(spec: OperatorSpec, x):
    sets = spec.sets
    q = len(sets)
    total = 0
    inner = None
    if spec.family == "CP":
        y = x
        for s in reversed(sets):
            y, k = _project(s, y)
            total += k
            if inner is None:
                inner = y
        return y, inner, total
    # T[S0,S1] T[S1,S2] ... T[Sm,S0]: rightmost factor acts first
    y = x
    for i in reversed(range(q)):
        y, pb, k = _two_set_dr_like(spec.family, spec.beta, sets[i], sets[(i + 1) % q], y)
        total += k
        if inner is None:
            inner = pb
    return y, inner, total


def step_full(spec: OperatorSpec, x):
    """One operator application; returns (x_next, inner projection of x, degenerate count)."""
    x = np.asarray(x)
    if spec.cyclic:
        return _cyclic(spec, x)
    return _two_set(spec, x)


def step(spec: OperatorSpec, x) -> np.ndarray:
    return step_full(spec, x)[0]


def iterate(
    spec: OperatorSpec,
    x0,
    max_iter: int,
    tol_residual: Optional[float] = None,
    store_iterates: bool = False,
    callback: Optional[Callable] = None,
) -> RunTrace:
    """Apply ``spec`` repeatedly.

    Stops after ``max_iter`` steps or once ``||x_{k+1} - x_k|| <= tol_residual``.
    Raises :class:`NumericalError` if an iterate turns non-finite.
    """
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")
    x = np.array(x0, dtype=complex)
    trace = RunTrace(x=x, iterates=[x.copy()] if store_iterates else None)
    for k in range(max_iter):
        x_next, pbx, ndeg = step_full(spec, x)
        if not np.all(np.isfinite(x_next)):
            raise NumericalError(f"{spec.family}: non-finite iterate at step {k + 1}")
        res = frobenius_norm(x_next - x)
        trace.gaps.append(frobenius_norm(x - pbx))
        trace.residuals.append(res)
        trace.degenerate_counts.append(ndeg)
        x = x_next
        if store_iterates:
            trace.iterates.append(x.copy())
        if callback is not None:
            callback(k, x, res)
        if tol_residual is not None and res <= tol_residual:
            trace.converged = True
            break
    trace.x = x
    trace.stages.append({"family": spec.family, "beta": spec.beta, "iterations": trace.n_iter})
    log.debug("%s: %d iterations, final residual %.3e", spec.family, trace.n_iter, trace.residuals[-1])
    return trace


def schedule_extrapolate_then_average(spec: OperatorSpec, x0, k1: int, k2: int, **kw) -> RunTrace:
    """``k1`` steps of ``spec`` followed by ``k2`` plain projection steps on the same sets."""
    if k1 < 0 or k2 < 0 or k1 + k2 < 1:
        raise ValueError("need k1, k2 >= 0 and at least one iteration")
    if k1 == 0:
        return iterate(spec.averaging_stage(), x0, k2, **kw)
    first = iterate(spec, x0, k1, **kw)
    if k2 == 0:
        return first
    second = iterate(spec.averaging_stage(), first.x, k2, **kw)
    return RunTrace(
        x=second.x,
        residuals=first.residuals + second.residuals,
        gaps=first.gaps + second.gaps,
        degenerate_counts=first.degenerate_counts + second.degenerate_counts,
        stages=first.stages + second.stages,
        iterates=None if first.iterates is None else first.iterates + second.iterates[1:],
        converged=second.converged,
    )


def extract_phase(x_final, ap: ApertureModel, with_flags: bool = False):
    """Phase of the Omega_0 pupil of the (block-averaged) iterate, in (-pi, pi] on the mask."""
    x = np.asarray(x_final)
    if x.ndim == 4:
        x = diagonal_average(x)
    z = omega0_pupil(ap, x)
    phase = np.angle(z)
    phase = np.where(phase <= -np.pi, phase + 2 * np.pi, phase)
    phase = np.where(ap.mask, phase, 0.0)
    if not with_flags:
        return phase
    flags = [tuple(int(v) for v in idx) for idx in np.argwhere(ap.mask & (z == 0))]
    return phase, flags


def check_almost_averaged(
    operator: Union[OperatorSpec, Callable],
    center,
    radius: float,
    samples: int,
    alpha: float,
    seed: int = 0,
) -> AveragednessCertificate:
    """Smallest violation making the almost-averagedness inequality hold on sampled pairs.

    Pairs ``(y, z)`` are drawn uniformly in radius from the ball around
    ``center``. For each pair the inequality

        ||z+ - y+||^2 <= (1 + eps) ||z - y||^2 - (1 - alpha)/alpha ||(z+ - z) - (y+ - y)||^2

    is solved for the least ``eps >= 0``; the maximum over pairs is returned.
    ``worst_ratio`` is the largest left/right ratio at that ``eps`` (<= 1).
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    T = (lambda x: step(operator, x)) if isinstance(operator, OperatorSpec) else operator
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=complex)
    kappa = (1 - alpha) / alpha

    def draw():
        d = rng.standard_normal(center.shape) + 1j * rng.standard_normal(center.shape)
        return center + radius * rng.uniform() * d / frobenius_norm(d)

    quotients = []
    for _ in range(samples):
        y, z = draw(), draw()
        yp, zp = T(y), T(z)
        d2 = frobenius_norm(z - y) ** 2
        lhs = frobenius_norm(zp - yp) ** 2 + kappa * frobenius_norm((zp - z) - (yp - y)) ** 2
        quotients.append(lhs / d2 if d2 > 0 else 0.0)
    scale = max(max(quotients), 1.0)
    return AveragednessCertificate(
        epsilon=scale - 1.0,
        alpha=alpha,
        sample_count=samples,
        worst_ratio=max(q / scale for q in quotients),
    )


def fit_log_linear(values: Sequence[float]):
    """Least-squares line through log(values); returns (rate, r_squared) or None."""
    v = np.asarray(values, dtype=float)
    v = v[v > 0]
    if len(v) < 2:
        return None
    k = np.arange(len(v), dtype=float)
    logs = np.log(v)
    slope, intercept = np.polyfit(k, logs, 1)
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    if ss_tot == 0.0:
        return float(np.exp(slope)), 0.0
    ss_res = float(np.sum((logs - (slope * k + intercept)) ** 2))
    return float(np.exp(slope)), 1.0 - ss_res / ss_tot


def estimate_linear_rate(trace, burn_in: int = 0, min_r2: float = 0.9) -> Optional[float]:
    """Linear convergence rate c fitted to the residual sequence, or None.

    ``trace`` is a :class:`RunTrace` or a plain residual sequence. None is
    returned for fewer than 10 residuals, a poor fit (R^2 < ``min_r2``), or
    a non-contracting fit (c >= 1).
    """
    res = trace.residuals if isinstance(trace, RunTrace) else list(trace)
    res = res[burn_in:]
    if len(res) < 10:
        return None
    fit = fit_log_linear(res)
    if fit is None:
        return None
    rate, r2 = fit
    if r2 < min_r2 or not 0 < rate < 1:
        return None
    return rate
