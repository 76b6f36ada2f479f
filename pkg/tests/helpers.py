"""Feasible-point samplers and residuals shared by the projector tests."""
import numpy as np

from vecpr import projectors as P
from vecpr.field import duplicate, random_field
from vecpr.harness import generate_phase, simulate_stack
from vecpr.optics import build_aperture, diversity_stack, embed_pupil


def unit_directions(rng, shape):
    d = random_field(rng, shape)
    return d / np.sqrt(np.sum(np.abs(d) ** 2, axis=0))


def sphere_residual(r, z):
    return float(np.max(np.abs(np.sum(np.abs(z) ** 2, axis=0) - r)))


class Suite:
    """Every projector on an ``n`` x ``n`` grid with ``m`` diversity images.

    ``cases`` maps a name to (project, residual, sampler, input_shape) where
    ``sampler(rng, anchor)`` returns a feasible point, near ``anchor`` when
    it is given.
    """

    def __init__(self, n=8, m=2, seed=0):
        rng = np.random.default_rng(seed)
        self.ap = ap = build_aperture(n, 0.95)
        phase = generate_phase(ap, seed=seed)
        div, _ = diversity_stack(ap, m)
        ms = simulate_stack(ap, phase, div)
        self.ms = ms
        self.omegas = omegas = P.data_sets(ms.intensities, ms.diversities)
        self.amp = amp = ms.field_scale * ap.amplitude
        self.m = m
        r0 = ms.intensities[0]
        # a strictly positive sphere radius map keeps the sphere sampler honest
        self.r_s = r_s = r0 + 0.1 * r0.max() * rng.uniform(size=r0.shape)
        field = (6, n, n)
        A, Achi, D = P.set_A(ap), P.set_A_chi(ap, amp), P.Diagonal()
        B = P.set_B(omegas)
        chi = P.Chi(ap, amp)

        def near_scale(rng, x, eps):
            return x + eps * random_field(rng, x.shape)

        def s_sample(rng, anchor=None, r=r_s):
            if anchor is None:
                return np.sqrt(r) * unit_directions(rng, field)
            d = near_scale(rng, anchor, 0.05 * np.sqrt(r.max()))
            return np.sqrt(r) * d / np.sqrt(np.sum(np.abs(d) ** 2, axis=0))

        def od_sample(k):
            def sample(rng, anchor=None):
                a = None if anchor is None else P.apply_M(omegas[k].diversity, anchor)
                return P.apply_M_inv(omegas[k].diversity, s_sample(rng, a, ms.intensities[k]))
            return sample

        def o0_sample(rng, anchor=None):
            if anchor is None:
                return embed_pupil(ap, random_field(rng, (n, n)))
            z = P.omega0_pupil(ap, anchor)
            return embed_pupil(ap, z + 0.05 * random_field(rng, (n, n)))

        def chi_sample(rng, anchor=None):
            if anchor is None:
                psi = rng.uniform(-np.pi, np.pi, (n, n))
            else:
                psi = np.angle(P.omega0_pupil(ap, anchor)) + 0.1 * rng.standard_normal((n, n))
            return embed_pupil(ap, amp * np.exp(1j * psi))

        def lift(sampler, p):
            def sample(rng, anchor=None):
                return duplicate(sampler(rng, None if anchor is None else anchor.mean(axis=0)), p)
            return sample

        def d_sample(rng, anchor=None):
            if anchor is None:
                return duplicate(random_field(rng, field), m)
            return duplicate(anchor.mean(axis=0) + 0.05 * random_field(rng, field), m)

        def b_sample(rng, anchor=None):
            return np.stack([od_sample(k)(rng, None if anchor is None else anchor[k]) for k in range(m)])

        self.cases = {
            "P_S": (lambda z: P.project_S(r_s, z).point, lambda z: sphere_residual(r_s, z), s_sample, field),
            "P_Omega_d": (lambda x: omegas[0].project(x).point, omegas[0].residual, od_sample(0), field),
            "P_Omega_0": (lambda x: P.project_Omega_0(ap, x), P.Omega0(ap).residual, o0_sample, field),
            "P_chi": (lambda x: chi.project(x).point, chi.residual, chi_sample, field),
            "P_A": (lambda u: A.project(u).point, A.residual, lift(o0_sample, m), (m,) + field),
            "P_A_chi": (lambda u: Achi.project(u).point, Achi.residual, lift(chi_sample, m), (m,) + field),
            "P_D": (lambda u: D.project(u).point, D.residual, d_sample, (m,) + field),
            "P_B": (lambda u: B.project(u).point, B.residual, b_sample, (m,) + field),
        }


def check_projector(case, rng, samples=1000, points=3):
    """Worst idempotence error, feasibility residual and distance-minimality slack."""
    project, residual, sampler, shape = case
    worst_idem = worst_res = worst_slack = 0.0
    for _ in range(points):
        x = 0.5 * random_field(rng, shape)
        px = project(x)
        worst_idem = max(worst_idem, np.linalg.norm(project(px) - px) / (1 + np.linalg.norm(px)))
        worst_res = max(worst_res, residual(px))
        dist = np.linalg.norm(x - px)
        for k in range(samples):
            w = sampler(rng, px if k % 2 else None)
            worst_slack = max(worst_slack, dist - np.linalg.norm(x - w))
    return worst_idem, worst_res, worst_slack
