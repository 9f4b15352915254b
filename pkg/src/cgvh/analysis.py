"""Line-by-line evaluation of the detector-distance bound for a passive stack.

For inputs ``psi0``, ``phi0`` and detector fields ``psi = M psi0``,
``phi = M phi0`` the chain is::

    sum_{j,p} |psi^2 - phi^2|
      = sum_{j,p} |psi - phi| |psi + phi|
     <= ||psi - phi|| ||psi + phi||              (Cauchy-Schwarz)
      = ||M(psi0 - phi0)|| ||M(psi0 + phi0)||    (linearity)
     <= ||psi0 - phi0|| ||psi0 + phi0||          (contraction)
     <= ||psi0 - phi0|| (||psi0|| + ||phi0||)    (triangle inequality)

with ``p`` running over real and imaginary parts.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .classify import _noise_rng
from .errors import ShapeMismatch
from .field import AmplitudeField, l2_norm, normalize, tvd_component
from .optics import _forward_array

__all__ = [
    "BoundReport",
    "bound_chain",
    "cauchy_schwarz_check",
    "contraction_step_check",
    "ContractionStep",
    "PdpRow",
    "pdp_scan",
    "SLACK_RTOL",
]

SLACK_RTOL = 1e-12
UNIT_TOL = 1e-12
LINE_NAMES = ("cauchy_schwarz", "contraction", "triangle")


def _components(z):
    return np.concatenate([z.real.ravel(), z.imag.ravel()])


@dataclass(frozen=True)
class BoundReport:
    tvd: float
    factored_sum: float
    cauchy_schwarz_rhs: float
    linear_rhs: float
    contraction_rhs: float
    triangle_rhs: float
    normalized_bound: float | None
    slack_per_line: tuple

    @property
    def line_magnitudes(self):
        """Larger side of each inequality, used to scale its slack tolerance."""
        return (self.cauchy_schwarz_rhs, self.contraction_rhs, self.triangle_rhs)

    @property
    def relative_slacks(self):
        return tuple(
            s / m if m > 0 else 0.0 for s, m in zip(self.slack_per_line, self.line_magnitudes)
        )

    @property
    def equality_residuals(self):
        """Deviation of the two steps that are identities, not inequalities."""
        return (abs(self.tvd - self.factored_sum), abs(self.cauchy_schwarz_rhs - self.linear_rhs))

    def holds(self, rtol=SLACK_RTOL):
        return all(
            s >= -rtol * m for s, m in zip(self.slack_per_line, self.line_magnitudes)
        )


def bound_chain(stack, psi0, phi0):
    """Evaluate every expression of the chain for one input pair."""
    if psi0.grid_side != phi0.grid_side:
        raise ShapeMismatch("input grids differ")
    if psi0.grid_side != stack.grid_side:
        raise ShapeMismatch("input grid does not match stack")
    pair = np.stack([psi0.data, phi0.data])
    psi, phi = _forward_array(stack, pair)
    diff_out = _components(psi - phi)
    sum_out = _components(psi + phi)

    tvd = tvd_component(AmplitudeField(psi), AmplitudeField(phi))
    factored = float(np.sum(np.abs(diff_out) * np.abs(sum_out)))
    cs_rhs = float(np.linalg.norm(diff_out) * np.linalg.norm(sum_out))

    d0 = psi0.data - phi0.data
    s0 = psi0.data + phi0.data
    md, ms = _forward_array(stack, np.stack([d0, s0]))
    linear_rhs = float(np.linalg.norm(md) * np.linalg.norm(ms))
    nd0 = float(np.linalg.norm(d0))
    contraction_rhs = nd0 * float(np.linalg.norm(s0))
    npsi, nphi = l2_norm(psi0), l2_norm(phi0)
    triangle_rhs = nd0 * (npsi + nphi)

    normalized = None
    if abs(npsi - 1) <= UNIT_TOL and abs(nphi - 1) <= UNIT_TOL:
        normalized = 2.0 * nd0

    slacks = (
        cs_rhs - tvd,
        contraction_rhs - linear_rhs,
        triangle_rhs - contraction_rhs,
    )
    return BoundReport(
        tvd=tvd,
        factored_sum=factored,
        cauchy_schwarz_rhs=cs_rhs,
        linear_rhs=linear_rhs,
        contraction_rhs=contraction_rhs,
        triangle_rhs=triangle_rhs,
        normalized_bound=normalized,
        slack_per_line=slacks,
    )


def cauchy_schwarz_check(u, v):
    """``(lhs, rhs, slack)`` for ``sum |u_jp| |v_jp| <= ||u|| ||v||``."""
    if u.grid_side != v.grid_side:
        raise ShapeMismatch("grids differ")
    cu = np.abs(_components(u.data))
    cv = np.abs(_components(v.data))
    lhs = float(np.sum(cu * cv))
    rhs = float(np.linalg.norm(cu) * np.linalg.norm(cv))
    return lhs, rhs, rhs - lhs


@dataclass(frozen=True)
class ContractionStep:
    pre_norms: tuple
    post_norms: tuple
    slacks: tuple

    def holds(self, rtol=SLACK_RTOL):
        return all(s >= -rtol * max(p, 1.0) for s, p in zip(self.slacks, self.pre_norms))


def contraction_step_check(stack, psi0, phi0):
    """Compare ``||M(psi0 -/+ phi0)||`` with ``||psi0 -/+ phi0||``."""
    if psi0.grid_side != phi0.grid_side:
        raise ShapeMismatch("input grids differ")
    pre = np.stack([psi0.data - phi0.data, psi0.data + phi0.data])
    post = _forward_array(stack, pre)
    pre_n = tuple(float(np.linalg.norm(x)) for x in pre)
    post_n = tuple(float(np.linalg.norm(x)) for x in post)
    return ContractionStep(pre_n, post_n, tuple(a - b for a, b in zip(pre_n, post_n)))


@dataclass(frozen=True)
class PdpRow:
    epsilon: float
    input_l2_distance: float
    tvd: float
    bound: float
    detect_fraction: float
    detectable: bool


def _detect_trial(clean_psi, clean_phi, regions, noise_sigma, floor, seed):
    a, b = clean_psi, clean_phi
    if noise_sigma > 0:
        a = a + _noise_rng(seed + [0]).normal(0.0, noise_sigma, a.size)
        b = b + _noise_rng(seed + [1]).normal(0.0, noise_sigma, b.size)
    diff = np.abs(regions.mask @ (a - b))
    return bool(np.any(diff > floor))


def pdp_scan(
    stack,
    base,
    direction,
    epsilons,
    regions,
    noise_sigma=0.0,
    trials=200,
    seed=0,
    threshold=2.0,
    threads=1,
):
    """Scan perturbation size and report distance, bound and detectability.

    For each ``eps`` the comparison pattern is ``normalize(base + eps*direction)``.
    A trial counts as a detection when some region's noisy readout differs
    between the two patterns by more than ``threshold`` standard deviations of
    that difference (two independent readouts, so ``sigma * sqrt(2 m)`` for an
    ``m``-pixel region); ``detectable`` is a majority of trials.
    """
    if base.grid_side != stack.grid_side or direction.grid_side != stack.grid_side:
        raise ShapeMismatch("field grids do not match stack")
    sizes = regions.sizes.astype(np.float64)
    psi_out = _forward_array(stack, base.data).ravel()
    clean_psi = psi_out.real ** 2 + psi_out.imag ** 2
    rows = []
    for i, eps in enumerate(epsilons):
        eps = float(eps)
        if eps < 0:
            raise ValueError("epsilons must be non-negative")
        phi0 = base if eps == 0 else normalize(base.with_data(base.data + eps * direction.data))
        report = bound_chain(stack, base, phi0)
        phi_out = _forward_array(stack, phi0.data).ravel()
        clean_phi = phi_out.real ** 2 + phi_out.imag ** 2
        scale = max(1.0, float(np.max(regions.mask @ clean_psi)))
        floor = threshold * noise_sigma * np.sqrt(2.0 * sizes) + 64 * np.finfo(float).eps * scale

        def trial(t, i=i, clean_phi=clean_phi, floor=floor):
            return _detect_trial(clean_psi, clean_phi, regions, noise_sigma, floor, [seed, i, t])

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                hits = list(pool.map(trial, range(trials)))
        else:
            hits = [trial(t) for t in range(trials)]
        frac = sum(hits) / trials if trials else 0.0
        bound = report.normalized_bound if report.normalized_bound is not None else report.triangle_rhs
        rows.append(
            PdpRow(
                epsilon=eps,
                input_l2_distance=float(np.linalg.norm(base.data - phi0.data)),
                tvd=report.tvd,
                bound=bound,
                detect_fraction=frac,
                detectable=frac > 0.5,
            )
        )
    return rows
