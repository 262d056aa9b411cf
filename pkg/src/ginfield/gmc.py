"""Radial mollifiers, mesoscopic smoothed fields, and subcritical GMC.

The mollifier is the analytic bump c * exp(-1 / (1 - (s/eps0)^2)) on
[0, eps0]. Its log-potential psi_eps(z) = (log|.| * phi_eps)(z) is radial
and piecewise analytic; by Newton's theorem it reduces to one-dimensional
profiles that are tabulated once per mollifier:

    M(s)  = mass of phi within radius s            (cum_mass)
    DP(s) = psi_1 at radius s minus log s          (nonnegative, 0 beyond eps0)

so psi_eps(z) = log eps + log r + DP(r), r = |z|/eps, and the identity
psi_eps(z) = log|z| for |z| >= eps*eps0 holds exactly by construction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gammaln

from .field import FieldSample, Grid, TestFunction, equilibrium_potential
from .report import ExperimentReport
from .sampler import EigenSample

__all__ = [
    "RadialMollifier",
    "psi_eps",
    "conv_equilibrium",
    "smoothed_field_at",
    "g_field_at",
    "smoothed_field_grid",
    "g_field_grid",
    "covariance_prediction",
    "g_variance",
    "g_test_function",
    "MollifierCombination",
    "gmc_measure",
    "smoothed_max_scan",
    "GAMMA_STAR",
]

GAMMA_STAR = math.sqrt(8.0)

_TABLE_POINTS = 4096
_LOG_SPAN = 20.0  # radius table covers [eps0 * e^-20, eps0]


@lru_cache(maxsize=8)
def _gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _panel_integrals(f, lo: np.ndarray, hi: np.ndarray, order: int = 8) -> np.ndarray:
    """Gauss-Legendre integral of f over each [lo_i, hi_i]."""
    x, w = _gauss(order)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    nodes = mid[:, None] + half[:, None] * x[None, :]
    return half * (f(nodes) @ w)


class RadialMollifier:
    """Radial bump density phi on [0, eps0] plus its potential tables.

    Attributes:
        eps0: support radius, in (0, 1/4].
        radii: log-spaced radius table.
        profile: phi sampled on ``radii``.
        cum_mass: M sampled on ``radii`` (nondecreasing, 0 to 1).
        norm_const: normalization c of the bump.
        c1: int_0^eps0 s (1 - M(s)) ds, the equilibrium convolution shift:
            (varphi * phi_eps)(z) = varphi(z) + eps^2 c1 deep inside the disk.
    """

    def __init__(self, eps0: float = 0.25):
        if not 0.0 < eps0 <= 0.25:
            raise ValueError(f"eps0 must lie in (0, 1/4], got {eps0}")
        self.eps0 = float(eps0)
        u = np.linspace(math.log(eps0) - _LOG_SPAN, math.log(eps0), _TABLE_POINTS)
        s = np.exp(u)
        self._u_min = float(u[0])
        self._s_min = float(s[0])

        def raw_bump(x):
            with np.errstate(divide="ignore", over="ignore"):
                t = 1.0 - (x / eps0) ** 2
                return np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)

        # cumulative radial mass of the unnormalized bump, in u = log s
        def mass_integrand(uu):
            ss = np.exp(uu)
            return 2.0 * np.pi * ss * ss * raw_bump(ss)

        below = np.pi * self._s_min**2 * raw_bump(np.array([0.0]))[0]
        panels = _panel_integrals(mass_integrand, u[:-1], u[1:])
        raw_mass = below + np.concatenate([[0.0], np.cumsum(panels)])
        total = raw_mass[-1]
        self.norm_const = float(1.0 / total)
        mass = raw_mass / total
        self._mass_spline = CubicSpline(
            u, mass,
            bc_type=((1, float(mass_integrand(np.array([u[0]]))[0] / total)), (1, 0.0)),
        )
        self.radii = s
        self.cum_mass = mass
        self.profile = self.norm_const * raw_bump(s)

        # DP(u) = int_u^{u_max} (1 - M) du', accumulated from the top
        dp_panels = _panel_integrals(lambda uu: 1.0 - self._mass_spline(uu), u[:-1], u[1:])
        dp = np.concatenate([np.cumsum(dp_panels[::-1])[::-1], [0.0]])
        self._dp_spline = CubicSpline(
            u, dp, bc_type=((1, -(1.0 - mass[0])), (1, 0.0))
        )
        self._dp_min = float(dp[0])

        # c1 = int s(1 - M) ds; the below-table piece is s_min^2 / 2 exactly
        c1_panels = _panel_integrals(
            lambda uu: np.exp(2.0 * uu) * (1.0 - self._mass_spline(uu)), u[:-1], u[1:]
        )
        self.c1 = float(c1_panels.sum() + 0.5 * self._s_min**2)
        # psi_1(0) = log s + DP(s) continued to s = 0
        self.p0 = self._dp_min + self._u_min

    def density(self, s) -> np.ndarray:
        """phi(s), the normalized bump."""
        s = np.asarray(s, dtype=np.float64)
        with np.errstate(divide="ignore", over="ignore"):
            t = 1.0 - (s / self.eps0) ** 2
            out = np.where(
                t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)) * self.norm_const, 0.0
            )
        return out

    def mass(self, s) -> np.ndarray:
        """M(s): phi-mass of the disk of radius s."""
        s = np.asarray(s, dtype=np.float64)
        out = np.ones_like(s)
        tiny = s <= self._s_min
        mid = (~tiny) & (s < self.eps0)
        if mid.any():
            out[mid] = np.clip(self._mass_spline(np.log(s[mid])), 0.0, 1.0)
        if tiny.any():
            out[tiny] = self.cum_mass[0] * (s[tiny] / self._s_min) ** 2
        return out

    def dp(self, s) -> np.ndarray:
        """DP(s) = psi_1(s e_1) - log s; zero for s >= eps0."""
        s = np.asarray(s, dtype=np.float64)
        out = np.zeros_like(s)
        tiny = (s > 0) & (s <= self._s_min)
        mid = (s > self._s_min) & (s < self.eps0)
        if mid.any():
            out[mid] = np.maximum(self._dp_spline(np.log(s[mid])), 0.0)
        if tiny.any():
            out[tiny] = self._dp_min + (self._u_min - np.log(s[tiny]))
        out[s == 0] = np.inf
        return out

    def potential_profile(self, s) -> np.ndarray:
        """psi_1 at radius s: log s + DP(s), finite at s = 0."""
        s = np.asarray(s, dtype=np.float64)
        out = np.empty_like(s)
        pos = s > 0
        with np.errstate(divide="ignore"):
            out[pos] = np.log(s[pos]) + self.dp(s[pos])
        out[~pos] = self.p0
        return out


def psi_eps(m: RadialMollifier, eps: float, z) -> np.ndarray | float:
    """Mollified log-modulus: (log|.| * phi_eps)(z).

    Radial, smooth, equals log|z| exactly for |z| >= eps * eps0, and obeys
    the scaling psi_eps(z) = log eps + psi_1(z / eps).
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    z = np.asarray(z, dtype=np.complex128)
    out = math.log(eps) + m.potential_profile(np.abs(z) / eps)
    return float(out) if out.ndim == 0 else out


def _ring_average(m: RadialMollifier, rho: float, s: np.ndarray) -> np.ndarray:
    """Mean of equilibrium_potential over the circle |y - rho| = s when the
    circle straddles the unit circle."""
    c = rho * rho + s * s - 1.0
    ct = np.clip(c / (2.0 * rho * s), -1.0, 1.0)
    th = np.arccos(ct)
    inner = (c * th - 2.0 * rho * s * np.sin(th)) / (2.0 * np.pi)
    x, w = _gauss(64)
    mid = 0.5 * (th + np.pi)
    half = 0.5 * (np.pi - th)
    ang = mid[:, None] + half[:, None] * x[None, :]
    r2 = rho * rho + s[:, None] ** 2 - 2.0 * rho * s[:, None] * np.cos(ang)
    outer = half / np.pi * (0.5 * np.log(r2) @ w)
    return inner + outer


def _conv_eq_scalar(m: RadialMollifier, eps: float, rho: float) -> float:
    reach = eps * m.eps0
    if rho <= 1.0 - reach:
        return 0.5 * (rho * rho - 1.0) + eps * eps * m.c1
    if rho >= 1.0 + reach:
        return math.log(rho)
    vstar = min(abs(1.0 - rho) / eps, m.eps0)
    x, w = _gauss(64)
    total = 0.0
    if vstar > 0:
        v = 0.5 * vstar * (x + 1.0)
        wv = 0.5 * vstar * w
        dens = 2.0 * np.pi * v * m.density(v)
        if rho < 1.0:
            a_closed = 0.5 * (rho * rho + (eps * v) ** 2 - 1.0)
        else:
            a_closed = np.full_like(v, math.log(rho))
        total += float(np.sum(wv * dens * a_closed))
    if vstar < m.eps0:
        # sqrt grading absorbs the |v - vstar|^(3/2) kink at the tangency
        t = 0.5 * (x + 1.0)
        wt = 0.5 * w
        span = m.eps0 - vstar
        v = vstar + span * t * t
        jac = 2.0 * span * t
        dens = 2.0 * np.pi * v * m.density(v)
        avg = _ring_average(m, rho, eps * v)
        total += float(np.sum(wt * jac * dens * avg))
    return total


def conv_equilibrium(m: RadialMollifier, eps: float, z) -> np.ndarray | float:
    """(equilibrium_potential * phi_eps)(z).

    Equals varphi(z) + eps^2 c1 for |z| <= 1 - eps*eps0 and log|z| for
    |z| >= 1 + eps*eps0; in the straddling ring a split radial-angular
    quadrature handles the C^1 seam of the potential (error <= 1e-8).
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    z = np.asarray(z, dtype=np.complex128)
    rho = np.abs(z)
    out = np.empty(rho.shape, dtype=np.float64)
    reach = eps * m.eps0
    deep = rho <= 1.0 - reach
    far = rho >= 1.0 + reach
    out[deep] = 0.5 * (rho[deep] ** 2 - 1.0) + eps * eps * m.c1
    with np.errstate(divide="ignore"):
        out[far] = np.log(np.maximum(rho[far], 1e-300))
    ring = ~(deep | far)
    for idx in np.argwhere(ring):
        out[tuple(idx)] = _conv_eq_scalar(m, eps, float(rho[tuple(idx)]))
    return float(out) if out.ndim == 0 else out


def smoothed_field_at(
    sample: EigenSample, m: RadialMollifier, eps: float, z: complex
) -> float:
    """X(psi_eps(. - z)) = sum_j psi_eps(z - lambda_j) - N (phi_eps * varphi)(z).

    Exact pointwise evaluation, O(N); no grid discretization enters.
    """
    if not sample.angles_valid:
        raise ValueError("sample carries radii only; angular data required")
    d = np.abs(z - sample.points)
    terms = math.log(eps) + m.potential_profile(d / eps)
    conv = conv_equilibrium(m, eps, z)
    return float(terms.sum() - sample.n * conv)


def g_field_at(
    sample: EigenSample, m: RadialMollifier, eps: float, z: complex
) -> float:
    """Mesoscopic-minus-macroscopic smoothing: the statistic of the test
    function psi_eps(. - z) - psi_1(. - z), compactly supported in
    D(z, eps0). Zero identically when eps = 1."""
    if eps == 1.0:
        return 0.0
    return smoothed_field_at(sample, m, eps, z) - smoothed_field_at(
        sample, m, 1.0, z
    )


def _dp_sum_grid(
    points: np.ndarray, m: RadialMollifier, scale: float, grid: Grid
) -> np.ndarray:
    """sum_j DP(|z - lambda_j| / scale) over grid nodes; only eigenvalues
    within scale*eps0 of a node contribute."""
    zz = grid.nodes().ravel()
    reach = scale * m.eps0
    rmax = float(np.abs(zz).max()) + reach
    sub = points[np.abs(points) <= rmax]
    acc = np.zeros(zz.size)
    for k0 in range(0, sub.size, 256):
        chunk = sub[k0 : k0 + 256]
        d = np.abs(zz[:, None] - chunk[None, :])
        near = d < reach
        if near.any():
            contrib = np.zeros_like(d)
            contrib[near] = m.dp(d[near] / scale)
            acc += contrib.sum(axis=1)
    return acc.reshape(grid.ny, grid.nx)


def smoothed_field_grid(
    sample: EigenSample, m: RadialMollifier, eps: float, grid: Grid
) -> FieldSample:
    """Whole-grid fast path for smoothed_field_at.

    Uses psi_eps(d) = log d + DP(d / eps): the log part is the raw field
    sum and the DP correction involves only near pairs, so the result is
    exact (it matches the pointwise path to rounding, far below the 1e-3
    audit tolerance)."""
    from .field import _log_abs_prod_sq  # shared running-product kernel

    if not sample.angles_valid:
        raise ValueError("sample carries radii only; angular data required")
    zz = grid.nodes()
    flat = zz.ravel()
    logsum, _ = _log_abs_prod_sq(
        flat.real.copy(), flat.imag.copy(), sample.points.real, sample.points.imag
    )
    vals = 0.5 * logsum.reshape(grid.ny, grid.nx)
    vals += _dp_sum_grid(sample.points, m, eps, grid)
    vals -= sample.n * np.asarray(conv_equilibrium(m, eps, zz), dtype=np.float64)
    return FieldSample(
        grid=grid, values=vals, n=sample.n, seed=sample.seed,
        quantity="smoothed-psi", clamp_count=0, source=sample,
    )


def g_field_grid(
    sample: EigenSample, m: RadialMollifier, eps: float, grid: Grid
) -> FieldSample:
    """Whole-grid fast path for g_field_at; the log parts cancel exactly,
    leaving near-pair DP differences and a constant equilibrium shift."""
    if not sample.angles_valid:
        raise ValueError("sample carries radii only; angular data required")
    zz = grid.nodes()
    vals = _dp_sum_grid(sample.points, m, eps, grid) - _dp_sum_grid(
        sample.points, m, 1.0, grid
    )
    conv_diff = np.asarray(
        conv_equilibrium(m, eps, zz), dtype=np.float64
    ) - np.asarray(conv_equilibrium(m, 1.0, zz), dtype=np.float64)
    vals -= sample.n * conv_diff
    return FieldSample(
        grid=grid, values=vals, n=sample.n, seed=sample.seed,
        quantity="g-field", clamp_count=0, source=sample,
    )


def covariance_prediction(
    m: RadialMollifier, eps1: float, eps2: float, z1: complex, z2: complex
) -> float:
    """-1/2 * int psi_{eps2}(z1 - z2 - y) phi_{eps1}(y) d^2y.

    The limiting covariance of the smoothed fields: approximately
    1/2 * log(|z1-z2|^-1 ^ eps1^-1 ^ eps2^-1) + O(1), and exactly
    -1/2 log|z1 - z2| once |z1 - z2| >= eps1*eps0 + eps2*eps0.
    """
    for e in (eps1, eps2):
        if not 0.0 < e <= 1.0:
            raise ValueError(f"eps must lie in (0, 1], got {e}")
    rho = abs(z1 - z2)
    if rho >= eps1 * m.eps0 + eps2 * m.eps0:
        return -0.5 * math.log(rho)
    x, w = _gauss(96)
    v = 0.5 * m.eps0 * (x + 1.0)
    wv = 0.5 * m.eps0 * w
    dens = 2.0 * np.pi * v * m.density(v)
    th = 2.0 * np.pi * np.arange(256) / 256.0
    s = eps1 * v
    d = np.sqrt(
        np.maximum(
            rho * rho + s[:, None] ** 2 - 2.0 * rho * s[:, None] * np.cos(th)[None, :],
            0.0,
        )
    )
    prof = math.log(eps2) + m.potential_profile(d / eps2)
    b = prof.mean(axis=1)
    return -0.5 * float(np.sum(wv * dens * b))


def g_variance(m: RadialMollifier, eps: float) -> float:
    """Limit variance Sigma^2 of the g-field statistic at scale eps:
    (1/2) * int (M(r/eps) - M(r))^2 dr / r, which grows like
    (1/2) log(1/eps). Independent of the center deep inside the disk."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    lo = math.log(eps * m.eps0) - 12.0
    hi = math.log(m.eps0)
    edges = np.linspace(lo, hi, 81)

    def integrand(u):
        r = np.exp(u)
        return (m.mass(r / eps) - m.mass(r)) ** 2

    return 0.5 * float(_panel_integrals(integrand, edges[:-1], edges[1:], order=12).sum())


def g_test_function(
    m: RadialMollifier, eps: float, z0: complex, grid: Grid, scale: float = 1.0
) -> TestFunction:
    """Grid-backed f = scale * (psi_eps(. - z0) - psi_1(. - z0)) with its
    exact Laplacian scale * 2 pi (phi_eps - phi_1)(. - z0).

    With scale = 1/4 the function satisfies int |Delta f| / pi <= 1, the
    normalization of the concentration class."""
    zz = grid.nodes()
    d = np.abs(zz - z0)
    vals = scale * (
        (math.log(eps) + m.potential_profile(d / eps)) - m.potential_profile(d)
    )
    lap = scale * 2.0 * np.pi * (m.density(d / eps) / eps**2 - m.density(d))
    return TestFunction(
        grid=grid, values=vals, laplacian=lap,
        label=f"g-test eps={eps:g} z0={z0:g}",
    )


class MollifierCombination:
    """Finite combination g = sum_k gamma_k (psi_{eps_k} - psi_1)(. - z_k),
    the class of smooth compactly supported perturbations used by the
    weighted-polynomial kernels.

    Each term is radial about its center, supported in D(z_k, eps0), and
    real-analytic except on the support boundary, so all Wirtinger
    derivatives d^i g exist. They take the product form
    d^i g = H_k^(i)(s) * conj(u)^i with s = |u|^2, u = z - z_k, where
    H_k'(s) = gamma_k (M(sqrt(s)/eps_k) - M(sqrt(s))) / (2 s) is exact;
    higher orders differentiate H' by Richardson-extrapolated central
    differences, which is ample for the Taylor-remainder role they play.
    """

    def __init__(self, m: RadialMollifier,
                 terms: list[tuple[float, float, complex]]):
        """terms: (gamma, eps, center) triples; each center must satisfy
        |z_k| + eps0 <= 1/2 so that g is supported inside D_{1/2}."""
        if not terms:
            raise ValueError("need at least one (gamma, eps, center) term")
        self.m = m
        self.terms = []
        for gamma, eps, z0 in terms:
            if not 0.0 < eps <= 1.0:
                raise ValueError(f"eps must lie in (0, 1], got {eps}")
            if abs(z0) + m.eps0 > 0.5 + 1e-12:
                raise ValueError(
                    f"center {z0} too far out: need |center| + eps0 <= 1/2"
                )
            self.terms.append((float(gamma), float(eps), complex(z0)))

    def value(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.complex128)
        out = np.zeros(z.shape, dtype=np.float64)
        for gamma, eps, z0 in self.terms:
            r = np.maximum(np.abs(z - z0), 1e-300)
            # log parts cancel exactly: psi_eps - psi_1 = DP(r/eps) - DP(r)
            out += gamma * (self.m.dp(r / eps) - self.m.dp(r))
        return out

    __call__ = value

    def _h_prime(self, gamma: float, eps: float, s: np.ndarray) -> np.ndarray:
        s = np.maximum(s, 1e-300)
        r = np.sqrt(s)
        return gamma * (self.m.mass(r / eps) - self.m.mass(r)) / (2.0 * s)

    def _h_deriv(self, gamma: float, eps: float, s: float, order: int) -> float:
        """order-th derivative of H (order >= 1); order 1 is exact."""
        if order == 1:
            return float(self._h_prime(gamma, eps, np.asarray(s)))
        mth = order - 1  # differentiate H' this many times
        scale = (eps * self.m.eps0) ** 2
        h = scale * 1e-16 ** (1.0 / (mth + 4))

        def stencil(step: float) -> float:
            k = np.arange(mth + 1.0)
            signs = (-1.0) ** k
            binom = np.exp(gammaln(mth + 1) - gammaln(k + 1) - gammaln(mth - k + 1))
            if s - 0.5 * mth * step > 0:
                pts = s + (0.5 * mth - k) * step
            else:  # forward stencil near s = 0
                pts = s + (mth - k) * step
            vals = self._h_prime(gamma, eps, pts)
            return float(np.sum(signs * binom * vals)) / step**mth

        d1, d2 = stencil(h), stencil(0.5 * h)
        if s - 0.5 * mth * h > 0:
            return (4.0 * d2 - d1) / 3.0  # central: O(h^2) -> O(h^4)
        return 2.0 * d2 - d1  # forward: O(h) -> O(h^2)

    def wirtinger(self, z, order: int):
        """d^order g at z (d = Wirtinger d/dz), order >= 1.

        Order 1 is exact and vectorized; higher orders are per-point."""
        if order < 1:
            raise ValueError("order must be >= 1")
        z = np.asarray(z, dtype=np.complex128)
        if order == 1:
            out = np.zeros(z.shape, dtype=np.complex128)
            for gamma, eps, z0 in self.terms:
                u = z - z0
                s = u.real**2 + u.imag**2
                inside = s < self.m.eps0**2
                if inside.any():
                    hp = self._h_prime(gamma, eps, np.where(inside, s, 1.0))
                    out += np.where(inside, hp, 0.0) * np.conj(u)
            return out if out.ndim else complex(out)
        if z.ndim:
            return np.array([self.wirtinger(p, order) for p in z.ravel()]
                            ).reshape(z.shape)
        zz = complex(z)
        out = 0.0 + 0.0j
        for gamma, eps, z0 in self.terms:
            u = zz - z0
            s = abs(u) ** 2
            if s >= self.m.eps0**2:
                continue
            out += self._h_deriv(gamma, eps, s, order) * np.conj(u) ** order
        return out

    def theta(self, z) -> np.ndarray:
        """Covering function sum_k eps_k^{-2} 1_{|z - z_k| < eps_k}."""
        z = np.asarray(z, dtype=np.complex128)
        out = np.zeros(z.shape, dtype=np.float64)
        for _, eps, z0 in self.terms:
            out += (np.abs(z - z0) < eps) / eps**2
        return out


def gmc_measure(
    replicas: list[EigenSample],
    m: RadialMollifier,
    gamma: float,
    alpha: float,
    eval_grid: Grid,
    normalization: str = "empirical",
) -> tuple[np.ndarray, ExperimentReport]:
    """Renormalized exponential measures e^{gamma X(g^z)} / normalizer * sigma.

    Node densities are computed for every replica on eval_grid restricted
    to the disk of radius eps0 (the g-field's support constraint); the
    smoothing scale is eps = N^(alpha - 1/2).

    normalization "empirical" divides by the cross-replica mean at each
    node, making the mean density exactly 1/pi; "gaussian-prediction"
    divides by exp(gamma^2 Sigma^2 / 2).

    Returns (densities, report): densities has shape (replicas, ny, nx)
    with NaN outside the disk; the report carries per-replica total masses.
    """
    if not replicas:
        raise ValueError("need at least one replica")
    n = replicas[0].n
    if any(s.n != n for s in replicas):
        raise ValueError("replicas must share one dimension n")
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if normalization not in ("empirical", "gaussian-prediction"):
        raise ValueError(f"unknown normalization {normalization!r}")
    subcritical = gamma < GAMMA_STAR
    if not subcritical:
        warnings.warn(
            f"gamma = {gamma:g} >= sqrt(8): supercritical, the measure does "
            "not converge; computing anyway",
            stacklevel=2,
        )
    eps = n ** (alpha - 0.5)
    zz = eval_grid.nodes()
    mask = np.abs(zz) <= m.eps0 + 1e-12
    if not mask.any():
        raise ValueError("eval_grid does not intersect the support disk")
    fields = np.stack(
        [g_field_grid(s, m, eps, eval_grid).values for s in replicas]
    )
    weights = np.exp(gamma * fields)
    sigma2 = g_variance(m, eps)
    if normalization == "empirical":
        normalizer = weights.mean(axis=0)
    else:
        normalizer = np.full(zz.shape, math.exp(0.5 * gamma * gamma * sigma2))
    dens = weights / normalizer[None, :, :] / np.pi
    dens[:, ~mask] = np.nan
    cell = eval_grid.dx * eval_grid.dy
    masses = np.nansum(np.where(mask[None, :, :], dens, 0.0), axis=(1, 2)) * cell
    note = []
    if not subcritical:
        note.append("supercritical gamma: flagged non-convergent")
    report = ExperimentReport(
        name="gmc",
        config={
            "n": n,
            "replicas": len(replicas),
            "gamma": gamma,
            "alpha": alpha,
            "eps": eps,
            "eps0": m.eps0,
            "normalization": normalization,
            "grid": [eval_grid.nx, eval_grid.ny],
        },
        results={
            "masses": [float(v) for v in masses],
            "mass_mean": float(masses.mean()),
            "mass_std": float(masses.std(ddof=1)) if len(replicas) > 1 else 0.0,
            "sigma_sq": sigma2,
            "gaussian_normalizer": math.exp(0.5 * gamma * gamma * sigma2),
        },
        passes={"subcritical": subcritical},
        notes=note,
    )
    return dens, report


def smoothed_max_scan(
    replicas: list[EigenSample],
    m: RadialMollifier,
    alpha: float,
    eps0: float | None = None,
    delta: float = 0.5,
) -> ExperimentReport:
    """Fraction of replicas whose smoothed-field maximum over the disk of
    radius eps0 clears (1 - delta) * (gamma*/2) * log(1/eps).

    The limit fraction is 1 for every delta > 0; the desk-scale pass bar
    is 0.9.
    """
    if not replicas:
        raise ValueError("need at least one replica")
    n = replicas[0].n
    if any(s.n != n for s in replicas):
        raise ValueError("replicas must share one dimension n")
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    radius = m.eps0 if eps0 is None else float(eps0)
    eps = n ** (alpha - 0.5)
    res = max(48, int(16.0 * radius / eps) + 1)
    grid = Grid.centered_square(radius, res)
    mask = np.abs(grid.nodes()) <= radius
    threshold = (1.0 - delta) * (GAMMA_STAR / 2.0) * math.log(1.0 / eps)
    maxes = []
    for s in replicas:
        fs = smoothed_field_grid(s, m, eps, grid)
        maxes.append(float(fs.values[mask].max()))
    maxes_arr = np.array(maxes)
    fraction = float((maxes_arr >= threshold).mean())
    return ExperimentReport(
        name="max-scan-smoothed",
        config={
            "n": n,
            "replicas": len(replicas),
            "alpha": alpha,
            "eps": eps,
            "eps0": radius,
            "delta": delta,
            "resolution": res,
        },
        results={
            "threshold": threshold,
            "maxima": [float(v) for v in maxes_arr],
            "max_mean": float(maxes_arr.mean()),
            "exceed_fraction": fraction,
        },
        passes={"exceed-fraction": fraction >= 0.9},
    )
