"""Finite-n reproducing kernels: the Ginibre correlation kernel, its
extension used in the joint moment formula, the perturbed kernel obtained
by weighted Gram-Schmidt, and the local Bergman-type approximation.

Evaluation is done in log-magnitude/phase form throughout so that kernels
stay accurate out to n ~ 1e4 without overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import gammaln

from .report import ExperimentReport

__all__ = [
    "KernelContext",
    "PerturbedKernelContext",
    "QuadratureSpec",
    "KernelMass",
    "kernel_eval",
    "one_point_intensity",
    "kernel_mass",
    "orthonormalize_perturbed",
    "perturbed_kernel_eval",
    "bergman_approx_eval",
    "ell_default",
    "kernel_gap_report",
]

_NORMALIZATIONS = ("bare", "per-lebesgue")
_RADIUS_GUARD = 10.0
_EXP_GUARD = 745.0


@dataclass(frozen=True)
class KernelContext:
    """Parameters of the truncated-exponential kernel.

    n_weight is the N in the weight e^{-N|x|^2/2} and in the N^{j+1}
    prefactor; n_terms is the number of summands (N for the eigenvalue
    kernel, N+n inside the joint moment formula). ``bare`` pairs with the
    reference measure d^2x/pi, ``per-lebesgue`` divides by pi.
    """

    n_weight: int
    n_terms: int
    normalization: str = "bare"

    def __post_init__(self):
        if self.n_weight < 1 or self.n_terms < 1:
            raise ValueError("n_weight and n_terms must be >= 1")
        if self.normalization not in _NORMALIZATIONS:
            raise ValueError(
                f"normalization must be one of {_NORMALIZATIONS}, "
                f"got {self.normalization!r}"
            )


def _check_radius(*points: complex) -> None:
    for p in points:
        if abs(p) > _RADIUS_GUARD:
            raise ValueError(
                f"|point| = {abs(p):.3g} exceeds the evaluation guard "
                f"{_RADIUS_GUARD}"
            )


def kernel_eval(ctx: KernelContext, x: complex, z: complex) -> complex:
    """sum_{j < n_terms} (x conj(z))^j / j! * N^{j+1} * e^{-N(|x|^2+|z|^2)/2}.

    Terms are accumulated as exp(log-magnitude) * phase with compensated
    summation; when the overall exponent is below -745 the kernel is an
    exact floating-point 0. Hermitian symmetry kernel(x, z) =
    conj(kernel(z, x)) holds bit-exactly.
    """
    _check_radius(x, z)
    n = ctx.n_weight
    sq = 0.5 * n * (abs(x) ** 2 + abs(z) ** 2)
    xz = x * np.conj(z)
    if sq - n * xz.real > _EXP_GUARD:
        return 0.0 + 0.0j
    out: complex
    if xz == 0:
        # only the j = 0 term survives
        out = complex(n * math.exp(-sq))
    else:
        j = np.arange(ctx.n_terms, dtype=np.float64)
        logmag = j * math.log(n * abs(xz)) - gammaln(j + 1.0) + math.log(n) - sq
        phase = j * math.atan2(xz.imag, xz.real)
        shift = logmag.max()
        mags = np.exp(logmag - shift)
        re = math.fsum(mags * np.cos(phase))
        im = math.fsum(mags * np.sin(phase))
        out = math.exp(shift) * complex(re, im)
    if ctx.normalization == "per-lebesgue":
        out /= math.pi
    return out


def _diag_values(ctx: KernelContext, r: np.ndarray) -> np.ndarray:
    """Bare kernel on the diagonal for an array of radii (vectorized)."""
    n = ctx.n_weight
    j = np.arange(ctx.n_terms, dtype=np.float64)
    r2 = r * r
    with np.errstate(divide="ignore", invalid="ignore"):
        logr2 = np.where(r2 > 0, np.log(n * r2), -np.inf)
        # r = 0 rows produce 0 * -inf = nan here; both are rewritten below
        ex = j[None, :] * logr2[:, None] - gammaln(j + 1.0)[None, :]
    ex += math.log(n) - n * r2[:, None]
    ex[r2 == 0, 1:] = -np.inf
    ex[r2 == 0, 0] = math.log(n) - n * r2[r2 == 0]
    shift = ex.max(axis=1, keepdims=True)
    return np.exp(shift[:, 0]) * np.exp(ex - shift).sum(axis=1)


def one_point_intensity(ctx: KernelContext, z: complex) -> float:
    """K(z, z) / pi: the 1-point function with respect to Lebesgue area."""
    if ctx.normalization != "bare":
        raise ValueError("one_point_intensity expects a bare-mode context")
    _check_radius(z)
    val = _diag_values(ctx, np.array([abs(z)]))[0]
    return float(max(val, 0.0)) / math.pi


class KernelMass(NamedTuple):
    value: float
    error: float


def kernel_mass(ctx: KernelContext, resolution: int = 256) -> KernelMass:
    """Integral of the 1-point intensity over the plane.

    Quadrature is a resolution x resolution polar tensor grid on the disk
    of radius 1 + 6/sqrt(N); the exponential tail beyond it is bounded
    explicitly and folded into the error estimate. The result equals
    n_terms up to that estimate.
    """
    if resolution < 256:
        raise ValueError("resolution must be at least 256 nodes per axis")
    n = ctx.n_weight
    rmax = 1.0 + 6.0 / math.sqrt(n)

    def disk_integral(res: int) -> float:
        xg, wg = np.polynomial.legendre.leggauss(res)
        r = 0.5 * rmax * (xg + 1.0)
        wr = 0.5 * rmax * wg
        vals = _diag_values(ctx, r) / math.pi
        # angular factor 2 pi; the intensity is radial but the contract
        # prescribes a full 2-D tensor grid, whose angular sum is exact here
        return float(2.0 * math.pi * np.sum(wr * r * vals))

    value = disk_integral(resolution)
    coarse = disk_integral(resolution // 2)
    # tail: diagonal decays like exp(-n h(r)), h(r) = r^2 - 1 - 2 log r
    rt = np.linspace(rmax, rmax + 4.0, 4096)
    tail_vals = _diag_values(ctx, rt) / math.pi
    tail = float(2.0 * math.pi * np.trapezoid(tail_vals * rt, rt))
    error = abs(value - coarse) + tail + 1e-12 * ctx.n_terms
    return KernelMass(value=value, error=error)


# -- perturbed kernel -----------------------------------------------------


@dataclass(frozen=True)
class QuadratureSpec:
    """Polar tensor quadrature for weighted inner products: mapped
    Gauss-Legendre in radius, trapezoid in angle."""

    radial: int = 400
    angular: int = 512
    rmax: float | None = None  # default 1 + 8/sqrt(N)

    def nodes_weights(self, n_weight: int) -> tuple[np.ndarray, np.ndarray]:
        rmax = self.rmax if self.rmax is not None else 1.0 + 8.0 / math.sqrt(n_weight)
        xg, wg = np.polynomial.legendre.leggauss(self.radial)
        r = 0.5 * rmax * (xg + 1.0)
        wr = 0.5 * rmax * wg
        th = 2.0 * np.pi * np.arange(self.angular) / self.angular
        nodes = (r[:, None] * np.exp(1j * th)[None, :]).ravel()
        weights = ((wr * r)[:, None] * np.full(self.angular, 2.0 * np.pi / self.angular)).ravel()
        return nodes, weights


class PerturbedKernelContext:
    """Orthonormal polynomial data for the weight e^{-2N Q*},
    Q* = |x|^2/2 - t g(x) / (2N).

    poly_coeffs[k, j] is the coefficient of x^j in p*_k; the leading
    coefficient is real positive and deg p*_k = k.
    """

    def __init__(self, n_weight, degree, g, t, poly_coeffs, nodes, weights,
                 residual):
        self.n_weight = int(n_weight)
        self.degree = int(degree)
        self.g = g
        self.t = float(t)
        self.poly_coeffs = poly_coeffs
        self.nodes = nodes
        self.weights = weights
        self.orthonormality_residual = float(residual)

    def q_star(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.complex128)
        gv = np.asarray(self.g(z), dtype=np.float64) if self.t != 0 else 0.0
        return 0.5 * (z.real**2 + z.imag**2) - self.t * gv / (2.0 * self.n_weight)

    def poly_values(self, z) -> np.ndarray:
        """p*_k(z) for all k; shape (..., degree)."""
        z = np.asarray(z, dtype=np.complex128)
        pows = np.empty(z.shape + (self.degree,), dtype=np.complex128)
        pows[..., 0] = 1.0
        for j in range(1, self.degree):
            pows[..., j] = pows[..., j - 1] * z
        return pows @ self.poly_coeffs.T

    def to_json_dict(self) -> dict:
        return {
            "n_weight": self.n_weight,
            "degree": self.degree,
            "t": self.t,
            "orthonormality_residual": self.orthonormality_residual,
            "poly_coeffs": [
                [[float(c.real), float(c.imag)] for c in row[: k + 1]]
                for k, row in enumerate(self.poly_coeffs)
            ],
        }


def orthonormalize_perturbed(
    n_weight: int,
    degree: int,
    g: Callable[[np.ndarray], np.ndarray],
    t: float,
    quad: QuadratureSpec | None = None,
) -> PerturbedKernelContext:
    """Modified Gram-Schmidt on 1, x, ..., x^(degree-1) under e^{-2N Q*}.

    One full re-orthogonalization pass is applied; the final orthonormality
    residual must come out <= 1e-8 or a conditioning error is raised.

    Args:
        g: real perturbation, compactly supported in the disk of radius 1/2
           (verified on a probe ring).
        t: coupling in [0, 1].
        quad: polar quadrature; defaults to 400 x 512 on [0, 1 + 8/sqrt(N)].
    """
    if degree < 1 or degree > 128:
        raise ValueError("degree must lie in [1, 128] (conditioning guard)")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    probe = 0.55 * np.exp(2j * np.pi * np.arange(64) / 64)
    if np.max(np.abs(np.asarray(g(probe), dtype=np.float64))) > 1e-12:
        raise ValueError("perturbation must be supported inside |x| < 1/2")
    quad = quad or QuadratureSpec()
    nodes, weights = quad.nodes_weights(n_weight)
    gv = np.asarray(g(nodes), dtype=np.float64) if t != 0 else np.zeros(nodes.size)
    wq = weights * np.exp(-n_weight * (nodes.real**2 + nodes.imag**2) + t * gv)

    m = nodes.size
    basis = np.empty((m, degree), dtype=np.complex128)
    coeffs = np.zeros((degree, degree), dtype=np.complex128)
    col = np.ones(m, dtype=np.complex128)
    for k in range(degree):
        if k > 0:
            col = col * nodes
        v = col.copy()
        c = np.zeros(degree, dtype=np.complex128)
        c[k] = 1.0
        for _ in range(2):  # MGS then one re-orthogonalization
            if k > 0:
                proj = basis[:, :k].conj().T @ (wq * v)
                v = v - basis[:, :k] @ proj
                c[:k] = c[:k] - proj @ coeffs[:k, :k]
        nrm2 = float(np.real(np.vdot(v, wq * v)))
        if not nrm2 > 1e-24 * float(np.real(np.vdot(col, wq * col))):
            raise RuntimeError(
                f"Gram matrix numerically singular at degree {k}; lower the "
                "degree or raise the quadrature order"
            )
        nrm = math.sqrt(nrm2)
        basis[:, k] = v / nrm
        coeffs[k] = c / nrm
    gram = basis.conj().T @ (wq[:, None] * basis)
    residual = float(np.max(np.abs(gram - np.eye(degree))))
    if residual > 1e-8:
        raise RuntimeError(
            f"orthonormality residual {residual:.2e} exceeds 1e-8; raise the "
            "quadrature order"
        )
    return PerturbedKernelContext(
        n_weight=n_weight, degree=degree, g=g, t=t, poly_coeffs=coeffs,
        nodes=nodes, weights=weights, residual=residual,
    )


def perturbed_kernel_eval(
    pctx: PerturbedKernelContext, x: complex, z: complex
) -> complex:
    """K*(x, z) = sum_k p*_k(x) conj(p*_k(z)) e^{-N Q*(x) - N Q*(z)}."""
    px = pctx.poly_values(np.asarray(x))
    pz = pctx.poly_values(np.asarray(z))
    s = complex(np.sum(px * np.conj(pz)))
    damp = math.exp(-pctx.n_weight * (float(pctx.q_star(x)) + float(pctx.q_star(z))))
    return s * damp


def ell_default(n_weight: int, eps: float, beta: float = 1.0) -> int:
    """Smallest Taylor order with (delta_N / eps)^ell <= 1/N, where
    delta_N = sqrt((log N)^beta / N); capped at 6, which the local error
    analysis never needs to exceed at desk scale (and the rule has no
    solution once delta_N >= eps)."""
    delta = math.sqrt(math.log(n_weight) ** beta / n_weight)
    eta = delta / eps
    if eta >= 1.0:
        return 6
    ell = max(1, math.ceil(math.log(n_weight) / math.log(1.0 / eta)))
    return min(ell, 6)


def bergman_approx_eval(
    n_weight: int,
    g,
    ell: int,
    t: float,
    x: complex,
    w: complex,
) -> complex:
    """Local Bergman surrogate K#(x, w) = (N/pi) e^{N x conj(w)}
    e^{-t Upsilon^w(x - w)} e^{-N Q*(x) - N Q*(w)} with
    Upsilon^w(u) = g(w) + sum_{i<=ell} (u^i / i) d^i g(w).

    ``g`` must expose value(z) and wirtinger(z, i) for i <= ell (the
    mollifier combinations from the gmc module do). On the diagonal the
    exponents cancel algebraically and K#(w, w) = N/pi for every t.
    """
    if abs(x - w) > 0.5:
        raise ValueError("Bergman approximation is local: need |x - w| <= 0.5")
    if ell < 1:
        raise ValueError("ell must be >= 1")
    u = complex(x - w)
    ups = complex(np.asarray(g.value(np.asarray(w)), dtype=np.float64))
    for i in range(1, ell + 1):
        ups += (u**i / i) * complex(np.asarray(g.wirtinger(np.asarray(w), i)))
    gx = float(np.asarray(g.value(np.asarray(x)), dtype=np.float64))
    gw = float(np.asarray(g.value(np.asarray(w)), dtype=np.float64))
    qx = 0.5 * abs(x) ** 2 - t * gx / (2.0 * n_weight)
    qw = 0.5 * abs(w) ** 2 - t * gw / (2.0 * n_weight)
    expo = n_weight * x * np.conj(w) - t * ups - n_weight * (qx + qw)
    return (n_weight / math.pi) * complex(np.exp(expo))


def kernel_gap_report(
    pctx: PerturbedKernelContext,
    g,
    ell: int,
    pairs: list[tuple[complex, complex]],
    beta: float = 1.0,
    reference_constant: float | None = None,
) -> ExperimentReport:
    """max over pairs of |K*(w,z) - K#(w,z)| / (theta(z) + 1).

    Pairs must satisfy z in D_{1 - 2 delta_N} and |w - z| <= delta_N with
    delta_N = sqrt((log N)^beta / N). theta is the covering function of the
    perturbation's mollifier disks. When a reference constant from another
    N is supplied, the report flags whether the two agree within a factor 3.
    """
    n = pctx.n_weight
    delta = math.sqrt(math.log(n) ** beta / n)
    rows = []
    worst = 0.0
    for z, w in pairs:
        if abs(z) > 1.0 - 2.0 * delta + 1e-12 or abs(w - z) > delta * (1.0 + 1e-12):
            raise ValueError(
                f"pair (z={z}, w={w}) outside the admissible region "
                f"(|z| <= {1 - 2 * delta:.4f}, |w - z| <= {delta:.4f})"
            )
        exact = perturbed_kernel_eval(pctx, w, z)
        approx = bergman_approx_eval(n, g, ell, pctx.t, w, z)
        theta = float(np.asarray(g.theta(np.asarray(z))))
        gap = abs(exact - approx) / (theta + 1.0)
        worst = max(worst, gap)
        rows.append(
            {"z": [z.real, z.imag], "w": [w.real, w.imag], "gap": gap,
             "theta": theta}
        )
    passes = {}
    if reference_constant is not None and reference_constant > 0:
        ratio = worst / reference_constant if worst > 0 else 0.0
        passes["constant-ratio-bounded"] = (ratio < 3.0) and (ratio > 1.0 / 3.0 or worst == 0.0)
    return ExperimentReport(
        name="kernel-gap",
        config={
            "n": n, "ell": ell, "beta": beta, "t": pctx.t,
            "delta": delta, "pairs": len(pairs),
        },
        results={
            "rows": rows,
            "constant": worst,
            "reference_constant": reference_constant,
        },
        passes=passes,
    )
