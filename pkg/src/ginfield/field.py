"""The centered log-modulus field and its grid observables.

Psi_N(z) = sum_j log|z - lambda_j| - N * equilibrium_potential(z) is an
approximate log-correlated field on the unit disk. This module evaluates it
on rectangular grids and measures maxima, thick-point areas, free energies,
linear statistics, covariances, and concentration-class exceedances.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Any, Callable

import numpy as np
from scipy.special import logsumexp

from .report import ExperimentReport
from .sampler import EigenSample

__all__ = [
    "Grid",
    "FieldSample",
    "ThickPointReport",
    "TestFunction",
    "equilibrium_potential",
    "evaluate_field",
    "field_max",
    "thick_points",
    "free_energy",
    "freezing_prediction",
    "linear_statistic",
    "sigma_variance",
    "covariance_scan",
    "concentration_check",
    "save_field_sample",
    "load_field_sample",
]

_CLAMP_FLOOR_SQ = 1e-600  # squared-distance floor, i.e. log-clamp at log(1e-300)
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class Grid:
    """Rectangular evaluation grid; node (iy, ix) sits at
    (x0 + ix*dx) + 1j*(y0 + iy*dy)."""

    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs nx, ny >= 2")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("grid spacings must be positive")
        for v in (self.x0, self.y0, self.dx, self.dy):
            if not math.isfinite(v):
                raise ValueError("grid geometry must be finite")

    @classmethod
    def centered_square(cls, half_side: float, resolution: int) -> "Grid":
        """Square grid of resolution^2 nodes covering [-h, h]^2."""
        step = 2.0 * half_side / (resolution - 1)
        return cls(x0=-half_side, y0=-half_side, dx=step, dy=step,
                   nx=resolution, ny=resolution)

    def xs(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    def nodes(self) -> np.ndarray:
        """Complex nodes, shape (ny, nx)."""
        return self.xs()[None, :] + 1j * self.ys()[:, None]

    def nearest_index(self, z: complex) -> tuple[int, int]:
        ix = round((z.real - self.x0) / self.dx)
        iy = round((z.imag - self.y0) / self.dy)
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise ValueError(f"point {z} falls outside the grid")
        return int(iy), int(ix)


@dataclass
class FieldSample:
    """Field values on a grid plus provenance.

    ``source`` keeps an in-memory handle to the eigenvalue sample that
    produced the values; it enables exact local refinement in field_max and
    is not serialized.
    """

    grid: Grid
    values: np.ndarray
    n: int
    seed: int
    quantity: str = "psi"
    clamp_count: int = 0
    source: EigenSample | None = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        expect = (self.grid.ny, self.grid.nx)
        if self.values.shape != expect:
            raise ValueError(f"values shape {self.values.shape} != grid {expect}")
        if not np.isfinite(self.values).all():
            raise ValueError("field values must be finite")


@dataclass
class ThickPointReport:
    beta: float
    r: float
    threshold: float
    area: float
    exponent: float
    n: int


def equilibrium_potential(z) -> np.ndarray | float:
    """log+|z| - (1 - |z|^2)+ / 2: the logarithmic potential of the
    uniform unit-disk law. Equals (|z|^2 - 1)/2 inside the disk, log|z|
    outside, and is C^1 across the boundary."""
    z = np.asarray(z, dtype=np.complex128)
    r2 = z.real**2 + z.imag**2
    inside = 0.5 * (r2 - 1.0)
    with np.errstate(divide="ignore"):
        outside = 0.5 * np.log(np.maximum(r2, 1e-300))
    out = np.where(r2 <= 1.0, inside, outside)
    return float(out) if out.ndim == 0 else out


def _log_abs_prod_sq(xs, ys, pre, pim):
    """sum_k log((xs - pre_k)^2 + (ys - pim_k)^2) via a running product
    renormalized with frexp every 16 factors; returns (sums, clamp_count)."""
    m = xs.size
    prod = np.ones(m)
    eacc = np.zeros(m, dtype=np.int64)
    t1 = np.empty(m)
    t2 = np.empty(m)
    clamps = 0
    k_total = pre.size
    for k0 in range(0, k_total, 16):
        for k in range(k0, min(k0 + 16, k_total)):
            np.subtract(xs, pre[k], out=t1)
            np.multiply(t1, t1, out=t1)
            np.subtract(ys, pim[k], out=t2)
            np.multiply(t2, t2, out=t2)
            np.add(t1, t2, out=t1)
            if t1.min() < _CLAMP_FLOOR_SQ:
                clamps += int((t1 < _CLAMP_FLOOR_SQ).sum())
                np.maximum(t1, _CLAMP_FLOOR_SQ, out=t1)
            np.multiply(prod, t1, out=prod)
        prod, ex = np.frexp(prod)
        eacc += ex
    return np.log(prod) + eacc * _LN2, clamps


def _psi_at(points: np.ndarray, n: int, z: np.ndarray) -> tuple[np.ndarray, int]:
    """Exact Psi_N at arbitrary complex locations (flat array)."""
    flat = np.ravel(z)
    s, clamps = _log_abs_prod_sq(
        flat.real.copy(), flat.imag.copy(), points.real, points.imag
    )
    vals = 0.5 * s - n * equilibrium_potential(flat)
    return vals.reshape(np.shape(z)), clamps


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("GINFIELD_THREADS", "1")))
    except ValueError:
        return 1


def evaluate_field(sample: EigenSample, grid: Grid) -> FieldSample:
    """Evaluate Psi_N on every grid node.

    O(nx * ny * N), parallel over row blocks when GINFIELD_THREADS > 1;
    the per-node reduction order is fixed, so results are byte-identical
    for any thread count. Nodes within 1e-300 of an eigenvalue contribute
    the clamped value log(1e-300) and are tallied in clamp_count.
    """
    if not sample.angles_valid:
        raise ValueError("sample carries radii only; angular data required")
    xs = grid.xs()
    ys = grid.ys()
    pre = np.ascontiguousarray(sample.points.real)
    pim = np.ascontiguousarray(sample.points.imag)

    def run_rows(y_lo: int, y_hi: int):
        xx = np.tile(xs, y_hi - y_lo)
        yy = np.repeat(ys[y_lo:y_hi], grid.nx)
        s, clamps = _log_abs_prod_sq(xx, yy, pre, pim)
        zz = xx + 1j * yy
        vals = 0.5 * s - sample.n * equilibrium_potential(zz)
        return vals.reshape(y_hi - y_lo, grid.nx), clamps

    threads = min(_thread_count(), grid.ny)
    if threads == 1:
        values, clamp_count = run_rows(0, grid.ny)
    else:
        bounds = np.linspace(0, grid.ny, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(
                pool.map(lambda b: run_rows(b[0], b[1]), zip(bounds[:-1], bounds[1:]))
            )
        values = np.vstack([p[0] for p in parts])
        clamp_count = sum(p[1] for p in parts)
    return FieldSample(
        grid=grid,
        values=values,
        n=sample.n,
        seed=sample.seed,
        quantity="psi",
        clamp_count=clamp_count,
        source=sample,
    )


def _disk_mask(grid: Grid, r: float) -> np.ndarray:
    zz = grid.nodes()
    return np.abs(zz) <= r


def field_max(fs: FieldSample, r: float) -> tuple[complex, float]:
    """Maximum of the field over grid nodes inside the disk of radius r.

    When the sample that produced the values is attached (quantity "psi"),
    the best node is refined by exact re-evaluation on a 9x9 sub-grid at
    spacing dx/8. Warns if the grid is coarser than the 1/(4 sqrt(N))
    guidance, since the field varies on scale 1/sqrt(N).
    """
    mask = _disk_mask(fs.grid, r)
    if not mask.any():
        raise ValueError(f"disk of radius {r} does not intersect the grid")
    if max(fs.grid.dx, fs.grid.dy) > 1.0 / (4.0 * math.sqrt(fs.n)):
        warnings.warn(
            "grid spacing exceeds 1/(4 sqrt(N)); the maximum may be undersampled",
            stacklevel=2,
        )
    vals = np.where(mask, fs.values, -np.inf)
    iy, ix = np.unravel_index(int(np.argmax(vals)), vals.shape)
    best_z = complex(fs.grid.x0 + ix * fs.grid.dx, fs.grid.y0 + iy * fs.grid.dy)
    best_v = float(vals[iy, ix])
    if fs.source is None or fs.quantity != "psi":
        return best_z, best_v
    step = fs.grid.dx / 8.0
    offs = step * np.arange(-4, 5)
    local = (best_z.real + offs[None, :]) + 1j * (best_z.imag + offs[:, None])
    ref, _ = _psi_at(fs.source.points, fs.n, local)
    keep = np.abs(local) <= r
    ref = np.where(keep, ref, -np.inf)
    jy, jx = np.unravel_index(int(np.argmax(ref)), ref.shape)
    if ref[jy, jx] >= best_v:
        return complex(local[jy, jx]), float(ref[jy, jx])
    return best_z, best_v


def thick_points(fs: FieldSample, beta: float, r: float) -> ThickPointReport:
    """Area of {z in D_r : field >= beta log N} by node counting."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if not 0 < r < 1:
        raise ValueError("r must lie in (0, 1)")
    threshold = beta * math.log(fs.n)
    mask = _disk_mask(fs.grid, r)
    count = int((fs.values[mask] >= threshold).sum())
    area = count * fs.grid.dx * fs.grid.dy
    exponent = math.log(area) / math.log(fs.n) if area > 0 else float("-inf")
    return ThickPointReport(
        beta=beta, r=r, threshold=threshold, area=area, exponent=exponent, n=fs.n
    )


def free_energy(fs: FieldSample, beta: float, r: float) -> float:
    """(1 / (beta log N)) * log( (N dx dy / pi) * sum_{|z|<=r} e^{beta v} ).

    The N factor scales the Riemann sum to the eigenvalue counting measure,
    which is the normalization under which the limit is 1/beta + beta/8
    below the critical inverse temperature sqrt(8) and 1/sqrt(2) above.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    mask = _disk_mask(fs.grid, r)
    if not mask.any():
        raise ValueError(f"disk of radius {r} does not intersect the grid")
    lse = float(logsumexp(beta * fs.values[mask]))
    log_measure = math.log(fs.n * fs.grid.dx * fs.grid.dy / math.pi)
    return (log_measure + lse) / (beta * math.log(fs.n))


def freezing_prediction(beta: float) -> float:
    """Limiting free energy: 1/beta + beta/8 up to beta = sqrt(8), frozen
    at 1/sqrt(2) beyond."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if beta <= math.sqrt(8.0):
        return 1.0 / beta + beta / 8.0
    return 1.0 / math.sqrt(2.0)


_GAUSS_R = 256
_GAUSS_TH = 512


def _sigma_integral_quadrature(f: Callable[[np.ndarray], np.ndarray]) -> float:
    """(1/pi) * int_D f d^2x by Gauss-Legendre radius x trapezoid angle."""
    xg, wg = np.polynomial.legendre.leggauss(_GAUSS_R)
    rr = 0.5 * (xg + 1.0)
    wr = 0.5 * wg
    th = 2.0 * np.pi * np.arange(_GAUSS_TH) / _GAUSS_TH
    zz = rr[:, None] * np.exp(1j * th)[None, :]
    fv = np.asarray(f(zz), dtype=np.float64)
    ang = fv.mean(axis=1)
    return float(2.0 * np.sum(wr * rr * ang))


def linear_statistic(
    sample: EigenSample,
    f: Callable[[np.ndarray], np.ndarray],
    sigma_integral: float | str | None = None,
) -> float:
    """sum_j f(lambda_j) - N * int f dsigma.

    The circular-law integral must be supplied: either a number, or the
    string "polar-quadrature" to integrate f over the disk numerically.
    Radii-only samples are accepted; for those, f must be radial for the
    eigenvalue sum to be meaningful.
    """
    if sigma_integral is None:
        raise ValueError(
            "sigma_integral is required: pass a number or 'polar-quadrature'"
        )
    if isinstance(sigma_integral, str):
        if sigma_integral != "polar-quadrature":
            raise ValueError(f"unknown sigma_integral mode {sigma_integral!r}")
        integral = _sigma_integral_quadrature(f)
    else:
        integral = float(sigma_integral)
    total = float(np.sum(np.asarray(f(sample.points), dtype=np.float64)))
    return total - sample.n * integral


def sigma_variance(grid: Grid, values: np.ndarray) -> float:
    """(1 / 4 pi) * int |grad f|^2 d^2x for a grid-backed f supported in D.

    Centered second-order differences on interior nodes. Rejects functions
    that have not decayed (|f| >= 1e-12) on cells adjacent to the unit
    circle or to the grid edge.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (grid.ny, grid.nx):
        raise ValueError("values shape does not match grid")
    zz = grid.nodes()
    band = np.abs(np.abs(zz) - 1.0) <= 1.5 * max(grid.dx, grid.dy)
    if np.any(np.abs(values[band]) >= 1e-12):
        raise ValueError("function must vanish near the unit circle")
    edge = np.zeros_like(band)
    edge[0, :] = edge[-1, :] = True
    edge[:, 0] = edge[:, -1] = True
    if np.any(np.abs(values[edge]) >= 1e-12):
        raise ValueError("function must vanish on the grid boundary")
    gx = (values[1:-1, 2:] - values[1:-1, :-2]) / (2.0 * grid.dx)
    gy = (values[2:, 1:-1] - values[:-2, 1:-1]) / (2.0 * grid.dy)
    return float((gx**2 + gy**2).sum() * grid.dx * grid.dy / (4.0 * np.pi))


def covariance_scan(
    replicas: list[FieldSample], z0: complex, offsets: list[complex]
) -> ExperimentReport:
    """Empirical E[Psi(z0) Psi(z0 + x)] per offset, with the fitted slope
    against log(min(sqrt(N), 1/|x|)).

    All replicas must share one grid; offsets snap to the nearest node.
    """
    if len(replicas) < 100:
        raise ValueError("covariance_scan needs at least 100 replicas")
    g = replicas[0].grid
    if any(fs.grid != g for fs in replicas):
        raise ValueError("replicas must share a single grid")
    n = replicas[0].n
    iy0, ix0 = g.nearest_index(z0)
    stack = np.stack([fs.values for fs in replicas])
    v0 = stack[:, iy0, ix0]
    rows = []
    preds = []
    covs = []
    for x in offsets:
        iy, ix = g.nearest_index(z0 + x)
        vx = stack[:, iy, ix]
        prod = v0 * vx
        mean = float(prod.mean())
        stderr = float(prod.std(ddof=1) / math.sqrt(len(replicas)))
        ax = abs(x)
        pred = math.log(min(math.sqrt(n), 1.0 / ax)) if ax > 0 else 0.5 * math.log(n)
        rows.append(
            {"offset": [x.real, x.imag], "abs": ax, "cov": mean, "stderr": stderr,
             "predictor": pred}
        )
        preds.append(pred)
        covs.append(mean)
    if len(set(preds)) >= 2:
        slope, intercept = np.polyfit(np.array(preds), np.array(covs), 1)
    else:
        # a single predictor value cannot support a line
        slope, intercept = 0.0, float(np.mean(covs))
    return ExperimentReport(
        name="covariance",
        config={
            "n": n,
            "replicas": len(replicas),
            "z0": [z0.real, z0.imag],
            "offsets": [[x.real, x.imag] for x in offsets],
        },
        results={
            "rows": rows,
            "slope": float(slope),
            "intercept": float(intercept),
        },
        passes={},
    )


@dataclass
class TestFunction:
    """Grid-backed test function with its Laplacian, for concentration
    checks: f harmonic outside a core disk, int |Delta f| / pi <= 1."""

    __test__ = False  # keep pytest collection away from the Test* name

    grid: Grid
    values: np.ndarray
    laplacian: np.ndarray
    label: str = ""

    def laplacian_mass(self) -> float:
        return float(
            np.abs(self.laplacian).sum() * self.grid.dx * self.grid.dy / np.pi
        )


def concentration_check(
    replicas: list[FieldSample],
    family: list[TestFunction],
    epsilon: float,
) -> ExperimentReport:
    """Exceedance frequency of max_f |X(f)| over the threshold (log N)^(1+eps).

    X(f) is computed through the Laplacian route (1 / 2 pi) * int Delta f *
    Psi_N, a Riemann sum on the shared grid. The reported theory bound is
    exp(-(log N)^(1+eps) / 2) per the concentration inequality, with
    constant 1.
    """
    if not replicas or not family:
        raise ValueError("need at least one replica and one test function")
    g = replicas[0].grid
    if any(fs.grid != g for fs in replicas):
        raise ValueError("replicas must share a single grid")
    for tf in family:
        if tf.grid != g:
            raise ValueError("test functions must live on the replica grid")
        if tf.laplacian_mass() > 1.0 + 1e-9:
            raise ValueError(
                f"test function {tf.label!r} violates int|Delta f|/pi <= 1"
            )
    n = replicas[0].n
    threshold = math.log(n) ** (1.0 + epsilon)
    cell = g.dx * g.dy / (2.0 * np.pi)
    lap = np.stack([tf.laplacian for tf in family])
    exceed = 0
    max_abs = 0.0
    for fs in replicas:
        xf = (lap * fs.values[None, :, :]).sum(axis=(1, 2)) * cell
        worst = float(np.abs(xf).max())
        max_abs = max(max_abs, worst)
        exceed += worst >= threshold
    rate = exceed / len(replicas)
    bound = math.exp(-0.5 * threshold)
    return ExperimentReport(
        name="clt",
        config={
            "n": n,
            "replicas": len(replicas),
            "family_size": len(family),
            "epsilon": epsilon,
        },
        results={
            "threshold": threshold,
            "exceed_count": exceed,
            "exceed_rate": rate,
            "max_abs_statistic": max_abs,
            "theory_bound": bound,
        },
        passes={"no-unexpected-exceedance": rate <= max(bound, 1.0 / len(replicas))},
    )


# -- serialization -------------------------------------------------------


def save_field_sample(fs: FieldSample, basepath) -> None:
    """Write <base>.json sidecar and <base>.f64 row-major payload."""
    base = str(basepath)
    sidecar = {
        "grid": {
            "x0": fs.grid.x0, "y0": fs.grid.y0,
            "dx": fs.grid.dx, "dy": fs.grid.dy,
            "nx": fs.grid.nx, "ny": fs.grid.ny,
        },
        "meta": {
            "n": fs.n,
            "seed": fs.seed,
            "quantity": fs.quantity,
            "clamp_count": fs.clamp_count,
        },
    }
    with open(base + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)
        fh.write("\n")
    fs.values.astype("<f8").tofile(base + ".f64")


def load_field_sample(basepath) -> FieldSample:
    base = str(basepath)
    with open(base + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    g = Grid(**sidecar["grid"])
    raw = np.fromfile(base + ".f64", dtype="<f8")
    if raw.size != g.nx * g.ny:
        raise ValueError(f"payload holds {raw.size} values, expected {g.nx * g.ny}")
    meta = sidecar["meta"]
    return FieldSample(
        grid=g,
        values=raw.reshape(g.ny, g.nx),
        n=int(meta["n"]),
        seed=int(meta["seed"]),
        quantity=str(meta["quantity"]),
        clamp_count=int(meta["clamp_count"]),
    )
