"""Dense complex linear algebra used by the samplers and moment formulas.

Provides Householder reduction to Hessenberg form, a single-shift QR
eigenvalue iteration with Wilkinson shifts, and a pivoted-LU log-determinant
for small Hermitian matrices. Everything operates on plain numpy arrays;
``as_complex_matrix`` is the shared validator.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ConvergenceError",
    "as_complex_matrix",
    "hessenberg",
    "eigenvalues",
    "hermitian_logdet",
]


class ConvergenceError(RuntimeError):
    """QR iteration budget exhausted; ``block_size`` is the unresolved block."""

    def __init__(self, block_size: int, sweeps: int):
        super().__init__(
            f"QR iteration did not converge after {sweeps} sweeps "
            f"(unresolved block of size {block_size})"
        )
        self.block_size = block_size
        self.sweeps = sweeps


def as_complex_matrix(a, square: bool = False) -> np.ndarray:
    """Validate and return ``a`` as a 2-D complex128 array.

    Args:
        a: array-like with at least one row and one column.
        square: additionally require rows == cols.

    Raises:
        ValueError: wrong dimensionality, empty axes, non-finite entries,
            or a non-square input when ``square`` is set.
    """
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"matrix must have at least one row and column, got {m.shape}")
    if not np.isfinite(m.view(np.float64)).all():
        raise ValueError("matrix entries must be finite")
    if square and m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got {m.shape}")
    return m


def hessenberg(a) -> np.ndarray:
    """Reduce a square complex matrix to upper Hessenberg form.

    Householder reflections applied from both sides; the result is unitarily
    similar to the input, entries below the first subdiagonal are exactly
    zero, and the Frobenius norm is preserved to rounding.
    """
    h = as_complex_matrix(a, square=True).copy()
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1 :, k]
        xnorm = np.sqrt((x.real**2 + x.imag**2).sum())
        if xnorm == 0.0:
            continue
        # alpha = -exp(i arg x0) * ||x|| avoids cancellation in v = x - alpha e1
        x0 = x[0]
        alpha = -xnorm if x0 == 0 else -(x0 / abs(x0)) * xnorm
        v = x.copy()
        v[0] -= alpha
        vnorm = np.sqrt((v.real**2 + v.imag**2).sum())
        if vnorm == 0.0:
            continue
        v /= vnorm
        h[k + 1 :, k:] -= 2.0 * np.outer(v, v.conj() @ h[k + 1 :, k:])
        h[:, k + 1 :] -= 2.0 * np.outer(h[:, k + 1 :] @ v, v.conj())
        h[k + 2 :, k] = 0.0
    return h


def _eig2(a, b, c, d) -> tuple[complex, complex]:
    """Eigenvalues of [[a, b], [c, d]] by the stabilized quadratic formula."""
    mid = 0.5 * (a + d)
    disc = np.sqrt(0.25 * (a - d) ** 2 + b * c + 0j)
    # pick the larger root first to avoid cancellation in the product form
    r1 = mid + disc if abs(mid + disc) >= abs(mid - disc) else mid - disc
    det = a * d - b * c
    r2 = det / r1 if r1 != 0 else mid - disc
    return complex(r1), complex(r2)


def _wilkinson_shift(a, b, c, d) -> complex:
    """Root of the trailing 2x2 closest to its bottom-right entry."""
    r1, r2 = _eig2(a, b, c, d)
    return r1 if abs(r1 - d) <= abs(r2 - d) else r2


def _givens(a: complex, b: complex) -> tuple[float, complex]:
    """(c, s) with c real so [[c, s], [-conj(s), c]] @ [a, b] = [r, 0]."""
    if b == 0:
        return 1.0, 0j
    if a == 0:
        return 0.0, b.conjugate() / abs(b)
    rho = np.hypot(abs(a), abs(b))
    c = abs(a) / rho
    s = (a / abs(a)) * b.conjugate() / rho
    return float(c), complex(s)


def eigenvalues(a, tol: float = 1e-12, max_sweeps: int | None = None) -> list[complex]:
    """All eigenvalues of a square complex matrix.

    Hessenberg reduction followed by explicit single-shift QR sweeps with
    Wilkinson shifts. A subdiagonal entry h[k+1, k] is deflated to zero once
    |h[k+1, k]| <= tol * (|h[k, k]| + |h[k+1, k+1]|); trailing 1x1 and 2x2
    blocks are resolved directly.

    Args:
        a: square matrix.
        tol: relative deflation threshold (> 0).
        max_sweeps: total sweep budget; defaults to 30 * n.

    Returns:
        List of n eigenvalues, unordered.

    Raises:
        ConvergenceError: the sweep budget ran out with a block unresolved.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    h = hessenberg(a)
    n = h.shape[0]
    if max_sweeps is None:
        max_sweeps = 30 * n
    eigs: list[complex] = []
    m = n - 1
    sweeps = 0
    stalled = 0

    def _negligible(k: int) -> bool:
        return abs(h[k + 1, k]) <= tol * (abs(h[k, k]) + abs(h[k + 1, k + 1]))

    while m >= 0:
        if m == 0:
            eigs.append(complex(h[0, 0]))
            m -= 1
            stalled = 0
            continue
        if _negligible(m - 1):
            eigs.append(complex(h[m, m]))
            m -= 1
            stalled = 0
            continue
        if m == 1 or _negligible(m - 2):
            r1, r2 = _eig2(h[m - 1, m - 1], h[m - 1, m], h[m, m - 1], h[m, m])
            eigs.extend([r1, r2])
            m -= 2
            stalled = 0
            continue
        if sweeps >= max_sweeps:
            raise ConvergenceError(block_size=m + 1, sweeps=sweeps)
        sweeps += 1
        stalled += 1
        # active block [lo..m]: walk up to the first negligible subdiagonal
        lo = m - 1
        while lo > 0 and not _negligible(lo - 1):
            lo -= 1
        if stalled % 10 == 0:
            # exceptional shift: a symmetric spectrum can trap the Wilkinson
            # shift in a cycle (a permutation matrix is the textbook case)
            mu = h[m, m] + 0.75 * abs(h[m, m - 1])
        else:
            mu = _wilkinson_shift(h[m - 1, m - 1], h[m - 1, m], h[m, m - 1], h[m, m])
        idx = np.arange(lo, m + 1)
        h[idx, idx] -= mu
        rots = []
        for k in range(lo, m):
            c, s = _givens(h[k, k], h[k + 1, k])
            rots.append((c, s))
            top = c * h[k, k : m + 1] + s * h[k + 1, k : m + 1]
            bot = -np.conj(s) * h[k, k : m + 1] + c * h[k + 1, k : m + 1]
            h[k, k : m + 1] = top
            h[k + 1, k : m + 1] = bot
            h[k + 1, k] = 0.0
        for k in range(lo, m):
            c, s = rots[k - lo]
            u = h[lo : m + 1, k].copy()
            v = h[lo : m + 1, k + 1]
            h[lo : m + 1, k] = c * u + np.conj(s) * v
            h[lo : m + 1, k + 1] = -s * u + c * v
        h[idx, idx] += mu
    return eigs


def hermitian_logdet(m, size_limit: int = 16) -> tuple[float, float]:
    """(sign, log|det|) of a small Hermitian matrix via pivoted LU.

    The determinant of a Hermitian matrix is real; the returned sign is its
    sign (+1.0 for PSD inputs). A zero pivot reports (+1.0, -inf): the
    matrix is singular to working precision.

    Raises:
        ValueError: matrix larger than ``size_limit`` or not Hermitian
            within 1e-10 relative Frobenius tolerance.
    """
    a = as_complex_matrix(m, square=True).copy()
    n = a.shape[0]
    if n > size_limit:
        raise ValueError(f"matrix size {n} exceeds limit {size_limit}")
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.conj().T) > 1e-10 * max(scale, 1e-300):
        raise ValueError("matrix is not Hermitian within 1e-10 relative tolerance")
    phase = 1.0 + 0j
    log_abs = 0.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        piv = a[p, k]
        if piv == 0:
            return 1.0, float("-inf")
        if p != k:
            a[[k, p], :] = a[[p, k], :]
            phase = -phase
        log_abs += float(np.log(abs(piv)))
        phase *= piv / abs(piv)
        if k + 1 < n:
            a[k + 1 :, k:] -= np.outer(a[k + 1 :, k] / piv, a[k, k:])
    sign = 1.0 if phase.real >= 0 else -1.0
    return sign, log_abs
