"""Random input samplers for dataset generation.

All samplers are deterministic functions of (parameters, generator state);
per-case generators are derived from a root seed plus the case index so that
regeneration is reproducible regardless of worker count.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, ValidationError


def derive_rng(seed: int, *indices) -> np.random.Generator:
    """Independent generator for (seed, i, j, ...). Stable across runs."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, indices)]))


def grf_from_noise(white: np.ndarray, alpha: float) -> np.ndarray:
    """Deterministic spectral filter behind grf_fft.

    Filters white noise with the power-law amplitude |k|^(-alpha/2) on the
    periodic integer-wavenumber grid; the zero mode is removed, so the field
    has zero mean. Linear in the noise by construction.
    """
    white = np.asarray(white, dtype=np.float64)
    if white.ndim not in (1, 2):
        raise ShapeError("white noise must be 1D or 2D")
    shape = white.shape
    freqs = [np.fft.fftfreq(n, d=1.0 / n) for n in shape]
    if white.ndim == 1:
        k2 = freqs[0] ** 2
    else:
        kx, ky = np.meshgrid(freqs[0], freqs[1], indexing="ij")
        k2 = kx**2 + ky**2
    amp = np.zeros_like(k2)
    nz = k2 > 0
    amp[nz] = k2[nz] ** (-alpha / 4.0)
    spec = np.fft.fftn(white) * amp
    return np.fft.ifftn(spec).real


def grf_fft(grid_size, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Periodic Gaussian random field with power spectrum |k|^(-alpha).

    grid_size is an int (square 2D grid) or a tuple. Larger alpha gives
    smoother fields.
    """
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    if np.isscalar(grid_size):
        shape = (int(grid_size), int(grid_size))
    else:
        shape = tuple(int(n) for n in grid_size)
    return grf_from_noise(rng.standard_normal(shape), alpha)


def grf_eval_periodic(field: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear evaluation of a periodic grid field at unit-square points."""
    field = np.asarray(field, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if field.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError("need a 2D field and (n, 2) points")
    nx, ny = field.shape
    fx = np.mod(pts[:, 0], 1.0) * nx
    fy = np.mod(pts[:, 1], 1.0) * ny
    ix, iy = np.floor(fx).astype(int) % nx, np.floor(fy).astype(int) % ny
    tx, ty = fx - np.floor(fx), fy - np.floor(fy)
    jx, jy = (ix + 1) % nx, (iy + 1) % ny
    return (
        field[ix, iy] * (1 - tx) * (1 - ty)
        + field[jx, iy] * tx * (1 - ty)
        + field[ix, jy] * (1 - tx) * ty
        + field[jx, jy] * tx * ty
    )


def grf_corrlen_1d(
    x: np.ndarray,
    mean: float,
    corr_length: float,
    rng: np.random.Generator,
    jitter: float = 1e-10,
) -> np.ndarray:
    """Gaussian process sample on the points x.

    Squared-exponential covariance exp(-d^2 / (2 l^2)) drawn by Cholesky
    factorization with a small diagonal jitter for numerical definiteness.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if corr_length <= 0:
        raise ValidationError("correlation length must be positive")
    d = x[:, None] - x[None, :]
    cov = np.exp(-(d**2) / (2.0 * corr_length**2))
    cov[np.diag_indices_from(cov)] += jitter
    chol = np.linalg.cholesky(cov)
    return mean + chol @ rng.standard_normal(x.size)


def fourier_traction_coeffs(rng: np.random.Generator, sigma: float = 0.05):
    """Coefficients (A, B), three each, i.i.d. N(0, sigma^2)."""
    return rng.normal(0.0, sigma, size=3), rng.normal(0.0, sigma, size=3)


def fourier_traction(x: np.ndarray, coeffs) -> np.ndarray:
    """Random low-order Fourier load sum_i (A_i/i) cos(ix) + (B_i/i) sin(ix)."""
    a, b = coeffs
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (3,) or b.shape != (3,):
        raise ShapeError("expected three cosine and three sine coefficients")
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for i in (1, 2, 3):
        out += (a[i - 1] / i) * np.cos(i * x) + (b[i - 1] / i) * np.sin(i * x)
    return out


def uniform_scalar(lo: float, hi: float, rng: np.random.Generator) -> float:
    """Single uniform draw from [lo, hi)."""
    if not hi > lo:
        raise ValidationError("need hi > lo")
    return float(rng.uniform(lo, hi))
