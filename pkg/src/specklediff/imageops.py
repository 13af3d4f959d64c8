"""2D convolution with mirrored boundaries and its exact adjoint.

All images are dense 2D float64 arrays. Convolution is "same"-sized true
convolution (kernel flipped) over a symmetrically padded input, so constant
images are preserved and the adjoint is again a padded convolution followed
by folding the border contributions back into the interior.
"""
from __future__ import annotations

import numpy as np
from scipy import signal

# kernels at least this wide take the FFT path when method="auto"
FFT_KERNEL_CUTOFF = 9


def as_image(a, name: str = "image") -> np.ndarray:
    """Validate and convert to a finite 2D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one pixel")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_kernel(k, name: str = "kernel") -> np.ndarray:
    arr = np.asarray(k, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square 2D, got shape {arr.shape}")
    if arr.shape[0] % 2 != 1:
        raise ValueError(f"{name} side must be odd, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _check_fits(img: np.ndarray, k: np.ndarray) -> None:
    m = k.shape[0]
    if m > 2 * min(img.shape) + 1:
        raise ValueError(
            f"kernel size {m} degenerate for image of shape {img.shape}"
        )


def rotate180(k) -> np.ndarray:
    """Point-reflect a kernel about its center (an involution)."""
    return as_kernel(k)[::-1, ::-1].copy()


def conv2d(img, k, method: str = "auto") -> np.ndarray:
    """Same-size true convolution with symmetric (mirror) padding.

    method: "direct", "fft", or "auto" (size heuristic). The two paths agree
    to ~1e-12 absolute on unit-scale data.
    """
    img = as_image(img)
    k = as_kernel(k)
    _check_fits(img, k)
    r = k.shape[0] // 2
    if r == 0:
        return img * k[0, 0]
    padded = np.pad(img, r, mode="symmetric")
    if method == "auto":
        method = "fft" if k.shape[0] >= FFT_KERNEL_CUTOFF else "direct"
    if method == "fft":
        return signal.fftconvolve(padded, k, mode="valid")
    if method == "direct":
        return signal.convolve2d(padded, k, mode="valid")
    raise ValueError(f"unknown convolution method {method!r}")


def _fold_symmetric(full: np.ndarray, h: int, w: int, r: int) -> np.ndarray:
    """Adjoint of symmetric padding: accumulate mirrored borders inward."""
    rows = full[r:h + r].copy()
    if r > 0:
        rows[0:r] += full[0:r][::-1]
        rows[h - r:h] += full[h + r:h + 2 * r][::-1]
    out = rows[:, r:w + r].copy()
    if r > 0:
        out[:, 0:r] += rows[:, 0:r][:, ::-1]
        out[:, w - r:w] += rows[:, w + r:w + 2 * r][:, ::-1]
    return out


def conv2d_adjoint(img, k, method: str = "auto") -> np.ndarray:
    """Exact transpose of the linear map ``conv2d(., k)``.

    Satisfies <conv2d(a, k), b> == <a, conv2d_adjoint(b, k)> for all a, b.
    """
    img = as_image(img)
    k = as_kernel(k)
    _check_fits(img, k)
    r = k.shape[0] // 2
    if r == 0:
        return img * k[0, 0]
    if method == "auto":
        method = "fft" if k.shape[0] >= FFT_KERNEL_CUTOFF else "direct"
    kr = k[::-1, ::-1]
    if method == "fft":
        full = signal.fftconvolve(img, kr, mode="full")
    elif method == "direct":
        full = signal.convolve2d(img, kr, mode="full")
    else:
        raise ValueError(f"unknown convolution method {method!r}")
    h, w = img.shape
    return _fold_symmetric(full, h, w, r)


def patch_correlation(base: np.ndarray, adj: np.ndarray, m: int) -> np.ndarray:
    """Correlate a symmetrically padded signal against a same-sized adjoint.

    Returns the m x m array C[b] = sum_p pad(base)[b + p] * adj[p]; together
    with a 180-degree rotation this yields kernel-coefficient gradients of
    <adj, conv2d(base, k)>.
    """
    r = m // 2
    padded = np.pad(base, r, mode="symmetric")
    h, w = adj.shape
    flat = adj.ravel()
    out = np.empty((m, m))
    for a in range(m):
        for b in range(m):
            out[a, b] = np.dot(padded[a:a + h, b:b + w].ravel(), flat)
    return out
