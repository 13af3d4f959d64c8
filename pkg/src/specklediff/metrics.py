"""Despeckling quality indexes.

Full-reference: PSNR, mean SSIM, edge correlation. No-reference: ratio-image
mean/variance against their ideal L-look values and the coefficient of
variation as a texture-preservation probe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .imageops import as_image, conv2d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# high-pass filter for edge correlation
LAPLACIAN = np.array([[0.0, -1.0, 0.0],
                      [-1.0, 4.0, -1.0],
                      [0.0, -1.0, 0.0]])


def psnr(test, reference, peak: float) -> float:
    """10 log10(peak^2 / MSE); +inf when the images are identical."""
    test = as_image(test, "test")
    reference = as_image(reference, "reference")
    if test.shape != reference.shape:
        raise ValueError("psnr operands must share dimensions")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((test - reference) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA):
    r = (size - 1) / 2.0
    x = np.arange(size) - r
    g = np.exp(-x ** 2 / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def mssim(test, reference, peak: float) -> float:
    """Mean SSIM over sliding Gaussian windows fully inside the image."""
    test = as_image(test, "test")
    reference = as_image(reference, "reference")
    if test.shape != reference.shape:
        raise ValueError("mssim operands must share dimensions")
    if min(test.shape) < SSIM_WINDOW:
        raise ValueError(
            f"images must be at least {SSIM_WINDOW} pixels per side")
    w = _gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    def smooth(a):
        return signal.fftconvolve(a, w, mode="valid")

    mu1 = smooth(test)
    mu2 = smooth(reference)
    s11 = smooth(test * test) - mu1 * mu1
    s22 = smooth(reference * reference) - mu2 * mu2
    s12 = smooth(test * reference) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def edge_correlation(test, reference) -> float:
    """Pearson correlation of Laplacian high-pass versions; 0 when either
    side has no high-frequency content (flat image)."""
    test = as_image(test, "test")
    reference = as_image(reference, "reference")
    if test.shape != reference.shape:
        raise ValueError("edge_correlation operands must share dimensions")
    ht = conv2d(test, LAPLACIAN)
    hr = conv2d(reference, LAPLACIAN)
    ht = ht - ht.mean()
    hr = hr - hr.mean()
    st = float(np.dot(ht.ravel(), ht.ravel()))
    sr = float(np.dot(hr.ravel(), hr.ravel()))
    if st == 0.0 or sr == 0.0:
        return 0.0
    cross = float(np.dot(ht.ravel(), hr.ravel()))
    if cross == st and st == sr:
        return 1.0  # bit-identical high-pass fields
    return cross / math.sqrt(st * sr)


@dataclass(frozen=True)
class RatioStats:
    ri_m: float          # sample mean of noisy / despeckled
    ri_v: float          # sample variance of the ratio image
    ri_v_norm: float     # variance of the mean-normalized ratio image
    ri_v_ideal: float    # (4/pi - 1) / L


def ratio_image_ideal_variance(looks: int) -> float:
    return (4.0 / math.pi - 1.0) / looks


def ratio_image_stats(noisy, despeckled, looks: int) -> RatioStats:
    """Mean and variance of the ratio image noisy / despeckled.

    ri_v_norm rescales the ratio to unit mean before taking the variance;
    that is the quantity the ideal value (4/pi - 1)/L refers to, since the
    ideal ratio-image mean is one.
    """
    noisy = as_image(noisy, "noisy")
    despeckled = as_image(despeckled, "despeckled")
    if noisy.shape != despeckled.shape:
        raise ValueError("ratio operands must share dimensions")
    if np.any(despeckled <= 0):
        raise ValueError("despeckled image must be strictly positive")
    ri = noisy / despeckled
    ri_m = float(np.mean(ri))
    ri_v = float(np.var(ri))
    ri_v_norm = ri_v / (ri_m * ri_m) if ri_m != 0 else math.inf
    return RatioStats(ri_m=ri_m, ri_v=ri_v, ri_v_norm=ri_v_norm,
                      ri_v_ideal=ratio_image_ideal_variance(looks))


def coeff_variation(img) -> float:
    """Standard deviation over mean, computed globally."""
    img = as_image(img, "image")
    mean = float(np.mean(img))
    if mean <= 0:
        raise ValueError("coefficient of variation needs a positive mean")
    return float(np.std(img)) / mean


@dataclass(frozen=True)
class MetricsReport:
    """Per-image metric bundle; unavailable entries are None."""

    psnr: float | None = None
    mssim: float | None = None
    ec: float | None = None
    ri_m: float | None = None
    ri_v: float | None = None
    c_hat: float | None = None
    c_u_ideal: float | None = None
    ri_v_ideal: float | None = None


def compute_report(test, reference=None, noisy=None, looks: int | None = None,
                   peak: float = 255.0) -> MetricsReport:
    test = as_image(test, "test")
    vals = {}
    vals["c_hat"] = coeff_variation(test)
    if reference is not None:
        reference = as_image(reference, "reference")
        vals["psnr"] = psnr(test, reference, peak)
        vals["mssim"] = mssim(test, reference, peak)
        vals["ec"] = edge_correlation(test, reference)
        vals["c_u_ideal"] = coeff_variation(reference)
    if noisy is not None and looks is not None:
        rs = ratio_image_stats(noisy, test, looks)
        vals["ri_m"] = rs.ri_m
        vals["ri_v"] = rs.ri_v
        vals["ri_v_ideal"] = rs.ri_v_ideal
    return MetricsReport(**vals)


TABLE_HEADER = "image,looks,psnr,mssim,ec,ri_m,ri_v,c_hat"


def table_row(name: str, looks, report: MetricsReport) -> str:
    def fmt(v):
        if v is None:
            return ""
        if v == math.inf:
            return "inf"
        return f"{v:.6g}"

    cells = [name, "" if looks is None else str(looks), fmt(report.psnr),
             fmt(report.mssim), fmt(report.ec), fmt(report.ri_m),
             fmt(report.ri_v), fmt(report.c_hat)]
    return ",".join(cells)
