"""Image similarity metrics: cross-correlation and structural similarity."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


def _pair(a, b):
    a = np.asarray(getattr(a, "pixels", a), dtype=np.float64)
    b = np.asarray(getattr(b, "pixels", b), dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"images must share a 2D shape, got {a.shape} vs {b.shape}")
    return a, b


def ccr(a, b):
    """Sum of products of mean-centered pixels."""
    a, b = _pair(a, b)
    return float(((a - a.mean()) * (b - b.mean())).sum())


def ccr_norm(a, b):
    """Normalized cross-correlation in [-1, 1]; undefined for constant images."""
    a, b = _pair(a, b)
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da**2).sum() * (db**2).sum())
    if denom == 0.0:
        raise ValueError("ccr_norm is undefined for constant images")
    return float((da * db).sum() / denom)


def mssim(a, b, window=11):
    """Mean SSIM over all sliding windows (uniform weighting).

    Uses the standard constants C1=(0.01*255)^2, C2=(0.03*255)^2 and sample
    (N-1) variance/covariance estimates within each window.
    """
    a, b = _pair(a, b)
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 3")
    if window > min(a.shape):
        raise ValueError(f"window {window} larger than image dims {a.shape}")
    wa = sliding_window_view(a, (window, window)).reshape(-1, window * window)
    wb = sliding_window_view(b, (window, window)).reshape(-1, window * window)
    n = window * window
    mu_a = wa.mean(axis=1)
    mu_b = wb.mean(axis=1)
    var_a = ((wa - mu_a[:, None]) ** 2).sum(axis=1) / (n - 1)
    var_b = ((wb - mu_b[:, None]) ** 2).sum(axis=1) / (n - 1)
    cov = ((wa - mu_a[:, None]) * (wb - mu_b[:, None])).sum(axis=1) / (n - 1)
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean())


@dataclass(frozen=True)
class SimilarityReport:
    """One CSV row of the similarity metrics for a recovered image pair."""

    image_id: str
    n_runs: int
    config_hash: str
    ccr: float
    ccr_norm_raw: float
    ccr_norm_denoised: float
    mssim_raw: float
    mssim_denoised: float

    CSV_HEADER = (
        "image_id,n_runs,config_hash,ccr,ccr_norm_raw,ccr_norm_denoised,"
        "mssim_raw,mssim_denoised"
    )

    def csv_row(self):
        return (
            f"{self.image_id},{self.n_runs},{self.config_hash},{self.ccr!r},"
            f"{self.ccr_norm_raw!r},{self.ccr_norm_denoised!r},"
            f"{self.mssim_raw!r},{self.mssim_denoised!r}"
        )

    @classmethod
    def from_csv_row(cls, row):
        parts = row.strip().split(",")
        if len(parts) != 8:
            raise ValueError(f"expected 8 CSV fields, got {len(parts)}")
        return cls(
            image_id=parts[0],
            n_runs=int(parts[1]),
            config_hash=parts[2],
            ccr=float(parts[3]),
            ccr_norm_raw=float(parts[4]),
            ccr_norm_denoised=float(parts[5]),
            mssim_raw=float(parts[6]),
            mssim_denoised=float(parts[7]),
        )


def similarity_report(original, recovered, image_id="", config_hash=""):
    """Metrics of a RecoveredImage against the original input image."""
    return SimilarityReport(
        image_id=image_id,
        n_runs=recovered.n_runs,
        config_hash=config_hash,
        ccr=ccr(original, recovered.denoised_image),
        ccr_norm_raw=ccr_norm(original, recovered.binary_image),
        ccr_norm_denoised=ccr_norm(original, recovered.denoised_image),
        mssim_raw=mssim(original, recovered.binary_image),
        mssim_denoised=mssim(original, recovered.denoised_image),
    )
