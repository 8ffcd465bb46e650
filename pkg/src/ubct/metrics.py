"""Image fidelity metrics and evaluation reports."""

import dataclasses
import math
import os

import numpy as np

from . import ctf

__all__ = ["psnr", "ssim", "MetricReport", "evaluate", "write_metrics_csv"]


def psnr(a, b, data_range=1.0):
    """Peak signal-to-noise ratio in dB; identical images report +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if data_range <= 0:
        raise ValueError("psnr: data_range must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    g = np.exp(-0.5 * ((np.arange(size) - half) / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


_WINDOW = _gaussian_window()


def _windowed_stats(img, window):
    """Local means of img under the window at all valid positions."""
    k = window.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", view, window)


def ssim(a, b, data_range=1.0):
    """Single-scale structural similarity with an 11x11 Gaussian window.

    Uses the standard constants k1=0.01, k2=0.03 and averages over valid
    window positions only, so images must be at least 11 pixels on a side.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    k = _WINDOW.shape[0]
    if min(a.shape) < k:
        raise ValueError(f"ssim: image smaller than the {k}x{k} window")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _windowed_stats(a, _WINDOW)
    mu_b = _windowed_stats(b, _WINDOW)
    mu_aa = _windowed_stats(a * a, _WINDOW)
    mu_bb = _windowed_stats(b * b, _WINDOW)
    mu_ab = _windowed_stats(a * b, _WINDOW)
    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclasses.dataclass
class MetricReport:
    """Per-image metric rows plus their mean and standard deviation."""

    ids: list
    psnr_db: list
    ssim: list

    def aggregate(self):
        p = np.asarray(self.psnr_db)
        s = np.asarray(self.ssim)
        return (float(p.mean()), float(p.std()), float(s.mean()), float(s.std()))


def write_metrics_csv(report, path):
    """Emit id,psnr_db,ssim rows with a final AGGREGATE mean±sd row."""
    pm, psd, sm, ssd = report.aggregate()
    lines = ["id,psnr_db,ssim"]
    for i, pv, sv in zip(report.ids, report.psnr_db, report.ssim):
        lines.append(f"{i},{pv!r},{sv!r}")
    lines.append(f"AGGREGATE,{pm!r}±{psd!r},{sm!r}±{ssd!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def evaluate(recon_dir, reference_dir, data_range=1.0, csv_path=None):
    """Compare matching file sets from two directories.

    Files are paired by name; a missing counterpart raises.  Returns a
    MetricReport; optionally writes the CSV alongside.
    """
    recon_files = ctf.list_arrays(recon_dir)
    ref_files = ctf.list_arrays(reference_dir)
    if recon_files != ref_files:
        missing = set(recon_files) ^ set(ref_files)
        raise ValueError(f"evaluate: unpaired files {sorted(missing)}")
    if not recon_files:
        raise ValueError("evaluate: no array files found")
    report = MetricReport(ids=[], psnr_db=[], ssim=[])
    for name in recon_files:
        a = ctf.read_array(os.path.join(recon_dir, name))
        b = ctf.read_array(os.path.join(reference_dir, name))
        report.ids.append(os.path.splitext(name)[0])
        report.psnr_db.append(psnr(a, b, data_range))
        report.ssim.append(ssim(a, b, data_range))
    if csv_path is not None:
        write_metrics_csv(report, csv_path)
    return report
