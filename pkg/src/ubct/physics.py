"""Parallel-beam CT physics: projector pair, FBP, noise model, phantoms.

Images are (n, n) float64 arrays of per-pixel attenuation; sinograms are
(n_views, n_dets) float64 arrays of line integrals in pixel-length units.
The projector pair is a matched forward/adjoint, which keeps the gradient
step of the unfolded network an honest gradient of ||Hx - y||^2 / 2.
"""

import dataclasses
import warnings

import numpy as np

from ubct import kernels
from ubct.seeding import rng_from

# Count floor applied before the log transform, avoiding -ln(0).
COUNT_FLOOR = 1.0


@dataclasses.dataclass(frozen=True, eq=False)
class Geometry:
    """Parallel-beam scan description binding image and sinogram shapes.

    ``angles`` default to n_views values uniform over [0, pi). Detector
    offsets are centered: detector d sits at (d - (n_dets-1)/2) * det_spacing
    from the rotation axis.
    """

    n: int = 64
    n_views: int = 90
    n_dets: int = 95
    det_spacing: float = 1.0
    angles: np.ndarray = None

    def __post_init__(self):
        if self.n < 1 or self.n_views < 1 or self.n_dets < 1:
            raise ValueError("Geometry: n, n_views, n_dets must be >= 1")
        if self.det_spacing <= 0:
            raise ValueError("Geometry: det_spacing must be > 0")
        if self.angles is None:
            angles = np.arange(self.n_views) * (np.pi / self.n_views)
        else:
            angles = np.asarray(self.angles, dtype=np.float64)
        if angles.shape != (self.n_views,):
            raise ValueError("Geometry: angles must have length n_views")
        if np.any(angles < 0.0) or np.any(angles >= np.pi):
            raise ValueError("Geometry: angles must lie in [0, pi)")
        if self.n_views > 1 and np.any(np.diff(angles) <= 0):
            raise ValueError("Geometry: angles must be strictly increasing")
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)

    @property
    def image_shape(self):
        return (self.n, self.n)

    @property
    def sino_shape(self):
        return (self.n_views, self.n_dets)


def forward_project(image, geom):
    """Line integrals of ``image`` along every (angle, detector) ray."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != geom.image_shape:
        raise ValueError(f"forward_project: image shape {image.shape} != {geom.image_shape}")
    return kernels.forward_project(
        image, np.cos(geom.angles), np.sin(geom.angles), geom.n_dets, geom.det_spacing
    )


def back_project(sino, geom):
    """Exact adjoint of :func:`forward_project`."""
    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape != geom.sino_shape:
        raise ValueError(f"back_project: sinogram shape {sino.shape} != {geom.sino_shape}")
    return kernels.back_project(
        sino, np.cos(geom.angles), np.sin(geom.angles), geom.n, geom.det_spacing
    )


# ---------------------------------------------------------------------------
# filtered back-projection

FBP_FILTERS = ("ramp", "ram-lak-windowed")


def _fbp_filter(m, det_spacing, name):
    freqs = np.fft.rfftfreq(m, d=det_spacing)
    filt = freqs.copy()
    if name == "ram-lak-windowed":
        filt *= np.cos(0.5 * np.pi * freqs / freqs[-1])
    elif name != "ramp":
        raise ValueError(f"fbp: unknown filter {name!r}, expected one of {FBP_FILTERS}")
    return filt


def fbp(sino, geom, filter_name="ramp"):
    """Filtered back-projection reconstruction.

    Each view is ramp-filtered in the frequency domain (zero-padded to
    avoid circular wraparound), back-projected through the adjoint, and
    scaled by pi/n_views per the view integral (times det_spacing for the
    detector quadrature).
    """
    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape != geom.sino_shape:
        raise ValueError(f"fbp: sinogram shape {sino.shape} != {geom.sino_shape}")
    m = 1 << max(6, int(np.ceil(np.log2(2 * geom.n_dets))))
    padded = np.zeros((geom.n_views, m))
    padded[:, : geom.n_dets] = sino
    filt = _fbp_filter(m, geom.det_spacing, filter_name)
    filtered = np.fft.irfft(np.fft.rfft(padded, axis=1) * filt, n=m, axis=1)[:, : geom.n_dets]
    scale = np.pi / geom.n_views * geom.det_spacing
    return back_project(filtered, geom) * scale


# ---------------------------------------------------------------------------
# low-dose noise model


@dataclasses.dataclass(frozen=True)
class NoiseConfig:
    """Photon-count noise model for a low-dose scan.

    ``i0`` is the normal-dose incident photon count per detector bin and
    ``dose_fraction`` the low-dose fraction of it. ``att_scale`` calibrates
    unit-valued phantoms to optical depth: a line integral y attenuates the
    beam by exp(-att_scale * y). Without it, [0, 1]-valued images over
    tens of pixels would starve every ray at any realistic i0.
    """

    i0: float = 1e5
    dose_fraction: float = 0.2
    elec_var: float = 8.2
    seed: int = 0
    att_scale: float = 0.25

    def __post_init__(self):
        if self.i0 <= 0:
            raise ValueError("NoiseConfig: i0 must be > 0")
        if not 0.0 < self.dose_fraction <= 1.0:
            raise ValueError("NoiseConfig: dose_fraction must be in (0, 1]")
        if self.elec_var < 0:
            raise ValueError("NoiseConfig: elec_var must be >= 0")
        if self.att_scale <= 0:
            raise ValueError("NoiseConfig: att_scale must be > 0")


def simulate_counts(clean, cfg, rng):
    """Draw noisy detector counts for a clean sinogram.

    Per bin: counts ~ Poisson(dose_fraction * i0 * exp(-att_scale * y))
    plus zero-mean Gaussian electronic noise of variance ``elec_var``.
    """
    lam = cfg.dose_fraction * cfg.i0 * np.exp(-cfg.att_scale * clean)
    counts = rng.poisson(lam).astype(np.float64)
    if cfg.elec_var > 0:
        counts += rng.normal(0.0, np.sqrt(cfg.elec_var), size=clean.shape)
    return counts


def simulate_ldct(clean, cfg, index=None):
    """Low-dose realization of a clean sinogram, in the same units.

    Counts are floored at COUNT_FLOOR before the log transform; output is
    bit-reproducible for a fixed ``cfg.seed``. ``index`` selects an
    independent substream, one per dataset item.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if clean.size and clean.min() < 0:
        raise ValueError("simulate_ldct: clean sinogram must be nonnegative")
    labels = ("ldct",) if index is None else ("ldct", index)
    rng = rng_from(cfg.seed, *labels)
    counts = np.maximum(simulate_counts(clean, cfg, rng), COUNT_FLOOR)
    return -np.log(counts / (cfg.dose_fraction * cfg.i0)) / cfg.att_scale


# ---------------------------------------------------------------------------
# phantoms

# Modified Shepp-Logan ellipses: (added value, a, b, x0, y0, angle in degrees)
# on the [-1, 1]^2 square.
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)

PHANTOM_KINDS = ("shepp_logan", "random_ellipses")


def _pixel_grid(n):
    # Pixel-center coordinates on [-1, 1]^2; row index increases downward.
    half = n / 2.0
    xs = (np.arange(n) - (n - 1) / 2.0) / half
    x = xs[None, :]
    y = -xs[:, None]
    return x, y


def _render_ellipses(n, ellipses):
    x, y = _pixel_grid(n)
    img = np.zeros((n, n))
    for value, a, b, x0, y0, deg in ellipses:
        phi = np.deg2rad(deg)
        xr = (x - x0) * np.cos(phi) + (y - y0) * np.sin(phi)
        yr = -(x - x0) * np.sin(phi) + (y - y0) * np.cos(phi)
        img += np.where((xr / a) ** 2 + (yr / b) ** 2 <= 1.0, value, 0.0)
    return np.clip(img, 0.0, 1.0)


def random_ellipse_set(rng):
    """Draw 4-10 random ellipse parameter tuples."""
    count = int(rng.integers(4, 11))
    ellipses = []
    for _ in range(count):
        value = float(rng.uniform(0.08, 0.45))
        a = float(rng.uniform(0.08, 0.45))
        b = float(rng.uniform(0.08, 0.45))
        radius = float(rng.uniform(0.0, 0.6))
        azimuth = float(rng.uniform(0.0, 2.0 * np.pi))
        deg = float(rng.uniform(0.0, 180.0))
        ellipses.append((value, a, b, radius * np.cos(azimuth), radius * np.sin(azimuth), deg))
    return ellipses


def make_phantom(kind, n, seed=0, index=None):
    """Deterministic synthetic phantom with values in [0, 1].

    A pixel's value is the clamped sum of the intensities of the ellipses
    containing its center. ``index`` selects an independent substream, one
    per dataset item.
    """
    if n < 16:
        raise ValueError(f"make_phantom: n must be >= 16, got {n}")
    if kind == "shepp_logan":
        return _render_ellipses(n, SHEPP_LOGAN_ELLIPSES)
    if kind == "random_ellipses":
        labels = ("phantom", kind) if index is None else ("phantom", kind, index)
        return _render_ellipses(n, random_ellipse_set(rng_from(seed, *labels)))
    raise ValueError(f"make_phantom: unsupported kind {kind!r}, expected one of {PHANTOM_KINDS}")


def disc_phantom(n, radius, value=1.0, supersample=8):
    """Centered uniform disc; radius in pixels.

    ``supersample`` > 1 antialiases the rim by subpixel coverage, which is
    what the analytic chord-length comparison wants.
    """
    c = (n - 1) / 2.0
    sub = (np.arange(supersample) + 0.5) / supersample - 0.5
    img = np.zeros((n, n))
    base = np.arange(n) - c
    for dy in sub:
        yy = (base + dy)[:, None] ** 2
        for dx in sub:
            xx = (base + dx)[None, :] ** 2
            img += (yy + xx) <= radius * radius
    return img * (value / supersample**2)


def gaussian_blob(n, sigma, amplitude=1.0):
    """Radially symmetric Gaussian bump centered on the grid."""
    c = (n - 1) / 2.0
    r2 = ((np.arange(n) - c)[:, None] ** 2) + ((np.arange(n) - c)[None, :] ** 2)
    return amplitude * np.exp(-0.5 * r2 / sigma**2)


# ---------------------------------------------------------------------------
# spectral norm estimate


@dataclasses.dataclass
class PowerIterationResult:
    value: float
    vector: np.ndarray
    history: list
    converged: bool


def power_iteration(apply_fn, v0, iters=50, tol=1e-10):
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    ``history`` holds the Rayleigh quotients, which are non-decreasing for
    a PSD operator. Warns and returns the last iterate if ``tol`` is not
    reached within ``iters``.
    """
    if iters < 1:
        raise ValueError("power_iteration: iters must be >= 1")
    v = np.asarray(v0, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("power_iteration: initial vector must be nonzero")
    v = v / norm
    history = []
    value = 0.0
    converged = False
    for _ in range(iters):
        w = apply_fn(v)
        value = float(np.vdot(v, w))
        history.append(value)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            converged = True
            break
        v = w / norm_w
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * max(abs(value), 1e-300):
            converged = True
            break
    if not converged:
        warnings.warn(f"power_iteration: not converged to tol={tol} in {iters} iterations")
    return PowerIterationResult(value=value, vector=v, history=history, converged=converged)


def power_iteration_L(geom, iters=50, tol=1e-8, seed=0):
    """Estimate of the largest eigenvalue of H^T H for this geometry."""
    v0 = rng_from(seed, "power-iteration").standard_normal(geom.image_shape)
    result = power_iteration(
        lambda x: back_project(forward_project(x, geom), geom), v0, iters=iters, tol=tol
    )
    return result.value
