"""Pure-numpy projector kernels (fallback backend).

Ray-driven Joseph-style line integrals: each ray marches in unit steps
along its dominant axis and linearly interpolates between the two pixels
straddling the crossing point on the other axis. ``back_project`` scatters
with the identical weights, so it is the exact adjoint of
``forward_project`` up to float summation order.

The compiled extension in ``_projcore`` implements the same arithmetic;
this module is selected at import time when the extension is missing.
"""

import numpy as np

BACKEND = "numpy"


def _march_params(ct, st):
    # Rays satisfy x*ct + y*st = s. When |st| >= |ct| the ray is closer to
    # horizontal, so march over columns (x) and interpolate rows, else the
    # transpose. Step length along the ray per unit march step is 1/|dominant|.
    if abs(st) >= abs(ct):
        return True, ct, st, 1.0 / abs(st)
    return False, st, ct, 1.0 / abs(ct)


def forward_project(image, cos_t, sin_t, n_dets, det_spacing):
    """Project an (n, n) image into an (n_views, n_dets) sinogram."""
    image = np.ascontiguousarray(image, dtype=np.float64)
    n = image.shape[0]
    c = (n - 1) / 2.0
    n_views = len(cos_t)
    sino = np.empty((n_views, n_dets))
    offsets = (np.arange(n_dets) - (n_dets - 1) / 2.0) * det_spacing
    coords = np.arange(n) - c
    idx = np.broadcast_to(np.arange(n), (n_dets, n))
    for v in range(n_views):
        march_x, a, b, dl = _march_params(cos_t[v], sin_t[v])
        img = image if march_x else image.T
        f = (offsets[:, None] - coords[None, :] * a) / b + c
        p0 = np.floor(f).astype(np.int64)
        w1 = f - p0
        p1 = p0 + 1
        vals = np.where(
            (p0 >= 0) & (p0 < n), (1.0 - w1) * img[np.clip(p0, 0, n - 1), idx], 0.0
        )
        vals += np.where((p1 >= 0) & (p1 < n), w1 * img[np.clip(p1, 0, n - 1), idx], 0.0)
        sino[v] = vals.sum(axis=1) * dl
    return sino


def back_project(sino, cos_t, sin_t, n, det_spacing):
    """Adjoint of ``forward_project``: (n_views, n_dets) -> (n, n)."""
    sino = np.ascontiguousarray(sino, dtype=np.float64)
    n_dets = sino.shape[1]
    c = (n - 1) / 2.0
    out = np.zeros(n * n)
    out_t = np.zeros(n * n)
    offsets = (np.arange(n_dets) - (n_dets - 1) / 2.0) * det_spacing
    coords = np.arange(n) - c
    idx = np.broadcast_to(np.arange(n), (n_dets, n))
    for v in range(len(cos_t)):
        march_x, a, b, dl = _march_params(cos_t[v], sin_t[v])
        f = (offsets[:, None] - coords[None, :] * a) / b + c
        p0 = np.floor(f).astype(np.int64)
        w1 = f - p0
        p1 = p0 + 1
        q = sino[v][:, None] * dl
        target = out if march_x else out_t
        m0 = (p0 >= 0) & (p0 < n)
        m1 = (p1 >= 0) & (p1 < n)
        # img[p, m] flattens to p * n + m; bincount is the fast scatter-add.
        target += np.bincount(
            (np.clip(p0, 0, n - 1) * n + idx)[m0],
            weights=((1.0 - w1) * q)[m0],
            minlength=n * n,
        )
        target += np.bincount(
            (np.clip(p1, 0, n - 1) * n + idx)[m1], weights=(w1 * q)[m1], minlength=n * n
        )
    return out.reshape(n, n) + out_t.reshape(n, n).T
