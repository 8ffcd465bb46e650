"""Diffusion-bridge time schedule.

A triangular rate profile beta(t) on [0, 1] is integrated in closed form to
produce the forward/backward variance budgets, the mixing coefficient alpha,
and the bridge noise level sigma at each node of a discrete time grid.  The
closed forms are exact antiderivatives of the piecewise-linear rate, so the
test suite can hold them against adaptive quadrature at tight tolerance.
"""

import dataclasses
import io

import numpy as np

__all__ = [
    "ScheduleConfig",
    "Schedule",
    "beta_at",
    "gammas_at",
    "mixing_at",
    "time_grid",
    "build_schedule",
    "bridge_sample",
    "dump_csv",
]


def time_grid(K):
    """Uniform grid t_k = k/K for k = 0..K."""
    if K < 2:
        raise ValueError(f"time_grid: K must be >= 2, got {K}")
    return np.arange(K + 1, dtype=np.float64) / K


@dataclasses.dataclass(frozen=True)
class ScheduleConfig:
    """Rate endpoints plus the discrete time grid."""

    beta_min: float = 1e-8
    beta_max: float = 3.005e-6
    K: int = 6
    grid: np.ndarray = None

    def __post_init__(self):
        if not (0.0 < self.beta_min <= self.beta_max):
            raise ValueError(
                "ScheduleConfig: need 0 < beta_min <= beta_max, got "
                f"{self.beta_min} and {self.beta_max}"
            )
        if self.K < 2:
            raise ValueError(f"ScheduleConfig: K must be >= 2, got {self.K}")
        grid = self.grid
        if grid is None:
            grid = time_grid(self.K)
        grid = np.asarray(grid, dtype=np.float64)
        if grid.shape != (self.K + 1,):
            raise ValueError(
                f"ScheduleConfig: grid must have K+1 = {self.K + 1} nodes, "
                f"got shape {grid.shape}"
            )
        if grid[0] != 0.0 or grid[-1] != 1.0:
            raise ValueError("ScheduleConfig: grid must start at 0 and end at 1")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("ScheduleConfig: grid must be strictly increasing")
        grid.flags.writeable = False
        object.__setattr__(self, "grid", grid)


def _check_domain(t, name):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"{name}: t must lie in [0, 1]")
    return t


def beta_at(t, cfg):
    """Triangular rate: beta_min at the endpoints, beta_max at t = 0.5."""
    t = _check_domain(t, "beta_at")
    rise = 2.0 * (cfg.beta_max - cfg.beta_min)
    out = cfg.beta_min + rise * np.where(t <= 0.5, t, 1.0 - t)
    return out if out.ndim else float(out)


def _gamma_sq(t, cfg):
    # Exact antiderivative of the triangular rate from 0 to t.  The two
    # branches meet at t = 0.5 where the integral equals a quarter of
    # (beta_min + beta_max); the total over [0, 1] is half that sum.
    bmin, bmax = cfg.beta_min, cfg.beta_max
    lo = bmin * t + (bmax - bmin) * t * t
    s = t - 0.5
    hi = 0.25 * (bmin + bmax) + bmax * s - (bmax - bmin) * s * s
    return np.where(t <= 0.5, lo, hi)


def gammas_at(t, cfg):
    """Accumulated rate from 0 to t and from t to 1, as a pair.

    The rate is symmetric about t = 0.5, so the remaining integral is the
    leading integral of the reflected time; computing it that way keeps the
    two halves bit-identical at the midpoint.
    """
    t = _check_domain(t, "gammas_at")
    g = _gamma_sq(t, cfg)
    g_rev = _gamma_sq(1.0 - t, cfg)
    if g.ndim:
        return g, g_rev
    return float(g), float(g_rev)


def mixing_at(t, cfg):
    """Mixing coefficient alpha and bridge noise sigma at time t.

    alpha = g/(g + g~) and sigma^2 = g*g~/(g + g~), where g and g~ are the
    two accumulated rates.  The closed forms vanish identically at the
    endpoints, so alpha(0) = 0, alpha(1) = 1 and sigma = 0 there without
    special-casing.
    """
    t = _check_domain(t, "mixing_at")
    g, g_rev = np.broadcast_arrays(*gammas_at(t, cfg))
    total = g + g_rev
    alpha = g / total
    sigma = np.sqrt(g * g_rev / total)
    if alpha.ndim:
        return alpha, sigma
    return float(alpha), float(sigma)


@dataclasses.dataclass(frozen=True)
class Schedule:
    """Per-node schedule values over the time grid (arrays of length K+1)."""

    t: np.ndarray
    beta: np.ndarray
    gamma_sq: np.ndarray
    gamma_tilde_sq: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for f in dataclasses.fields(self):
            getattr(self, f.name).flags.writeable = False

    @property
    def K(self):
        return len(self.t) - 1

    def node_index(self, t):
        """Grid index of time t; t must be a grid node."""
        i = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[i] - t) > 1e-12:
            raise ValueError(f"time {t} is not on the schedule grid")
        return i


def build_schedule(cfg):
    grid = cfg.grid
    g, g_rev = gammas_at(grid, cfg)
    alpha, sigma = mixing_at(grid, cfg)
    return Schedule(
        t=grid.copy(),
        beta=np.asarray(beta_at(grid, cfg)),
        gamma_sq=g,
        gamma_tilde_sq=g_rev,
        alpha=alpha,
        sigma=sigma,
    )


def bridge_sample(x0, x1, t, sched, rng, sigma_scale=1.0):
    """Draw from the bridge at time t: (1-alpha)*x0 + alpha*x1 + sigma*z.

    t must be a grid node.  ``sigma_scale`` multiplies only the noise term.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(
            f"bridge_sample: endpoint shapes differ, {x0.shape} vs {x1.shape}"
        )
    i = sched.node_index(t)
    a = sched.alpha[i]
    s = sigma_scale * sched.sigma[i]
    out = (1.0 - a) * x0 + a * x1
    if s > 0.0:
        out = out + s * rng.standard_normal(x0.shape)
    return out


def dump_csv(sched, dest):
    """Write the schedule as CSV with columns t,beta,gamma_sq,gamma_tilde_sq,alpha,sigma."""
    buf = io.StringIO()
    buf.write("t,beta,gamma_sq,gamma_tilde_sq,alpha,sigma\n")
    for i in range(len(sched.t)):
        row = (
            sched.t[i],
            sched.beta[i],
            sched.gamma_sq[i],
            sched.gamma_tilde_sq[i],
            sched.alpha[i],
            sched.sigma[i],
        )
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    text = buf.getvalue()
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w") as fh:
            fh.write(text)
    return text
