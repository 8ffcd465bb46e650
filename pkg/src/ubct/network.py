"""Unfolded reconstruction network.

Each of the K layers is a gradient step on the data-fidelity term (with a
learnable scalar step size) followed by a small time-conditioned CNN that
refines the intermediate image.  The CNN weights are shared across layers
by default, with the layer's time value injected as a per-channel bias; a
per-layer-weights variant keeps K independent copies.
"""

import numpy as np

from . import autodiff as ad
from .physics import back_project, forward_project, power_iteration_L
from .seeding import rng_from

HIDDEN = 32
EMB_DIM = 32
KERNEL = 3
N_HIDDEN = 3


class PomNet:
    """Residual refinement CNN: 3 hidden conv layers plus a zero-init head.

    Input is the two-channel stack [current image, normalized backprojection
    of the measurements]; a sinusoidal embedding of the layer time is
    projected to a per-channel bias before each activation.  The head is
    zero-initialized so the whole block is the identity at start, and
    ``eval_count`` ticks once per forward pass.
    """

    def __init__(self, rng, hidden=HIDDEN, emb_dim=EMB_DIM):
        self.hidden = hidden
        self.emb_dim = emb_dim
        self.eval_count = 0
        self.conv_w = []
        self.conv_b = []
        self.time_w = []
        self.time_b = []
        c_in = 2
        for _ in range(N_HIDDEN):
            fan_in = c_in * KERNEL * KERNEL
            w = rng.standard_normal((hidden, c_in, KERNEL, KERNEL)) * np.sqrt(2.0 / fan_in)
            self.conv_w.append(ad.Tensor(w, requires_grad=True))
            self.conv_b.append(ad.Tensor(np.zeros(hidden), requires_grad=True))
            tw = rng.standard_normal((hidden, emb_dim)) * np.sqrt(1.0 / emb_dim)
            self.time_w.append(ad.Tensor(tw, requires_grad=True))
            self.time_b.append(ad.Tensor(np.zeros(hidden), requires_grad=True))
            c_in = hidden
        self.head_w = ad.Tensor(np.zeros((1, hidden, KERNEL, KERNEL)), requires_grad=True)
        self.head_b = ad.Tensor(np.zeros(1), requires_grad=True)

    def parameters(self):
        for i in range(N_HIDDEN):
            yield self.conv_w[i]
            yield self.conv_b[i]
            yield self.time_w[i]
            yield self.time_b[i]
        yield self.head_w
        yield self.head_b

    def named_parameters(self, prefix="pom"):
        for i in range(N_HIDDEN):
            yield f"{prefix}.conv{i}.weight", self.conv_w[i]
            yield f"{prefix}.conv{i}.bias", self.conv_b[i]
            yield f"{prefix}.time{i}.weight", self.time_w[i]
            yield f"{prefix}.time{i}.bias", self.time_b[i]
        yield f"{prefix}.head.weight", self.head_w
        yield f"{prefix}.head.bias", self.head_b

    def residual(self, x, t):
        """Predicted correction for a (2, H, W) input at time t."""
        self.eval_count += 1
        emb = ad.time_embedding(t, self.emb_dim)
        h = x
        for i in range(N_HIDDEN):
            h = ad.conv2d(h, self.conv_w[i], self.conv_b[i])
            tb = ad.linear(emb, self.time_w[i], self.time_b[i])
            h = ad.add_channel_bias(h, tb)
            h = ad.silu(h)
        return ad.conv2d(h, self.head_w, self.head_b)


class ModelParams:
    """Learnable state: the refinement net(s) and the K step-size scalars."""

    def __init__(self, nets, mu, shared):
        self.nets = nets
        self.mu = mu
        self.shared = shared

    @property
    def K(self):
        return len(self.mu)

    def net_for(self, k):
        if self.shared:
            return self.nets[0]
        return self.nets[k - 1]

    def parameters(self):
        for net in self.nets:
            yield from net.parameters()
        yield from self.mu

    def named_arrays(self):
        """Ordered (name, array) pairs for checkpointing (step sizes excluded)."""
        out = []
        for idx, net in enumerate(self.nets):
            prefix = "pom" if self.shared else f"pom{idx + 1}"
            for name, p in net.named_parameters(prefix):
                out.append((name, p.data))
        return out

    def load_arrays(self, records):
        for idx, net in enumerate(self.nets):
            prefix = "pom" if self.shared else f"pom{idx + 1}"
            for name, p in net.named_parameters(prefix):
                arr = np.asarray(records[name], dtype=np.float64)
                if arr.shape != p.shape:
                    raise ValueError(
                        f"checkpoint record {name} has shape {arr.shape}, expected {p.shape}"
                    )
                p.data = np.ascontiguousarray(arr)

    def mu_values(self):
        return np.array([float(m.data[0]) for m in self.mu])

    def set_mu_values(self, values):
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != len(self.mu):
            raise ValueError(f"expected {len(self.mu)} step sizes, got {values.size}")
        for m, v in zip(self.mu, values):
            m.data = np.array([v])

    def project_mu(self):
        """Clamp step sizes to be nonnegative (applied after optimizer steps)."""
        for m in self.mu:
            np.maximum(m.data, 0.0, out=m.data)

    @property
    def eval_count(self):
        return sum(net.eval_count for net in self.nets)

    def reset_eval_count(self):
        for net in self.nets:
            net.eval_count = 0


def init_model(geom, K, seed=0, per_layer=False, L=None, hidden=HIDDEN, emb_dim=EMB_DIM):
    """Fresh model with step sizes at the safe value 1/L.

    L is the spectral norm of the normal operator, estimated by power
    iteration unless supplied.
    """
    if K < 2:
        raise ValueError(f"init_model: K must be >= 2, got {K}")
    if L is None:
        L = power_iteration_L(geom)
    rng = rng_from(seed, "init")
    n_nets = K if per_layer else 1
    nets = [PomNet(rng, hidden=hidden, emb_dim=emb_dim) for _ in range(n_nets)]
    mu = [ad.Tensor(np.array([1.0 / L]), requires_grad=True) for _ in range(K)]
    return ModelParams(nets, mu, shared=not per_layer)


def compute_cond(y, geom):
    """Backprojection of the measurements, normalized to zero mean and unit
    variance, used as the conditioning channel of the refinement net."""
    bp = back_project(y, geom)
    sd = bp.std()
    return (bp - bp.mean()) / max(sd, 1e-12)


def gdm(x, y, mu_k, geom):
    """Gradient step on the data term: r = x - mu * Ht(H x - y).

    Differentiable in both the image and the step size; the update operator
    is symmetric, so the image gradient reuses the same normal operator.
    """
    if not isinstance(x, ad.Tensor):
        x = ad.Tensor(x)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != geom.image_shape:
        raise ValueError(f"gdm: image shape {x.shape} != {geom.image_shape}")
    if y.shape != geom.sino_shape:
        raise ValueError(f"gdm: sinogram shape {y.shape} != {geom.sino_shape}")
    mu_val = float(mu_k.data[0])
    bp_resid = back_project(forward_project(x.data, geom) - y, geom)
    out = ad.Tensor(x.data - mu_val * bp_resid)

    def bwd(g):
        grad_x = g - mu_val * back_project(forward_project(g, geom), geom)
        grad_mu = np.array([-float(np.vdot(g, bp_resid))])
        return (grad_x, grad_mu)

    return ad.record_op(out, (x, mu_k), bwd)


def pom(r, t, cond, net):
    """Refinement step: r plus the CNN-predicted correction."""
    if not isinstance(r, ad.Tensor):
        r = ad.Tensor(r)
    cond = np.asarray(cond, dtype=np.float64)
    if cond.shape != r.shape:
        raise ValueError(f"pom: cond shape {cond.shape} != image shape {r.shape}")
    stacked = ad.stack_channels([r, ad.Tensor(cond)])
    res = net.residual(stacked, t)
    return ad.add(r, ad.reshape(res, r.shape))


def layer_apply(x, y, k, params, geom, sched, cond=None):
    """One unfolded iteration at layer k, mapping time t_k toward t_{k-1}."""
    if not 1 <= k <= params.K:
        raise ValueError(f"layer_apply: k must be in 1..{params.K}, got {k}")
    if cond is None:
        cond = compute_cond(np.asarray(y, dtype=np.float64), geom)
    r = gdm(x, y, params.mu[k - 1], geom)
    return pom(r, float(sched.t[k]), cond, params.net_for(k))
