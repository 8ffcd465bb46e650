"""Minimal dense-tensor engine with reverse-mode differentiation.

Everything is float64 and CPU-only. A dynamic tape records differentiable
operations per logical thread; ``backward`` replays it in exact reverse
execution order and then clears it. Image-sized problems are the target,
so clarity wins over throughput everywhere except conv2d, which goes
through an im2col matmul to reach BLAS.
"""

import threading
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "record_op",
    "backward",
    "add",
    "mul",
    "scale",
    "silu",
    "tensor_sum",
    "reshape",
    "stack_channels",
    "add_channel_bias",
    "linear",
    "conv2d",
    "mse_loss",
    "time_embedding",
    "AdamW",
]


class Tensor:
    """A dense float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return self.data.item()

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _TapeEntry:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class _EngineState(threading.local):
    def __init__(self):
        self.tape = []
        self.grad_enabled = True


_STATE = _EngineState()


def grad_enabled():
    return _STATE.grad_enabled


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _STATE.grad_enabled
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = prev


def record_op(out, inputs, backward_fn):
    """Record a differentiable op on the active tape.

    ``backward_fn(grad_out)`` must return one gradient array (or None) per
    entry of ``inputs``. Recording is skipped when gradients are disabled
    or no input requires them; the output tensor inherits requires_grad.
    """
    needs = _STATE.grad_enabled and any(t.requires_grad for t in inputs)
    if needs:
        out.requires_grad = True
        _STATE.tape.append(_TapeEntry(out, inputs, backward_fn))
    return out


def backward(loss):
    """Populate gradients of all tensors the scalar ``loss`` depends on.

    Walks the tape in reverse execution order, then clears it; a second
    call without a fresh forward pass raises.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    tape = _STATE.tape
    produced = {id(entry.out) for entry in tape}
    if id(loss) not in produced:
        raise RuntimeError("backward called on a value with no recorded operations")

    grads = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape):
        g_out = grads.pop(id(entry.out), None)
        if g_out is None:
            continue
        input_grads = entry.backward_fn(g_out)
        for t, g in zip(entry.inputs, input_grads):
            if g is None:
                continue
            if t.requires_grad and id(t) not in produced:
                # Leaves receive .grad; intermediate outputs only pass it along.
                t.accumulate_grad(g)
            else:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
    _STATE.tape = []


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    return record_op(out, (a, b), lambda g: (g, g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    return record_op(out, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c):
    """Multiply a tensor by a python scalar."""
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    return record_op(out, (a,), lambda g: (g * c,))


def silu(a):
    """x * sigmoid(x), the activation used throughout the refinement net."""
    a = _as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(a.data * sig)

    def bwd(g):
        return (g * (sig * (1.0 + a.data * (1.0 - sig))),)

    return record_op(out, (a,), bwd)


def tensor_sum(a):
    a = _as_tensor(a)
    out = Tensor(np.array(a.data.sum()))
    return record_op(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return record_op(out, (a,), lambda g: (g.reshape(a.shape),))


def stack_channels(tensors):
    """Stack same-shape 2-d tensors into a (C, H, W) tensor."""
    tensors = [_as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ValueError("stack_channels: inputs must share one shape")
    out = Tensor(np.stack([t.data for t in tensors]))
    return record_op(out, tuple(tensors), lambda g: tuple(g[i] for i in range(len(tensors))))


def add_channel_bias(x, b):
    """Add a per-channel bias vector to a (C, H, W) tensor."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 3 or b.data.ndim != 1 or b.shape[0] != x.shape[0]:
        raise ValueError(f"add_channel_bias: got {x.shape} and {b.shape}")
    out = Tensor(x.data + b.data[:, None, None])
    return record_op(out, (x, b), lambda g: (g, g.sum(axis=(1, 2))))


# ---------------------------------------------------------------------------
# affine and convolution


def linear(x, weight, bias):
    """Affine map weight @ x + bias for a 1-d input."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    m, n = weight.shape
    if x.shape != (n,) or bias.shape != (m,):
        raise ValueError(f"linear: shapes {weight.shape}, {x.shape}, {bias.shape}")
    out = Tensor(weight.data @ x.data + bias.data)

    def bwd(g):
        return (weight.data.T @ g, np.outer(g, x.data), g.copy())

    return record_op(out, (x, weight, bias), bwd)


def _im2col(x, k):
    """(C, H, W) -> (C*k*k, H*W) patch matrix with zero same-padding."""
    c, h, w = x.shape
    p = k // 2
    padded = np.zeros((c, h + 2 * p, w + 2 * p))
    padded[:, p : p + h, p : p + w] = x
    # Assemble tap rows by shifted slices; cheaper than transposing a
    # 5-d sliding-window view into contiguous order.
    cols = np.empty((c, k, k, h, w))
    for dy in range(k):
        for dx in range(k):
            cols[:, dy, dx] = padded[:, dy : dy + h, dx : dx + w]
    return cols.reshape(c * k * k, h * w)


def _conv2d_raw(x, kernel, bias=None):
    c_out, c_in, k, _ = kernel.shape
    h, w = x.shape[1], x.shape[2]
    cols = _im2col(x, k)
    out = (kernel.reshape(c_out, c_in * k * k) @ cols).reshape(c_out, h, w)
    if bias is not None:
        out += bias[:, None, None]
    return out, cols


def conv2d(x, kernel, bias):
    """Same-padded 2-d convolution: (C_in, H, W) -> (C_out, H, W).

    ``kernel`` is (C_out, C_in, k, k) with odd k; padding is zero-fill so
    spatial extents are preserved.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.data.ndim != 3:
        raise ValueError(f"conv2d: input must be (C, H, W), got {x.shape}")
    c_out, c_in, k, k2 = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square with odd size, got {kernel.shape}")
    if x.shape[0] != c_in:
        raise ValueError(f"conv2d: input has {x.shape[0]} channels, kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({c_out},)")

    out_data, cols = _conv2d_raw(x.data, kernel.data, bias.data)
    out = Tensor(out_data)

    def bwd(g):
        h, w = x.shape[1], x.shape[2]
        g_mat = g.reshape(c_out, h * w)
        grad_kernel = (g_mat @ cols.T).reshape(kernel.shape)
        grad_bias = g.sum(axis=(1, 2))
        # Input gradient is the transposed convolution: swap in/out channels
        # and flip the taps, then run the same same-padded correlation.
        k_t = np.ascontiguousarray(kernel.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        grad_x, _ = _conv2d_raw(g, k_t)
        return (grad_x, grad_kernel, grad_bias)

    return record_op(out, (x, kernel, bias), bwd)


def mse_loss(a, b):
    """Mean of squared differences, differentiable w.r.t. both arguments."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mse_loss: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = Tensor(np.array(np.mean(diff * diff)))
    inv_n = 1.0 / diff.size

    def bwd(g):
        base = (2.0 * inv_n) * g.item() * diff
        return (base, -base)

    return record_op(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# time embedding


def time_embedding(t, dim, base=1.0):
    """Sinusoidal embedding of a scalar time in [0, 1].

    Frequencies are geometrically spaced powers of two starting at ``base``:
    f_i = base * 2**i for i < dim/2, and the output is
    [sin(2*pi*f_i*t)..., cos(2*pi*f_i*t)...]. Deterministic; not taped.
    """
    if dim % 2 != 0:
        raise ValueError(f"time_embedding: dim must be even, got {dim}")
    half = dim // 2
    freqs = base * np.exp2(np.arange(half, dtype=np.float64))
    phase = 2.0 * np.pi * freqs * float(t)
    return Tensor(np.concatenate([np.sin(phase), np.cos(phase)]))


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """AdamW with bias-corrected moments and decoupled weight decay."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        """Apply one update; parameters without a gradient raise."""
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise RuntimeError("AdamW.step: parameter has no gradient")
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            if self.weight_decay != 0.0:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self):
        """Optimizer state as named float64 arrays, for checkpointing."""
        arrays = {"opt.step": np.array([float(self.step_count)])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            arrays[f"opt.m.{i}"] = m
            arrays[f"opt.v.{i}"] = v
        return arrays

    def load_state_arrays(self, arrays):
        self.step_count = int(arrays["opt.step"][0])
        for i in range(len(self.params)):
            self.m[i] = np.array(arrays[f"opt.m.{i}"], dtype=np.float64).reshape(
                self.params[i].shape
            )
            self.v[i] = np.array(arrays[f"opt.v.{i}"], dtype=np.float64).reshape(
                self.params[i].shape
            )
