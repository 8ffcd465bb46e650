"""Rollout-based training and stage-wise sampling of the unfolded network.

Training draws a random target layer per sample, rolls the current network
from the degraded endpoint down to that layer without gradients (re-noising
each intermediate state), then takes one optimizer step on a two-term loss:
the drawn layer against the bridge interpolant, and the final layer against
the clean image.  Sampling runs all K layers with optional noise injection
whose magnitude can be scaled for ablations.
"""

import dataclasses
import os

import numpy as np

from . import autodiff as ad
from . import ctf
from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import psnr, ssim
from .network import compute_cond, init_model, layer_apply
from .seeding import rng_from


@dataclasses.dataclass
class TrainConfig:
    K: int = 6
    epochs: int = 200
    batch_size: int = 4
    lr: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    sigma_train_scale: float = 1.0
    dataset: str = ""
    ckpt_every: int = 500
    max_steps: int = 0
    per_layer: bool = False

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"TrainConfig: K must be >= 2, got {self.K}")
        if self.batch_size < 1:
            raise ValueError("TrainConfig: batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("TrainConfig: lr must be positive")


@dataclasses.dataclass
class Trajectory:
    """States of the no-grad rollout, ordered from node K down to node 1."""

    states: list
    noises: list

    @property
    def K(self):
        return len(self.states)

    def state_at(self, node):
        """State x at grid node index ``node`` (K down to 1)."""
        if not 1 <= node <= self.K:
            raise ValueError(f"state_at: node must be in 1..{self.K}")
        return self.states[self.K - node]


def rollout_no_grad(x1, y, params, geom, sched, rng, sigma_scale=1.0, cond=None):
    """Run layers K..2 without gradients, re-noising after each layer.

    The state at node i-1 is layer_i(state at node i) plus sigma at the
    source time t_i (zero at t=1, so the first transition is deterministic).
    """
    x1 = np.asarray(x1, dtype=np.float64)
    if cond is None:
        cond = compute_cond(np.asarray(y, dtype=np.float64), geom)
    states = [x1]
    noises = []
    with ad.no_grad():
        for i in range(params.K, 1, -1):
            out = layer_apply(ad.Tensor(states[-1]), y, i, params, geom, sched, cond)
            z = rng.standard_normal(x1.shape)
            noises.append(z)
            states.append(out.data + sigma_scale * sched.sigma[i] * z)
    return Trajectory(states=states, noises=noises)


def training_target(x0, x1, k, sched):
    """Bridge interpolant at node k-1: (1-alpha) x0 + alpha x1."""
    if not 2 <= k <= sched.K:
        raise ValueError(f"training_target: k must be in 2..{sched.K}, got {k}")
    a = sched.alpha[k - 1]
    return (1.0 - a) * np.asarray(x0, dtype=np.float64) + a * np.asarray(x1, dtype=np.float64)


def training_step(samples, params, opt, geom, sched, rngs, sigma_scale=1.0,
                  after_backward=None):
    """One optimizer step over a batch; returns mean (L1, L2) and the k draws.

    ``samples`` is a list of (x0, x1, y, cond) tuples; ``rngs`` supplies one
    generator per sample, consumed as: the layer draw k, then the rollout
    noise.  Gradients flow only through the drawn layer and layer 1; a
    non-finite loss aborts with a diagnostic.
    """
    if len(samples) != len(rngs):
        raise ValueError("training_step: need one rng per sample")
    K = params.K
    total = None
    l1_sum = 0.0
    l2_sum = 0.0
    ks = []
    for (x0, x1, y, cond), rng in zip(samples, rngs):
        if cond is None:
            cond = compute_cond(np.asarray(y, dtype=np.float64), geom)
        k = int(rng.integers(2, K + 1))
        ks.append(k)
        traj = rollout_no_grad(x1, y, params, geom, sched, rng,
                               sigma_scale=sigma_scale, cond=cond)
        out_k = layer_apply(ad.Tensor(traj.state_at(k)), y, k, params, geom, sched, cond)
        l1 = ad.mse_loss(out_k, ad.Tensor(training_target(x0, x1, k, sched)))
        out_1 = layer_apply(ad.Tensor(traj.state_at(1)), y, 1, params, geom, sched, cond)
        l2 = ad.mse_loss(out_1, ad.Tensor(np.asarray(x0, dtype=np.float64)))
        l1_sum += l1.item()
        l2_sum += l2.item()
        loss = ad.add(l1, l2)
        total = loss if total is None else ad.add(total, loss)
    total = ad.scale(total, 1.0 / len(samples))
    if not np.isfinite(total.item()):
        raise RuntimeError(
            f"training_step: non-finite loss {total.item()} (k draws {ks}); aborting"
        )
    ad.backward(total)
    if after_backward is not None:
        after_backward(params)
    # Step sizes of undrawn layers get no gradient this step; give them an
    # explicit zero so the optimizer can run its decay bookkeeping.
    for p in params.parameters():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    opt.step()
    opt.zero_grad()
    params.project_mu()
    return l1_sum / len(samples), l2_sum / len(samples), ks


def _model_records(model, opt):
    records = list(model.named_arrays())
    state = opt.state_arrays()
    for name in sorted(state):
        records.append((name, state[name]))
    return records


def save_model_checkpoint(path, model, opt, config_echo=""):
    save_checkpoint(path, _model_records(model, opt), model.mu_values(), config_echo)


def load_model_checkpoint(path, geom, tcfg):
    """Rebuild a model (and optimizer state dict) from a checkpoint file."""
    records, mu, config_text = load_checkpoint(path)
    model = init_model(geom, K=len(mu), seed=tcfg.seed, per_layer=tcfg.per_layer, L=1.0)
    model.load_arrays(records)
    model.set_mu_values(mu)
    opt_state = {k: v for k, v in records.items() if k.startswith("opt.")}
    return model, opt_state, config_text


def train(dataset_root, geom, sched, tcfg, out_dir, config_echo="", resume=None):
    """Run the training loop over a simulated dataset directory.

    Emits loss.csv and periodic checkpoints into ``out_dir`` and returns a
    summary dict.  ``resume`` continues bit-exactly from a saved checkpoint
    because every random draw is keyed by the global step index.
    """
    os.makedirs(out_dir, exist_ok=True)
    data = ctf.load_dataset(dataset_root, subdirs=("clean", "sino_ldct", "fbp_ldct"))
    n_samples = len(data["names"])
    if n_samples == 0:
        raise ValueError(f"train: dataset at {dataset_root} is empty")
    conds = [compute_cond(y, geom) for y in data["sino_ldct"]]

    model = init_model(geom, tcfg.K, seed=tcfg.seed, per_layer=tcfg.per_layer)
    opt = ad.AdamW(model.parameters(), lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    if resume is not None:
        records, mu, _ = load_checkpoint(resume)
        model.load_arrays(records)
        model.set_mu_values(mu)
        opt.load_state_arrays(records)

    spe = (n_samples + tcfg.batch_size - 1) // tcfg.batch_size
    total_steps = tcfg.epochs * spe
    if tcfg.max_steps:
        total_steps = min(total_steps, tcfg.max_steps)

    loss_rows = []
    perm = None
    perm_epoch = -1
    step = opt.step_count
    while step < total_steps:
        epoch = step // spe
        pos = step % spe
        if epoch != perm_epoch:
            perm = rng_from(tcfg.seed, "train", "shuffle", epoch).permutation(n_samples)
            perm_epoch = epoch
        idx = perm[pos * tcfg.batch_size : (pos + 1) * tcfg.batch_size]
        samples = [
            (data["clean"][j], data["fbp_ldct"][j], data["sino_ldct"][j], conds[j])
            for j in idx
        ]
        rngs = [rng_from(tcfg.seed, "train", "step", step, pos_in_batch)
                for pos_in_batch in range(len(idx))]
        try:
            l1, l2, _ = training_step(samples, model, opt, geom, sched, rngs,
                                      sigma_scale=tcfg.sigma_train_scale)
        except RuntimeError:
            save_model_checkpoint(os.path.join(out_dir, "ckpt-abort.bin"),
                                  model, opt, config_echo)
            raise
        step = opt.step_count
        loss_rows.append((step, l1, l2))
        if tcfg.ckpt_every and step % tcfg.ckpt_every == 0:
            save_model_checkpoint(os.path.join(out_dir, f"ckpt-{step:06d}.bin"),
                                  model, opt, config_echo)

    final_path = os.path.join(out_dir, "ckpt-final.bin")
    save_model_checkpoint(final_path, model, opt, config_echo)
    with open(os.path.join(out_dir, "loss.csv"), "w") as fh:
        fh.write("step,L1,L2\n")
        for row in loss_rows:
            fh.write(f"{row[0]},{row[1]!r},{row[2]!r}\n")
    return {"final_ckpt": final_path, "loss_rows": loss_rows, "model": model,
            "steps_run": len(loss_rows)}


def sample(y, x1, params, geom, sched, sigma_scale=1.0, final_noise=True,
           rng=None, cond=None):
    """Reconstruct from the degraded endpoint with K layer applications.

    After each layer the state is re-noised at sigma_scale times the source
    node's sigma; ``final_noise=False`` suppresses the very last injection.
    The noise stream is consumed identically either way, so runs with
    different scales share their draws when seeded alike.
    """
    if rng is None:
        rng = rng_from(0, "sample")
    x = np.asarray(x1, dtype=np.float64)
    if cond is None:
        cond = compute_cond(np.asarray(y, dtype=np.float64), geom)
    with ad.no_grad():
        for k in range(params.K, 0, -1):
            out = layer_apply(ad.Tensor(x), y, k, params, geom, sched, cond)
            z = rng.standard_normal(x.shape)
            x = out.data
            if k > 1 or final_noise:
                x = x + sigma_scale * sched.sigma[k] * z
    return x


def reconstruct_set(ys, x1s, params, geom, sched, sigma_scale, final_noise, seed):
    """Sample every test pair with per-image seeded noise streams."""
    recons = []
    for i, (y, x1) in enumerate(zip(ys, x1s)):
        rng = rng_from(seed, "sample", i)
        recons.append(sample(y, x1, params, geom, sched, sigma_scale=sigma_scale,
                             final_noise=final_noise, rng=rng))
    return recons


def ablate_sigma(scales, cleans, ys, x1s, params, geom, sched, seed,
                 csv_path=None, final_noise=True):
    """Sweep the sampling-noise scale and report mean PSNR/SSIM per value.

    Noise streams are keyed by image index only, so every scale sees the
    same draws and the sweep isolates the effect of the scale itself.
    """
    rows = []
    for c in scales:
        recons = reconstruct_set(ys, x1s, params, geom, sched, c, final_noise, seed)
        ps = [psnr(r, ref) for r, ref in zip(recons, cleans)]
        ss = [ssim(r, ref) for r, ref in zip(recons, cleans)]
        rows.append((c, float(np.mean(ps)), float(np.mean(ss))))
    if csv_path is not None:
        with open(csv_path, "w") as fh:
            fh.write("sigma_scale,psnr_db,ssim\n")
            for c, p, s in rows:
                fh.write(f"{c!r},{p!r},{s!r}\n")
    return rows
