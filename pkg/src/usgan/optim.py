"""Adam optimizer and the alternating adversarial training loops.

Defaults follow the training protocol: batch size 16, learning rate
2e-4, moment decay rates 0.5 / 0.999 for the GANs; the classifier uses
1e-3 with the usual 0.9 / 0.999.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .classifier import build_classifier
from .gan import GanConfig, GanModel, build_gan, loss_discriminator, loss_generator
from .nn import ParameterTree
from .tensor import Tensor, sample_latent


class TrainingDiverged(RuntimeError):
    def __init__(self, step, detail):
        super().__init__(f"non-finite value at step {step}: {detail}")
        self.step = step


class MissingGradient(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(tree: ParameterTree, state: AdamState):
    """One Adam update over every learnable parameter of ``tree``.

    Raises MissingGradient naming the first parameter without a gradient.
    Buffers are never touched.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in tree.params.items():
        if p.grad is None:
            raise MissingGradient(f"no gradient for parameter {name}")
        g = p.grad.astype(p.data.dtype)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class TrainLog:
    """Per-step loss records plus sparse metric snapshots."""

    records: list = field(default_factory=list)  # (step, loss_d, loss_g, wall_ms)
    snapshots: list = field(default_factory=list)  # (step, name, value)

    def add(self, step, loss_d, loss_g, wall_ms):
        if not (math.isfinite(loss_d) and math.isfinite(loss_g)):
            raise TrainingDiverged(step, f"loss_d={loss_d}, loss_g={loss_g}")
        self.records.append((step, loss_d, loss_g, wall_ms))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss_d", "loss_g", "wall_ms"])
            for step, ld, lg, ms in self.records:
                w.writerow([step, f"{ld:.6f}", f"{lg:.6f}", f"{ms:.3f}"])


def _batch(rng, images, batch_size):
    idx = rng.integers(0, images.shape[0], size=batch_size)
    return Tensor(images[idx])


def train_stage1(
    images,
    config: GanConfig,
    seed,
    steps=2000,
    batch_size=16,
    model: GanModel | None = None,
):
    """Alternating Stage-I training on one class of real images.

    ``images``: float32 array (N, 1, r1, r1) in [-1, 1].  One
    discriminator step on the detached fake batch, then one generator
    step, per iteration.  Deterministic for a fixed seed.
    """
    if images.shape[0] == 0:
        raise ValueError("train_stage1: empty dataset")
    if model is None:
        model = build_gan(config, seed)
    g1, d1 = model.g1, model.d1
    opt_d = AdamState()
    opt_g = AdamState()
    rng = np.random.Generator(np.random.PCG64(seed))
    log = TrainLog()
    for step in range(steps):
        t0 = time.perf_counter()
        real = _batch(rng, images, batch_size)
        z = sample_latent(batch_size, config.nz, rng)
        fake = g1(z, training=True)

        d_real = d1(real, training=True)
        d_fake = d1(fake.detach(), training=True)
        ld = loss_discriminator(d_real, d_fake)
        d1.tree.zero_grad()
        ld.backward()
        adam_step(d1.tree, opt_d)
        d1.tree.zero_grad()

        d_fake2 = d1(fake, training=True)
        lg = loss_generator(d_fake2)
        g1.tree.zero_grad()
        d1.tree.zero_grad()
        lg.backward()
        adam_step(g1.tree, opt_g)
        g1.tree.zero_grad()
        d1.tree.zero_grad()

        log.add(step, ld.item(), lg.item(), (time.perf_counter() - t0) * 1e3)
    return model, log


def train_stage2(
    model: GanModel,
    images_r2,
    config: GanConfig,
    seed,
    steps=2000,
    batch_size=16,
):
    """Train (g2, d2) against real images at r2 using frozen Stage-I
    outputs as the generator condition; Stage-I parameters are untouched."""
    if images_r2.shape[2] != config.r2:
        raise ValueError(
            f"stage-II real images at {images_r2.shape[2]} != configured r2 {config.r2}"
        )
    if model.g2 is None or model.d2 is None:
        raise ValueError("model has no stage-II networks (use_stage2 off?)")
    g1, g2, d2 = model.g1, model.g2, model.d2
    opt_d = AdamState()
    opt_g = AdamState()
    rng = np.random.Generator(np.random.PCG64(seed))
    log = TrainLog()
    for step in range(steps):
        t0 = time.perf_counter()
        real = _batch(rng, images_r2, batch_size)
        z1 = sample_latent(batch_size, config.nz, rng)
        z2 = sample_latent(batch_size, config.nz, rng)
        x1 = g1(z1, training=False).detach()  # frozen Stage-I condition
        fake = g2(x1, z2, training=True)

        d_real = d2(real, training=True)
        d_fake = d2(fake.detach(), training=True)
        ld = loss_discriminator(d_real, d_fake)
        d2.tree.zero_grad()
        ld.backward()
        adam_step(d2.tree, opt_d)
        d2.tree.zero_grad()

        d_fake2 = d2(fake, training=True)
        lg = loss_generator(d_fake2)
        g2.tree.zero_grad()
        d2.tree.zero_grad()
        lg.backward()
        adam_step(g2.tree, opt_g)
        g2.tree.zero_grad()
        d2.tree.zero_grad()

        log.add(step, ld.item(), lg.item(), (time.perf_counter() - t0) * 1e3)
    return model, log


def synthesize(model: GanModel, n, seed, batch_size=16):
    """Sample n images from the full pipeline (Stage-II when present).

    Returns a float32 array (n, 1, r, r) in [-1, 1]."""
    if n <= 0:
        raise ValueError(f"sample count must be positive, got {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    cfg = model.config
    out = []
    remaining = n
    while remaining > 0:
        b = min(batch_size, remaining)
        z1 = sample_latent(b, cfg.nz, rng)
        x = model.g1(z1, training=False)
        if model.g2 is not None:
            z2 = sample_latent(b, cfg.nz, rng)
            x = model.g2(x, z2, training=False)
        out.append(x.data)
        remaining -= b
    return np.concatenate(out, axis=0)


def cross_entropy(logits, labels_onehot):
    """Mean softmax cross-entropy; ``labels_onehot`` is a (B,k) Tensor."""
    logp = logits.softmax(axis=1).log()
    return -((logp * labels_onehot).sum(axes=1).mean())


def train_classifier(
    images,
    labels,
    resolution,
    seed,
    steps=1000,
    batch_size=16,
    lr=1e-3,
    val_images=None,
    val_labels=None,
    eval_every=100,
):
    """Train the compact CNN with softmax cross-entropy and Adam.

    The log stores the step loss in the loss_d column and records
    train/validation accuracy snapshots every ``eval_every`` steps.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("train_classifier requires both classes present")
    net = build_classifier(resolution, seed)
    opt = AdamState(lr=lr, beta1=0.9, beta2=0.999)
    rng = np.random.Generator(np.random.PCG64(seed))
    log = TrainLog()
    n_classes = int(classes.max()) + 1
    eye = np.eye(n_classes, dtype=np.float32)
    for step in range(steps):
        t0 = time.perf_counter()
        idx = rng.integers(0, images.shape[0], size=batch_size)
        x = Tensor(images[idx])
        y = Tensor(eye[labels[idx]])
        logits = net(x, training=True)
        loss = cross_entropy(logits, y)
        net.tree.zero_grad()
        loss.backward()
        adam_step(net.tree, opt)
        net.tree.zero_grad()
        log.add(step, loss.item(), 0.0, (time.perf_counter() - t0) * 1e3)
        if eval_every and (step + 1) % eval_every == 0:
            preds = classify(net, images[idx])
            log.snapshots.append((step, "train_acc", float(np.mean(preds == labels[idx]))))
            if val_images is not None:
                vp = classify(net, val_images)
                log.snapshots.append(
                    (step, "val_acc", float(np.mean(vp == np.asarray(val_labels))))
                )
    return net, log


def classify(net, images, batch_size=64):
    """Eval-mode class predictions for an image array."""
    preds = []
    for i in range(0, images.shape[0], batch_size):
        logits = net(Tensor(images[i : i + batch_size]), training=False)
        preds.append(logits.data.argmax(axis=1))
    return np.concatenate(preds)
