"""Finite-difference check of every analytic loss gradient.

Each case draws a seeded random point (small nets, small batches), computes
the analytic gradient and a central-difference estimate over all trainable
parameters, and reports the worst relative error over the drawn points.
Points within ``kink_tol`` of a non-differentiable spot (L1 zero, ReLU
zero, hinge corner, hard-mining tie) are redrawn.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import oneview_gan as og
from .dcdl_loss import (
    Batch,
    TripletConfig,
    batch_center_loss,
    batch_hard_triplet_loss,
    dcdl_objective,
    pairwise_distance_matrix,
)
from .numerics import MlpParams, Rng, _forward_cache, finite_diff_grad, init_mlp, mlp_backward, mlp_forward, relative_error

D_F = 4  # GAN feature dim
BATCH = 5


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    points: int
    skipped: int
    seconds: float

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


class _Pack:
    """Concatenate several MlpParams into one flat vector and back."""

    def __init__(self, nets: list[MlpParams]):
        self.nets = nets
        self.sizes = [n.size for n in nets]

    def flatten(self) -> np.ndarray:
        return np.concatenate([n.flatten() for n in self.nets])

    def unpack(self, flat) -> list[MlpParams]:
        out, k = [], 0
        for n, s in zip(self.nets, self.sizes):
            out.append(n.with_flat(flat[k:k + s]))
            k += s
        return out


def _relu_margin(D: MlpParams, batch) -> float:
    """Smallest |pre-activation| over ReLU units."""
    m = np.inf
    for layer, (z, _) in zip(D.layers, _forward_cache(D, np.asarray(batch))):
        if layer.activation == "relu":
            m = min(m, float(np.min(np.abs(z))))
    return m


def _generator(rng, d=D_F):
    return init_mlp(rng, [d, 2 * d, d], ["tanh", "none"], last_scale=0.5)


def _discriminator(rng, d=D_F):
    return init_mlp(rng, [d, 2 * d, 1], ["relu", "none"])


def _case_identity(rng):
    G, F = _generator(rng), _generator(rng)
    x, y = rng.normals(BATCH, D_F), rng.normals(BATCH, D_F)
    pack = _Pack([G, F])

    def loss(flat):
        g, f = pack.unpack(flat)
        return og.loss_identity(g, f, x, y, "sum")

    _, grads = og.loss_identity_grad(G, F, x, y, "sum")
    kink = min(np.min(np.abs(og.apply_generator(F, x) - x)), np.min(np.abs(og.apply_generator(G, y) - y)))
    return loss, pack.flatten(), _Pack([grads["G"], grads["F"]]).flatten(), kink


def _case_cycle(rng):
    G, F = _generator(rng), _generator(rng)
    x, y = rng.normals(BATCH, D_F), rng.normals(BATCH, D_F)
    pack = _Pack([G, F])

    def loss(flat):
        g, f = pack.unpack(flat)
        return og.loss_cycle(g, f, x, y, "mean")

    _, grads = og.loss_cycle_grad(G, F, x, y, "mean")
    ux = og.apply_generator(F, og.apply_generator(G, x)) - x
    uy = og.apply_generator(G, og.apply_generator(F, y)) - y
    kink = min(np.min(np.abs(ux)), np.min(np.abs(uy)))
    return loss, pack.flatten(), _Pack([grads["G"], grads["F"]]).flatten(), kink


def _case_adv_discriminator(rng):
    D = _discriminator(rng)
    real, fake = rng.normals(BATCH, D_F), rng.normals(BATCH, D_F)
    _, g = og.loss_adv_discriminator_grad(D, real, fake)
    kink = _relu_margin(D, np.vstack([real, fake]))
    return (lambda flat: og.loss_adv_discriminator(D.with_flat(flat), real, fake),
            D.flatten(), g.flatten(), kink)


def _case_adv_generator(rng):
    """(D(G(x)) - 1)^2 w.r.t. both the generator and the discriminator."""
    G, D = _generator(rng), _discriminator(rng)
    x = rng.normals(BATCH, D_F)
    pack = _Pack([G, D])

    def loss(flat):
        g, d = pack.unpack(flat)
        return og.loss_adv_generator(d, og.apply_generator(g, x))

    fake = og.apply_generator(G, x)
    _, gD, g_fake = og.loss_adv_generator_grad(D, fake)
    gG, _ = og.generator_backward(G, x, g_fake)
    return loss, pack.flatten(), _Pack([gG, gD]).flatten(), _relu_margin(D, fake)


def _case_total_generator(rng):
    model = og.GanModel(_generator(rng), _generator(rng), _discriminator(rng), _discriminator(rng))
    x, y = rng.normals(BATCH, D_F), rng.normals(BATCH, D_F)
    weights = og.GanLossWeights()
    pack = _Pack([model.G, model.F])

    def loss(flat):
        g, f = pack.unpack(flat)
        return og.total_generator_loss(og.GanModel(g, f, model.D_X, model.D_Y), weights, x, y)

    _, _, grads = og.total_generator_loss_grad(model, weights, x, y)
    gx, fy = og.apply_generator(model.G, x), og.apply_generator(model.F, y)
    residuals = [
        og.apply_generator(model.F, gx) - x,
        og.apply_generator(model.G, fy) - y,
        og.apply_generator(model.F, x) - x,
        og.apply_generator(model.G, y) - y,
    ]
    kink = min(min(float(np.min(np.abs(u))) for u in residuals),
               _relu_margin(model.D_Y, gx), _relu_margin(model.D_X, fy))
    return loss, pack.flatten(), _Pack([grads["G"], grads["F"]]).flatten(), kink


# --- metric-learning cases ----------------------------------------------------

EMB_IN, EMB_HIDDEN, EMB_OUT = 6, 8, 4
IDENTITIES, PER_IDENTITY = 3, 6  # 2 sources x 3 orders


def _embed_batch(rng):
    params = init_mlp(rng, [EMB_IN, EMB_HIDDEN, EMB_OUT], ["tanh", "none"])
    n = IDENTITIES * PER_IDENTITY
    labels = np.repeat(np.arange(IDENTITIES), PER_IDENTITY)
    centers = rng.normals(IDENTITIES, EMB_IN)
    feats = centers[labels] + 0.7 * rng.normals(n, EMB_IN)
    batch = Batch(feats, labels, np.tile([0, 1, 2], n // 3), np.repeat(np.arange(n // 3), 3), np.arange(n))
    return params, batch


def _mining_margin(E, labels, margin: float | None) -> float:
    """Distance to the nearest tie in hard mining or hinge corner."""
    dist = pairwise_distance_matrix(E)
    same = labels[:, None] == labels[None, :]
    eye = np.eye(len(labels), dtype=bool)
    gaps = [float(np.min(dist[~eye]))]
    for i in range(len(labels)):
        pos = np.sort(dist[i][same[i] & ~eye[i]])[::-1]
        neg = np.sort(dist[i][~same[i]])
        if len(pos) > 1:
            gaps.append(pos[0] - pos[1])
        if len(neg) > 1:
            gaps.append(neg[1] - neg[0])
        if margin is not None:
            gaps.append(abs(margin + pos[0] - neg[0]))
    return min(gaps)


def _triplet_case(mode: str):
    def case(rng):
        params, batch = _embed_batch(rng)
        cfg = TripletConfig(mode, 0.3 if mode == "hinge" else 0.0, 0.0)

        def loss(flat):
            return batch_hard_triplet_loss(mlp_forward(params.with_flat(flat), batch.features),
                                           batch.labels, cfg)[0]

        E = mlp_forward(params, batch.features)
        _, gE = batch_hard_triplet_loss(E, batch.labels, cfg)
        grads, _ = mlp_backward(params, batch.features, gE)
        kink = _mining_margin(E, batch.labels, cfg.margin if mode == "hinge" else None)
        return loss, params.flatten(), grads.flatten(), kink

    return case


def _case_center(rng):
    params, batch = _embed_batch(rng)

    def loss(flat):
        return batch_center_loss(mlp_forward(params.with_flat(flat), batch.features), batch.labels)[0]

    E = mlp_forward(params, batch.features)
    _, gE = batch_center_loss(E, batch.labels)
    grads, _ = mlp_backward(params, batch.features, gE)
    return loss, params.flatten(), grads.flatten(), np.inf


def _case_objective(rng):
    params, batch = _embed_batch(rng)
    cfg = TripletConfig("hinge", 0.3, 0.01)

    def loss(flat):
        return dcdl_objective(batch, params.with_flat(flat), cfg)[0]

    _, grads, _ = dcdl_objective(batch, params, cfg)
    kink = _mining_margin(mlp_forward(params, batch.features), batch.labels, cfg.margin)
    return loss, params.flatten(), grads.flatten(), kink


CASES: dict[str, Callable] = {
    "identity": _case_identity,
    "cycle": _case_cycle,
    "adv_discriminator": _case_adv_discriminator,
    "adv_generator": _case_adv_generator,
    "total_generator": _case_total_generator,
    "triplet_hinge": _triplet_case("hinge"),
    "triplet_softplus": _triplet_case("softplus"),
    "center": _case_center,
    "objective": _case_objective,
}


def check_case(name: str, rng: Rng, points: int = 20, step: float = 1e-5,
               kink_tol: float = 1e-6, max_draws: int | None = None) -> GradCheckResult:
    case = CASES[name]
    worst, done, skipped = 0.0, 0, 0
    max_draws = max_draws or 10 * points
    t = time.perf_counter()
    while done < points and done + skipped < max_draws:
        loss, flat, analytic, kink = case(rng)
        if kink < kink_tol:
            skipped += 1
            continue
        numeric = finite_diff_grad(loss, flat, step)
        worst = max(worst, relative_error(analytic, numeric))
        done += 1
    return GradCheckResult(name, worst, done, skipped, time.perf_counter() - t)


def run_gradcheck(seed: int = 0, points: int = 20, step: float = 1e-5, kink_tol: float = 1e-6,
                  names=None, progress=None) -> list[GradCheckResult]:
    """One result per loss; every case draws from its own seeded stream."""
    out = []
    for k, name in enumerate(names or CASES):
        if name not in CASES:
            raise KeyError(name)
        res = check_case(name, Rng(seed * 1000 + k), points, step, kink_tol)
        out.append(res)
        if progress is not None:
            progress(res)
    return out
