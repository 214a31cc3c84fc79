"""One-view CycleGAN over feature vectors.

Generators are residual MLPs, ``G(x) = x + mlp(x)``, so a zero output layer
gives an exact identity map. Discriminators are plain MLPs with a scalar
head. Adversarial terms use the least-squares form.

L1 terms average over the batch; over coordinates they either average
(``reduction="mean"``, the default, as in image CycleGANs) or sum
(``reduction="sum"``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .configio import format_kv, from_kv, read_kv, to_kv
from .errors import ConfigError, NumericalError, SchemaError
from .numerics import (
    AdamState,
    MlpParams,
    Rng,
    adam_step,
    add_params,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from .synthcam import SampleRecord

NETWORKS = ("G", "F", "D_X", "D_Y")
REDUCTIONS = ("mean", "sum")


@dataclass
class GanModel:
    G: MlpParams
    F: MlpParams
    D_X: MlpParams
    D_Y: MlpParams

    def networks(self) -> dict[str, MlpParams]:
        return {"G": self.G, "F": self.F, "D_X": self.D_X, "D_Y": self.D_Y}

    def copy(self) -> "GanModel":
        return GanModel(self.G.copy(), self.F.copy(), self.D_X.copy(), self.D_Y.copy())

    def equals(self, other: "GanModel") -> bool:
        return all(getattr(self, n).equals(getattr(other, n)) for n in NETWORKS)


@dataclass
class GanLossWeights:
    alpha: float = 10.0
    beta: float = 5.0
    reduction: str = "mean"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"reduction must be one of {REDUCTIONS}")


@dataclass
class GanTrainConfig:
    epochs: int = 600
    batch_size: int = 8
    lr_g: float = 2e-4
    lr_d: float = 1e-4
    decay_start: int = 300
    seed: int = 0
    alpha: float = 10.0
    beta: float = 5.0
    l1_reduction: str = "mean"
    adam_beta1: float = 0.5
    # "identity" zeroes the generator output layer; "random" draws it
    generator_init: str = "identity"

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.decay_start <= self.epochs:
            raise ConfigError("decay_start must lie in [0, epochs]")
        if self.lr_g < 0 or self.lr_d < 0:
            raise ConfigError("learning rates must be >= 0")
        if not 0 <= self.adam_beta1 < 1:
            raise ConfigError("adam_beta1 must lie in [0, 1)")
        if self.generator_init not in ("identity", "random"):
            raise ConfigError("generator_init must be 'identity' or 'random'")
        self.weights

    @property
    def weights(self) -> GanLossWeights:
        return GanLossWeights(self.alpha, self.beta, self.l1_reduction)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "GanTrainConfig":
        values = read_kv(path) if path is not None else {}
        values.update(overrides or {})
        return from_kv(cls, values)

    def to_text(self) -> str:
        return format_kv(to_kv(self))


def init_gan(rng: Rng, feature_dim: int, generator_init: str = "identity") -> GanModel:
    """d_f -> 2 d_f tanh -> d_f residual generators; d_f -> 2 d_f relu -> 1 discriminators."""
    d = feature_dim
    zero = generator_init == "identity"
    G = init_mlp(rng, [d, 2 * d, d], ["tanh", "none"], zero_last=zero)
    F = init_mlp(rng, [d, 2 * d, d], ["tanh", "none"], zero_last=zero)
    D_X = init_mlp(rng, [d, 2 * d, 1], ["relu", "none"])
    D_Y = init_mlp(rng, [d, 2 * d, 1], ["relu", "none"])
    return GanModel(G, F, D_X, D_Y)


def apply_generator(params: MlpParams, x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) + mlp_forward(params, x)


def generator_backward(params: MlpParams, x, output_grad) -> tuple[MlpParams, np.ndarray]:
    grads, input_grad = mlp_backward(params, x, output_grad)
    return grads, input_grad + np.asarray(output_grad, dtype=np.float64)


def _check_batch(*batches) -> None:
    for b in batches:
        if b is None or len(b) == 0:
            raise ConfigError("loss needs a non-empty batch")


def _l1(u: np.ndarray, reduction: str) -> float:
    per_row = np.abs(u).sum(axis=1)
    if reduction == "mean":
        per_row = per_row / u.shape[1]
    return float(per_row.mean())


def _l1_grad(u: np.ndarray, reduction: str) -> np.ndarray:
    scale = len(u) * (u.shape[1] if reduction == "mean" else 1)
    return np.sign(u) / scale


def _disc_scores(D: MlpParams, batch) -> np.ndarray:
    return mlp_forward(D, batch)[:, 0]


# --- values -----------------------------------------------------------------


def loss_identity(G: MlpParams, F: MlpParams, batch_x, batch_y, reduction: str = "mean") -> float:
    """E||F(x) - x||_1 + E||G(y) - y||_1."""
    _check_batch(batch_x, batch_y)
    fx = apply_generator(F, batch_x) - batch_x
    gy = apply_generator(G, batch_y) - batch_y
    return _l1(fx, reduction) + _l1(gy, reduction)


def loss_cycle(G: MlpParams, F: MlpParams, batch_x, batch_y, reduction: str = "mean") -> float:
    """E||F(G(x)) - x||_1 + E||G(F(y)) - y||_1."""
    _check_batch(batch_x, batch_y)
    ux = apply_generator(F, apply_generator(G, batch_x)) - batch_x
    uy = apply_generator(G, apply_generator(F, batch_y)) - batch_y
    return _l1(ux, reduction) + _l1(uy, reduction)


def loss_adv_discriminator(D: MlpParams, real_batch, fake_batch) -> float:
    _check_batch(real_batch, fake_batch)
    real = _disc_scores(D, real_batch)
    fake = _disc_scores(D, fake_batch)
    return float(np.mean((real - 1.0) ** 2) + np.mean(fake ** 2))


def loss_adv_generator(D: MlpParams, fake_batch) -> float:
    _check_batch(fake_batch)
    return float(np.mean((_disc_scores(D, fake_batch) - 1.0) ** 2))


def total_generator_loss(model: GanModel, weights: GanLossWeights, batch_x, batch_y) -> float:
    adv = loss_adv_generator(model.D_Y, apply_generator(model.G, batch_x)) + loss_adv_generator(
        model.D_X, apply_generator(model.F, batch_y)
    )
    r = weights.reduction
    return float(
        adv
        + weights.alpha * loss_cycle(model.G, model.F, batch_x, batch_y, r)
        + weights.beta * loss_identity(model.G, model.F, batch_x, batch_y, r)
    )


def total_discriminator_loss(model: GanModel, batch_x, batch_y) -> float:
    fake_y = apply_generator(model.G, batch_x)
    fake_x = apply_generator(model.F, batch_y)
    return loss_adv_discriminator(model.D_Y, batch_y, fake_y) + loss_adv_discriminator(
        model.D_X, batch_x, fake_x
    )


# --- gradients --------------------------------------------------------------


def loss_identity_grad(G, F, batch_x, batch_y, reduction: str = "mean"):
    _check_batch(batch_x, batch_y)
    ux = mlp_forward(F, batch_x)  # F(x) - x
    uy = mlp_forward(G, batch_y)
    value = _l1(ux, reduction) + _l1(uy, reduction)
    gF, _ = mlp_backward(F, batch_x, _l1_grad(ux, reduction))
    gG, _ = mlp_backward(G, batch_y, _l1_grad(uy, reduction))
    return value, {"G": gG, "F": gF}


def _cycle_half(first, second, batch, reduction):
    mid = apply_generator(first, batch)
    u = apply_generator(second, mid) - batch
    g_second, g_mid = generator_backward(second, mid, _l1_grad(u, reduction))
    g_first, _ = generator_backward(first, batch, g_mid)
    return _l1(u, reduction), g_first, g_second


def loss_cycle_grad(G, F, batch_x, batch_y, reduction: str = "mean"):
    _check_batch(batch_x, batch_y)
    vx, gG1, gF1 = _cycle_half(G, F, batch_x, reduction)
    vy, gF2, gG2 = _cycle_half(F, G, batch_y, reduction)
    return vx + vy, {"G": add_params(gG1, gG2), "F": add_params(gF1, gF2)}


def loss_adv_discriminator_grad(D, real_batch, fake_batch) -> tuple[float, MlpParams]:
    _check_batch(real_batch, fake_batch)
    both = np.vstack([real_batch, fake_batch])
    s = _disc_scores(D, both)
    n_real = len(real_batch)
    real, fake = s[:n_real], s[n_real:]
    value = float(np.mean((real - 1.0) ** 2) + np.mean(fake ** 2))
    g = np.concatenate([2.0 * (real - 1.0) / len(real), 2.0 * fake / len(fake)])
    g_D, _ = mlp_backward(D, both, g[:, None])
    return value, g_D


def loss_adv_generator_grad(D, fake_batch) -> tuple[float, MlpParams, np.ndarray]:
    """Returns (value, grad w.r.t. D's params, grad w.r.t. the fake batch)."""
    _check_batch(fake_batch)
    s = _disc_scores(D, fake_batch)
    value = float(np.mean((s - 1.0) ** 2))
    g_D, g_fake = mlp_backward(D, fake_batch, (2.0 * (s - 1.0) / len(s))[:, None])
    return value, g_D, g_fake


def total_generator_loss_grad(
    model: GanModel, weights: GanLossWeights, batch_x, batch_y
) -> tuple[float, dict[str, float], dict[str, MlpParams]]:
    """Value, per-term breakdown and gradients for G and F.

    Each generator's uses are stacked into one backward pass: G runs on x
    (adversarial and cycle), on F(y) (cycle) and on y (identity); F mirrors it.
    """
    _check_batch(batch_x, batch_y)
    x = np.asarray(batch_x, dtype=np.float64)
    y = np.asarray(batch_y, dtype=np.float64)
    nx = len(x)
    G, F = model.G, model.F
    r = weights.reduction

    g_res = mlp_forward(G, np.vstack([x, y]))
    gx, gy_res = x + g_res[:nx], g_res[nx:]  # gy_res = G(y) - y
    f_res = mlp_forward(F, np.vstack([y, x]))
    fy, fx_res = y + f_res[: len(y)], f_res[len(y):]

    adv_g, _, g_gx = loss_adv_generator_grad(model.D_Y, gx)
    adv_f, _, g_fy = loss_adv_generator_grad(model.D_X, fy)

    ux = apply_generator(F, gx) - x  # cycle residuals
    uy = apply_generator(G, fy) - y
    cyc = _l1(ux, r) + _l1(uy, r)
    idt = _l1(fx_res, r) + _l1(gy_res, r)
    g_ux = weights.alpha * _l1_grad(ux, r)
    g_uy = weights.alpha * _l1_grad(uy, r)

    gF_cyc, in_gx = generator_backward(F, gx, g_ux)
    gG_cyc, in_fy = generator_backward(G, fy, g_uy)
    gG_rest, _ = mlp_backward(
        G, np.vstack([x, y]), np.vstack([g_gx + in_gx, weights.beta * _l1_grad(gy_res, r)])
    )
    gF_rest, _ = mlp_backward(
        F, np.vstack([y, x]), np.vstack([g_fy + in_fy, weights.beta * _l1_grad(fx_res, r)])
    )
    total = adv_g + adv_f + weights.alpha * cyc + weights.beta * idt
    parts = {"adv_G": adv_g, "adv_F": adv_f, "cycle": cyc, "identity": idt}
    return float(total), parts, {"G": add_params(gG_cyc, gG_rest), "F": add_params(gF_cyc, gF_rest)}


def total_discriminator_loss_grad(model: GanModel, batch_x, batch_y):
    fake_y = apply_generator(model.G, batch_x)
    fake_x = apply_generator(model.F, batch_y)
    v_y, g_DY = loss_adv_discriminator_grad(model.D_Y, batch_y, fake_y)
    v_x, g_DX = loss_adv_discriminator_grad(model.D_X, batch_x, fake_x)
    return v_x + v_y, {"D_X": g_DX, "D_Y": g_DY}


# --- training ---------------------------------------------------------------


def lr_factor(epoch: int, epochs: int, decay_start: int) -> float:
    """Constant until decay_start, then linear towards zero at the end of training."""
    if epoch < decay_start or epochs == decay_start:
        return 1.0
    return max(0.0, (epochs - epoch) / (epochs - decay_start))


@dataclass
class GanEpochLog:
    epoch: int
    lr_g: float
    lr_d: float
    d_loss: float
    g_loss: float
    adv: float
    cycle: float
    identity: float


def side_features(records: list[SampleRecord]) -> tuple[np.ndarray, np.ndarray]:
    xs = [r.features for r in records if r.order == 0 and r.side == "X"]
    ys = [r.features for r in records if r.order == 0 and r.side == "Y"]
    if not xs or not ys:
        raise ConfigError("GAN training needs order-0 records on both sides")
    return np.array(xs), np.array(ys)


def train_gan(
    records: list[SampleRecord] | tuple[np.ndarray, np.ndarray],
    config: GanTrainConfig,
    weights: GanLossWeights | None = None,
    model: GanModel | None = None,
    progress=None,
) -> tuple[GanModel, list[GanEpochLog]]:
    """Alternate one discriminator step and one joint G/F step per batch.

    ``records`` may also be an explicit ``(X, Y)`` pair of feature arrays.
    An epoch covers the larger side once; the smaller side wraps around.
    """
    config.validate()
    weights = weights or config.weights
    if isinstance(records, tuple):
        X, Y = (np.asarray(a, dtype=np.float64) for a in records)
        if len(X) == 0 or len(Y) == 0:
            raise ConfigError("GAN training needs records on both sides")
    else:
        X, Y = side_features(records)
    rng = Rng(config.seed)
    if model is None:
        model = init_gan(rng, X.shape[1], config.generator_init)
    model = model.copy()
    states = {
        name: AdamState.for_params(p, beta1=config.adam_beta1)
        for name, p in model.networks().items()
    }
    B = config.batch_size
    bx_n, by_n = min(B, len(X)), min(B, len(Y))
    n_batches = max(1, math.ceil(max(len(X), len(Y)) / B))
    log: list[GanEpochLog] = []
    for epoch in range(config.epochs):
        f = lr_factor(epoch, config.epochs, config.decay_start)
        lr_g, lr_d = config.lr_g * f, config.lr_d * f
        px = np.array(rng.permutation(len(X)))
        py = np.array(rng.permutation(len(Y)))
        sums = np.zeros(5)
        for b in range(n_batches):
            bx = X[px[(b * B + np.arange(bx_n)) % len(X)]]
            by = Y[py[(b * B + np.arange(by_n)) % len(Y)]]
            d_loss, d_grads = total_discriminator_loss_grad(model, bx, by)
            if not math.isfinite(d_loss):
                raise NumericalError(f"non-finite discriminator loss at epoch {epoch}, batch {b}")
            model.D_X = adam_step(model.D_X, d_grads["D_X"], states["D_X"], lr_d)
            model.D_Y = adam_step(model.D_Y, d_grads["D_Y"], states["D_Y"], lr_d)
            g_loss, parts, g_grads = total_generator_loss_grad(model, weights, bx, by)
            if not math.isfinite(g_loss):
                raise NumericalError(f"non-finite generator loss at epoch {epoch}, batch {b}")
            model.G = adam_step(model.G, g_grads["G"], states["G"], lr_g)
            model.F = adam_step(model.F, g_grads["F"], states["F"], lr_g)
            sums += [d_loss, g_loss, parts["adv_G"] + parts["adv_F"], parts["cycle"],
                     parts["identity"]]
        m = sums / n_batches
        entry = GanEpochLog(epoch, lr_g, lr_d, *(float(v) for v in m))
        log.append(entry)
        if progress is not None:
            progress(entry)
    return model, log


# --- augmentation -----------------------------------------------------------


def augment_dataset(
    model: GanModel, records: list[SampleRecord], id_base: int | None = None
) -> list[SampleRecord]:
    """Mint order-1 and order-2 records for each order-0 record.

    Side X: order 1 = G(x), order 2 = F(G(x)). Side Y: order 1 = F(y),
    order 2 = G(F(y)). The order-k copy of source s gets id ``s + k * id_base``
    (default base: max sample id + 1). Output is sorted by sample id.
    """
    sources = sorted((r for r in records if r.order == 0), key=lambda r: r.sample_id)
    if not sources:
        return []
    if id_base is None:
        id_base = max(r.sample_id for r in records) + 1
    if id_base <= max(r.sample_id for r in sources):
        raise ConfigError("id_base must exceed every order-0 sample id")
    for r in sources:
        if r.side not in ("X", "Y"):
            raise SchemaError(f"sample {r.sample_id} has no side label")
    out = []
    for side, first, second in (("X", model.G, model.F), ("Y", model.F, model.G)):
        group = [r for r in sources if r.side == side]
        if not group:
            continue
        feats = np.array([r.features for r in group])
        o1 = apply_generator(first, feats)
        o2 = apply_generator(second, o1)
        for r, f1, f2 in zip(group, o1, o2):
            for order, f in ((1, f1), (2, f2)):
                out.append(
                    SampleRecord(r.sample_id + order * id_base, r.identity_id, r.camera_id, r.side,
                                 order, r.sample_id, f.copy())
                )
    out.sort(key=lambda r: r.sample_id)
    return out
