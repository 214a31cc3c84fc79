"""Two-phase training (GAN, then embedding), LR schedule, checkpoints, pipeline.

Every pipeline stage is a function from input files to output files; the
CLI commands and :func:`run_pipeline` call the same stage functions, so a
chain of commands reproduces the pipeline's artifacts byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import evalrank
from .configio import atomic_write_text, format_kv, format_value, from_kv, read_kv, to_kv
from .dcdl_loss import TripletConfig, dcdl_objective, lineage_index, sample_batch
from .errors import ConfigError, DcdlError, LoadError, NumericalError, UsageError
from .multiorder import build_tri_order_sets, parse_combination
from .numerics import AdamState, Layer, MlpParams, Rng, adam_step, init_mlp, mlp_forward, splitmix64
from .oneview_gan import NETWORKS, GanModel, GanTrainConfig, augment_dataset, train_gan
from .synthcam import (
    DatasetManifest,
    SampleRecord,
    assign_sides,
    generate_dataset,
    read_dataset_with_header,
    split_one_view,
    write_dataset,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dcdlearn-checkpoint"
CHECKPOINT_VERSION = 1


# --- learning-rate schedule ---------------------------------------------------


@dataclass
class LrSchedule:
    gamma0: float = 3e-4
    t0: int = 1500
    t1: int = 3000

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ConfigError("gamma0 must be > 0")
        if not 0 <= self.t0 < self.t1:
            raise ConfigError("schedule needs 0 <= t0 < t1")


def lr_at(schedule: LrSchedule, t: int) -> float:
    """gamma0 up to t0, then exponential decay reaching gamma0 * 0.001 at t1."""
    if t < 0:
        raise UsageError("iteration must be >= 0")
    if t > schedule.t1:
        raise UsageError(f"training complete: iteration {t} is past t1={schedule.t1}")
    if t <= schedule.t0:
        return schedule.gamma0
    if t == schedule.t1:
        return schedule.gamma0 * 0.001
    return schedule.gamma0 * 0.001 ** ((t - schedule.t0) / (schedule.t1 - schedule.t0))


# --- embedding training -------------------------------------------------------

REID_ALIASES = {"m": "margin", "lambda": "lam"}


@dataclass
class ReidConfig:
    seed: int = 0
    K: int = 12
    margin_mode: str = "hinge"
    margin: float = 0.3
    lam: float = 0.001
    gamma0: float = 3e-4
    t0: int = 1500
    t1: int = 3000
    # stop early for smoke runs; None trains to t1
    max_iterations: Optional[int] = None
    embed_hidden: int = 64
    embed_dim: int = 32
    train_orders: tuple[int, ...] = (0, 1, 2)
    sources_per_identity: int = 2
    checkpoint_every: int = 0

    def validate(self) -> None:
        self.schedule
        self.triplet
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if not self.train_orders or any(o not in (0, 1, 2) for o in self.train_orders):
            raise ConfigError("train_orders must be a non-empty subset of 0,1,2")
        if len(set(self.train_orders)) != len(self.train_orders):
            raise ConfigError("train_orders has repeats")
        if self.sources_per_identity < 1:
            raise ConfigError("sources_per_identity must be >= 1")
        if self.embed_hidden < 1 or self.embed_dim < 1:
            raise ConfigError("embedding dims must be >= 1")

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.gamma0, self.t0, self.t1)

    @property
    def triplet(self) -> TripletConfig:
        return TripletConfig(self.margin_mode, self.margin, self.lam)

    @property
    def iterations(self) -> int:
        if self.max_iterations is None:
            return self.t1
        return min(self.t1, self.max_iterations)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ReidConfig":
        values = read_kv(path) if path is not None else {}
        values.update(overrides or {})
        return from_kv(cls, values, REID_ALIASES)

    def to_kv(self) -> dict:
        return to_kv(self, REID_ALIASES)

    def to_text(self) -> str:
        return format_kv(self.to_kv())


@dataclass
class EmbeddingModel:
    params: MlpParams

    def embed(self, features) -> np.ndarray:
        return mlp_forward(self.params, features)

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.params.copy())

    def equals(self, other: "EmbeddingModel") -> bool:
        return self.params.equals(other.params)


def init_embedding(rng: Rng, feature_dim: int, hidden: int = 64, embed_dim: int = 32) -> EmbeddingModel:
    return EmbeddingModel(init_mlp(rng, [feature_dim, hidden, embed_dim], ["tanh", "none"]))


@dataclass
class ReidLogEntry:
    t: int
    lr: float
    loss: float
    triplet: float
    center: float


@dataclass
class TrainRun:
    seed: int
    t: int = 0
    history: list[ReidLogEntry] = field(default_factory=list)
    checkpoint_paths: list[str] = field(default_factory=list)
    phase: str = "reid"


def train_reid(
    records: Sequence[SampleRecord],
    config: ReidConfig,
    model: EmbeddingModel | None = None,
    checkpoint_cb: Callable[[int, EmbeddingModel], str | None] | None = None,
    progress: Callable[[ReidLogEntry], None] | None = None,
) -> tuple[EmbeddingModel, TrainRun]:
    """PK batch -> objective -> Adam at lr_at(t), for t = 1 .. iterations."""
    config.validate()
    records = [r for r in records if r.order in config.train_orders]
    if not records:
        raise ConfigError("no training records in the requested orders")
    rng = Rng(config.seed)
    if model is None:
        model = init_embedding(rng, len(records[0].features), config.embed_hidden, config.embed_dim)
    params = model.params.copy()
    state = AdamState.for_params(params)
    schedule, triplet = config.schedule, config.triplet
    orders = tuple(sorted(config.train_orders))
    index = lineage_index(records, orders)
    identities = sorted({r.identity_id for r in records})
    run = TrainRun(seed=config.seed)
    for t in range(1, config.iterations + 1):
        batch = sample_batch(index, config.K, rng, orders, config.sources_per_identity, identities)
        loss, grads, parts = dcdl_objective(batch, params, triplet)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss at iteration {t}")
        lr = lr_at(schedule, t)
        try:
            params = adam_step(params, grads, state, lr)
        except NumericalError as exc:
            raise NumericalError(f"iteration {t}: {exc}") from exc
        entry = ReidLogEntry(t, lr, loss, parts["triplet"], parts["center"])
        run.history.append(entry)
        run.t = t
        if progress is not None:
            progress(entry)
        if checkpoint_cb and config.checkpoint_every and t % config.checkpoint_every == 0 \
                and t != config.iterations:
            path = checkpoint_cb(t, EmbeddingModel(params))
            if path:
                run.checkpoint_paths.append(str(path))
    return EmbeddingModel(params), run


def reid_log_to_csv(history: Sequence[ReidLogEntry]) -> str:
    lines = ["t,lr,loss,triplet,center\n"]
    lines += [f"{e.t},{e.lr!r},{e.loss!r},{e.triplet!r},{e.center!r}\n" for e in history]
    return "".join(lines)


def gan_log_to_csv(history) -> str:
    lines = ["epoch,lr_g,lr_d,d_loss,g_loss,adv,cycle,identity\n"]
    lines += [
        f"{e.epoch},{e.lr_g!r},{e.lr_d!r},{e.d_loss!r},{e.g_loss!r},{e.adv!r},{e.cycle!r},{e.identity!r}\n"
        for e in history
    ]
    return "".join(lines)


# --- checkpoints --------------------------------------------------------------


def _params_to_obj(params: MlpParams) -> list[dict]:
    return [
        {
            "activation": l.activation,
            "shape": list(l.weight.shape),
            "weight": [float(v) for v in l.weight.ravel()],
            "bias": [float(v) for v in l.bias],
        }
        for l in params.layers
    ]


def _params_from_obj(obj) -> MlpParams:
    try:
        layers = []
        for l in obj:
            out_dim, in_dim = l["shape"]
            w = np.array(l["weight"], dtype=np.float64).reshape(out_dim, in_dim)
            layers.append(Layer(w, np.array(l["bias"], dtype=np.float64), l["activation"]))
        return MlpParams(layers)
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"bad layer record: {exc}") from exc


def save_checkpoint(model: GanModel | EmbeddingModel, path, meta: dict | None = None) -> None:
    """Line-delimited JSON: a header line, then one line per network."""
    if isinstance(model, GanModel):
        kind, nets = "gan", model.networks()
    elif isinstance(model, EmbeddingModel):
        kind, nets = "embedding", {"f_w": model.params}
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "networks": list(nets),
        "meta": meta or {},
    }
    lines = [json.dumps({"header": header}, sort_keys=True)]
    for name, params in nets.items():
        lines.append(json.dumps({"network": name, "layers": _params_to_obj(params)}, allow_nan=False))
    atomic_write_text(path, "".join(l + "\n" for l in lines))


def load_checkpoint_with_meta(path) -> tuple[GanModel | EmbeddingModel, dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    lines = text.split("\n")
    if not text.endswith("\n"):
        raise LoadError(f"{path}: truncated checkpoint (no final newline)")
    lines = [l for l in lines if l]
    try:
        objs = [json.loads(l) for l in lines]
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: malformed checkpoint line ({exc.msg})") from exc
    if not objs or not isinstance(objs[0], dict) or "header" not in objs[0]:
        raise LoadError(f"{path}: missing checkpoint header")
    header = objs[0]["header"]
    if header.get("format") != CHECKPOINT_FORMAT:
        raise LoadError(f"{path}: not a checkpoint file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise LoadError(f"{path}: unsupported checkpoint version {header.get('version')}")
    nets = {}
    for obj in objs[1:]:
        if not isinstance(obj, dict) or "network" not in obj or "layers" not in obj:
            raise LoadError(f"{path}: bad network record")
        nets[obj["network"]] = _params_from_obj(obj["layers"])
    expected = header.get("networks", [])
    if list(nets) != list(expected):
        raise LoadError(f"{path}: expected networks {expected}, found {list(nets)}")
    kind = header.get("kind")
    if kind == "gan":
        if tuple(expected) != NETWORKS:
            raise LoadError(f"{path}: GAN checkpoint must hold {NETWORKS}")
        model = GanModel(**nets)
    elif kind == "embedding":
        model = EmbeddingModel(nets["f_w"])
    else:
        raise LoadError(f"{path}: unknown checkpoint kind {kind!r}")
    return model, header.get("meta", {})


def load_checkpoint(path) -> GanModel | EmbeddingModel:
    return load_checkpoint_with_meta(path)[0]


# --- pipeline stages ----------------------------------------------------------


def derive_seed(seed: int, stream: int) -> int:
    return splitmix64((seed + stream) & ((1 << 64) - 1))[1] & ((1 << 63) - 1)


def _staged(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except DcdlError as exc:
        exc.args = (f"stage {stage}: {exc}",)
        exc.stage = stage
        raise


def stage_gen_data(manifest: DatasetManifest, out_dir) -> dict[str, str]:
    """Generate, split each subset into sides, write train/test record files."""
    out_dir = Path(out_dir)
    ds = generate_dataset(manifest)
    train, test = ds.split_records()
    paths = {}
    common = {
        "kind": "dataset",
        "seed": manifest.seed,
        "manifest": to_kv(manifest),
        "num_samples": len(ds.records),
    }
    for name, recs, stream in (("train", train, 1), ("test", test, 2)):
        sides = split_one_view(recs, derive_seed(manifest.seed, stream)) if recs else {}
        recs = assign_sides(recs, sides)
        path = out_dir / f"{name}.jsonl"
        write_dataset(path, recs, dict(common, split=name))
        paths[name] = str(path)
    atomic_write_text(out_dir / "manifest.cfg", manifest.to_text())
    return paths


def stage_train_gan(train_path, config: GanTrainConfig, out_path, progress=None) -> str:
    records, header = read_dataset_with_header(train_path)
    model, history = train_gan(records, config, progress=progress)
    meta = {"seed": config.seed, "config": to_kv(config), "data": (header or {}).get("manifest", {})}
    save_checkpoint(model, out_path, meta)
    atomic_write_text(f"{out_path}.log.csv", gan_log_to_csv(history))
    return str(out_path)


def stage_augment(data_path, gan_path, out_path) -> str:
    records, header = read_dataset_with_header(data_path)
    model, meta = load_checkpoint_with_meta(gan_path)
    if not isinstance(model, GanModel):
        raise LoadError(f"{gan_path} is not a GAN checkpoint")
    order0 = [r for r in records if r.order == 0]
    id_base = (header or {}).get("num_samples")
    aug = augment_dataset(model, order0, id_base)
    out_header = {
        "kind": "augmented",
        "seed": (header or {}).get("seed"),
        "source": header or {},
        "gan": meta,
    }
    write_dataset(out_path, sorted(order0 + aug, key=lambda r: r.sample_id), out_header)
    return str(out_path)


def stage_train_reid(aug_train_path, config: ReidConfig, out_path, progress=None) -> str:
    records, header = read_dataset_with_header(aug_train_path)
    meta = {"seed": config.seed, "config": {k: v if not isinstance(v, tuple) else list(v)
                                            for k, v in config.to_kv().items()}}

    def write_intermediate(t, model):
        path = f"{out_path}.t{t}"
        save_checkpoint(model, path, dict(meta, iteration=t))
        return path

    model, run = train_reid(records, config, checkpoint_cb=write_intermediate, progress=progress)
    save_checkpoint(model, out_path, dict(meta, iteration=run.t))
    atomic_write_text(f"{out_path}.log.csv", reid_log_to_csv(run.history))
    return str(out_path)


def load_test_sets(aug_test_path, embed_path):
    records, _ = read_dataset_with_header(aug_test_path)
    model, meta = load_checkpoint_with_meta(embed_path)
    if not isinstance(model, EmbeddingModel):
        raise LoadError(f"{embed_path} is not an embedding checkpoint")
    return build_tri_order_sets(model.embed, records), meta


def stage_eval(aug_test_path, embed_path, combinations: Sequence[str], out_prefix,
               protocol: evalrank.EvalProtocol | None = None) -> list[evalrank.EvalReport]:
    sets, meta = load_test_sets(aug_test_path, embed_path)
    combos = [parse_combination(c) for c in combinations]
    reports = evalrank.ablate_combinations(sets, combos, protocol)
    cfg = meta.get("config", {})
    report_meta = {"seed": meta.get("seed"), "iteration": meta.get("iteration"),
                   "lambda": cfg.get("lambda"), "train_orders": format_value(cfg.get("train_orders"))}
    evalrank.write_reports(out_prefix, reports, report_meta)
    return reports


@dataclass
class PipelineArtifacts:
    train_data: str
    test_data: str
    gan_checkpoint: str
    aug_train: str
    aug_test: str
    embed_checkpoint: str
    report_csv: str
    report_md: str
    reports: list


def run_pipeline(
    manifest: DatasetManifest,
    gan_config: GanTrainConfig,
    reid_config: ReidConfig,
    out_dir,
    combinations: Sequence[str] = ("d1+d2+d10",),
    protocol: evalrank.EvalProtocol | None = None,
) -> PipelineArtifacts:
    """generate -> split -> train_gan -> augment -> train_reid -> evaluate."""
    out = Path(out_dir)
    data = _staged("gen-data", stage_gen_data, manifest, out / "data")
    gan = _staged("train-gan", stage_train_gan, data["train"], gan_config, out / "gan.ckpt")
    aug_train = _staged("augment", stage_augment, data["train"], gan, out / "aug" / "train.jsonl")
    aug_test = _staged("augment", stage_augment, data["test"], gan, out / "aug" / "test.jsonl")
    emb = _staged("train-reid", stage_train_reid, aug_train, reid_config, out / "embed.ckpt")
    reports = _staged("eval", stage_eval, aug_test, emb, list(combinations), out / "report", protocol)
    return PipelineArtifacts(data["train"], data["test"], gan, aug_train, aug_test, emb,
                             str(out / "report.csv"), str(out / "report.md"), reports)
