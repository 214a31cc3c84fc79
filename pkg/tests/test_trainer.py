import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcdlearn.errors import ConfigError, DataError, LoadError, UsageError
from dcdlearn.numerics import Rng, mlp_forward
from dcdlearn.oneview_gan import GanTrainConfig, init_gan
from dcdlearn.synthcam import DatasetManifest, read_dataset, read_dataset_with_header
from dcdlearn.trainer import (
    EmbeddingModel,
    LrSchedule,
    ReidConfig,
    init_embedding,
    load_checkpoint,
    lr_at,
    run_pipeline,
    save_checkpoint,
    stage_augment,
    stage_gen_data,
    stage_train_gan,
    train_reid,
)

TINY_MANIFEST = DatasetManifest(num_identities=24, num_test_identities=8, feature_dim=6, latent_dim=4)
TINY_GAN = GanTrainConfig(epochs=2, decay_start=1)
TINY_REID = ReidConfig(K=4, t0=10, t1=20, embed_hidden=8, embed_dim=4)


def test_lr_endpoints():
    s = LrSchedule()
    assert lr_at(s, s.t0) == 3e-4
    assert lr_at(s, s.t1) == 3e-7
    assert lr_at(s, 0) == 3e-4
    assert lr_at(s, (s.t0 + s.t1) // 2) == pytest.approx(9.4868e-6, rel=1e-4)


def test_lr_past_t1_is_usage_error():
    with pytest.raises(UsageError, match="training complete"):
        lr_at(LrSchedule(), 3001)


@given(st.integers(1, 500), st.integers(1, 500))
@settings(max_examples=50)
def test_lr_monotone_and_continuous(t0, span):
    s = LrSchedule(3e-4, t0, t0 + span)
    vals = [lr_at(s, t) for t in range(t0, t0 + span + 1)]
    assert all(v > 0 for v in vals)
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert lr_at(s, t0) == lr_at(s, t0 - 1) == 3e-4


def test_schedule_validation():
    with pytest.raises(ConfigError):
        LrSchedule(t0=10, t1=10)
    with pytest.raises(ConfigError):
        LrSchedule(gamma0=0.0)


def test_reid_config_file_keys(tmp_path):
    p = tmp_path / "r.cfg"
    p.write_text("m = 0.5\nlambda = 0.003\nK = 6\nmargin_mode = softplus\ntrain_orders = 0\n")
    cfg = ReidConfig.from_file(p)
    assert (cfg.margin, cfg.lam, cfg.K, cfg.margin_mode, cfg.train_orders) == (0.5, 0.003, 6, "softplus", (0,))
    assert ReidConfig.from_file(p, {"lambda": "0"}).lam == 0.0
    assert "lambda = 0.003" in cfg.to_text()
    with pytest.raises(ConfigError):
        ReidConfig.from_file(p, {"train_orders": "0,3"})


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    paths = stage_gen_data(TINY_MANIFEST, out)
    gan = stage_train_gan(paths["train"], TINY_GAN, out / "gan.ckpt")
    aug = stage_augment(paths["train"], gan, out / "aug.jsonl")
    aug_test = stage_augment(paths["test"], gan, out / "aug_test.jsonl")
    return {"train": paths["train"], "gan": gan, "aug": aug, "aug_test": aug_test, "dir": out}


def test_zero_iterations_equals_initialisation(tiny_data):
    recs = read_dataset(tiny_data["aug"])
    cfg = ReidConfig(**{**TINY_REID.__dict__, "max_iterations": 0})
    model, run = train_reid(recs, cfg)
    init = init_embedding(Rng(cfg.seed), 6, cfg.embed_hidden, cfg.embed_dim)
    assert model.equals(init) and run.history == [] and run.t == 0


def test_train_reid_deterministic_and_logs_lr(tiny_data):
    recs = read_dataset(tiny_data["aug"])
    m1, r1 = train_reid(recs, TINY_REID)
    m2, r2 = train_reid(recs, TINY_REID)
    assert r1.history == r2.history and m1.equals(m2)
    assert len(r1.history) == TINY_REID.t1 == r1.t
    for e in r1.history:
        assert e.lr == lr_at(TINY_REID.schedule, e.t)
        assert math.isfinite(e.loss)


def test_train_reid_intermediate_checkpoints(tiny_data):
    recs = read_dataset(tiny_data["aug"])
    cfg = ReidConfig(**{**TINY_REID.__dict__, "checkpoint_every": 5})
    saved = []
    _, run = train_reid(recs, cfg, checkpoint_cb=lambda t, m: saved.append(t) or f"ck{t}")
    assert saved == [5, 10, 15]
    assert run.checkpoint_paths == ["ck5", "ck10", "ck15"]


def test_train_reid_needs_both_sides_per_identity(tiny_data):
    recs = [r for r in read_dataset(tiny_data["aug"]) if r.order == 0][:3]
    with pytest.raises(DataError):
        train_reid(recs, TINY_REID)


def test_checkpoint_round_trip_bytes(tmp_path):
    model = init_gan(Rng(3), 5, "random")
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(model, a, {"seed": 3})
    back = load_checkpoint(a)
    save_checkpoint(back, b, {"seed": 3})
    assert a.read_bytes() == b.read_bytes()
    x = Rng(1).normals(4, 5)
    for name, p in model.networks().items():
        assert mlp_forward(p, x).tobytes() == mlp_forward(back.networks()[name], x).tobytes()


def test_embedding_checkpoint_forward_bit_exact(tmp_path):
    model = init_embedding(Rng(2), 6, 8, 4)
    save_checkpoint(model, tmp_path / "e.ckpt")
    back = load_checkpoint(tmp_path / "e.ckpt")
    assert isinstance(back, EmbeddingModel)
    x = Rng(5).normals(7, 6)
    assert model.embed(x).tobytes() == back.embed(x).tobytes()


def test_truncated_checkpoint_is_load_error(tmp_path):
    p = tmp_path / "t.ckpt"
    save_checkpoint(init_gan(Rng(0), 4, "random"), p)
    data = p.read_bytes()
    for cut in (len(data) // 3, len(data) - 1, data.index(b"\n") + 1):
        q = tmp_path / f"cut{cut}.ckpt"
        q.write_bytes(data[:cut])
        with pytest.raises(LoadError):
            load_checkpoint(q)


def test_version_mismatch_is_load_error(tmp_path):
    p = tmp_path / "v.ckpt"
    save_checkpoint(init_embedding(Rng(0), 3, 4, 2), p)
    p.write_text(p.read_text().replace('"version": 1', '"version": 2', 1))
    with pytest.raises(LoadError, match="version"):
        load_checkpoint(p)
    with pytest.raises(LoadError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_pipeline_rerun_is_byte_identical(tmp_path):
    a = run_pipeline(TINY_MANIFEST, TINY_GAN, TINY_REID, tmp_path / "a")
    b = run_pipeline(TINY_MANIFEST, TINY_GAN, TINY_REID, tmp_path / "b")
    for field in ("train_data", "test_data", "gan_checkpoint", "aug_train", "aug_test",
                  "embed_checkpoint", "report_csv", "report_md"):
        assert Path(getattr(a, field)).read_bytes() == Path(getattr(b, field)).read_bytes(), field
    # artifacts re-load and carry their seed
    records, header = read_dataset_with_header(a.aug_test)
    assert header["seed"] == TINY_MANIFEST.seed and len(records) == 3 * 8 * 4
    assert isinstance(load_checkpoint(a.embed_checkpoint), EmbeddingModel)
    assert "seed=0" in Path(a.report_csv).read_text().splitlines()[0]


def test_pipeline_identity_gan_copies_features(tmp_path):
    gan = GanTrainConfig(epochs=0, decay_start=0, generator_init="identity")
    art = run_pipeline(TINY_MANIFEST, gan, TINY_REID, tmp_path)
    recs = read_dataset(art.aug_train)
    src = {r.sample_id: r for r in recs if r.order == 0}
    for r in recs:
        assert np.array_equal(r.features, src[r.source_sample_id].features)


def test_pipeline_stage_error_names_stage(tmp_path):
    bad = ReidConfig(**{**TINY_REID.__dict__, "K": 50})
    with pytest.raises(DataError, match="stage train-reid"):
        run_pipeline(TINY_MANIFEST, TINY_GAN, bad, tmp_path)


def test_reid_phase_leaves_gan_untouched(tiny_data):
    before = Path(tiny_data["gan"]).read_bytes()
    train_reid(read_dataset(tiny_data["aug"]), TINY_REID)
    assert Path(tiny_data["gan"]).read_bytes() == before


def test_default_dataset_loss_decreases(tmp_path):
    paths = stage_gen_data(DatasetManifest(), tmp_path)
    gan = GanTrainConfig(epochs=0, decay_start=0)
    aug = stage_augment(paths["train"], stage_train_gan(paths["train"], gan, tmp_path / "g.ckpt"),
                        tmp_path / "aug.jsonl")
    _, run = train_reid(read_dataset(aug), ReidConfig())
    losses = [e.loss for e in run.history]
    assert np.mean(losses[-100:]) < np.mean(losses[:100])
