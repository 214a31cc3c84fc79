"""Can the generator recover a known camera shift?

Two noiseless cameras share one projection and differ by an offset b, so
the ideal X->Y map is x + b. Prints the mean error of G against that
target before and after training, for a few offset scales.

    python3 scripts/gan_learnability.py --scales 0.3 1.0
"""

import argparse
import time

import numpy as np

from dcdlearn import oneview_gan as og
from dcdlearn.numerics import Rng
from dcdlearn.synthcam import CameraModel, DatasetManifest, generate_dataset


def paired_views(scale, n=400, d=32, dz=16, seed=9):
    rng = Rng(seed)
    A = rng.normals(d, dz) / np.sqrt(dz)
    shift = scale * rng.normals(d)
    cams = [CameraModel(0, A, np.zeros(d), 0.0), CameraModel(1, A, shift, 0.0)]
    m = DatasetManifest(num_identities=n, num_test_identities=0, num_cameras=2, samples_per_identity=2,
                        latent_dim=dz, feature_dim=d, noise_sigma=0.0)
    recs = generate_dataset(m, cams).records
    X, Y = (np.array([r.features for r in sorted((r for r in recs if r.camera_id == c),
                                                 key=lambda r: r.identity_id)]) for c in (0, 1))
    return X, Y, shift


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scales", type=float, nargs="+", default=[1.0])
    ap.add_argument("--epochs", type=int, default=None)
    args = ap.parse_args()
    cfg = og.GanTrainConfig()
    if args.epochs is not None:
        cfg = og.GanTrainConfig(epochs=args.epochs, decay_start=args.epochs // 2)
    for scale in args.scales:
        X, Y, shift = paired_views(scale)
        init = og.init_gan(Rng(cfg.seed), X.shape[1], cfg.generator_init)
        err = lambda G: np.linalg.norm(og.apply_generator(G, X) - (X + shift), axis=1).mean()
        before = err(init.G)
        t = time.process_time()
        model, _ = og.train_gan((X, Y), cfg, model=init)
        after = err(model.G)
        print(f"scale={scale:g} before={before:.4f} after={after:.4f} ratio={before / after:.1f}x "
              f"({time.process_time() - t:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
