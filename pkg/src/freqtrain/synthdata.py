"""Deterministic synthetic image datasets in CIFAR-10 binary format.

Ten classes in five pairs.  Both classes of a pair share two
low-frequency gratings (radius <= 3 bins on the 32-grid); each class
additionally carries two mid-frequency gratings (radius ~ 4-8) and one
high-frequency grating (radius ~ 9-14) of its own.  Discriminative
power is therefore spread across the spectrum the way curricula assume:
coarse structure resolves pairs early, finer structure separates pair
members, and low/high-pass filtered accuracies vary smoothly enough in
the radius that a matched low/high pair exists on a trained model.

Low-frequency phases are drawn per sample (translation-like variety);
mid/high phases are class-anchored with small jitter so the finer
patterns are learnable templates once the input bandwidth exposes them.
"""

import os

import numpy as np

from .seeding import derived_rng

# one low-frequency pattern pair per class *pair*
_LOW_A = [(1, 0), (0, 1), (1, 1), (2, 0), (0, 2)]
_LOW_B = [(2, 2), (3, 0), (0, 3), (1, 2), (2, 1)]
# per-class structure, radius ~4-6
_MID_A = [(4, 1), (1, 4), (4, 3), (3, 4), (5, 0),
          (0, 5), (5, 2), (2, 5), (4, 4), (6, 0)]
# per-class structure, radius ~6-8
_MID_B = [(6, 2), (2, 6), (7, 0), (0, 7), (6, 4),
          (4, 6), (7, 2), (2, 7), (5, 5), (0, 8)]
# per-class structure, radius ~9-14; components <= 11 so a 24-band
# square crop retains them
_HIGH = [(11, 0), (0, 11), (9, 6), (6, 9), (10, 4),
         (4, 10), (11, 5), (5, 11), (8, 8), (10, 10)]

# per-pair channel mixing of the two low-frequency gratings
_TINTS = np.array([
    [1.0, 0.6, 0.3], [0.3, 1.0, 0.6], [0.6, 0.3, 1.0],
    [1.0, 1.0, 0.4], [0.4, 1.0, 1.0],
])


def _class_phase(label, tag):
    return float(derived_rng(777, tag, label).uniform(0, 2 * np.pi))


def synth_image(label, rng, side=32, noise=0.04):
    """One float32 (3, side, side) sample of the given class in [0, 1]."""
    xs = np.arange(side) / side
    xx, yy = np.meshgrid(xs, xs, indexing="ij")

    def grating(freq, phase):
        fx, fy = freq
        return np.cos(2 * np.pi * (fx * xx + fy * yy) + phase)

    pair = label // 2
    amps = rng.uniform(0.85, 1.15, size=5)
    jitter = rng.uniform(-0.4, 0.4, size=3)
    low = (0.18 * amps[0] * grating(_LOW_A[pair], rng.uniform(0, 2 * np.pi))
           * _TINTS[pair][:, None, None]
           + 0.12 * amps[1] * grating(_LOW_B[pair], rng.uniform(0, 2 * np.pi))
           * _TINTS[pair][::-1].reshape(3, 1, 1))
    fine = (0.11 * amps[2] * grating(_MID_A[label],
                                     _class_phase(label, "mid_a") + jitter[0])
            + 0.09 * amps[3] * grating(_MID_B[label],
                                       _class_phase(label, "mid_b") + jitter[1])
            + 0.12 * amps[4] * grating(_HIGH[label],
                                       _class_phase(label, "high") + jitter[2]))
    img = 0.5 + low + fine
    img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_split(n, seed, split, side=32, classes=10):
    """Balanced (images u8, labels u8) arrays for one split."""
    images = np.empty((n, 3, side, side), dtype=np.uint8)
    labels = np.empty(n, dtype=np.uint8)
    for i in range(n):
        label = i % classes
        rng = derived_rng(seed, split, i)
        img = synth_image(label, rng, side=side)
        images[i] = np.round(img * 255.0).astype(np.uint8)
        labels[i] = label
    return images, labels


def write_cifar_bin(path, images, labels):
    """Serialize (N, 3, 32, 32) u8 images into CIFAR-10 binary records."""
    n = images.shape[0]
    records = np.empty((n, 1 + images[0].size), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images.reshape(n, -1)
    with open(path, "wb") as f:
        f.write(records.tobytes())


def generate_dataset(out_dir, n_train=2000, n_val=1000, seed=2024):
    """Write train.bin / val.bin; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    train_path = os.path.join(out_dir, "train.bin")
    val_path = os.path.join(out_dir, "val.bin")
    write_cifar_bin(train_path, *make_split(n_train, seed, "train"))
    write_cifar_bin(val_path, *make_split(n_val, seed, "val"))
    return train_path, val_path
