"""Magnitude-parameterized spatial augmentations and the linear ramp.

Every op maps a magnitude m in [0, m_max] (paper scale, m_max = 10)
monotonically onto its parameter range, with m = 0 the exact identity.
The magnitude-to-parameter maps are pinned here and documented in
FORMATS.md:

    rotate       m=10 <-> 30 degrees, random sign
    shear-x/y    m=10 <-> 0.3 shear factor, random sign
    translate-x/y m=10 <-> 0.3 of the side, random sign
    brightness   m=10 <-> offset +/-0.6, random sign
    contrast     m=10 <-> factor 1 +/- 0.6, random sign
    solarize     m=10 <-> threshold 0 (invert pixels above 1 - m/10 * 1.0)
    posterize    m=10 <-> 2 bits (8 - m/10 * 6 bits, rounded)

Geometric ops use bilinear interpolation with symmetric (edge-inclusive)
reflection; photometric outputs are clamped to [0, 1] by the caller
(apply_randaug) at the very end.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .spectral import ImageTensor

DEFAULT_OPS = (
    "rotate",
    "shear-x",
    "shear-y",
    "translate-x",
    "translate-y",
    "brightness",
    "contrast",
    "solarize",
    "posterize",
)


@dataclass(frozen=True)
class AugmentPolicy:
    """RandAug-style policy: n ops per image, each applied with probability p."""

    ops: tuple = DEFAULT_OPS
    n: int = 2
    p: float = 0.5
    m_max: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ParameterError(f"p must be in [0, 1], got {self.p}")
        if self.n < 1:
            raise ParameterError(f"n must be >= 1, got {self.n}")
        unknown = set(self.ops) - set(DEFAULT_OPS)
        if unknown:
            raise ParameterError(f"unknown ops {sorted(unknown)}")


def magnitude_at(progress, m0):
    """Linear weaker-to-stronger ramp: magnitude = progress * m0."""
    if not 0.0 <= progress <= 1.0:
        raise ParameterError(f"progress must be in [0, 1], got {progress}")
    return progress * m0


# ---------------------------------------------------------------------------
# Individual ops.  Each takes (C, H, W) float data, strength s = m / m_max
# in [0, 1] and a sign in {-1, +1}; each is the identity at s = 0.
# ---------------------------------------------------------------------------

def _affine(data, matrix, offset):
    out = np.empty_like(data)
    for c in range(data.shape[0]):
        ndimage.affine_transform(
            data[c], matrix, offset=offset, output=out[c], order=1, mode="reflect"
        )
    return out


def _rotate(data, s, sign):
    if s == 0.0:
        return data
    theta = np.deg2rad(sign * 30.0 * s)
    _, h, w = data.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    matrix = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    offset = np.array([cy, cx]) - matrix @ np.array([cy, cx])
    return _affine(data, matrix, offset)


def _shear(data, s, sign, axis):
    if s == 0.0:
        return data
    factor = sign * 0.3 * s
    _, h, w = data.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    matrix = np.eye(2)
    if axis == "x":
        matrix[1, 0] = factor
    else:
        matrix[0, 1] = factor
    offset = np.array([cy, cx]) - matrix @ np.array([cy, cx])
    return _affine(data, matrix, offset)


def _translate(data, s, sign, axis):
    if s == 0.0:
        return data
    _, h, w = data.shape
    shift = sign * 0.3 * s * (w if axis == "x" else h)
    offset = [0.0, -shift] if axis == "x" else [-shift, 0.0]
    return _affine(data, np.eye(2), np.array(offset))


def _brightness(data, s, sign):
    return data + sign * 0.6 * s


def _contrast(data, s, sign):
    factor = 1.0 + sign * 0.6 * s
    mean = data.mean(axis=(1, 2), keepdims=True)
    return mean + factor * (data - mean)


def _solarize(data, s, sign):
    threshold = 1.0 - s
    return np.where(data > threshold, 1.0 - data, data)


def _posterize(data, s, sign):
    if s == 0.0:
        return data
    bits = int(round(8 - 6 * s))
    levels = (1 << bits) - 1
    return np.round(data * levels) / levels


_OP_FNS = {
    "rotate": _rotate,
    "shear-x": lambda d, s, g: _shear(d, s, g, "x"),
    "shear-y": lambda d, s, g: _shear(d, s, g, "y"),
    "translate-x": lambda d, s, g: _translate(d, s, g, "x"),
    "translate-y": lambda d, s, g: _translate(d, s, g, "y"),
    "brightness": _brightness,
    "contrast": _contrast,
    "solarize": _solarize,
    "posterize": _posterize,
}

_SIGNED_OPS = {"rotate", "shear-x", "shear-y", "translate-x", "translate-y",
               "brightness", "contrast"}


def apply_op(data, name, magnitude, m_max=10.0, sign=1):
    """Apply one named op at the given magnitude to (C, H, W) data."""
    if name not in _OP_FNS:
        raise ParameterError(f"unknown op {name!r}")
    s = float(magnitude) / float(m_max)
    return _OP_FNS[name](data, s, sign)


def apply_randaug(image, policy, magnitude, rng):
    """Sample policy.n ops uniformly (with replacement), apply each with
    probability policy.p at the given magnitude.  Deterministic given the
    generator state; output clamped to [0, 1].
    """
    if magnitude > policy.m_max:
        raise ParameterError(f"magnitude {magnitude} exceeds ceiling {policy.m_max}")
    data = image.data.astype(np.float64, copy=True)
    for _ in range(policy.n):
        name = policy.ops[rng.integers(len(policy.ops))]
        gate = rng.random() < policy.p
        sign = -1 if (name in _SIGNED_OPS and rng.random() < 0.5) else 1
        if gate and magnitude > 0.0:
            data = apply_op(data, name, magnitude, policy.m_max, sign)
    np.clip(data, 0.0, 1.0, out=data)
    return ImageTensor(data.astype(image.data.dtype))


def mixup(batch_inputs, batch_labels, alpha, rng, class_count=None, lam=None):
    """Convexly combine a batch with a random pairing of itself.

    batch_labels may be hard indices (converted to one-hot, class_count
    required) or already-soft vectors.  lam overrides the Beta(alpha,
    alpha) draw, for tests.  Batches of size 1 pass through.
    """
    if alpha <= 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    inputs = np.asarray(batch_inputs)
    labels = np.asarray(batch_labels)
    if labels.ndim == 1:
        if class_count is None:
            raise ParameterError("class_count required for hard labels")
        soft = np.zeros((labels.shape[0], class_count), dtype=inputs.dtype)
        soft[np.arange(labels.shape[0]), labels] = 1.0
    else:
        soft = labels.astype(inputs.dtype)
    n = inputs.shape[0]
    if n < 2:
        return inputs.copy(), soft
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(n)
    mixed = lam * inputs + (1.0 - lam) * inputs[perm]
    mixed_labels = lam * soft + (1.0 - lam) * soft[perm]
    return mixed.astype(inputs.dtype), mixed_labels


def baseline_augment(image, target_side, rng, area_range=(0.67, 1.0),
                     aspect_range=(0.75, 4.0 / 3.0), flip_p=0.5):
    """Random-resized-crop plus horizontal flip, the desk-scale baseline.

    A crop box is sampled with area/aspect in the documented ranges
    (falling back to the full frame if ten attempts fail), bilinearly
    resized to target_side^2, then mirrored with probability flip_p.
    """
    data = image.data
    _, h, w = data.shape
    box = None
    for _ in range(10):
        area = rng.uniform(*area_range) * h * w
        log_aspect = rng.uniform(np.log(aspect_range[0]), np.log(aspect_range[1]))
        aspect = np.exp(log_aspect)
        ch = int(round(np.sqrt(area / aspect)))
        cw = int(round(np.sqrt(area * aspect)))
        if 0 < ch <= h and 0 < cw <= w:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            box = (top, left, ch, cw)
            break
    if box is None:
        box = (0, 0, h, w)
    top, left, ch, cw = box
    crop = data[:, top:top + ch, left:left + cw]
    out = _bilinear_resize(crop, target_side, target_side)
    if rng.random() < flip_p:
        out = out[:, :, ::-1]
    return ImageTensor(np.ascontiguousarray(out.astype(data.dtype)))


def _bilinear_resize(data, out_h, out_w):
    """Plain bilinear resize (align-corners-false, edge-clamped)."""
    _, h, w = data.shape
    if (h, w) == (out_h, out_w):
        return data.copy()

    def axis_taps(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.clip(lo + 1, 0, n_in - 1)
        frac = np.clip(pos - lo, 0.0, 1.0)
        return lo, hi, frac

    r_lo, r_hi, r_f = axis_taps(h, out_h)
    c_lo, c_hi, c_f = axis_taps(w, out_w)
    top = data[:, r_lo][:, :, c_lo] * (1 - c_f) + data[:, r_lo][:, :, c_hi] * c_f
    bot = data[:, r_hi][:, :, c_lo] * (1 - c_f) + data[:, r_hi][:, :, c_hi] * c_f
    return top * (1 - r_f[None, :, None]) + bot * r_f[None, :, None]
