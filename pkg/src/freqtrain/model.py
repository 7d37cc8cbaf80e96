"""Variable-input-size convolutional classifier with hand-derived gradients.

The desk architecture is a 3-stage conv net (two 3x3 convs per stage,
stride-2 transitions, GroupNorm + ReLU) with a global-average-pool head,
so any even input side >= 8 is accepted without weight surgery.
GroupNorm rather than BatchNorm keeps model semantics independent of the
batch size, which the early-large-batch rule changes mid-run.

Training runs in float32; gradient-check oracles require float64.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import (
    CheckpointError,
    DivergedError,
    ParameterError,
    SpecError,
)
from .perf import tune_allocator
from .spectral import FilterSpec, ImageTensor, apply_filter, low_freq_crop

_GN_EPS = 1e-5


@dataclass(frozen=True)
class NetworkSpec:
    in_channels: int = 3
    widths: tuple = (32, 64, 128)
    convs_per_stage: int = 2
    kernel: int = 3
    class_count: int = 10
    groupnorm_groups: int = 8
    input_mean: float = 0.5
    input_std: float = 0.25
    init_std: float = 0.02

    def __post_init__(self):
        for w in self.widths:
            if w % self.groupnorm_groups:
                raise SpecError(
                    f"width {w} not divisible by {self.groupnorm_groups} groups")
        if self.kernel % 2 == 0:
            raise SpecError("kernel must be odd for same-padding")

    def canonical_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    def digest(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _conv_layers(spec):
    """(name, c_in, c_out, stride) for every conv, in forward order."""
    layers = []
    c_in = spec.in_channels
    for s, width in enumerate(spec.widths):
        for j in range(spec.convs_per_stage):
            stride = 2 if (s > 0 and j == 0) else 1
            layers.append((f"conv{len(layers)}", c_in, width, stride))
            c_in = width
    return layers


def _trunc_normal(rng, shape, std):
    out = rng.standard_normal(shape)
    for _ in range(8):
        bad = np.abs(out) > 2.0
        if not bad.any():
            break
        out[bad] = rng.standard_normal(int(bad.sum()))
    return out * std


def init_params(spec, seed, dtype=np.float32):
    """Deterministic initialization: truncated-normal weights (redrawn
    beyond two sigma), zero biases, unit GroupNorm gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, c_in, c_out, _ in _conv_layers(spec):
        params[f"{name}_w"] = _trunc_normal(
            rng, (c_out, c_in, spec.kernel, spec.kernel), spec.init_std).astype(dtype)
        params[f"{name}_b"] = np.zeros(c_out, dtype=dtype)
        params[f"{name}_g"] = np.ones(c_out, dtype=dtype)
        params[f"{name}_beta"] = np.zeros(c_out, dtype=dtype)
    head_in = spec.widths[-1] if spec.widths else spec.in_channels
    params["fc_w"] = _trunc_normal(
        rng, (spec.class_count, head_in), spec.init_std).astype(dtype)
    params["fc_b"] = np.zeros(spec.class_count, dtype=dtype)
    return params


def parameter_count(spec):
    k = spec.kernel
    total = 0
    for _, c_in, c_out, _ in _conv_layers(spec):
        total += c_out * c_in * k * k + 3 * c_out  # weights + bias + gn affine
    head_in = spec.widths[-1] if spec.widths else spec.in_channels
    return total + spec.class_count * head_in + spec.class_count


# ---------------------------------------------------------------------------
# Layer forward/backward
# ---------------------------------------------------------------------------

def _conv_out_side(side, k, stride):
    return (side + 2 * (k // 2) - k) // stride + 1


# Activations flow in channel-first (C, N, H, W) layout between layers so
# conv GEMM outputs feed GroupNorm and the next im2col without transposes.

def _im2col_cf(xcf, k, stride):
    c, n = xcf.shape[:2]
    p = k // 2
    xp = np.pad(xcf, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    out_h, out_w = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 4, 5, 1, 2, 3))
    return cols.reshape(c * k * k, n * out_h * out_w), out_h, out_w


def _conv_forward(xcf, w, b, stride, need_dx=True):
    c, n = xcf.shape[:2]
    co, ci, k, _ = w.shape
    cols, out_h, out_w = _im2col_cf(xcf, k, stride)
    w_m = w.reshape(co, ci * k * k)
    out = (w_m @ cols).reshape(co, n, out_h, out_w)
    out += b[:, None, None, None]
    cache = (cols, w_m, xcf.shape, stride, k, out_h, out_w, need_dx)
    return out, cache


def _conv_backward(dout, cache):
    cols, w_m, x_shape, stride, k, out_h, out_w, need_dx = cache
    c, n, h, w = x_shape
    co = w_m.shape[0]
    dd = dout.reshape(co, -1)
    dw = dd @ cols.T
    db = dd.sum(axis=1)
    dx = None
    if need_dx:
        dcols = (w_m.T @ dd).reshape(c, k, k, n, out_h, out_w)
        p = k // 2
        dxp = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=dout.dtype)
        for di in range(k):
            for dj in range(k):
                dxp[:, :, di:di + stride * out_h:stride,
                    dj:dj + stride * out_w:stride] += dcols[:, di, dj]
        dx = dxp[:, :, p:p + h, p:p + w]
    return dx, dw.reshape(co, c, k, k), db


def _groupnorm_forward(xcf, gamma, beta, groups):
    c, n, h, w = xcf.shape
    xg = xcf.reshape(groups, c // groups, n, h * w)
    mu = xg.mean(axis=(1, 3), keepdims=True)
    var = (xg * xg).mean(axis=(1, 3), keepdims=True) - mu * mu
    inv = 1.0 / np.sqrt(np.maximum(var, 0.0) + _GN_EPS)
    xhat = ((xg - mu) * inv).reshape(c, n, h, w)
    out = gamma[:, None, None, None] * xhat + beta[:, None, None, None]
    return out, (xhat, inv, gamma, groups)


def _groupnorm_backward(dout, cache):
    xhat, inv, gamma, groups = cache
    c, n, h, w = dout.shape
    dgamma = (dout * xhat).sum(axis=(1, 2, 3))
    dbeta = dout.sum(axis=(1, 2, 3))
    dxh = (dout * gamma[:, None, None, None]).reshape(groups, c // groups, n, h * w)
    xh = xhat.reshape(groups, c // groups, n, h * w)
    m = (c // groups) * h * w
    s1 = dxh.sum(axis=(1, 3), keepdims=True)
    s2 = (dxh * xh).sum(axis=(1, 3), keepdims=True)
    dx = inv / m * (m * dxh - s1 - xh * s2)
    return dx.reshape(c, n, h, w), dgamma, dbeta


def forward(spec, params, x, want_cache=True):
    """Logits for a (N, C, side, side) batch; side may vary per call."""
    tune_allocator()  # im2col scratch must stay arena-resident
    if x.shape[2] < 8 or x.shape[3] < 8:
        raise ParameterError(f"input side must be >= 8, got {x.shape[2:]}")
    h = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    h = (h - spec.input_mean) / spec.input_std
    caches = []
    layers = _conv_layers(spec)
    for i, (name, _, _, stride) in enumerate(layers):
        h, c_cache = _conv_forward(h, params[f"{name}_w"], params[f"{name}_b"],
                                   stride, need_dx=i > 0)
        h, g_cache = _groupnorm_forward(
            h, params[f"{name}_g"], params[f"{name}_beta"], spec.groupnorm_groups)
        relu_mask = h > 0
        h = h * relu_mask
        caches.append((name, c_cache, g_cache, relu_mask))
    pooled = h.mean(axis=(2, 3))  # (C, N)
    logits = pooled.T @ params["fc_w"].T + params["fc_b"]
    if not want_cache:
        return logits
    return logits, (caches, pooled, h.shape)


def backward(spec, params, cache, dlogits):
    caches, pooled, body_shape = cache
    grads = {}
    grads["fc_w"] = dlogits.T @ pooled.T
    grads["fc_b"] = dlogits.sum(axis=0)
    dpool = params["fc_w"].T @ dlogits.T  # (C, N)
    c, n, hh, ww = body_shape
    dh = np.broadcast_to(
        dpool[:, :, None, None] / (hh * ww), body_shape).astype(dlogits.dtype).copy()
    for name, c_cache, g_cache, relu_mask in reversed(caches):
        dh = dh * relu_mask
        dh, dgamma, dbeta = _groupnorm_backward(dh, g_cache)
        grads[f"{name}_g"] = dgamma
        grads[f"{name}_beta"] = dbeta
        dh, dw, db = _conv_backward(dh, c_cache)
        grads[f"{name}_w"] = dw
        grads[f"{name}_b"] = db
    return grads


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def smooth_targets(labels, class_count, label_smoothing, dtype):
    """One-hot (or pass-through soft) targets with uniform smoothing mixed in."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        if labels.min() < 0 or labels.max() >= class_count:
            raise SpecError(
                f"labels outside [0, {class_count}): {labels.min()}..{labels.max()}")
        q = np.zeros((labels.shape[0], class_count), dtype=dtype)
        q[np.arange(labels.shape[0]), labels] = 1.0
    else:
        if labels.shape[1] != class_count:
            raise SpecError(
                f"soft labels have {labels.shape[1]} classes, spec has {class_count}")
        q = labels.astype(dtype)
    if label_smoothing:
        q = (1.0 - label_smoothing) * q + label_smoothing / class_count
    return q


def loss_and_grads(spec, params, x, labels, label_smoothing=0.0):
    """Cross-entropy (with smoothing) and backprop gradients for one batch."""
    logits, cache = forward(spec, params, x)
    q = smooth_targets(labels, spec.class_count, label_smoothing, logits.dtype)
    logp = _log_softmax(logits)
    loss = float(-(q * logp).sum() / x.shape[0])
    dlogits = (np.exp(logp) - q) / x.shape[0]
    grads = backward(spec, params, cache, dlogits.astype(logits.dtype))
    return loss, grads


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adamw"  # or "sgd"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05

    def __post_init__(self):
        if self.name not in ("adamw", "sgd"):
            raise ParameterError(f"unknown optimizer {self.name!r}")


def _decayable(name):
    return name.endswith("_w")  # biases and norm affines stay undecayed


def _optimizer_step(params, grads, moments, lr, cfg):
    if cfg.name == "sgd":
        vel = moments.setdefault("velocity", {})
        for name, p in params.items():
            g = grads[name]
            if _decayable(name) and cfg.weight_decay:
                g = g + cfg.weight_decay * p
            v = vel.get(name)
            v = g if v is None else cfg.momentum * v + g
            vel[name] = v
            params[name] = p - lr * v
        return
    step = moments.get("step", 0) + 1
    moments["step"] = step
    m1 = moments.setdefault("m", {})
    m2 = moments.setdefault("v", {})
    bc1 = 1.0 - cfg.beta1**step
    bc2 = 1.0 - cfg.beta2**step
    for name, p in params.items():
        g = grads[name]
        m = m1.get(name, np.zeros_like(p))
        v = m2.get(name, np.zeros_like(p))
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        m1[name], m2[name] = m, v
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        if _decayable(name) and cfg.weight_decay:
            update = update + cfg.weight_decay * p
        params[name] = p - lr * update


# ---------------------------------------------------------------------------
# Trainer state
# ---------------------------------------------------------------------------

@dataclass
class TrainerState:
    spec: NetworkSpec
    params: dict
    moments: dict
    opt: OptimizerConfig
    rng: np.random.Generator
    iteration: int = 0
    progress: float = 0.0
    eq_epochs: float = 0.0
    log: list = field(default_factory=list)
    loop_state: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return self.params["fc_w"].dtype


def build_network(spec, seed, dtype=np.float32, opt=None):
    """Fresh TrainerState with deterministic init and zero moments."""
    params = init_params(spec, seed, dtype)
    rng = np.random.default_rng(np.random.PCG64(seed))
    return TrainerState(spec=spec, params=params, moments={},
                        opt=opt or OptimizerConfig(), rng=rng)


def clone_state(state):
    import copy

    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = state.rng.bit_generator.state
    return TrainerState(
        spec=state.spec,
        params={k: v.copy() for k, v in state.params.items()},
        moments=copy.deepcopy(state.moments),
        opt=state.opt,
        rng=rng,
        iteration=state.iteration,
        progress=state.progress,
        eq_epochs=state.eq_epochs,
        log=list(state.log),
        loop_state=dict(state.loop_state),
    )


def train_step(state, batch, lr, label_smoothing=0.1, bandwidth=None,
               batch_meta=None):
    """One forward/backward/update step; returns the loss.

    The state is mutated in place (it is single-owner).  A non-finite
    loss raises DivergedError carrying the iteration index.
    """
    inputs = batch.inputs if hasattr(batch, "inputs") else batch[0]
    labels = batch.labels if hasattr(batch, "labels") else batch[1]
    loss, grads = loss_and_grads(state.spec, state.params,
                                 inputs.astype(state.dtype, copy=False),
                                 labels, label_smoothing)
    if not np.isfinite(loss):
        raise DivergedError("training loss is not finite", iteration=state.iteration)
    if lr != 0.0:
        _optimizer_step(state.params, grads, state.moments, lr, state.opt)
    state.iteration += 1
    state.log.append({
        "iteration": state.iteration,
        "bandwidth": int(bandwidth if bandwidth is not None else inputs.shape[-1]),
        "batch": int(inputs.shape[0]),
        "loss": loss,
        "lr": float(lr),
    })
    return loss


def grad_check(state, batch, epsilon=1e-5, n_coords=40, rng=None, grads=None):
    """Central finite differences vs backprop on a random parameter subset.

    Requires float64 parameters.  Returns the max relative error; pass a
    precomputed (possibly corrupted) gradient dict to test the harness.
    """
    if state.dtype != np.float64:
        raise ParameterError("grad_check requires a float64 network")
    rng = rng or np.random.default_rng(0)
    inputs = np.asarray(batch.inputs if hasattr(batch, "inputs") else batch[0],
                        dtype=np.float64)
    labels = batch.labels if hasattr(batch, "labels") else batch[1]

    def loss_only():
        logits = forward(state.spec, state.params, inputs, want_cache=False)
        q = smooth_targets(labels, state.spec.class_count, 0.1, np.float64)
        return float(-(q * _log_softmax(logits)).sum() / inputs.shape[0])

    if grads is None:
        _, grads = loss_and_grads(state.spec, state.params, inputs, labels, 0.1)
    names = sorted(state.params)
    sizes = np.array([state.params[n].size for n in names])
    cum = np.cumsum(sizes)
    worst = 0.0
    for flat in rng.choice(int(cum[-1]), size=min(n_coords, int(cum[-1])),
                           replace=False):
        idx = int(np.searchsorted(cum, flat, side="right"))
        name = names[idx]
        local = np.unravel_index(int(flat - (cum[idx] - sizes[idx])),
                                 state.params[name].shape)
        p = state.params[name]
        orig = p[local]
        p[local] = orig + epsilon
        up = loss_only()
        p[local] = orig - epsilon
        down = loss_only()
        p[local] = orig
        fd = (up - down) / (2 * epsilon)
        bp = grads[name][local]
        rel = abs(fd - bp) / max(abs(fd) + abs(bp), 1e-10)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Cost model
# ---------------------------------------------------------------------------

def flops(spec, input_side):
    """Multiply-accumulate count of one forward pass at the given side.

    Counts conv and classifier MACs (norm/activation/pool are ignored,
    documented in FORMATS.md).  Deterministic closed form.
    """
    side = input_side
    total = 0
    k = spec.kernel
    for _, c_in, c_out, stride in _conv_layers(spec):
        side = _conv_out_side(side, k, stride)
        total += side * side * k * k * c_in * c_out
    head_in = spec.widths[-1] if spec.widths else spec.in_channels
    total += head_in * spec.class_count
    return int(total)


def flops_model(spec):
    return lambda side: float(flops(spec, side))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _transform_image(arr, transform):
    if transform is None:
        return arr
    img = ImageTensor(arr.astype(np.float64))
    if isinstance(transform, FilterSpec):
        out = apply_filter(img, transform)
    elif isinstance(transform, (int, np.integer)):
        out = low_freq_crop(img, int(transform))
    else:
        raise ParameterError(f"unsupported evaluation transform {transform!r}")
    return out.data


def evaluate(state, dataset, transform=None, batch_size=256):
    """Deterministic top-1 accuracy on a validation source.

    transform: None, a FilterSpec (same-size filtering) or an even int
    (low-frequency cropping to that bandwidth) applied before inference.
    """
    if getattr(dataset, "split", "val") != "val":
        raise ParameterError("evaluate expects the validation split")
    if getattr(dataset, "class_count", state.spec.class_count) != state.spec.class_count:
        raise SpecError(
            f"dataset has {dataset.class_count} classes, "
            f"network expects {state.spec.class_count}")
    n = dataset.sample_count
    correct = 0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        imgs = [
            _transform_image(dataset.image(i), transform)
            for i in range(start, stop)
        ]
        x = np.stack(imgs).astype(state.dtype)
        np.clip(x, 0.0, 1.0, out=x)
        logits = forward(state.spec, state.params, x, want_cache=False)
        pred = logits.argmax(axis=1)
        labels = np.array([dataset.label(i) for i in range(start, stop)])
        correct += int((pred == labels).sum())
    return correct / n


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"FTCK"
_CKPT_VERSION = 1


def _flatten_moments(moments, prefix=""):
    flat = {}
    for key, val in moments.items():
        if isinstance(val, dict):
            flat.update(_flatten_moments(val, prefix + key + "/"))
        elif isinstance(val, np.ndarray):
            flat[prefix + key] = val
    return flat


def _scalar_moments(moments, prefix=""):
    out = {}
    for key, val in moments.items():
        if isinstance(val, dict):
            out.update(_scalar_moments(val, prefix + key + "/"))
        elif not isinstance(val, np.ndarray):
            out[prefix + key] = val
    return out


def _unflatten(flat_arrays, scalars):
    tree = {}
    for path, val in list(flat_arrays.items()) + list(scalars.items()):
        parts = path.split("/")
        node = tree
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = val
    return tree


def checkpoint_save(state, path):
    """Versioned header + sha256 digest + array payload + JSON metadata."""
    arrays = [("param/" + k, v) for k, v in sorted(state.params.items())]
    arrays += sorted(_flatten_moments(state.moments).items())
    manifest, payload = [], []
    offset = 0
    for name, arr in ((n, np.ascontiguousarray(a)) for n, a in arrays):
        raw = arr.tobytes()
        manifest.append({"name": name, "shape": list(arr.shape),
                         "dtype": arr.dtype.str, "offset": offset,
                         "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    meta = {
        "spec": asdict(state.spec),
        "spec_digest": state.spec.digest(),
        "opt": asdict(state.opt),
        "moment_scalars": _scalar_moments(state.moments),
        "iteration": state.iteration,
        "progress": state.progress,
        "eq_epochs": state.eq_epochs,
        "rng_state": state.rng.bit_generator.state,
        "loop_state": state.loop_state,
        "log": state.log,
        "manifest": manifest,
    }
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    body = meta_blob + b"".join(payload)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(bytes([_CKPT_VERSION, 0, 0, 0]))
        f.write(len(meta_blob).to_bytes(8, "little"))
        f.write(digest)
        f.write(body)


def checkpoint_load(path, expect_spec=None):
    """Restore a TrainerState; digest or version damage raises
    CheckpointError before any state is built, a spec mismatch SpecError."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 48 or blob[:4] != _CKPT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if blob[4] != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob[4]}")
    meta_len = int.from_bytes(blob[8:16], "little")
    digest = blob[16:48]
    body = blob[48:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path} failed its content digest")
    meta = json.loads(body[:meta_len].decode())
    payload = body[meta_len:]
    spec = NetworkSpec(**{**meta["spec"],
                          "widths": tuple(meta["spec"]["widths"])})
    if expect_spec is not None and expect_spec.digest() != spec.digest():
        raise SpecError("checkpoint was written for a different network spec")
    arrays = {}
    for entry in meta["manifest"]:
        start = entry["offset"]
        raw = payload[start:start + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    params = {k[len("param/"):]: v for k, v in arrays.items()
              if k.startswith("param/")}
    moment_arrays = {k: v for k, v in arrays.items() if not k.startswith("param/")}
    moments = _unflatten(moment_arrays, meta["moment_scalars"])
    rng = np.random.default_rng(np.random.PCG64())
    rng.bit_generator.state = meta["rng_state"]
    return TrainerState(
        spec=spec,
        params=params,
        moments=moments,
        opt=OptimizerConfig(**meta["opt"]),
        rng=rng,
        iteration=meta["iteration"],
        progress=meta["progress"],
        eq_epochs=meta["eq_epochs"],
        log=meta["log"],
        loop_state=meta["loop_state"],
    )


def state_digest(state):
    """Content hash of parameters only (used to identify search branch points)."""
    h = hashlib.sha256()
    for name in sorted(state.params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(state.params[name]).tobytes())
    return h.hexdigest()[:16]
