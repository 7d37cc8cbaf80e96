"""Dataset ingestion, per-sample preprocessing, batching and the replay buffer.

Byte layouts of the three supported sources (IDX, CIFAR-10 binary, RTEN
directories) are pinned in FORMATS.md.  Per-sample randomness derives
from (seed, sample ordinal) alone, so batch content is identical for any
worker count; the bounded-queue loader releases batches in ordinal
order, making multi-worker runs reproduce the single-worker stream.
"""

import os
import queue
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .augment import apply_randaug, baseline_augment, magnitude_at
from .seeding import derived_rng
from .errors import FormatError, ParameterError
from .rten import read_rten
from .spectral import ImageTensor, efficient_lowfreq_downsample

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073  # 1 label byte + 3 * 1024 pixels


@dataclass
class DatasetSource:
    """Lazily indexable image source with integer labels."""

    format: str
    path: str
    split: str
    class_count: int
    sample_count: int
    _images: np.ndarray = None  # (N, C, H, W) uint8 or float32
    _labels: np.ndarray = None

    def image(self, i):
        """Sample i as float32 (C, H, W) in [0, 1]."""
        img = self._images[i]
        if img.dtype == np.uint8:
            return img.astype(np.float32) / 255.0
        return img.astype(np.float32)

    def label(self, i):
        return int(self._labels[i])

    @property
    def side(self):
        return self._images.shape[-1]

    @property
    def channels(self):
        return self._images.shape[1]


def _read_exact(path):
    with open(path, "rb") as f:
        return f.read()


def open_idx(images_path, labels_path=None, split="train", class_count=None):
    """IDX pair (big-endian magic 0x803 images / 0x801 labels, u8 payload)."""
    if labels_path is None:
        labels_path = images_path.replace("images", "labels").replace("idx3", "idx1")
        if labels_path == images_path:
            raise ParameterError("cannot infer the labels path; pass labels_path")
    blob = _read_exact(images_path)
    if len(blob) < 16:
        raise FormatError("truncated IDX header", offset=len(blob), path=images_path)
    magic, count, rows, cols = struct.unpack(">IIII", blob[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad IDX image magic 0x{magic:08x}", offset=0,
                          path=images_path)
    expected = 16 + count * rows * cols
    if len(blob) != expected:
        raise FormatError(f"payload is {len(blob) - 16} bytes, expected "
                          f"{count * rows * cols}", offset=min(len(blob), expected),
                          path=images_path)
    images = np.frombuffer(blob, dtype=np.uint8, offset=16).reshape(
        count, 1, rows, cols)
    lblob = _read_exact(labels_path)
    if len(lblob) < 8:
        raise FormatError("truncated IDX header", offset=len(lblob), path=labels_path)
    lmagic, lcount = struct.unpack(">II", lblob[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad IDX label magic 0x{lmagic:08x}", offset=0,
                          path=labels_path)
    if lcount != count or len(lblob) != 8 + count:
        raise FormatError(f"label count {lcount} does not match {count} images",
                          offset=4, path=labels_path)
    labels = np.frombuffer(lblob, dtype=np.uint8, offset=8)
    cc = class_count if class_count is not None else int(labels.max()) + 1
    if labels.max() >= cc:
        raise FormatError(f"label {labels.max()} outside [0, {cc})",
                          path=labels_path)
    return DatasetSource("IDX", images_path, split, cc, count, images, labels)


def open_cifar10(path, split="train"):
    """CIFAR-10 binary batch: 3073-byte records (label + 3072 RGB bytes)."""
    blob = _read_exact(path)
    if len(blob) == 0 or len(blob) % CIFAR_RECORD:
        raise FormatError(
            f"size {len(blob)} is not a multiple of {CIFAR_RECORD}-byte records",
            offset=len(blob) - len(blob) % CIFAR_RECORD, path=path)
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].copy()
    if labels.max() > 9:
        bad = int(np.argmax(raw[:, 0] > 9))
        raise FormatError(f"label {labels.max()} outside [0, 10)",
                          offset=bad * CIFAR_RECORD, path=path)
    images = raw[:, 1:].reshape(-1, 3, 32, 32).copy()
    return DatasetSource("CIFAR10-bin", path, split, 10, raw.shape[0],
                         images, labels)


def open_rten_dir(path, split="train", class_count=None):
    """Directory of one RTEN file per sample plus a labels.u16 sidecar."""
    labels_path = os.path.join(path, "labels.u16")
    if not os.path.exists(labels_path):
        raise FormatError("missing labels.u16 sidecar", path=path)
    labels = np.frombuffer(_read_exact(labels_path), dtype="<u2")
    files = sorted(f for f in os.listdir(path) if f.endswith(".rten"))
    if len(files) != len(labels):
        raise FormatError(f"{len(files)} samples but {len(labels)} labels",
                          path=path)
    stack = np.stack([read_rten(os.path.join(path, f)).astype(np.float32)
                      for f in files])
    cc = class_count if class_count is not None else int(labels.max()) + 1
    return DatasetSource("RTEN-directory", path, split, cc, len(files),
                         stack, labels.astype(np.int64))


def open_dataset(path, fmt, split="train", **kwargs):
    if fmt == "IDX":
        return open_idx(path, split=split, **kwargs)
    if fmt == "CIFAR10-bin":
        return open_cifar10(path, split=split, **kwargs)
    if fmt == "RTEN-directory":
        return open_rten_dir(path, split=split, **kwargs)
    raise ParameterError(f"unknown dataset format {fmt!r}")


# ---------------------------------------------------------------------------
# Per-sample preprocessing
# ---------------------------------------------------------------------------

def sample_rng(seed, ordinal):
    """Generator for one sample: derived from (seed, ordinal) only."""
    return derived_rng(seed, "sample", ordinal)


def preprocess(sample, stage, progress, policy, rng, m0=9.0, clamp=True,
               sinc_lobes=3, rrc=True):
    """Baseline crop/flip, ramped RandAug, then low-frequency down-sampling
    to the stage bandwidth.  Clamping to [0, 1] happens here, at the
    pipeline boundary, and nowhere upstream (pass clamp=False to inspect
    the raw spectral output).  rrc=False degrades the baseline step to
    flip-only (the random-resized-crop resampling low-passes the input,
    which some experiments must avoid).
    """
    arr = sample.data if isinstance(sample, ImageTensor) else np.asarray(sample)
    side = arr.shape[-1]
    b = stage.bandwidth
    if b > side:
        raise ParameterError(f"stage bandwidth {b} exceeds sample side {side}")
    img = ImageTensor(arr.astype(np.float32))
    if rrc:
        img = baseline_augment(img, side, rng)
    else:
        img = baseline_augment(img, side, rng, area_range=(1.0, 1.0),
                               aspect_range=(1.0, 1.0))
    m = magnitude_at(progress, m0)
    img = apply_randaug(img, policy, m, rng)
    if b < side:
        path = "exact" if side % b == 0 else "windowed_sinc"
        img = efficient_lowfreq_downsample(img, b, path=path, lobes=sinc_lobes)
    out = img.data.astype(np.float32)
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


@dataclass
class Batch:
    inputs: np.ndarray  # (N, C, B, B) float32, clamped to [0, 1]
    labels: np.ndarray  # (N,) hard indices or (N, K) soft rows
    meta: dict = field(default_factory=dict)


def epoch_permutation(seed, epoch, n):
    """Seed-derived shuffle for one training pass; validation never shuffles."""
    return derived_rng(seed, "epoch", epoch).permutation(n)


class SampleCursor:
    """Deterministic, resumable walk over shuffled dataset indices."""

    def __init__(self, seed, dataset_size, position=0):
        self.seed = seed
        self.n = dataset_size
        self.position = position  # global ordinal of the next sample
        self._epoch = None
        self._perm = None

    def take(self, count):
        out = []
        for _ in range(count):
            epoch, offset = divmod(self.position, self.n)
            if epoch != self._epoch:
                self._epoch = epoch
                self._perm = epoch_permutation(self.seed, epoch, self.n)
            out.append((self.position, int(self._perm[offset])))
            self.position += 1
        return out


def make_batch(dataset, entries, stage, progress, policy, seed, m0=9.0,
               sinc_lobes=3, rrc=True):
    """Preprocess (ordinal, index) entries into one Batch."""
    inputs = np.empty(
        (len(entries), dataset.channels, stage.bandwidth, stage.bandwidth),
        dtype=np.float32)
    labels = np.empty(len(entries), dtype=np.int64)
    for row, (ordinal, idx) in enumerate(entries):
        rng = sample_rng(seed, ordinal)
        inputs[row] = preprocess(dataset.image(idx), stage, progress, policy,
                                 rng, m0=m0, sinc_lobes=sinc_lobes, rrc=rrc)
        labels[row] = dataset.label(idx)
    return Batch(inputs, labels, meta={
        "progress": progress, "bandwidth": stage.bandwidth, "seed": seed})


# ---------------------------------------------------------------------------
# Replay buffer
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """FIFO cache of fully preprocessed batches, oldest evicted first."""

    def __init__(self, capacity, n_buffer):
        if capacity < 1:
            raise ParameterError(f"capacity must be >= 1, got {capacity}")
        if n_buffer < 0:
            raise ParameterError(f"n_buffer must be >= 0, got {n_buffer}")
        self.capacity = capacity
        self.n_buffer = n_buffer
        self._slots = []

    def __len__(self):
        return len(self._slots)

    def insert(self, batch):
        self._slots.append(batch)
        if len(self._slots) > self.capacity:
            self._slots.pop(0)

    def sample(self, rng):
        return self._slots[int(rng.integers(len(self._slots)))]

    def flush(self):
        """Drop everything; called at stage boundaries so replayed batches
        never mix bandwidths."""
        self._slots.clear()

    def snapshot(self):
        return list(self._slots)


def replay_plan(total_iters, n_buffer):
    """Fresh/replay decisions for a training run.

    After each fresh batch come n_buffer replays; a cold (empty) buffer
    forces fresh production, so exactly ceil(total / (n_buffer + 1))
    batches are fresh in steady state.
    """
    decisions = []
    since_fresh = None  # replays emitted since the last fresh batch
    for _ in range(total_iters):
        if since_fresh is None or since_fresh >= n_buffer:
            decisions.append("fresh")
            since_fresh = 0
        else:
            decisions.append("replay")
            since_fresh += 1
    return decisions


def replay_stream(buffer, produce_fresh, total_iters, rng):
    """Yield (batch, is_fresh) for total_iters steps.

    Fresh batches are trained on immediately at production time and then
    inserted; replayed batches are re-served verbatim, uniformly at
    random over the current buffer contents.
    """
    since_fresh = buffer.n_buffer  # start fresh
    for _ in range(total_iters):
        if len(buffer) == 0 or since_fresh >= buffer.n_buffer:
            batch = produce_fresh()
            yield batch, True
            buffer.insert(batch)
            since_fresh = 0
        else:
            yield buffer.sample(rng), False
            since_fresh += 1


# ---------------------------------------------------------------------------
# Bounded-queue producer/consumer loader
# ---------------------------------------------------------------------------

class BatchLoader:
    """K preprocessing workers feeding a bounded, order-restoring queue.

    Batch content depends only on (seed, ordinal), so any K produces the
    K=1 stream; the queue depth only bounds read-ahead.
    """

    def __init__(self, dataset, stage, policy, seed, batch_size, cursor,
                 m0=9.0, workers=1, queue_depth=4, progress_for=None,
                 sinc_lobes=3, rrc=True):
        self.dataset = dataset
        self.stage = stage
        self.policy = policy
        self.seed = seed
        self.batch_size = batch_size
        self.cursor = cursor
        self.m0 = m0
        self.workers = max(1, workers)
        self.queue_depth = max(1, queue_depth)
        # progress as a pure function of the batch ordinal: read-ahead must
        # not change what a batch sees
        self.progress_for = progress_for or (lambda j: stage.start_frac)
        self.batch_index = 0
        self.sinc_lobes = sinc_lobes
        self.rrc = rrc

    def batches(self, count):
        """Yield `count` batches in order."""
        if self.workers == 1:
            for _ in range(count):
                j = self.batch_index
                self.batch_index += 1
                yield self._build(j, self.cursor.take(self.batch_size))
            return
        yield from self._parallel(count)

    def _build(self, j, entries):
        return make_batch(self.dataset, entries, self.stage,
                          float(self.progress_for(j)), self.policy, self.seed,
                          m0=self.m0, sinc_lobes=self.sinc_lobes, rrc=self.rrc)

    def _parallel(self, count):
        tasks = queue.Queue()
        base = self.batch_index
        self.batch_index += count
        for ordinal in range(count):
            tasks.put((ordinal, base + ordinal, self.cursor.take(self.batch_size)))
        done = {}
        lock = threading.Condition()
        next_out = 0

        def worker():
            nonlocal next_out
            while True:
                try:
                    ordinal, j, entries = tasks.get_nowait()
                except queue.Empty:
                    return
                with lock:
                    # bounded read-ahead relative to the consumer
                    while ordinal - next_out >= self.queue_depth:
                        lock.wait()
                batch = self._build(j, entries)
                with lock:
                    done[ordinal] = batch
                    lock.notify_all()

        threads = [threading.Thread(target=worker, daemon=True)
                   for _ in range(self.workers)]
        for t in threads:
            t.start()
        for ordinal in range(count):
            with lock:
                while ordinal not in done:
                    lock.wait()
                batch = done.pop(ordinal)
                next_out = ordinal + 1
                lock.notify_all()
            yield batch
        for t in threads:
            t.join()
