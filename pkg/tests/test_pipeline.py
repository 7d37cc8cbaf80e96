"""Tests for dataset readers, preprocessing, replay and the loader."""

import numpy as np
import pytest

from freqtrain.augment import AugmentPolicy
from freqtrain.curriculum import Stage
from freqtrain.errors import FormatError, ParameterError
from freqtrain.pipeline import (
    BatchLoader,
    ReplayBuffer,
    SampleCursor,
    make_batch,
    open_cifar10,
    open_dataset,
    open_idx,
    open_rten_dir,
    preprocess,
    replay_plan,
    replay_stream,
    sample_rng,
)
from freqtrain.rten import write_rten
from freqtrain.spectral import dft2, filter_mask, FilterSpec, ImageTensor
from freqtrain.synthdata import generate_dataset, make_split, write_cifar_bin


def write_idx_pair(tmp_path, images, labels):
    img_path = tmp_path / "t10k-images-idx3-ubyte"
    lbl_path = tmp_path / "t10k-labels-idx1-ubyte"
    n, rows, cols = images.shape
    with open(img_path, "wb") as f:
        f.write((0x803).to_bytes(4, "big"))
        f.write(n.to_bytes(4, "big"))
        f.write(rows.to_bytes(4, "big"))
        f.write(cols.to_bytes(4, "big"))
        f.write(images.tobytes())
    with open(lbl_path, "wb") as f:
        f.write((0x801).to_bytes(4, "big"))
        f.write(n.to_bytes(4, "big"))
        f.write(labels.tobytes())
    return img_path, lbl_path


class TestReaders:
    def test_idx_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(20, 28, 28), dtype=np.uint8)
        labels = (np.arange(20) % 10).astype(np.uint8)
        img_path, _ = write_idx_pair(tmp_path, images, labels)
        ds = open_idx(str(img_path))
        assert ds.sample_count == 20 and ds.channels == 1 and ds.side == 28
        np.testing.assert_allclose(ds.image(3), images[3][None] / 255.0)
        assert ds.label(7) == 7

    def test_cifar_round_trip(self, tmp_path):
        images, labels = make_split(30, seed=1, split="t")
        path = tmp_path / "batch.bin"
        write_cifar_bin(path, images, labels)
        ds = open_cifar10(str(path))
        assert ds.sample_count == 30
        assert ds.class_count == 10
        assert ds.channels == 3 and ds.side == 32
        np.testing.assert_allclose(ds.image(4), images[4] / 255.0)
        assert (path.stat().st_size % 3073) == 0

    def test_cifar_truncated_record_offset(self, tmp_path):
        images, labels = make_split(3, seed=2, split="t")
        path = tmp_path / "bad.bin"
        write_cifar_bin(path, images, labels)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(FormatError) as exc:
            open_cifar10(str(path))
        assert exc.value.offset == 2 * 3073

    def test_idx_bad_magic_offset_zero(self, tmp_path):
        p = tmp_path / "x-images-idx3-ubyte"
        p.write_bytes(b"\x00\x00\x08\x09" + bytes(12))
        with pytest.raises(FormatError) as exc:
            open_idx(str(p))
        assert exc.value.offset == 0

    def test_rten_directory(self, tmp_path):
        d = tmp_path / "ds"
        d.mkdir()
        rng = np.random.default_rng(3)
        for i in range(6):
            write_rten(d / f"{i:05d}.rten", rng.random((3, 8, 8)).astype(np.float32))
        (d / "labels.u16").write_bytes(
            np.arange(6, dtype="<u2").tobytes())
        ds = open_rten_dir(str(d))
        assert ds.sample_count == 6
        assert ds.class_count == 6
        assert ds.image(2).shape == (3, 8, 8)

    def test_dispatcher_rejects_unknown(self):
        with pytest.raises(ParameterError):
            open_dataset("x", "PNG-pile")


class TestPreprocess:
    def _dataset(self, tmp_path):
        train, _ = generate_dataset(tmp_path / "d", n_train=12, n_val=10, seed=4)
        return open_cifar10(train)

    def test_deterministic_per_seed(self, tmp_path):
        ds = self._dataset(tmp_path)
        stage = Stage(0.0, 1.0, 16)
        pol = AugmentPolicy()
        a = preprocess(ds.image(0), stage, 0.5, pol, sample_rng(9, 0))
        b = preprocess(ds.image(0), stage, 0.5, pol, sample_rng(9, 0))
        assert a.tobytes() == b.tobytes()
        c = preprocess(ds.image(0), stage, 0.5, pol, sample_rng(9, 1))
        assert a.tobytes() != c.tobytes()

    def test_full_band_stage_keeps_side(self, tmp_path):
        ds = self._dataset(tmp_path)
        out = preprocess(ds.image(1), Stage(0.0, 1.0, 32), 0.0, AugmentPolicy(),
                         sample_rng(9, 1))
        assert out.shape == (3, 32, 32)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_preclamp_tensor_has_no_out_of_band_energy(self, tmp_path):
        from freqtrain.augment import apply_randaug, baseline_augment, magnitude_at
        from freqtrain.spectral import crop_spectrum

        ds = self._dataset(tmp_path)
        pol = AugmentPolicy()
        out = preprocess(ds.image(2), Stage(0.0, 1.0, 16), 0.3, pol,
                         sample_rng(9, 2), clamp=False)
        # replay the augmentation stream to recover the 32^2 intermediate
        rng = sample_rng(9, 2)
        interm = baseline_augment(ImageTensor(ds.image(2)), 32, rng)
        interm = apply_randaug(interm, pol, magnitude_at(0.3, 9.0), rng)
        # every output bin must come from the intermediate's retained band:
        # its spectrum equals the cropped spectrum, out-of-band content adds 0
        for c in range(3):
            got = dft2(ImageTensor(out[c][None].astype(np.float64)))[0].data
            src = dft2(ImageTensor(interm.data[c][None].astype(np.float64)))[0]
            want = crop_spectrum(src, 16).data
            assert np.abs(got - want).max() < 1e-3  # float32 pipeline roundoff

    def test_bandwidth_larger_than_source_rejected(self, tmp_path):
        ds = self._dataset(tmp_path)
        with pytest.raises(ParameterError):
            preprocess(ds.image(0), Stage(0.0, 1.0, 64), 0.0, AugmentPolicy(),
                       sample_rng(9, 0))


class TestReplay:
    def test_plan_counts(self):
        plan = replay_plan(1000, 1)
        assert plan.count("fresh") == 500
        assert plan[0] == "fresh"
        plan0 = replay_plan(77, 0)
        assert plan0.count("fresh") == 77

    @pytest.mark.parametrize("total,n_buffer", [(10, 1), (11, 2), (100, 3), (7, 5)])
    def test_fresh_count_formula(self, total, n_buffer):
        plan = replay_plan(total, n_buffer)
        assert plan.count("fresh") == int(np.ceil(total / (n_buffer + 1)))

    def test_fifo_eviction(self):
        buf = ReplayBuffer(capacity=8, n_buffer=1)
        for i in range(20):
            buf.insert(i)
        assert buf.snapshot() == list(range(12, 20))

    def test_stream_matches_plan_and_trains_fresh_once(self):
        buf = ReplayBuffer(capacity=4, n_buffer=2)
        produced = iter(range(100))
        rng = np.random.default_rng(0)
        seen = list(replay_stream(buf, lambda: next(produced), 30, rng))
        fresh = [b for b, is_fresh in seen if is_fresh]
        assert fresh == list(range(10))  # each fresh batch served exactly once
        assert [f for _, f in seen] == [d == "fresh" for d in replay_plan(30, 2)]

    def test_flush_empties(self):
        buf = ReplayBuffer(capacity=4, n_buffer=1)
        buf.insert(1)
        buf.flush()
        assert len(buf) == 0


class TestLoader:
    def _loader(self, tmp_path, workers, depth=3):
        train, _ = generate_dataset(tmp_path / f"d{workers}", n_train=40,
                                    n_val=10, seed=5)
        ds = open_cifar10(train)
        cursor = SampleCursor(seed=7, dataset_size=ds.sample_count)
        return BatchLoader(ds, Stage(0.0, 1.0, 16), AugmentPolicy(), seed=7,
                           batch_size=8, cursor=cursor, workers=workers,
                           queue_depth=depth,
                           progress_for=lambda j: min(1.0, 0.01 * j))

    def test_single_worker_stream_repeats_bitwise(self, tmp_path):
        a = [b.inputs.tobytes() for b in self._loader(tmp_path, 1).batches(6)]
        b = [b.inputs.tobytes() for b in self._loader(tmp_path, 1).batches(6)]
        assert a == b

    def test_multi_worker_matches_single(self, tmp_path):
        single = [b.inputs.tobytes() for b in self._loader(tmp_path, 1).batches(8)]
        multi = [b.inputs.tobytes() for b in self._loader(tmp_path, 3).batches(8)]
        assert single == multi

    def test_epoch_reshuffles_but_val_order_is_caller_controlled(self, tmp_path):
        train, _ = generate_dataset(tmp_path / "dd", n_train=10, n_val=10, seed=6)
        ds = open_cifar10(train)
        cursor = SampleCursor(seed=11, dataset_size=10)
        first = [idx for _, idx in cursor.take(10)]
        second = [idx for _, idx in cursor.take(10)]
        assert sorted(first) == list(range(10))
        assert sorted(second) == list(range(10))
        assert first != second  # new permutation each pass

    def test_cursor_resumes_from_position(self, tmp_path):
        a = SampleCursor(seed=3, dataset_size=10)
        a.take(7)
        resumed = SampleCursor(seed=3, dataset_size=10, position=7)
        assert a.take(6) == resumed.take(6)
