"""End-to-end training driver executing a curriculum schedule.

Progress (the axis stages, the LR curve and the augmentation ramp are
defined on) advances by a fixed per-iteration increment in the
schedule's own basis: compute schedules add batch*flops(B) /
(N*flops(final)) equivalent epochs per step, epoch schedules add
batch/N raw epochs.  Replayed batches consume progress like fresh ones;
only fresh production drops.
"""

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentPolicy, mixup
from .curriculum import (
    CurriculumSchedule,
    LRConfig,
    lr_at,
    scale_batch_lr,
    schedule_iteration_plan,
)
from .errors import DivergedError
from .model import (
    NetworkSpec,
    OptimizerConfig,
    build_network,
    checkpoint_save,
    evaluate,
    flops_model,
    train_step,
)
from .pipeline import BatchLoader, ReplayBuffer, SampleCursor, replay_plan
from .seeding import derived_rng


@dataclass
class RunSettings:
    schedule: CurriculumSchedule
    net_spec: NetworkSpec = field(default_factory=NetworkSpec)
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    lr: LRConfig = field(default_factory=lambda: LRConfig(
        base_lr=3e-3, min_lr=3e-6, warmup_frac=20.0 / 300.0))
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    batch_size: int = 64
    seed: int = 0
    label_smoothing: float = 0.1
    mixup_alpha: float = 0.0  # 0 disables
    m_ramp: bool = True  # curricula ramp m; the baseline recipe holds it at m0
    rrc: bool = True  # random-resized-crop in the baseline augment step
    n_buffer: int = 0
    replay_capacity: int = 8
    workers: int = 1
    queue_depth: int = 4
    sinc_lobes: int = 3
    eval_every_frac: float = 0.0  # 0 disables periodic eval
    checkpoint_fracs: tuple = ()


class JsonlWriter:
    def __init__(self, path):
        self.path = path
        self._fh = open(path, "a") if path else None

    def write(self, row):
        if self._fh:
            self._fh.write(json.dumps(row) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()


def _progress_increment(schedule, stage, batch_eff, n_train, flops_fn):
    if schedule.progress_basis == "compute":
        per_iter = batch_eff * flops_fn(stage.bandwidth) / (
            n_train * flops_fn(schedule.final_size))
    else:
        per_iter = batch_eff / n_train
    return per_iter / schedule.budget


def run_training(settings, train_ds, val_ds, out_dir=None, log=None):
    """Train a fresh network through the whole schedule.

    Returns (state, summary).  With out_dir set, writes log.jsonl rows as
    it goes, checkpoints at the requested budget fractions and a final
    summary.json; on divergence the summary is marked failed, partial
    logs are kept and the error re-raised.
    """
    s = settings
    spec = s.net_spec
    flops_fn = flops_model(spec)
    n_train = train_ds.sample_count
    state = build_network(spec, s.seed, opt=s.opt)
    plan = schedule_iteration_plan(s.schedule, flops_fn, n_train, s.batch_size)
    cursor = SampleCursor(s.seed, n_train)
    writer = log or JsonlWriter(os.path.join(out_dir, "log.jsonl") if out_dir else None)
    ckpt_dir = None
    if out_dir:
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
    pending_ckpts = sorted(s.checkpoint_fracs)
    next_eval = s.eval_every_frac if s.eval_every_frac else None
    progress = 0.0
    eq_epochs = 0.0
    fresh_batches = 0
    total_iters = 0
    t0 = time.monotonic()
    status = "ok"
    try:
        for stage, iters in zip(s.schedule.stages, plan):
            batch_eff, lr_max = scale_batch_lr(stage.batch_scale, s.batch_size, s.lr)
            lr_scale = lr_max / s.lr.base_lr
            inc = _progress_increment(s.schedule, stage, batch_eff, n_train, flops_fn)
            inc_eq = batch_eff * flops_fn(stage.bandwidth) / (
                n_train * flops_fn(s.schedule.final_size))
            decisions = replay_plan(iters, s.n_buffer)
            n_fresh = decisions.count("fresh")
            stage_start = progress

            def frac_for_fresh(j, _start=stage_start, _inc=inc):
                # fresh batch j is trained at stage iteration j*(n_buffer+1)
                return min(1.0, _start + j * (s.n_buffer + 1) * _inc)

            def magnitude_frac(f):
                return f if s.m_ramp else 1.0

            loader = BatchLoader(
                train_ds, stage, s.policy, s.seed, batch_eff, cursor,
                m0=s.schedule.m0, workers=s.workers, queue_depth=s.queue_depth,
                progress_for=lambda j: magnitude_frac(frac_for_fresh(j)),
                sinc_lobes=s.sinc_lobes, rrc=s.rrc)
            fresh_gen = loader.batches(n_fresh)
            buffer = ReplayBuffer(max(1, s.replay_capacity), s.n_buffer)
            for decision in decisions:
                if decision == "fresh":
                    batch = next(fresh_gen)
                    fresh_batches += 1
                    is_fresh = True
                    if s.n_buffer > 0:
                        buffer.insert(batch)
                else:
                    batch = buffer.sample(state.rng)
                    is_fresh = False
                lr = lr_at(min(progress, 1.0), s.lr) * lr_scale
                inputs, labels = batch.inputs, batch.labels
                if s.mixup_alpha > 0 and inputs.shape[0] > 1:
                    inputs, labels = mixup(inputs, labels, s.mixup_alpha,
                                           state.rng, class_count=spec.class_count)
                loss = train_step(state, (inputs, labels), lr,
                                  label_smoothing=s.label_smoothing,
                                  bandwidth=stage.bandwidth)
                progress = min(1.0, progress + inc)
                eq_epochs += inc_eq
                total_iters += 1
                state.progress = progress
                state.eq_epochs = eq_epochs
                writer.write({
                    "type": "train", "iteration": state.iteration,
                    "bandwidth": stage.bandwidth, "batch": int(inputs.shape[0]),
                    "lr": float(lr), "loss": float(loss),
                    "eq_epochs": eq_epochs, "progress": progress,
                    "fresh": is_fresh, "wall_s": time.monotonic() - t0,
                })
                while pending_ckpts and progress >= pending_ckpts[0] - 1e-12:
                    frac = pending_ckpts.pop(0)
                    if ckpt_dir:
                        state.loop_state = {"cursor_position": cursor.position,
                                            "checkpoint_frac": frac}
                        checkpoint_save(
                            state, os.path.join(ckpt_dir, f"ck_{frac:.2f}.ftck"))
                if next_eval is not None and progress >= next_eval - 1e-12:
                    acc = evaluate(state, val_ds)
                    writer.write({
                        "type": "eval", "iteration": state.iteration,
                        "eq_epochs": eq_epochs, "progress": progress,
                        "accuracy": acc, "wall_s": time.monotonic() - t0,
                    })
                    next_eval += s.eval_every_frac
            # mixed-bandwidth replays are never allowed across stages
            buffer.flush()
    except DivergedError:
        status = "diverged"
        if out_dir:
            _write_summary(out_dir, status, None, eq_epochs, s, total_iters,
                           fresh_batches, time.monotonic() - t0)
        writer.close()
        raise
    final_acc = evaluate(state, val_ds)
    wall = time.monotonic() - t0
    writer.write({"type": "eval", "iteration": state.iteration,
                  "eq_epochs": eq_epochs, "progress": 1.0,
                  "accuracy": final_acc, "wall_s": wall})
    if ckpt_dir:
        state.loop_state = {"cursor_position": cursor.position,
                            "checkpoint_frac": 1.0}
        checkpoint_save(state, os.path.join(ckpt_dir, "final.ftck"))
    summary = _write_summary(out_dir, status, final_acc, eq_epochs, s,
                             total_iters, fresh_batches, wall)
    writer.close()
    return state, summary


def _write_summary(out_dir, status, final_acc, eq_epochs, settings, iters,
                   fresh, wall):
    summary = {
        "status": status,
        "final_accuracy": final_acc,
        "eq_epochs": eq_epochs,
        "budget": settings.schedule.budget,
        "progress_basis": settings.schedule.progress_basis,
        "bandwidths": list(settings.schedule.bandwidths()),
        "stages": [
            {"start_frac": st.start_frac, "end_frac": st.end_frac,
             "bandwidth": st.bandwidth, "batch_scale": st.batch_scale}
            for st in settings.schedule.stages
        ],
        "iterations": iters,
        "fresh_batches": fresh,
        "seed": settings.seed,
        "wall_time_s": wall,
    }
    if out_dir:
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
    return summary


# ---------------------------------------------------------------------------
# Segment primitive used by the curriculum searches
# ---------------------------------------------------------------------------

def train_segment(state, train_ds, bandwidth, iterations, settings,
                  frac_window, stream_key):
    """Train `iterations` steps at one bandwidth on an existing state.

    frac_window = (t1, t2): the budget fractions this segment occupies;
    LR and the magnitude ramp are evaluated on that sub-interval, so the
    rate seen at a fraction never depends on how iterations were split.
    stream_key names the data stream deterministically (independent of
    trial execution order).  Returns consumed equivalent epochs.
    """
    from .curriculum import Stage
    from .seeding import stable_seed

    s = settings
    if iterations <= 0:
        return 0.0
    t1, t2 = frac_window
    # the carrier Stage only supplies the bandwidth; this segment's true
    # fractions live in frac_window
    stage = Stage(0.0, 1.0, bandwidth)
    flops_fn = flops_model(s.net_spec)
    n_train = train_ds.sample_count
    seed = stable_seed(s.seed, "segment", *stream_key)
    cursor = SampleCursor(seed, n_train)

    def frac_for(j):
        f = t1 + (j / iterations) * (t2 - t1)
        return min(1.0, f) if s.m_ramp else 1.0

    loader = BatchLoader(train_ds, stage, s.policy, seed, s.batch_size, cursor,
                         m0=s.schedule.m0, workers=s.workers,
                         queue_depth=s.queue_depth, progress_for=frac_for,
                         sinc_lobes=s.sinc_lobes, rrc=s.rrc)
    inc_eq = s.batch_size * flops_fn(bandwidth) / (
        n_train * flops_fn(s.schedule.final_size))
    consumed = 0.0
    for j, batch in enumerate(loader.batches(iterations)):
        frac = min(1.0, t1 + (j / iterations) * (t2 - t1))
        lr = lr_at(frac, s.lr)
        inputs, labels = batch.inputs, batch.labels
        if s.mixup_alpha > 0 and inputs.shape[0] > 1:
            inputs, labels = mixup(inputs, labels, s.mixup_alpha, state.rng,
                                   class_count=s.net_spec.class_count)
        train_step(state, (inputs, labels), lr,
                   label_smoothing=s.label_smoothing, bandwidth=bandwidth)
        consumed += inc_eq
        state.eq_epochs += inc_eq
    return consumed
