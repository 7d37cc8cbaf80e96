"""Schedule data model, compute-budget accounting and LR machinery.

A schedule's stages partition [0, 1] exactly.  The fraction axis is
either compute ("equivalent epochs", the budget divided by the cost of
one full-resolution epoch) or raw epochs, recorded per schedule in
progress_basis.  Bandwidth adaptation to a final input size gamma uses
the stage-anchor formula (anchor * gamma / 224 for the first stage, the
midpoint with gamma for the second) rounded to the nearest even value,
minimum 8; exact odd midpoints round up.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CostModelError, ParameterError

REFERENCE_SIDE = 224
MIN_BANDWIDTH = 8


def round_even(x, minimum=MIN_BANDWIDTH):
    """Nearest even integer, ties (odd integers) rounding up, floored at minimum."""
    half = x / 2.0
    # round-half-up on the halved value picks the upper even at ties
    even = 2 * int(np.floor(half + 0.5))
    return max(even, minimum)


@dataclass(frozen=True)
class Stage:
    """One contiguous slice of the budget at a fixed bandwidth."""

    start_frac: float
    end_frac: float
    bandwidth: int
    batch_scale: int = 1

    def __post_init__(self):
        if not 0.0 <= self.start_frac < self.end_frac <= 1.0:
            raise ParameterError(
                f"stage fractions must satisfy 0 <= start < end <= 1, "
                f"got [{self.start_frac}, {self.end_frac}]"
            )
        if self.bandwidth % 2 or self.bandwidth < 2:
            raise ParameterError(f"stage bandwidth must be even, got {self.bandwidth}")
        if self.batch_scale < 1:
            raise ParameterError(f"batch_scale must be >= 1, got {self.batch_scale}")

    @property
    def span(self):
        return self.end_frac - self.start_frac


@dataclass(frozen=True)
class CurriculumSchedule:
    """Ordered stages over the budget plus the augmentation ramp target."""

    stages: tuple
    final_size: int
    m0: float
    budget: float
    progress_basis: str = "compute"  # or "epoch"

    def __post_init__(self):
        if not self.stages:
            raise ParameterError("a schedule needs at least one stage")
        if self.progress_basis not in ("compute", "epoch"):
            raise ParameterError(f"unknown progress basis {self.progress_basis!r}")
        if self.budget <= 0:
            raise ParameterError(f"budget must be > 0, got {self.budget}")
        if self.stages[0].start_frac != 0.0 or self.stages[-1].end_frac != 1.0:
            raise ParameterError("stages must span [0, 1]")
        for a, b in zip(self.stages, self.stages[1:]):
            if a.end_frac != b.start_frac:
                raise ParameterError(
                    f"stages must tile without gaps: {a.end_frac} != {b.start_frac}"
                )
        if self.stages[-1].bandwidth != self.final_size:
            raise ParameterError("last stage must run at the final input size")

    def stage_at(self, progress):
        for stage in self.stages:
            if progress < stage.end_frac:
                return stage
        return self.stages[-1]

    def bandwidths(self):
        return tuple(s.bandwidth for s in self.stages)


def adapted_bandwidths(anchor, final_size):
    """Three-stage bandwidths (anchor*g/224, midpoint, g), even-rounded."""
    b1 = round_even(anchor * final_size / REFERENCE_SIDE)
    b1 = min(b1, final_size)
    b2 = min(round_even((b1 + final_size) / 2.0), final_size)
    return b1, b2, final_size


def default_etpp(final_size, budget, m0=9.0, n_stages=3, batch_scales=None):
    """Compute-basis curriculum: stage fractions (0.2, 0.6, 1.0) with
    bandwidths adapted from the 96-anchor triple; m ramps 0 -> m0 over
    compute.  n_stages=1 degenerates to a single full-size stage.
    """
    if final_size % 2 or final_size < MIN_BANDWIDTH:
        raise ParameterError(f"final size must be even and >= {MIN_BANDWIDTH}")
    if budget <= 0:
        raise ParameterError("budget must be > 0")
    if n_stages == 1:
        stages = (Stage(0.0, 1.0, final_size),)
    elif n_stages == 3:
        b1, b2, b3 = adapted_bandwidths(96, final_size)
        scales = batch_scales or (1, 1, 1)
        stages = (
            Stage(0.0, 0.2, b1, scales[0]),
            Stage(0.2, 0.6, b2, scales[1]),
            Stage(0.6, 1.0, b3, scales[2]),
        )
    else:
        raise ParameterError(f"n_stages must be 1 or 3, got {n_stages}")
    return CurriculumSchedule(stages, final_size, m0, float(budget), "compute")


def default_et(total_epochs, final_size, m0=9.0):
    """Epoch-basis curriculum: fractions (0.6, 0.8, 1.0) with bandwidths
    adapted from the 160-anchor triple; boundaries scale linearly with
    the epoch count.
    """
    if total_epochs < 3:
        raise ParameterError(f"need >= 3 epochs, got {total_epochs}")
    if final_size % 2 or final_size < MIN_BANDWIDTH:
        raise ParameterError(f"final size must be even and >= {MIN_BANDWIDTH}")
    b1, b2, b3 = adapted_bandwidths(160, final_size)
    stages = (
        Stage(0.0, 0.6, b1),
        Stage(0.6, 0.8, b2),
        Stage(0.8, 1.0, b3),
    )
    return CurriculumSchedule(stages, final_size, m0, float(total_epochs), "epoch")


def baseline_schedule(final_size, budget, m0=9.0, basis="compute"):
    """Single full-resolution stage: the no-curriculum reference."""
    stages = (Stage(0.0, 1.0, final_size),)
    return CurriculumSchedule(stages, final_size, m0, float(budget), basis)


# ---------------------------------------------------------------------------
# Budget accounting
# ---------------------------------------------------------------------------

def stage_iterations(stage, budget, flops_model, dataset_size, batch_size,
                     final_size):
    """Iteration count that spends the stage's share of the compute budget.

    floor[(end - start) * budget * dataset_size / batch * flops(final) / flops(B)]:
    cheaper inputs buy proportionally more optimizer steps.  Fractional
    iterations are floored; the residue is the caller's to log.
    """
    cost_b = flops_model(stage.bandwidth)
    cost_full = flops_model(final_size)
    if cost_b <= 0 or cost_full <= 0:
        raise CostModelError(
            f"flops model returned a non-positive cost ({cost_b}, {cost_full})"
        )
    batch = batch_size * stage.batch_scale
    exact = stage.span * budget * dataset_size / batch * (cost_full / cost_b)
    return int(np.floor(exact))


def stage_iterations_epochs(stage, total_epochs, dataset_size, batch_size):
    """Epoch-basis share: raw passes over the data, no flops weighting."""
    batch = batch_size * stage.batch_scale
    return int(np.floor(stage.span * total_epochs * dataset_size / batch))


def equivalent_epochs(training_log, flops_model, dataset_size, final_size):
    """Total compute of a per-iteration (bandwidth, batch) log, measured in
    full-resolution epochs.  Empty logs cost 0.
    """
    cost_full = flops_model(final_size)
    if cost_full <= 0:
        raise CostModelError(f"flops model returned {cost_full} at {final_size}")
    total = 0.0
    for bandwidth, batch in training_log:
        total += batch * flops_model(bandwidth)
    return total / (dataset_size * cost_full)


def schedule_iteration_plan(schedule, flops_model, dataset_size, batch_size):
    """Per-stage iteration counts for a schedule under its own basis."""
    plan = []
    for stage in schedule.stages:
        if schedule.progress_basis == "compute":
            n = stage_iterations(stage, schedule.budget, flops_model,
                                 dataset_size, batch_size, schedule.final_size)
        else:
            n = stage_iterations_epochs(stage, schedule.budget, dataset_size,
                                        batch_size)
        plan.append(n)
    return plan


# ---------------------------------------------------------------------------
# Learning rate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LRConfig:
    base_lr: float
    min_lr: float = 0.0
    warmup_frac: float = 0.0
    lr_cap: float = float("inf")

    def __post_init__(self):
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ParameterError(f"warmup_frac must be in [0, 1), got {self.warmup_frac}")
        if not self.min_lr <= self.base_lr <= self.lr_cap:
            raise ParameterError(
                f"need min_lr <= base_lr <= lr_cap, got "
                f"{self.min_lr}, {self.base_lr}, {self.lr_cap}"
            )


def lr_at(progress, cfg):
    """Linear warmup to base_lr, then cosine annealing to min_lr.

    Defined on the budget fraction, so re-planning per-stage iteration
    counts never moves the rate seen at a given fraction.
    """
    if not 0.0 <= progress <= 1.0:
        raise ParameterError(f"progress must be in [0, 1], got {progress}")
    w = cfg.warmup_frac
    if progress < w:
        return cfg.base_lr * progress / w
    span = 1.0 - w
    t = (progress - w) / span
    return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + np.cos(np.pi * t))


def scale_batch_lr(batch_scale, base_batch, cfg):
    """Early-large-batch rule: sqrt LR scaling capped at lr_cap.

    Returns (batch, lr_max); the stage's whole LR curve is rescaled by
    lr_max / base_lr.
    """
    if batch_scale < 1:
        raise ParameterError(f"batch_scale must be >= 1, got {batch_scale}")
    batch = base_batch * batch_scale
    lr_max = min(cfg.base_lr * np.sqrt(batch / base_batch), cfg.lr_cap)
    return batch, float(lr_max)
