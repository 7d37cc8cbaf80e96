"""The two curriculum-search drivers, generic over a trainer surface.

greedy_search minimizes per-stage bandwidths backwards from the last
stage under a validation-accuracy floor; every probe is a full
from-scratch run.  sequential_search walks stages forward under a fixed
compute ratio, branching every candidate from the carried checkpoint,
scoring each with a short full-size fine-tune, and carrying the
pre-fine-tune weights of the winner.

Trainer duck interface:
    train_curriculum(bandwidths, seed) -> (accuracy, cost_eq_epochs)
    fresh_state(seed) -> state
    clone(state) -> state
    train_stage(state, bandwidth, stage_index) -> cost_eq_epochs
    fine_tune(state, bandwidth, stage_index) -> cost_eq_epochs
    accuracy(state) -> float
    digest(state) -> str

Both searches derive every stochastic choice from (config seed, stage,
candidate), so reports are bit-identical across runs and independent of
trial execution order.
"""

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

from .errors import DivergedError, ParameterError
from .seeding import stable_seed


@dataclass(frozen=True)
class SearchConfig:
    n_stages: int
    candidates: tuple
    final_size: int
    seed: int = 0
    # accuracy-floor search
    total_epochs: float = 0.0
    baseline_accuracy: float = None
    # compute-constrained search
    beta: float = 2.0 / 3.0
    t0: float = 0.0
    t_ft: float = 1.0
    tol_points: float = 0.15  # accuracy-equality tolerance, in points

    def __post_init__(self):
        if self.n_stages < 2:
            raise ParameterError(f"need >= 2 stages, got {self.n_stages}")
        cands = tuple(self.candidates)
        if list(cands) != sorted(cands):
            raise ParameterError("candidates must be sorted ascending")
        for b in cands:
            if b % 2 or b > self.final_size:
                raise ParameterError(
                    f"candidates must be even and <= {self.final_size}, got {b}")
        if not 0.0 < self.beta < 1.0:
            raise ParameterError(f"beta must be in (0, 1), got {self.beta}")
        if self.t_ft <= 0:
            raise ParameterError(f"t_ft must be > 0, got {self.t_ft}")
        object.__setattr__(self, "candidates", cands)

    @property
    def tol(self):
        return self.tol_points / 100.0


@dataclass
class Trial:
    stage: int
    bandwidth: int
    accuracy: float
    cost_eq_epochs: float
    parent_digest: str = ""
    diverged: bool = False
    satisfied: bool = None  # accuracy-floor searches only


@dataclass
class SearchReport:
    algorithm: str
    config: dict
    chosen_bandwidths: list
    trials: list
    baseline_accuracy: float = None
    search_cost_eq_epochs: float = 0.0
    unsatisfiable_stages: list = field(default_factory=list)
    wall_time_s: float = 0.0  # excluded from the canonical serialization

    def canonical_json(self):
        """Deterministic serialization: wall time deliberately left out."""
        body = {
            "algorithm": self.algorithm,
            "config": self.config,
            "chosen_bandwidths": self.chosen_bandwidths,
            "baseline_accuracy": self.baseline_accuracy,
            "search_cost_eq_epochs": self.search_cost_eq_epochs,
            "unsatisfiable_stages": self.unsatisfiable_stages,
            "trials": [asdict(t) for t in self.trials],
        }
        return json.dumps(body, sort_keys=True, indent=2)

    def trials_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["stage", "bandwidth", "accuracy", "cost_eq_epochs",
                         "parent_digest", "diverged", "satisfied"])
        for t in self.trials:
            writer.writerow([t.stage, t.bandwidth, f"{t.accuracy:.6f}",
                             f"{t.cost_eq_epochs:.6f}", t.parent_digest,
                             int(t.diverged),
                             "" if t.satisfied is None else int(t.satisfied)])
        return buf.getvalue()

    def merged_stage_fractions(self):
        """Equal per-stage shares with adjacent equal bandwidths merged."""
        n = len(self.chosen_bandwidths)
        spans = []
        for i, b in enumerate(self.chosen_bandwidths):
            if spans and spans[-1][2] == b:
                spans[-1] = (spans[-1][0], (i + 1) / n, b)
            else:
                spans.append((i / n, (i + 1) / n, b))
        return spans


def greedy_search(trainer, cfg):
    """Backward per-stage bandwidth minimization under an accuracy floor.

    Stages that no candidate satisfies keep the full input size and are
    flagged in the report; the search always completes.
    """
    t_start = time.monotonic()
    n = cfg.n_stages
    trials = []
    total_cost = 0.0
    a0 = cfg.baseline_accuracy
    if a0 is None:
        a0, cost = trainer.train_curriculum(
            (cfg.final_size,) * n, stable_seed(cfg.seed, "baseline"))
        total_cost += cost
    chosen = [cfg.final_size] * n
    unsatisfiable = []
    for i in range(n - 1, 0, -1):  # stage index, 1-based stage i = position i-1
        found = None
        for b in cfg.candidates:
            assignment = tuple([b] * i + chosen[i:])
            acc, cost = trainer.train_curriculum(
                assignment, stable_seed(cfg.seed, "probe", i, b))
            total_cost += cost
            ok = acc >= a0 - cfg.tol
            trials.append(Trial(stage=i, bandwidth=b, accuracy=acc,
                                cost_eq_epochs=cost, satisfied=bool(ok)))
            if ok:
                found = b
                break
        if found is None:
            unsatisfiable.append(i)
            found = cfg.final_size
        for j in range(i):
            chosen[j] = found  # B_1..B_i move together; stage i is now fixed
    report = SearchReport(
        algorithm="greedy",
        config=_config_dict(cfg),
        chosen_bandwidths=chosen,
        trials=trials,
        baseline_accuracy=a0,
        search_cost_eq_epochs=total_cost,
        unsatisfiable_stages=sorted(unsatisfiable),
        wall_time_s=time.monotonic() - t_start,
    )
    return report


def sequential_search(trainer, cfg):
    """Forward compute-constrained search with proxy fine-tune scoring.

    Every candidate in a stage branches from the same parent weights;
    the winner's pre-fine-tune weights are carried.  Diverged candidates
    score 0 and the search continues.  Ties within the accuracy
    tolerance resolve to the smallest bandwidth.
    """
    if cfg.t0 <= 0:
        raise ParameterError("sequential search needs t0 > 0")
    t_start = time.monotonic()
    n = cfg.n_stages
    trials = []
    total_cost = 0.0
    state = trainer.fresh_state(stable_seed(cfg.seed, "init"))
    chosen = []
    for i in range(1, n):
        parent = trainer.digest(state)
        scored = {}
        branches = {}
        for b in cfg.candidates:
            branch = trainer.clone(state)
            diverged = False
            cost = 0.0
            try:
                cost += trainer.train_stage(branch, b, i)
                probe = trainer.clone(branch)
                cost += trainer.fine_tune(probe, b, i)
                acc = trainer.accuracy(probe)
            except DivergedError:
                diverged = True
                acc = 0.0
            trials.append(Trial(stage=i, bandwidth=b, accuracy=acc,
                                cost_eq_epochs=cost, parent_digest=parent,
                                diverged=diverged))
            total_cost += cost
            scored[b] = acc
            branches[b] = branch
        best_acc = max(scored.values())
        winner = min(b for b, acc in scored.items() if acc >= best_acc - cfg.tol)
        chosen.append(winner)
        state = branches[winner]
    chosen.append(cfg.final_size)  # the loop runs to N-1; the last stage is fixed
    report = SearchReport(
        algorithm="sequential",
        config=_config_dict(cfg),
        chosen_bandwidths=chosen,
        trials=trials,
        search_cost_eq_epochs=total_cost,
        wall_time_s=time.monotonic() - t_start,
    )
    return report


def _config_dict(cfg):
    d = asdict(cfg)
    d["candidates"] = list(cfg.candidates)
    return d


# ---------------------------------------------------------------------------
# Reference trainer over the desk training loop
# ---------------------------------------------------------------------------

class DeskSearchTrainer:
    """Adapts run_training / train_segment to the search interface.

    With ckpt_dir set, every trained trial state is checkpointed under a
    digest-derived filename.
    """

    def __init__(self, train_ds, val_ds, settings, cfg, ckpt_dir=None):
        self.train_ds = train_ds
        self.val_ds = val_ds
        self.cfg = cfg
        self.settings = settings
        self.ckpt_dir = ckpt_dir
        self._t = cfg.beta * cfg.t0  # compute budget of the searched run

    def _save_trial(self, state):
        if self.ckpt_dir:
            import os

            from .model import checkpoint_save, state_digest

            os.makedirs(self.ckpt_dir, exist_ok=True)
            checkpoint_save(
                state, os.path.join(self.ckpt_dir,
                                    f"{state_digest(state)}.ftck"))

    def train_curriculum(self, bandwidths, seed):
        from dataclasses import replace

        from .curriculum import CurriculumSchedule, Stage
        from .train_loop import run_training

        n = len(bandwidths)
        edges = [j / n for j in range(n + 1)]
        stages = tuple(Stage(a, b, bw) for a, b, bw in
                       zip(edges, edges[1:], bandwidths))
        schedule = CurriculumSchedule(stages, self.cfg.final_size,
                                      self.settings.schedule.m0,
                                      float(self.cfg.total_epochs), "epoch")
        settings = replace(self.settings, schedule=schedule, seed=seed)
        state, summary = run_training(settings, self.train_ds, self.val_ds)
        self._save_trial(state)
        return summary["final_accuracy"], summary["eq_epochs"]

    def fresh_state(self, seed):
        from .model import build_network

        return build_network(self.settings.net_spec, seed, opt=self.settings.opt)

    def clone(self, state):
        from .model import clone_state

        return clone_state(state)

    def _iterations(self, bandwidth, eq_epochs):
        from .model import flops_model

        fl = flops_model(self.settings.net_spec)
        n = self.train_ds.sample_count
        ratio = fl(self.cfg.final_size) / fl(bandwidth)
        return int(eq_epochs * n / self.settings.batch_size * ratio)

    def train_stage(self, state, bandwidth, i):
        from .train_loop import train_segment

        share = self._t / self.cfg.n_stages
        window = ((i - 1) / self.cfg.n_stages, i / self.cfg.n_stages)
        iters = self._iterations(bandwidth, share)
        cost = train_segment(state, self.train_ds, bandwidth, iters,
                             self.settings, window,
                             stream_key=("stage", i, bandwidth))
        self._save_trial(state)
        return cost

    def fine_tune(self, state, bandwidth, i):
        from .train_loop import train_segment

        t1 = i / self.cfg.n_stages
        t2 = min(1.0, t1 + self.cfg.t_ft / self._t)
        iters = self._iterations(self.cfg.final_size, self.cfg.t_ft)
        return train_segment(state, self.train_ds, self.cfg.final_size, iters,
                             self.settings, (t1, t2),
                             stream_key=("ft", i, bandwidth))

    def accuracy(self, state):
        from .model import evaluate

        return evaluate(state, self.val_ds)

    def digest(self, state):
        from .model import state_digest

        return state_digest(state)
