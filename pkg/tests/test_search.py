"""Search-driver tests on rigged stub trainers (real runs live in acceptance)."""

import numpy as np
import pytest

from freqtrain.errors import DivergedError, ParameterError
from freqtrain.search import SearchConfig, greedy_search, sequential_search


class FloorStubTrainer:
    """Accuracy floor stub: accuracy drops with compute saved.

    A probe's accuracy is base - penalty * (saved cost fraction), so the
    minimal bandwidth satisfying the floor is known in closed form.
    """

    def __init__(self, final, base=0.9, penalty=0.05):
        self.final = final
        self.base = base
        self.penalty = penalty
        self.probes = 0

    def train_curriculum(self, bandwidths, seed):
        self.probes += 1
        n = len(bandwidths)
        cost = sum((b / self.final) ** 2 for b in bandwidths) / n  # of baseline
        acc = self.base - self.penalty * (1.0 - cost)
        return acc, cost * 10.0  # pretend T = 10 equivalent epochs


class SeqStubTrainer:
    """Sequential stub with scripted per-stage candidate scores."""

    def __init__(self, scores, diverge_on=()):
        self.scores = scores  # {stage: {bandwidth: accuracy}}
        self.diverge_on = set(diverge_on)
        self._states = 0
        self._acc = {}

    def fresh_state(self, seed):
        return {"id": "root", "trace": ()}

    def clone(self, state):
        return dict(state, trace=tuple(state["trace"]))

    def train_stage(self, state, bandwidth, i):
        if (i, bandwidth) in self.diverge_on:
            raise DivergedError("boom", iteration=0)
        state["trace"] = state["trace"] + ((i, bandwidth),)
        return 1.0 / 3.0

    def fine_tune(self, state, bandwidth, i):
        state["ft"] = (i, bandwidth)
        return 0.1

    def accuracy(self, state):
        i, bandwidth = state["ft"]
        return self.scores[i][bandwidth]

    def digest(self, state):
        return "d" + str(state["trace"])


def cfg(**kw):
    base = dict(n_stages=3, candidates=(16, 24, 32), final_size=32, seed=5,
                total_epochs=10.0, beta=2.0 / 3.0, t0=9.0, t_ft=1.0)
    base.update(kw)
    return SearchConfig(**base)


class TestConfig:
    def test_rejects_unsorted_candidates(self):
        with pytest.raises(ParameterError):
            cfg(candidates=(24, 16, 32))

    def test_rejects_odd_or_oversized(self):
        with pytest.raises(ParameterError):
            cfg(candidates=(15, 32))
        with pytest.raises(ParameterError):
            cfg(candidates=(16, 48))

    def test_rejects_bad_beta(self):
        with pytest.raises(ParameterError):
            cfg(beta=1.5)


class TestGreedy:
    def test_full_size_candidate_always_satisfies(self):
        trainer = FloorStubTrainer(final=32)
        # tol = 0.0015 -> only a 3% cost saving is tolerated, so every
        # stage falls back to the (satisfying) full-size candidate
        report = greedy_search(trainer, cfg())
        assert report.chosen_bandwidths == [32, 32, 32]
        assert report.unsatisfiable_stages == []

    def test_unsatisfiable_stage_flagged_and_kept_full(self):
        trainer = FloorStubTrainer(final=32)
        report = greedy_search(trainer, cfg(candidates=(16, 24)))
        assert report.chosen_bandwidths == [32, 32, 32]
        assert report.unsatisfiable_stages == [1, 2]

    def test_looser_tolerance_accepts_smaller(self):
        trainer = FloorStubTrainer(final=32, penalty=0.05)
        # saving of all-16 first two stages ~ (1 - avg cost); pick tol to
        # accept 24 at stage 2 but not 16
        report = greedy_search(trainer, cfg(tol_points=2.0))
        assert report.chosen_bandwidths[2] == 32
        assert report.chosen_bandwidths[1] in (16, 24)
        # stage trials never exceed the candidate count
        for stage in (1, 2):
            assert sum(t.stage == stage for t in report.trials) <= 3

    def test_single_candidate_trivial(self):
        trainer = FloorStubTrainer(final=32)
        report = greedy_search(trainer, cfg(n_stages=2, candidates=(32,)))
        assert report.chosen_bandwidths == [32, 32]
        # one baseline + one probe
        assert trainer.probes == 2

    def test_supplied_baseline_skips_baseline_run(self):
        trainer = FloorStubTrainer(final=32)
        greedy_search(trainer, cfg(baseline_accuracy=0.9))
        first = trainer.probes
        trainer2 = FloorStubTrainer(final=32)
        greedy_search(trainer2, cfg())
        assert trainer2.probes == first + 1

    def test_deterministic_reports(self):
        a = greedy_search(FloorStubTrainer(32), cfg())
        b = greedy_search(FloorStubTrainer(32), cfg())
        assert a.canonical_json() == b.canonical_json()


class TestSequential:
    def test_picks_argmax_and_carries_pretuned(self):
        scores = {1: {16: 0.5, 24: 0.8, 32: 0.6},
                  2: {16: 0.4, 24: 0.7, 32: 0.9}}
        trainer = SeqStubTrainer(scores)
        report = sequential_search(trainer, cfg())
        assert report.chosen_bandwidths == [24, 32, 32]
        # every stage-2 trial branched from the stage-1 winner (pre-fine-tune)
        stage2 = [t for t in report.trials if t.stage == 2]
        assert {t.parent_digest for t in stage2} == {"d((1, 24),)"}

    def test_tie_breaks_to_smaller_bandwidth(self):
        scores = {1: {16: 0.800, 24: 0.801, 32: 0.79},
                  2: {16: 0.5, 24: 0.5, 32: 0.5}}
        trainer = SeqStubTrainer(scores)
        report = sequential_search(trainer, cfg(tol_points=0.15))
        assert report.chosen_bandwidths[0] == 16  # within 0.0015 of the max
        assert report.chosen_bandwidths[1] == 16

    def test_diverged_candidate_scores_zero_and_continues(self):
        scores = {1: {16: 0.6, 24: 0.0, 32: 0.7},
                  2: {16: 0.5, 24: 0.6, 32: 0.5}}
        trainer = SeqStubTrainer(scores, diverge_on={(1, 24)})
        report = sequential_search(trainer, cfg())
        assert report.chosen_bandwidths[0] == 32
        t = next(t for t in report.trials if t.stage == 1 and t.bandwidth == 24)
        assert t.diverged and t.accuracy == 0.0

    def test_single_candidate_forced(self):
        scores = {1: {32: 0.5}, 2: {32: 0.6}}
        report = sequential_search(SeqStubTrainer(scores), cfg(candidates=(32,)))
        assert report.chosen_bandwidths == [32, 32, 32]
        assert len(report.trials) == 2

    def test_cost_accounting_sums_trials(self):
        scores = {1: {16: 0.5, 24: 0.8, 32: 0.6},
                  2: {16: 0.4, 24: 0.7, 32: 0.9}}
        report = sequential_search(SeqStubTrainer(scores), cfg())
        expected = sum(t.cost_eq_epochs for t in report.trials)
        assert report.search_cost_eq_epochs == pytest.approx(expected)
        assert expected == pytest.approx(6 * (1.0 / 3.0 + 0.1))

    def test_merged_fractions(self):
        scores = {1: {96: 0.9, 160: 0.3, 224: 0.3},
                  2: {96: 0.3, 160: 0.9, 224: 0.3},
                  3: {96: 0.3, 160: 0.9, 224: 0.3},
                  4: {96: 0.3, 160: 0.3, 224: 0.9}}
        trainer = SeqStubTrainer(scores)
        report = sequential_search(
            trainer, cfg(n_stages=5, candidates=(96, 160, 224), final_size=224))
        assert report.chosen_bandwidths == [96, 160, 160, 224, 224]
        assert report.merged_stage_fractions() == [
            (0.0, 0.2, 96), (0.2, 0.6, 160), (0.6, 1.0, 224)]

    def test_deterministic_reports(self):
        scores = {1: {16: 0.5, 24: 0.8, 32: 0.6},
                  2: {16: 0.4, 24: 0.7, 32: 0.9}}
        a = sequential_search(SeqStubTrainer(scores), cfg())
        b = sequential_search(SeqStubTrainer(scores), cfg())
        assert a.canonical_json() == b.canonical_json()
        assert "wall_time" not in a.canonical_json()
