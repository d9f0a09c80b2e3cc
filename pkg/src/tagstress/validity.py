"""Experiment drivers: deflation and inflation of a single system's figure
of merit, and pairwise dominance between two systems, all through
replacement-only irrelevant transformations of the test set.

Systems are never retrained here; ground-truth labels are never touched;
an instance's audio is always filtered from the original (one filter at a
time, never composed)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip
from .classifiers import TrainedSystem
from .filterbank import (FilterbankDesign, FilterSpec, TransformSet,
                         apply_filter, design_filterbank,
                         sample_irrelevant_filter, transform_hash)
from .labels import VOCALS, Label
from .metrics import FomReport, confusion, fom
from .stats import (DEFAULT_ALPHA, OutcomePair, PairedOutcome,
                    paired_contradiction_pvalue, random_consistency_pvalue)


@dataclass(frozen=True)
class StopCriteria:
    alpha: float = DEFAULT_ALPHA
    inflation_f_target: float = 0.95
    max_iterations: int = 50
    candidates_per_iteration: int = 1

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must be in (0, 1)")
        if not (0.0 < self.inflation_f_target <= 1.0):
            raise ValueError("inflation F target must be in (0, 1]")
        if self.max_iterations < 1 or self.candidates_per_iteration < 1:
            raise ValueError("iteration counts must be positive")


@dataclass(frozen=True)
class LabeledClip:
    id: str
    clip: AudioClip
    label: Label


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    filter_seed: int | None
    retransformed_ids: tuple
    x: int
    y: int
    p_value: float
    macro_f: float
    micro_f: float


@dataclass
class ValidityRunLog:
    kind: str
    records: list
    transforms: TransformSet
    termination: str  # success | exhausted | vacuous
    n_t: int
    n_tbar: int

    @property
    def iterations(self) -> int:
        return self.records[-1].iteration

    def csv_lines(self):
        yield "iteration,seed,n_retransformed,x,y,p_value,macro_f,micro_f"
        for r in self.records:
            seed = "" if r.filter_seed is None else str(r.filter_seed)
            yield "%d,%s,%d,%d,%d,%.12g,%.12g,%.12g" % (
                r.iteration, seed, len(r.retransformed_ids), r.x, r.y,
                r.p_value, r.macro_f, r.micro_f)


class Predictor:
    """Deterministic prediction of one system over (instance, transform)
    pairs, memoizing features and labels per transform hash. The filter is
    always applied to the original clip."""

    def __init__(self, system: TrainedSystem, design: FilterbankDesign,
                 feature_cache=None):
        self.system = system
        self.design = design
        self.feature_cache = feature_cache
        self._labels: dict[tuple, Label] = {}

    def predict(self, item: LabeledClip, spec: FilterSpec | None) -> Label:
        key = (item.id, transform_hash(spec))
        hit = self._labels.get(key)
        if hit is not None:
            return hit
        feats = self._features(item, spec)
        label = self.system.predict_features(feats)
        self._labels[key] = label
        return label

    def _features(self, item: LabeledClip, spec: FilterSpec | None):
        spec_hash = transform_hash(spec)

        def compute():
            clip = item.clip if spec is None else apply_filter(
                item.clip, spec, self.design)
            return self.system.extract(clip)

        if self.feature_cache is None:
            return compute()
        return self.feature_cache.get_or_compute(
            self.system.feature_kind, item.id, spec_hash, compute)


def _counts(testset, correct) -> tuple[int, int]:
    x = sum(1 for item in testset if item.label == VOCALS and correct[item.id])
    y = sum(1 for item in testset if item.label != VOCALS and correct[item.id])
    return x, y


def _fom_snapshot(testset, predictions) -> FomReport:
    preds = [predictions[item.id] for item in testset]
    truths = [item.label for item in testset]
    return fom(confusion(preds, truths))


def _single_system_run(kind, system, testset, criteria, rng, design,
                       feature_cache):
    """Shared driver for deflation (flip correct instances to incorrect)
    and inflation (the mirror image)."""
    deflating = kind == "deflate"
    predictor = Predictor(system, design, feature_cache)
    transforms = TransformSet([item.id for item in testset])
    n_t = sum(1 for item in testset if item.label == VOCALS)
    n_tbar = len(testset) - n_t

    predictions = {item.id: predictor.predict(item, None) for item in testset}
    correct = {item.id: predictions[item.id] == item.label for item in testset}

    def snapshot(iteration, seed, retransformed):
        x, y = _counts(testset, correct)
        p, _ = random_consistency_pvalue(OutcomePair(x=x, y=y, n_t=n_t,
                                                     n_tbar=n_tbar))
        report = _fom_snapshot(testset, predictions)
        return IterationRecord(iteration=iteration, filter_seed=seed,
                               retransformed_ids=tuple(retransformed),
                               x=x, y=y, p_value=p, macro_f=report.macro_f,
                               micro_f=report.micro_f)

    records = [snapshot(0, None, ())]

    def satisfied(rec: IterationRecord) -> bool:
        if deflating:
            return rec.p_value >= criteria.alpha
        return rec.macro_f >= criteria.inflation_f_target

    if deflating and records[0].p_value >= criteria.alpha:
        return ValidityRunLog(kind=kind, records=records, transforms=transforms,
                              termination="vacuous", n_t=n_t, n_tbar=n_tbar)
    if not deflating and all(correct.values()):
        return ValidityRunLog(kind=kind, records=records, transforms=transforms,
                              termination="vacuous", n_t=n_t, n_tbar=n_tbar)

    termination = "exhausted"
    for iteration in range(1, criteria.max_iterations + 1):
        targets = [item for item in testset if correct[item.id] == deflating]
        if not targets:
            termination = "success" if satisfied(records[-1]) else "exhausted"
            break

        candidates = []
        for _ in range(criteria.candidates_per_iteration):
            seed = int(rng.integers(0, 2 ** 62))
            spec = sample_irrelevant_filter(seed, design.channels)
            new_preds = {item.id: predictor.predict(item, spec)
                         for item in targets}
            flips = sum(1 for item in targets
                        if (new_preds[item.id] == item.label) != deflating
                        and correct[item.id] == deflating)
            candidates.append((flips, seed, spec, new_preds))
        flips, seed, spec, new_preds = max(candidates, key=lambda c: c[0])

        for item in targets:
            transforms.assign(item.id, spec)
            predictions[item.id] = new_preds[item.id]
            correct[item.id] = new_preds[item.id] == item.label
        records.append(snapshot(iteration, seed, [item.id for item in targets]))
        if satisfied(records[-1]):
            termination = "success"
            break

    return ValidityRunLog(kind=kind, records=records, transforms=transforms,
                          termination=termination, n_t=n_t, n_tbar=n_tbar)


def deflate(system: TrainedSystem, testset, criteria: StopCriteria, rng,
            design: FilterbankDesign | None = None,
            feature_cache=None) -> ValidityRunLog:
    """Drive the figure of merit down to random-consistency.

    Each iteration re-filters every currently-correct instance with one
    fresh random equalization (replacement, never composition); instances
    that flip to incorrect keep their filter for good. Terminates when the
    random-consistency test fails to reject (p >= alpha). A system that is
    already random-consistent is a vacuous run.
    """
    if design is None:
        design = design_filterbank()
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return _single_system_run("deflate", system, testset, criteria, rng,
                              design, feature_cache)


def inflate(system: TrainedSystem, testset, criteria: StopCriteria, rng,
            design: FilterbankDesign | None = None,
            feature_cache=None) -> ValidityRunLog:
    """Mirror of deflate over the currently-incorrect instances; terminates
    when mean per-tag F reaches the target or everything is correct."""
    if design is None:
        design = design_filterbank()
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return _single_system_run("inflate", system, testset, criteria, rng,
                              design, feature_cache)


@dataclass(frozen=True)
class PairwiseRecord:
    iteration: int
    filter_seed: int | None
    retransformed_ids: tuple
    a_wl: int
    a_lw: int
    p_value: float
    frozen: int


@dataclass
class PairwiseRunLog:
    kind: str
    records: list
    transforms: TransformSet
    termination: str
    winner_variant: str
    loser_variant: str

    @property
    def iterations(self) -> int:
        return self.records[-1].iteration

    def csv_lines(self):
        yield "iteration,seed,n_retransformed,a_wl,a_lw,p_value,n_frozen"
        for r in self.records:
            seed = "" if r.filter_seed is None else str(r.filter_seed)
            yield "%d,%s,%d,%d,%d,%.12g,%d" % (
                r.iteration, seed, len(r.retransformed_ids), r.a_wl, r.a_lw,
                r.p_value, r.frozen)


def pairwise_dominate(winner: TrainedSystem, loser: TrainedSystem, testset,
                      criteria: StopCriteria, rng,
                      design: FilterbankDesign | None = None,
                      feature_cache=None) -> PairwiseRunLog:
    """Make the winner significantly better than the loser on the paired
    contradiction test.

    Instances already in the desired state (winner correct, loser wrong)
    are frozen with their current transform. Every iteration samples one
    filter and offers it to each unfrozen instance not yet in the desired
    state, keeping it only where the joint state moves toward the desired
    one (per-instance greedy accept/revert). Terminates when
    P[A >= a_wl | Bin(b, 1/2)] < alpha.
    """
    if design is None:
        design = design_filterbank()
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    pred_w = Predictor(winner, design, feature_cache)
    pred_l = Predictor(loser, design, feature_cache)
    transforms = TransformSet([item.id for item in testset])
    current: dict[str, FilterSpec | None] = {item.id: None for item in testset}

    def state(item, spec):
        w_ok = pred_w.predict(item, spec) == item.label
        l_ok = pred_l.predict(item, spec) == item.label
        return w_ok, l_ok

    def score(w_ok, l_ok):
        return (1 if w_ok else 0) + (0 if l_ok else 1)

    states = {item.id: state(item, None) for item in testset}
    frozen = {item.id for item in testset if states[item.id] == (True, False)}

    def snapshot(iteration, seed, retransformed):
        a_wl = sum(1 for s in states.values() if s == (True, False))
        a_lw = sum(1 for s in states.values() if s == (False, True))
        p = paired_contradiction_pvalue(PairedOutcome(a12=a_wl, a21=a_lw), "12")
        return PairwiseRecord(iteration=iteration, filter_seed=seed,
                              retransformed_ids=tuple(retransformed),
                              a_wl=a_wl, a_lw=a_lw, p_value=p,
                              frozen=len(frozen))

    records = [snapshot(0, None, ())]
    termination = "exhausted"
    if records[0].p_value < criteria.alpha:
        termination = "success"
    else:
        for iteration in range(1, criteria.max_iterations + 1):
            active = [item for item in testset
                      if item.id not in frozen and states[item.id] != (True, False)]
            if not active:
                break
            seed = int(rng.integers(0, 2 ** 62))
            spec = sample_irrelevant_filter(seed, design.channels)
            accepted = []
            for item in active:
                new_state = state(item, spec)
                if score(*new_state) > score(*states[item.id]):
                    current[item.id] = spec
                    transforms.assign(item.id, spec)
                    states[item.id] = new_state
                    accepted.append(item.id)
                    if new_state == (True, False):
                        frozen.add(item.id)
            records.append(snapshot(iteration, seed, accepted))
            if records[-1].p_value < criteria.alpha:
                termination = "success"
                break

    return PairwiseRunLog(kind="pairwise", records=records,
                          transforms=transforms, termination=termination,
                          winner_variant=winner.variant,
                          loser_variant=loser.variant)
