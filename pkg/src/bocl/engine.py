"""Continual-learning controller: reward, meta-features, warmstart and the trial loop."""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import gp
from .acquisition import _key, propose_next, random_integer_points
from .errors import EmptyDataset, SearchSpaceExhausted
from .network import (
    NetSpec,
    TaskNetwork,
    TrainConfig,
    evaluate,
    expand,
    new_base,
    params_added_per_unit,
    train_task,
)
from .numeric import BoundedBox

log = logging.getLogger(__name__)

MODES = ("bocl", "bocl-no-attention", "random-search", "sn")


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.02
    z_max: Tuple[int, ...] = (30, 30)
    n_trials: int = 20
    patience: int = 5
    warmstart: int = 3

    def __post_init__(self):
        object.__setattr__(self, "z_max", tuple(int(v) for v in self.z_max))
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not self.n_trials >= self.warmstart >= 1:
            raise ValueError(f"need n_trials >= warmstart >= 1, got {self.n_trials}, {self.warmstart}")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if any(v < 0 for v in self.z_max):
            raise ValueError("z_max must be nonnegative")

    def bounds(self) -> BoundedBox:
        return BoundedBox(np.zeros(len(self.z_max)), np.array(self.z_max, dtype=float))


@dataclass
class TrialRecord:
    task: int
    trial: int
    point: Tuple[int, ...]
    accuracy: float
    penalty: float
    reward: float
    params_added: int = 0
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "trial": self.trial,
            "z": list(self.point),
            "accuracy": self.accuracy,
            "penalty": self.penalty,
            "reward": self.reward,
            "params_added": self.params_added,
            "seconds": self.seconds,
        }


@dataclass(frozen=True)
class MemoryEntry:
    task: int
    meta_feature: float
    best_point: Tuple[int, ...]


def reward(accuracy: float, z, per_unit_params, alpha: float) -> Tuple[float, float]:
    """Return ``(r, B)`` with ``B = -sum_i z_i * alpha * P_i / sum_j P_j``."""
    p = np.asarray(per_unit_params, dtype=np.float64)
    if np.any(p <= 0):
        raise ValueError("per-unit parameter counts must be positive")
    weights = alpha * p / p.sum()
    penalty = -float(np.dot(np.asarray(z, dtype=np.float64), weights))
    return accuracy + penalty, penalty


def meta_feature(
    task: int,
    train,
    val,
    spec: NetSpec,
    frozen: TaskNetwork,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> Tuple[float, float, float]:
    """Return ``(M, A1, A2)``: scratch base-network accuracy minus frozen-transfer accuracy.

    ``A2`` trains only the gates and a new head on top of the frozen network
    (a zero-unit expansion).
    """
    if len(train) == 0 or len(val) == 0:
        raise EmptyDataset("meta-feature needs non-empty train and validation sets")
    scratch = new_base(spec, rng, attention=frozen.attention)
    a1 = train_task(scratch, 1, train, val, cfg, rng)
    probe = expand(frozen, task, [0] * spec.depth, rng)
    a2 = train_task(probe, task, train, val, cfg, rng)
    return a1 - a2, a1, a2


def warmstart_select(memory: Sequence[MemoryEntry], m_t: float, m: int, bounds: BoundedBox, rng) -> List[np.ndarray]:
    """The ``m`` stored points nearest in meta-feature, padded with random points.

    Ties in ``|M_j - M_t|`` go to the most recent task. Points are distinct.
    """
    ranked = sorted(memory, key=lambda e: (abs(e.meta_feature - m_t), -e.task))
    chosen, seen = [], set()
    for entry in ranked:
        if len(chosen) == m:
            break
        k = tuple(int(v) for v in entry.best_point)
        if k not in seen:
            seen.add(k)
            chosen.append(np.array(k, dtype=np.int64))
    chosen.extend(random_integer_points(bounds, m - len(chosen), rng, exclude=chosen))
    return chosen


# ---------------------------------------------------------------------------
# generic search loop


@dataclass
class SearchTrial:
    point: np.ndarray
    reward: float
    payload: object = None


def search(
    evaluate_point: Callable[[np.ndarray], Tuple[float, object]],
    bounds: BoundedBox,
    initial_points: Sequence,
    n_trials: int,
    patience: Optional[int],
    rng: np.random.Generator,
    method: str = "bo",
    integer: bool = True,
    n_starts: int = 16,
    on_trial: Optional[Callable[[SearchTrial], None]] = None,
) -> List[SearchTrial]:
    """Evaluate the initial points, then propose until the budget or patience runs out.

    ``n_trials`` counts every evaluation, initial points included. Patience
    counts consecutive non-improving proposals after the initial points.
    """
    trials: List[SearchTrial] = []

    def run(point):
        r, payload = evaluate_point(point)
        t = SearchTrial(np.asarray(point), float(r), payload)
        trials.append(t)
        if on_trial is not None:
            on_trial(t)
        return t

    for p in list(initial_points)[:n_trials]:
        run(p)
    best = max((t.reward for t in trials), default=-np.inf)
    stale = 0
    while len(trials) < n_trials:
        history = [t.point for t in trials]
        try:
            if method == "random" or not trials:
                if integer:
                    pts = random_integer_points(bounds, 1, rng, exclude=history)
                    if not pts:
                        break
                    point = pts[0]
                else:
                    point = bounds.denormalize(rng.random(bounds.dim))
            else:
                x = np.array([bounds.normalize(t.point) for t in trials])
                y = np.array([t.reward for t in trials])
                model = gp.fit(x, y, seed=int(rng.integers(2**31)))
                point = propose_next(model, bounds, history, n_starts=n_starts, rng=rng, integer=integer).point
        except SearchSpaceExhausted:
            break
        t = run(point)
        if t.reward > best:
            best, stale = t.reward, 0
        else:
            stale += 1
            if patience is not None and stale >= patience:
                break
    return trials


# ---------------------------------------------------------------------------
# network expansion


@dataclass
class ExpansionResult:
    net: TaskNetwork
    best: TrialRecord
    trials: List[TrialRecord]
    meta_feature: float
    entry: MemoryEntry


def run_expansion(
    task: int,
    data,
    frozen: TaskNetwork,
    memory: List[MemoryEntry],
    config: RewardConfig,
    cfg: TrainConfig,
    rng: np.random.Generator,
    method: str = "bo",
    objective: Optional[Callable[[np.ndarray], float]] = None,
    on_trial: Optional[Callable[[TrialRecord], None]] = None,
    initial_points: Optional[Sequence] = None,
) -> ExpansionResult:
    """Search the per-layer expansion for ``task`` and return the best child network.

    ``data`` provides ``train`` and ``val``. ``objective`` replaces child
    training with a synthetic function of ``z`` returning an accuracy
    (used for testing the loop in isolation). ``initial_points`` overrides
    the memory-based warmstart. The winning ``(M_t, z)`` is appended to
    ``memory``.
    """
    if task < 2:
        raise ValueError("expansion applies to tasks 2 and later")
    spec = frozen.spec
    bounds = config.bounds()
    if len(config.z_max) != spec.depth:
        raise ValueError(f"z_max has {len(config.z_max)} entries, network has {spec.depth} layers")
    per_unit = [params_added_per_unit(spec, n, frozen.layer_widths()) for n in range(1, spec.depth + 1)]
    if objective is None:
        m_t, _, _ = meta_feature(task, data.train, data.val, spec, frozen, cfg, rng)
    else:
        m_t = 0.0
    if initial_points is None:
        initial_points = warmstart_select(memory, m_t, config.warmstart, bounds, rng)
    records: List[TrialRecord] = []
    best_net: Dict[str, TaskNetwork] = {}
    best_reward = [-np.inf]

    def evaluate_point(z):
        z = np.asarray(z, dtype=np.int64)
        start = time.perf_counter()
        if objective is None:
            child = expand(frozen, task, z, rng, config.z_max)
            acc = train_task(child, task, data.train, data.val, cfg, rng)
            added = child.param_count(task)
        else:
            child, acc, added = None, float(objective(z)), 0
        r, b = reward(acc, z, per_unit, config.alpha)
        rec = TrialRecord(task, len(records) + 1, tuple(int(v) for v in z), acc, b, r, added,
                          time.perf_counter() - start)
        records.append(rec)
        if r > best_reward[0]:
            best_reward[0] = r
            best_net["net"] = child
        if on_trial is not None:
            on_trial(rec)
        log.debug("task %d trial %d z=%s acc=%.4f r=%.4f", task, rec.trial, rec.point, acc, r)
        return r, rec

    search(evaluate_point, bounds, initial_points, config.n_trials, config.patience, rng, method=method)
    best = max(records, key=lambda rec: rec.reward)
    entry = MemoryEntry(task, m_t, best.point)
    memory.append(entry)
    return ExpansionResult(best_net["net"], best, records, m_t, entry)


# ---------------------------------------------------------------------------
# whole sequences


@dataclass
class SequenceResult:
    net: TaskNetwork
    mode: str
    test_acc: List[List[float]]  # test_acc[i][j]: task j after learning task i
    val_acc: List[float]
    trials: List[TrialRecord]
    memory: List[MemoryEntry]
    total_params: List[int]
    trial_counts: List[int]
    seconds: List[float]
    probe_logits: List[np.ndarray] = field(default_factory=list)

    @property
    def average_accuracy(self) -> float:
        return float(np.mean(self.test_acc[-1]))

    def added_params(self) -> int:
        return self.total_params[-1] - self.total_params[0]


def run_sequence(
    sequence,
    spec: NetSpec,
    config: RewardConfig,
    cfg: TrainConfig,
    seed: int,
    mode: str = "bocl",
    probe=None,
    on_trial: Optional[Callable[[TrialRecord], None]] = None,
) -> SequenceResult:
    """Learn every task of ``sequence`` in order and score all seen tasks after each.

    ``probe`` is an optional image batch whose logits are recorded for each
    task right after it is learned (``probe_logits[j]``), and again at the
    end in the final network via :meth:`TaskNetwork.forward`.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if len(sequence) < 1:
        raise ValueError("sequence is empty")
    rng = np.random.default_rng(seed)
    memory: List[MemoryEntry] = []
    trials: List[TrialRecord] = []
    test_acc, val_acc, totals, counts, seconds, probes = [], [], [], [], [], []
    net = None
    for i, task_data in enumerate(sequence, start=1):
        start = time.perf_counter()
        if mode == "sn":
            if net is None:
                net = new_base(spec, rng)
            val_acc.append(train_task(net, 1, task_data.train, task_data.val, cfg, rng))
            counts.append(1)
        elif i == 1:
            net = new_base(spec, rng, attention=mode != "bocl-no-attention")
            val_acc.append(train_task(net, 1, task_data.train, task_data.val, cfg, rng))
            counts.append(1)
        else:
            res = run_expansion(
                i,
                task_data,
                net,
                memory,
                config,
                cfg,
                rng,
                method="random" if mode == "random-search" else "bo",
                on_trial=on_trial,
            )
            net = res.net
            trials.extend(res.trials)
            val_acc.append(res.best.accuracy)
            counts.append(len(res.trials))
        seconds.append(time.perf_counter() - start)
        totals.append(net.param_count())
        row = []
        for j in range(1, i + 1):
            row.append(evaluate(net, 1 if mode == "sn" else j, sequence[j - 1].test))
        test_acc.append(row)
        if probe is not None:
            probes.append(net.forward(1 if mode == "sn" else i, probe))
        log.info("task %d done: test acc %s", i, ["%.3f" % a for a in row])
    return SequenceResult(net, mode, test_acc, val_acc, trials, memory, totals, counts, seconds, probes)
