"""Budget matching: choose the pruning coefficient that hits a target average count."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .attn import ValidationError
from .stage1 import Stage1Config
from .stage2 import DEFAULT_LAYER, Stage2Config, stage1_for, stage2_for

STAGES = ("one", "two")
DEFAULT_MAX_ITERS = 60


def default_tolerance(k_target):
    return max(1.0, 0.02 * k_target)


@dataclass(frozen=True)
class BudgetTarget:
    k_target: float
    tolerance_tokens: float = None

    def __post_init__(self):
        if not self.k_target >= 1:
            raise ValidationError(f"k_target must be >= 1, got {self.k_target!r}")
        if self.tolerance_tokens is None:
            object.__setattr__(self, "tolerance_tokens", default_tolerance(self.k_target))
        elif self.tolerance_tokens < 0:
            raise ValidationError("tolerance_tokens must be >= 0")


@dataclass(frozen=True)
class CalibrationResult:
    lambda_star: float
    achieved_avg: float
    per_sample_counts: tuple
    iterations: int
    bracket: tuple
    k_target: float
    tolerance_tokens: float
    within_tolerance: bool
    bracket_exhausted: bool
    stage: str
    sample_ids: tuple = field(default=(), repr=False)

    def to_dict(self):
        return {
            "lambda_star": self.lambda_star,
            "achieved_avg": self.achieved_avg,
            "per_sample_counts": list(self.per_sample_counts),
            "sample_ids": list(self.sample_ids),
            "iterations": self.iterations,
            "bracket": list(self.bracket),
            "bracket_width": self.bracket[1] - self.bracket[0],
            "k_target": self.k_target,
            "tolerance_tokens": self.tolerance_tokens,
            "within_tolerance": self.within_tolerance,
            "bracket_exhausted": self.bracket_exhausted,
            "stage": self.stage,
        }


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Ragged per-sample candidate scores and reference (register) scores."""

    flat_scores: np.ndarray
    offsets: np.ndarray
    refs: np.ndarray
    sample_ids: tuple = ()

    @classmethod
    def from_samples(cls, samples, sample_ids=()):
        """``samples`` is a sequence of ``(scores, register_score)`` pairs."""
        if not samples:
            raise ValidationError("score table needs at least one sample")
        parts = [np.asarray(s, dtype=np.float64).reshape(-1) for s, _ in samples]
        refs = np.array([float(r) for _, r in samples])
        if np.any(refs < 0) or not np.all(np.isfinite(refs)):
            raise ValidationError("register scores must be finite and >= 0")
        offsets = np.zeros(len(parts) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([p.shape[0] for p in parts])
        flat = np.concatenate(parts) if parts else np.zeros(0)
        return cls(flat, offsets, refs, tuple(sample_ids))

    def __len__(self):
        return self.refs.shape[0]

    def counts(self, lam):
        return kernels.count_retained(self.flat_scores, self.offsets, self.refs, lam)

    def average(self, lam):
        return int(self.counts(lam).sum()) / len(self)

    def max_ratio(self):
        """Largest score/reference ratio; above it every sample with ref > 0 keeps nothing."""
        best = 0.0
        for i in range(len(self)):
            s = self.flat_scores[self.offsets[i] : self.offsets[i + 1]]
            if self.refs[i] > 0 and s.size:
                best = max(best, float(s.max() / self.refs[i]))
        return best


def prepare_scores(corpus, stage, fixed_cfg=None, neurons=None, cfg2=None):
    """Per-sample candidate scores for the stage being calibrated.

    Stage one scores every visual token at the encoder; stage two first
    prunes with ``fixed_cfg`` and scores the survivors with text attention.
    """
    if stage not in STAGES:
        raise ValidationError(f"stage must be one of {STAGES}, got {stage!r}")
    if neurons is None:
        raise ValidationError("a register neuron set is required")
    fixed_cfg = fixed_cfg or Stage1Config()
    cfg2 = cfg2 or Stage2Config(lambda2=0.0, layer=DEFAULT_LAYER)
    rows, ids = [], []
    for sample in corpus:
        s1, _ = stage1_for(sample, Stage1Config(0.0, fixed_cfg.mode) if stage == "one" else fixed_cfg, neurons)
        if stage == "one":
            rows.append((s1.scores.scores, s1.register_score))
        else:
            s2 = stage2_for(sample, s1, cfg2)
            rows.append((s2.scores.scores, s2.register_score))
        ids.append(sample.sample_id)
    return ScoreTable.from_samples(rows, ids)


def average_budget(counts):
    counts = list(counts)
    if not counts:
        raise ValidationError("cannot average an empty list of counts")
    return math.fsum(counts) / len(counts)


def _as_table(corpus, stage, fixed_cfg, neurons, cfg2):
    if isinstance(corpus, ScoreTable):
        return corpus
    corpus = list(corpus)
    if not corpus:
        raise ValidationError("corpus is empty")
    return prepare_scores(corpus, stage, fixed_cfg, neurons, cfg2)


def calibrate_lambda(
    corpus,
    target: BudgetTarget,
    fixed_cfg: Stage1Config = None,
    stage="two",
    bounds=(0.0, None),
    max_iters=DEFAULT_MAX_ITERS,
    *,
    neurons=None,
    cfg2=None,
):
    """Smallest lambda whose corpus-average count is closest to ``target``.

    The average count is a non-increasing step function of lambda.  A first
    bisection locates where it crosses the target; the better of the two
    levels around the crossing is chosen (ties go to the larger count), and
    a second bisection walks to the left edge of that level's plateau.
    ``bounds[1] = None`` picks an upper bound at which nothing survives.
    """
    table = _as_table(corpus, stage, fixed_cfg, neurons, cfg2)
    lo, hi = bounds
    lo = float(lo)
    hi = table.max_ratio() * (1 + 1e-9) + 1e-12 if hi is None else float(hi)
    if not lo < hi:
        raise ValidationError(f"bounds must satisfy lo < hi, got ({lo}, {hi})")
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    k_tar = float(target.k_target)
    memo = {}

    def avg(lam):
        if lam not in memo:
            memo[lam] = table.average(lam)
        return memo[lam]

    iterations = 0

    def left_edge(level, a, b):
        # smallest lambda in (a, b] with avg <= level, given avg(a) > level >= avg(b)
        nonlocal iterations
        for _ in range(max_iters):
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            iterations += 1
            if avg(mid) > level:
                a = mid
            else:
                b = mid
        return a, b

    exhausted = False
    if avg(lo) <= k_tar:
        lam_star, bracket = lo, (lo, lo)
        exhausted = abs(avg(lo) - k_tar) > target.tolerance_tokens
    else:
        if avg(hi) > k_tar:
            level = avg(hi)
            exhausted = abs(level - k_tar) > target.tolerance_tokens
            a, b = lo, hi
        else:
            a, b = left_edge(k_tar, lo, hi)
            above, below = avg(a), avg(b)
            level = above if abs(above - k_tar) <= abs(below - k_tar) else below
        if level == avg(lo):
            lam_star, bracket = lo, (lo, lo)
        else:
            a, b = left_edge(level, lo, b if level <= avg(b) else a)
            lam_star, bracket = b, (a, b)
    counts = table.counts(lam_star)
    achieved = average_budget(counts.tolist())
    return CalibrationResult(
        lambda_star=lam_star,
        achieved_avg=achieved,
        per_sample_counts=tuple(int(c) for c in counts),
        iterations=iterations,
        bracket=bracket,
        k_target=k_tar,
        tolerance_tokens=float(target.tolerance_tokens),
        within_tolerance=abs(achieved - k_tar) <= target.tolerance_tokens,
        bracket_exhausted=exhausted,
        stage=stage,
        sample_ids=table.sample_ids,
    )


def lambda_sweep(corpus, stage, lambdas, fixed_cfg=None, *, neurons=None, cfg2=None):
    """(lambda, average retained count) for each lambda in ascending order."""
    lambdas = [float(l) for l in lambdas]
    if any(b < a for a, b in zip(lambdas, lambdas[1:])):
        raise ValidationError("lambdas must be sorted ascending")
    if any(l < 0 for l in lambdas):
        raise ValidationError("lambdas must be non-negative")
    table = _as_table(corpus, stage, fixed_cfg, neurons, cfg2)
    out = [(lam, table.average(lam)) for lam in lambdas]
    for (l0, k0), (l1, k1) in zip(out, out[1:]):
        if k1 > k0:
            raise RuntimeError(f"average count increased from {k0} at {l0} to {k1} at {l1}")
    return out
