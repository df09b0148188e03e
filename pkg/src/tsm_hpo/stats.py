"""Repeated-run scoring and the two-sample t-test used to compare optimisers.

Sign convention: the first sample is the baseline. With fitness minimised,
``t = (mean(baseline) - mean(challenger)) / se``, so a significantly
negative ``t`` says the baseline is better and a significantly positive
``t`` says the challenger is better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidSample

_EPS = 1e-15
_TINY = 1e-300


@dataclass(frozen=True)
class RunSample:
    label: str
    values: tuple[float, ...]

    def __init__(self, label: str, values: Sequence[float]):
        values = tuple(float(v) for v in values)
        if len(values) < 2:
            raise InvalidSample(f"{label}: need at least two values, got {len(values)}")
        if not all(math.isfinite(v) for v in values):
            raise InvalidSample(f"{label}: all values must be finite")
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return len(self.values)


def summarize(sample: RunSample) -> tuple[float, float]:
    """Mean and sample standard deviation (``n - 1`` denominator)."""
    mean = math.fsum(sample.values) / sample.n
    var = math.fsum((v - mean) ** 2 for v in sample.values) / (sample.n - 1)
    return mean, math.sqrt(var)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta function ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the fraction converges fast only on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed(t: float, df: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t == 0:
        return 1.0
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TestOutcome:
    t: float
    degrees_of_freedom: float
    p_value: float
    h: int
    alpha: float
    zero_variance: bool = False

    __test__ = False  # keep pytest from collecting this class

    def verdict(self, baseline: str = "baseline", challenger: str = "challenger") -> str:
        return verdict(self, baseline, challenger)


def t_test(a: RunSample, b: RunSample, alpha: float = 0.1, equal_var: bool = False) -> TestOutcome:
    """Two-tailed two-sample t-test of baseline ``a`` against challenger ``b``.

    Welch's unequal-variance test by default; ``equal_var=True`` gives the
    pooled Student test. ``h`` is 1 when ``p < alpha``. When both samples
    have zero variance the statistic is undefined: equal constants give
    ``t = 0``, ``h = 0``, distinct constants an infinite ``t`` with ``h = 1``,
    and both are flagged with ``zero_variance=True``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    ma, sa = summarize(a)
    mb, sb = summarize(b)
    va, vb = sa * sa / a.n, sb * sb / b.n
    if equal_var:
        pooled = ((a.n - 1) * sa * sa + (b.n - 1) * sb * sb) / (a.n + b.n - 2)
        se2 = pooled * (1.0 / a.n + 1.0 / b.n)
        df = float(a.n + b.n - 2)
    else:
        se2 = va + vb
        if se2 > 0:
            # written in variance shares so tiny variances do not underflow when squared
            ra, rb = va / se2, vb / se2
            df = 1.0 / (ra * ra / (a.n - 1) + rb * rb / (b.n - 1))
        else:
            df = float(a.n + b.n - 2)
    if se2 == 0.0:
        if ma == mb:
            return TestOutcome(0.0, df, 1.0, 0, alpha, zero_variance=True)
        return TestOutcome(math.copysign(math.inf, ma - mb), df, 0.0, 1, alpha, zero_variance=True)
    t = (ma - mb) / math.sqrt(se2)
    p = student_t_two_tailed(t, df)
    return TestOutcome(t, df, p, int(p < alpha), alpha)


def verdict(outcome: TestOutcome, baseline: str = "baseline", challenger: str = "challenger") -> str:
    if outcome.h == 0:
        return f"no significant difference between {baseline} and {challenger} (alpha = {outcome.alpha:g})"
    if outcome.t < 0:
        return f"{baseline} outperforms {challenger} (t = {outcome.t:.4f}, h = 1, alpha = {outcome.alpha:g})"
    return f"{challenger} outperforms {baseline} (t = {outcome.t:.4f}, h = 1, alpha = {outcome.alpha:g})"


@dataclass
class Comparison:
    outcome: TestOutcome
    samples: tuple[RunSample, RunSample]
    settings: tuple[dict, dict]
    objective: dict | None

    def report(self) -> dict:
        rows = []
        for sample, setting in zip(self.samples, self.settings):
            mean, sd = summarize(sample)
            rows.append({"method": sample.label, "hyperparameters": setting, "mean": mean, "sd": sd})
        o = self.outcome
        return {
            "objective": self.objective,
            "repeats": [s.n for s in self.samples],
            "alpha": o.alpha,
            "rows": rows,
            "t_test": {
                "t": o.t,
                "h": o.h,
                "p_value": o.p_value,
                "degrees_of_freedom": o.degrees_of_freedom,
                "zero_variance": o.zero_variance,
            },
            "verdict": verdict(o, self.samples[0].label, self.samples[1].label),
        }

    def table(self) -> str:
        """Plain-text table: one row per method, then the t-test line."""
        rep = self.report()
        header = ("Method", "Hyperparameters", "Mean fitness", "Mean STD")
        lines = []
        for row in rep["rows"]:
            params = ", ".join(f"{k}={v}" for k, v in row["hyperparameters"].items())
            lines.append((row["method"], params, f"{row['mean']:.6f}", f"{row['sd']:.6f}"))
        widths = [max(len(r[i]) for r in [header, *lines]) for i in range(4)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        out = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
        out += [fmt.format(*r) for r in lines]
        t = rep["t_test"]
        out.append(f"t-test (alpha = {rep['alpha']:g}): t={t['t']:.4f}, h={t['h']}  (p = {t['p_value']:.4g})")
        out.append(rep["verdict"])
        return "\n".join(out)


def compare_runs(a_record, b_record, repeats: int = 30, evaluator=None, alpha: float = 0.1,
                 labels: tuple[str, str] = ("A", "B"), equal_var: bool = False) -> Comparison:
    """Re-evaluate each run's best setting ``repeats`` times at full budget and t-test the samples.

    ``a_record`` is the baseline. Every repeat gets its own seed derived from
    the run seed and the repeat number.
    """
    from .evaluation import EvaluationRequest, Evaluator, derive_seed

    if repeats < 2:
        raise ValueError("repeats must be at least 2")
    if evaluator is None:
        raise ValueError("compare_runs needs an evaluator")
    if not hasattr(evaluator, "evaluate_many"):
        evaluator = Evaluator(evaluator, workers=1)
    samples, settings = [], []
    for label, record in zip(labels, (a_record, b_record)):
        values = dict(record.best_values)
        requests = [
            EvaluationRequest(f"{label}-repeat{r}", values, 1.0, derive_seed(record.seed, "repeat", r))
            for r in range(repeats)
        ]
        results = evaluator.evaluate_many(requests)
        samples.append(RunSample(label, [res.fitness for res in results]))
        settings.append(values)
    outcome = t_test(samples[0], samples[1], alpha, equal_var=equal_var)
    objective = (a_record.config or {}).get("evaluator")
    return Comparison(outcome, (samples[0], samples[1]), (settings[0], settings[1]), objective)
