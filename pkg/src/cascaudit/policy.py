"""Decision layer: when to stop auditing and which verdict to issue.

Stopping a trace at posterior ``p`` costs ``min(miss_cost * p,
false_alarm_cost * (1 - p))`` in expectation (declare whichever hypothesis is
cheaper to be wrong about), while every further step on a fake item costs
``per_step``.  Three stopping rules are provided:

* ``dp_threshold`` -- the Bayes-optimal rule: value-iterate the stationary
  Bellman equation on a posterior grid and stop once the posterior leaves the
  continuation interval ``(pi_low, pi_up)``;
* ``sprt``         -- the same rule expressed on the likelihood ratio with
  boundaries ``(b_low, b_up)``, equivalent via the prior-odds bijection and
  usable with Wald boundaries picked from target error rates;
* ``convergence``  -- the first-order rule: stop once consecutive posteriors
  move less than epsilon, then compare the posterior to a fixed threshold.

Finite streams that never trigger a rule fall back to a forced decision at
the final step (``rule_used = "horizon"``) so evaluations can segregate
forced stops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from cascaudit.errors import DegenerateDataError, ModelError, UnreachableObservationError
from cascaudit.graph import PathEnumConfig, SocialGraph
from cascaudit.inference import (
    BeliefState,
    PosteriorEngine,
    posterior_from_log_lr,
)
from cascaudit.markov import (
    FAKE,
    GENUINE,
    GrowthConfig,
    ObservationStream,
    SpreadModel,
    sample_trace,
    subsample,
)
from cascaudit.rng import derive_rng, derive_seed

RULE_DP = "dp_threshold"
RULE_SPRT = "sprt"
RULE_CONVERGENCE = "convergence"
RULE_HORIZON = "horizon"


@dataclass(frozen=True)
class CostSpec:
    """Error and delay costs.

    ``false_alarm`` is the cost of declaring genuine news fake (type I),
    ``miss`` the cost of declaring fake news genuine (type II), ``per_step``
    the cost of each step a fake item keeps spreading.
    """

    false_alarm: float = 10.0
    miss: float = 10.0
    per_step: float = 0.05

    def __post_init__(self):
        if self.false_alarm < 0 or self.miss < 0 or self.per_step < 0:
            raise ModelError("costs must be nonnegative")
        if self.false_alarm + self.miss <= 0:
            raise ModelError("at least one error cost must be positive")

    @property
    def decision_ratio(self) -> float:
        """Posterior at which the two stopping verdicts cost the same."""
        return self.false_alarm / (self.false_alarm + self.miss)


def stop_cost(pi: float, costs: CostSpec) -> float:
    """Expected cost of stopping now at posterior ``pi`` with the better verdict."""
    return min(costs.miss * pi, costs.false_alarm * (1.0 - pi))


def bayes_verdict(pi: float, costs: CostSpec) -> int:
    """Cost-optimal verdict at posterior ``pi``; ties resolve to genuine."""
    return 1 if costs.miss * pi > costs.false_alarm * (1.0 - pi) else 0


@dataclass(frozen=True)
class DecisionOutcome:
    """A stopping decision: when, what, and which rule fired."""

    step: int
    verdict: int
    rule: str

    def __post_init__(self):
        if self.step < 1:
            raise ModelError("stopping step must be >= 1")
        if self.verdict not in (0, 1):
            raise ModelError("verdict must be 0 (genuine) or 1 (fake)")
        if self.rule not in (RULE_DP, RULE_SPRT, RULE_CONVERGENCE, RULE_HORIZON):
            raise ModelError(f"unknown rule {self.rule!r}")


# ---- dynamic-programming threshold solver ---------------------------------------


@dataclass(frozen=True)
class ThresholdTable:
    """Grid solution of the stopping value function plus the two thresholds."""

    grid: np.ndarray
    values: np.ndarray
    pi_low: float
    pi_up: float
    costs: CostSpec
    converged: bool
    sweeps: int

    def __post_init__(self):
        if len(self.grid) != len(self.values):
            raise ModelError("grid and values must align")
        if not 0.0 <= self.pi_low <= self.pi_up <= 1.0:
            raise ModelError(f"need 0 <= pi_low <= pi_up <= 1, got ({self.pi_low}, {self.pi_up})")
        if np.any(np.asarray(self.values) < 0):
            raise ModelError("stopping values must be nonnegative")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(
                f"# ci={self.costs.false_alarm!r} cii={self.costs.miss!r} "
                f"c={self.costs.per_step!r} pi_low={self.pi_low!r} pi_up={self.pi_up!r} "
                f"converged={str(self.converged).lower()} sweeps={self.sweeps}\n"
            )
            fh.write("pi,s_bar\n")
            for pi, value in zip(self.grid, self.values):
                fh.write(f"{float(pi)!r},{float(value)!r}\n")

    @classmethod
    def load(cls, path) -> "ThresholdTable":
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("#"):
                raise ModelError(f"{path}: missing threshold-table header")
            fields = dict(item.split("=", 1) for item in header[1:].split())
            fh.readline()  # column names
            rows = [line.strip().split(",") for line in fh if line.strip()]
        grid = np.array([float(r[0]) for r in rows])
        values = np.array([float(r[1]) for r in rows])
        return cls(
            grid=grid,
            values=values,
            pi_low=float(fields["pi_low"]),
            pi_up=float(fields["pi_up"]),
            costs=CostSpec(
                false_alarm=float(fields["ci"]),
                miss=float(fields["cii"]),
                per_step=float(fields["c"]),
            ),
            converged=fields["converged"] == "true",
            sweeps=int(fields["sweeps"]),
        )


NextObsModel = Union[Sequence, Callable[[float], Sequence]]


def single_step_outcomes(model: SpreadModel, last_class: Optional[int] = None):
    """Next-observation model: one Markov step of the edge-type chains.

    Returns the finite list of ``(a_genuine, a_fake)`` pairs for the next
    observed class.  With ``last_class`` given, the pair for class ``z`` is
    the transition row entry; otherwise the context class is marginalized
    uniformly, an approximation for multi-path graphs where no single context
    class exists.  Each coordinate sums to one across outcomes.
    """
    alpha = model.transition_probs
    num = model.num_classes
    if last_class is not None:
        return [
            (float(alpha[GENUINE][last_class][z]), float(alpha[FAKE][last_class][z]))
            for z in range(num)
        ]
    return [
        (float(alpha[GENUINE][ctx][z]) / num, float(alpha[FAKE][ctx][z]) / num)
        for ctx in range(num)
        for z in range(num)
    ]


def solve_thresholds(
    costs: CostSpec,
    next_obs_model: NextObsModel,
    grid_step: float = 0.001,
    max_sweeps: int = 10_000,
    tol: float = 1e-7,
) -> ThresholdTable:
    """Value-iterate the stationary stopping recursion on a posterior grid.

    Each sweep applies ``value = min(stop_cost, per_step * pi + E[value'])``
    where the expectation runs over the next-observation outcomes, the updated
    posterior follows the Bayes recursion, and off-grid posteriors are
    linearly interpolated.  Iteration stops when the sup-norm change drops
    below ``tol``; hitting ``max_sweeps`` first yields a best-effort table
    flagged unconverged.

    ``next_obs_model`` is either a fixed sequence of ``(a_genuine, a_fake)``
    pairs or a callable ``pi -> sequence`` for posterior-dependent models.
    """
    if not 0.0 < grid_step <= 0.1:
        raise ModelError("grid_step must be in (0, 0.1]")
    if max_sweeps < 1:
        raise ModelError("max_sweeps must be >= 1")
    n = round(1.0 / grid_step)
    grid = np.linspace(0.0, 1.0, n + 1)
    stop_values = np.minimum(costs.miss * grid, costs.false_alarm * (1.0 - grid))

    static_outcomes = None if callable(next_obs_model) else np.asarray(next_obs_model, dtype=float)
    if static_outcomes is not None and (
        static_outcomes.ndim != 2 or static_outcomes.shape[1] != 2
    ):
        raise ModelError("next_obs_model must be a sequence of (a_genuine, a_fake) pairs")

    values = stop_values.copy()
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        continuation = costs.per_step * grid
        if static_outcomes is not None:
            for a_genuine, a_fake in static_outcomes:
                weight = grid * a_fake + (1.0 - grid) * a_genuine
                with np.errstate(invalid="ignore", divide="ignore"):
                    updated = np.where(weight > 0, grid * a_fake / weight, grid)
                continuation += weight * np.interp(updated, grid, values)
        else:
            for i, pi in enumerate(grid):
                total = 0.0
                for a_genuine, a_fake in next_obs_model(float(pi)):
                    weight = pi * a_fake + (1.0 - pi) * a_genuine
                    if weight <= 0:
                        continue
                    updated = pi * a_fake / weight
                    total += weight * float(np.interp(updated, grid, values))
                continuation[i] += total
        new_values = np.minimum(stop_values, continuation)
        delta = float(np.abs(new_values - values).max())
        values = new_values
        if delta < tol:
            converged = True
            break

    ratio = costs.decision_ratio
    atol = max(10.0 * tol, 1e-9) * max(1.0, costs.false_alarm, costs.miss)
    low_side = (grid <= ratio + 1e-15) & (np.abs(values - costs.miss * grid) <= atol)
    up_side = (grid >= ratio - 1e-15) & (
        np.abs(values - costs.false_alarm * (1.0 - grid)) <= atol
    )
    pi_low = float(grid[low_side].max()) if low_side.any() else 0.0
    pi_up = float(grid[up_side].min()) if up_side.any() else 1.0
    return ThresholdTable(
        grid=grid,
        values=values,
        pi_low=pi_low,
        pi_up=pi_up,
        costs=costs,
        converged=converged,
        sweeps=sweeps,
    )


# ---- SPRT boundaries -------------------------------------------------------------


def wald_bounds(p_target: float, q_target: float) -> tuple:
    """Likelihood-ratio boundaries hitting approximate error targets.

    ``p_target`` bounds the false-alarm rate, ``q_target`` the miss rate; the
    classical approximations give ``(q / (1 - p), (1 - q) / p)``.
    """
    if not (0.0 < p_target < 0.5 and 0.0 < q_target < 0.5):
        raise ModelError("error targets must lie in (0, 0.5)")
    return q_target / (1.0 - p_target), (1.0 - q_target) / p_target


@dataclass(frozen=True)
class SprtConfig:
    """Likelihood-ratio stopping boundaries with ``lower <= 1 <= upper``."""

    lower: float
    upper: float

    def __post_init__(self):
        if not (0.0 < self.lower <= 1.0 <= self.upper < math.inf):
            raise ModelError(f"need 0 < lower <= 1 <= upper < inf, got ({self.lower}, {self.upper})")

    @classmethod
    def from_error_targets(cls, p_target: float, q_target: float) -> "SprtConfig":
        lower, upper = wald_bounds(p_target, q_target)
        return cls(lower=lower, upper=upper)

    @classmethod
    def from_posterior_thresholds(cls, pi_low: float, pi_up: float, prior: float) -> "SprtConfig":
        """Boundaries equivalent to posterior thresholds under ``prior``.

        Valid when ``pi_low < prior < pi_up`` (otherwise the equivalent test
        would stop before the first observation).
        """
        if not 0.0 < prior < 1.0:
            raise ModelError("prior must be interior for the odds transform")
        if not 0.0 < pi_low < prior < pi_up < 1.0:
            raise ModelError("need 0 < pi_low < prior < pi_up < 1")
        odds = (1.0 - prior) / prior
        return cls(
            lower=odds * pi_low / (1.0 - pi_low),
            upper=odds * pi_up / (1.0 - pi_up),
        )


# ---- stopping rules over trajectories ----------------------------------------------
#
# A trajectory is the posterior sequence from the inference engine: index 0 is
# the prior, index l the belief after observation l.  Rules scan l = 1..n and
# the stopping step counts observations.


def _horizon_outcome(step: int, verdict: int) -> DecisionOutcome:
    return DecisionOutcome(step=step, verdict=verdict, rule=RULE_HORIZON)


def dp_stop_step(trajectory: Sequence[float], table: ThresholdTable) -> DecisionOutcome:
    """First exit of the posterior from the continuation interval.

    Falls back to a forced cost-optimal decision at the final step when the
    posterior never leaves ``(pi_low, pi_up)``.
    """
    if len(trajectory) < 2:
        raise DegenerateDataError("trajectory carries no observations")
    for step in range(1, len(trajectory)):
        pi = trajectory[step]
        if pi <= table.pi_low or pi >= table.pi_up:
            return DecisionOutcome(step=step, verdict=0 if pi <= table.pi_low else 1, rule=RULE_DP)
    last = len(trajectory) - 1
    return _horizon_outcome(last, bayes_verdict(trajectory[last], table.costs))


def sprt_step(belief: BeliefState, cfg: SprtConfig) -> Optional[DecisionOutcome]:
    """Boundary check for the current belief; None while strictly inside."""
    if belief.step < 1:
        return None
    log_lr = belief.log_lr
    if log_lr <= math.log(cfg.lower):
        return DecisionOutcome(step=belief.step, verdict=0, rule=RULE_SPRT)
    if log_lr >= math.log(cfg.upper):
        return DecisionOutcome(step=belief.step, verdict=1, rule=RULE_SPRT)
    return None


def sprt_stop(
    log_lr_trajectory: Sequence[float],
    cfg: SprtConfig,
    prior: float,
    costs: CostSpec,
) -> DecisionOutcome:
    """First boundary crossing of the likelihood ratio over a whole run.

    The horizon fallback converts the final log ratio back to a posterior and
    applies the cost-optimal verdict, mirroring :func:`dp_stop_step`.
    """
    if len(log_lr_trajectory) < 2:
        raise DegenerateDataError("trajectory carries no observations")
    log_low = math.log(cfg.lower)
    log_up = math.log(cfg.upper)
    for step in range(1, len(log_lr_trajectory)):
        log_lr = log_lr_trajectory[step]
        if log_lr <= log_low or log_lr >= log_up:
            return DecisionOutcome(step=step, verdict=0 if log_lr <= log_low else 1, rule=RULE_SPRT)
    last = len(log_lr_trajectory) - 1
    final_posterior = posterior_from_log_lr(log_lr_trajectory[last], prior)
    return _horizon_outcome(last, bayes_verdict(final_posterior, costs))


def convergence_stop(
    trajectory: Sequence[float],
    epsilon: float,
    threshold: float,
) -> DecisionOutcome:
    """Stop at the first step whose posterior moved less than ``epsilon``.

    The verdict compares the posterior at the stopping step against
    ``threshold`` (fake iff ``posterior >= threshold``); callers pass either
    the prior or the cost ratio.  Streams that never settle decide the same
    way at the final step with ``rule_used = "horizon"``.
    """
    if epsilon <= 0:
        raise ModelError("epsilon must be positive")
    if len(trajectory) < 2:
        raise DegenerateDataError("trajectory carries no observations")
    for step in range(1, len(trajectory)):
        if abs(trajectory[step] - trajectory[step - 1]) < epsilon:
            verdict = 1 if trajectory[step] >= threshold else 0
            return DecisionOutcome(step=step, verdict=verdict, rule=RULE_CONVERGENCE)
    last = len(trajectory) - 1
    return _horizon_outcome(last, 1 if trajectory[last] >= threshold else 0)


# ---- streaming policies ---------------------------------------------------------


class DpThresholdPolicy:
    rule = RULE_DP

    def __init__(self, table: ThresholdTable):
        self.table = table

    def check(self, step, posterior, log_lr, prev_posterior) -> Optional[int]:
        if posterior <= self.table.pi_low or posterior >= self.table.pi_up:
            return 0 if posterior <= self.table.pi_low else 1
        return None

    def horizon_verdict(self, posterior) -> int:
        return bayes_verdict(posterior, self.table.costs)


class SprtPolicy:
    rule = RULE_SPRT

    def __init__(self, cfg: SprtConfig, costs: CostSpec):
        self.cfg = cfg
        self.costs = costs
        self._log_low = math.log(cfg.lower)
        self._log_up = math.log(cfg.upper)

    def check(self, step, posterior, log_lr, prev_posterior) -> Optional[int]:
        if log_lr <= self._log_low:
            return 0
        if log_lr >= self._log_up:
            return 1
        return None

    def horizon_verdict(self, posterior) -> int:
        return bayes_verdict(posterior, self.costs)


class ConvergencePolicy:
    rule = RULE_CONVERGENCE

    def __init__(self, epsilon: float, threshold: float):
        if epsilon <= 0:
            raise ModelError("epsilon must be positive")
        self.epsilon = epsilon
        self.threshold = threshold

    def check(self, step, posterior, log_lr, prev_posterior) -> Optional[int]:
        if abs(posterior - prev_posterior) < self.epsilon:
            return 1 if posterior >= self.threshold else 0
        return None

    def horizon_verdict(self, posterior) -> int:
        return 1 if posterior >= self.threshold else 0


def run_detection(
    model: SpreadModel,
    graph: SocialGraph,
    stream: ObservationStream,
    policy,
    cfg: PathEnumConfig = PathEnumConfig(),
    on_unreachable: str = "skip",
    prior: Optional[float] = None,
    anchor: bool = True,
) -> tuple:
    """Stream observations through the engine, stopping as soon as the policy fires.

    Returns ``(DecisionOutcome, BeliefState)``.  Raises
    :class:`DegenerateDataError` when no observation could be processed.
    """
    engine = PosteriorEngine(model, graph, stream.source, cfg, anchor=anchor, prior=prior)
    prev_posterior = engine.belief.posterior
    for obs in stream.observations:
        try:
            belief = engine.observe(obs)
        except UnreachableObservationError:
            if on_unreachable == "fail":
                raise
            continue
        verdict = policy.check(belief.step, belief.posterior, belief.log_lr, prev_posterior)
        if verdict is not None:
            return DecisionOutcome(step=belief.step, verdict=verdict, rule=policy.rule), belief
        prev_posterior = belief.posterior
    belief = engine.belief
    if belief.step == 0:
        raise DegenerateDataError("no observation could be processed")
    return _horizon_outcome(belief.step, policy.horizon_verdict(belief.posterior)), belief


# ---- Monte Carlo risk evaluation --------------------------------------------------


@dataclass(frozen=True)
class TraceResult:
    label: int
    outcome: DecisionOutcome
    final_posterior: float


@dataclass(frozen=True)
class RiskReport:
    """Empirical risk decomposition with binomial standard errors."""

    risk: float
    pe_false_alarm: float       # P(verdict fake | genuine)
    pe_miss: float              # P(verdict genuine | fake)
    se_false_alarm: float
    se_miss: float
    mean_steps_fake: float      # E[steps * 1{fake}] over all traces
    n_genuine: int
    n_fake: int


def summarize_risk(results: Sequence[TraceResult], costs: CostSpec, prior: float) -> RiskReport:
    """Combine per-trace outcomes into the evaluation objective.

    risk = false_alarm * (1 - prior) * pe_fa + miss * prior * pe_miss
         + per_step * E[steps on fake traces]
    with the fake-trace step expectation weighted by ``prior``.
    """
    genuine = [r for r in results if r.label == GENUINE]
    fake = [r for r in results if r.label == FAKE]
    n0, n1 = len(genuine), len(fake)
    pe_fa = sum(r.outcome.verdict == 1 for r in genuine) / n0 if n0 else 0.0
    pe_miss = sum(r.outcome.verdict == 0 for r in fake) / n1 if n1 else 0.0
    mean_steps_fake = (
        prior * (sum(r.outcome.step for r in fake) / n1) if n1 else 0.0
    )
    risk = (
        costs.false_alarm * (1.0 - prior) * pe_fa
        + costs.miss * prior * pe_miss
        + costs.per_step * mean_steps_fake
    )
    return RiskReport(
        risk=risk,
        pe_false_alarm=pe_fa,
        pe_miss=pe_miss,
        se_false_alarm=math.sqrt(pe_fa * (1 - pe_fa) / n0) if n0 else 0.0,
        se_miss=math.sqrt(pe_miss * (1 - pe_miss) / n1) if n1 else 0.0,
        mean_steps_fake=mean_steps_fake,
        n_genuine=n0,
        n_fake=n1,
    )


def risk_estimate(
    policy,
    model: SpreadModel,
    n_traces: int,
    seed: int,
    costs: CostSpec,
    keep_fraction: float = 1.0,
    growth: GrowthConfig = GrowthConfig(),
    cfg: PathEnumConfig = PathEnumConfig(),
    anchor: bool = True,
) -> tuple:
    """Monte Carlo estimate of the sequential risk for ``policy``.

    Simulates labeled synthetic cascades from the model's prior mixture, runs
    the streaming detector on each (with per-trace derived seeds), and returns
    ``(RiskReport, list[TraceResult])``.
    """
    if n_traces < 1:
        raise ModelError("n_traces must be >= 1")
    label_rng = derive_rng(seed, 0)
    labels = (label_rng.random(n_traces) < model.prior_fake).astype(int)
    results = []
    for i in range(n_traces):
        label = int(labels[i])
        trace = sample_trace(None, model, label, derive_seed(seed, i, 1), growth)
        stream = subsample(trace, keep_fraction, derive_seed(seed, i, 2))
        graph = trace.implied_graph()
        outcome, belief = run_detection(
            model, graph, stream, policy, cfg, prior=model.prior_fake, anchor=anchor
        )
        results.append(
            TraceResult(label=label, outcome=outcome, final_posterior=belief.posterior)
        )
    return summarize_risk(results, costs, model.prior_fake), results
