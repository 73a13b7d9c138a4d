"""Exact Bayesian posterior over the fake/genuine hypothesis.

Given a known source and a stream of observed retweets, the engine maintains
the posterior probability that the spreading item is fake.  Each observation
multiplies the running likelihood ratio by ``a_fake / a_genuine``, where
``a_hyp`` is the probability of the observed edge class given everything seen
so far under hypothesis ``hyp``:

* a source-adjacent edge has probability ``initial_probs[hyp][class]``;
* any other edge is explained through the candidate directed paths from the
  source to it.  Each candidate path is weighted by how well it accounts for
  the previously observed classes lying on it (its path score), and
  contributes the chain probability of reaching the new class from the last
  observed class on the path, with unobserved intermediate edges marginalized
  out via k-step transitions.

Paths carrying no previous observation are anchored at the source: the class
marginal ``initial_probs @ transition^(depth-1)`` replaces the empty product,
which keeps the single-edge case consistent with the source-adjacent rule.
``anchor=False`` leaves such factors as empty products instead, for A/B
comparison.

All products are accumulated in log space and path mixtures via log-sum-exp;
gap products underflow linear doubles after a few dozen steps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from cascaudit.errors import (
    InvalidEvidenceError,
    ModelError,
    UnreachableObservationError,
)
from cascaudit.graph import (
    DirectedPath,
    PathEnumConfig,
    SocialGraph,
    enumerate_paths,
)
from cascaudit.markov import FAKE, GENUINE, Observation, ObservationStream, SpreadModel

logger = logging.getLogger(__name__)

_NEG_INF = float("-inf")


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0.0 else _NEG_INF


# ---- belief state -------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    """Audit record of one update: the two conditionals and the new belief."""

    step: int
    a_genuine: float
    a_fake: float
    posterior: float
    log_lr: float


@dataclass(frozen=True)
class BeliefState:
    """Running posterior, represented canonically by the log likelihood ratio.

    The posterior is always derived from ``log_lr`` through the prior-odds
    identity ``posterior = prior * lr / (prior * lr + 1 - prior)``, so the
    identity holds exactly at every step.
    """

    prior: float
    log_lr: float = 0.0
    step: int = 0
    history: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.prior <= 1.0:
            raise ModelError(f"prior {self.prior} outside [0, 1]")

    @property
    def posterior(self) -> float:
        return posterior_from_log_lr(self.log_lr, self.prior)

    def trajectory(self) -> list:
        """Posterior sequence: index 0 is the prior, index l the belief after
        observation l."""
        return [self.prior] + [rec.posterior for rec in self.history]

    def log_lr_trajectory(self) -> list:
        return [0.0] + [rec.log_lr for rec in self.history]


def posterior_from_log_lr(log_lr: float, prior: float) -> float:
    """Stable evaluation of ``prior * e^log_lr / (prior * e^log_lr + 1 - prior)``."""
    if prior <= 0.0:
        return 0.0
    if prior >= 1.0:
        return 1.0
    x = log_lr + math.log(prior / (1.0 - prior))
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def update(belief: BeliefState, a_genuine: float, a_fake: float) -> BeliefState:
    """Fold one observation's conditional probabilities into the belief."""
    if a_genuine < 0 or a_fake < 0:
        raise InvalidEvidenceError("conditional probabilities must be nonnegative")
    return _update_from_logs(belief, _safe_log(a_genuine), _safe_log(a_fake))


def _update_from_logs(belief, log_a_genuine, log_a_fake) -> BeliefState:
    if log_a_genuine == _NEG_INF and log_a_fake == _NEG_INF:
        raise InvalidEvidenceError("observation impossible under both hypotheses")
    log_lr = belief.log_lr + (log_a_fake - log_a_genuine)
    if math.isnan(log_lr):
        # previous evidence already ruled one hypothesis out and this
        # observation rules out the other
        raise InvalidEvidenceError("contradictory evidence stream")
    step = belief.step + 1
    record = StepRecord(
        step=step,
        a_genuine=math.exp(log_a_genuine),
        a_fake=math.exp(log_a_fake),
        posterior=posterior_from_log_lr(log_lr, belief.prior),
        log_lr=log_lr,
    )
    return BeliefState(
        prior=belief.prior,
        log_lr=log_lr,
        step=step,
        history=belief.history + (record,),
    )


# ---- path contexts ------------------------------------------------------------


@dataclass(frozen=True)
class OnPathObservation:
    """A previous observation that lies on a candidate path."""

    index: int      # position in the observation stream (0-based)
    position: int   # 1-based edge position along the path
    cls: int


@dataclass(frozen=True)
class PathContext:
    """A candidate path together with the previous observations lying on it,
    sorted by position along the path."""

    path: DirectedPath
    on_path: tuple

    @property
    def observed_indices(self) -> tuple:
        return tuple(sorted(entry.index for entry in self.on_path))

    @property
    def last_observed(self) -> Optional[OnPathObservation]:
        """The on-path observation closest to the end of the path."""
        return self.on_path[-1] if self.on_path else None

    @property
    def gap_lengths(self) -> tuple:
        """Edges between consecutive on-path observations; the first entry is
        the distance from the source."""
        gaps = []
        prev = 0
        for entry in self.on_path:
            gaps.append(entry.position - prev)
            prev = entry.position
        return tuple(gaps)


@lru_cache(maxsize=65536)
def _edge_positions(path: DirectedPath) -> dict:
    return path.edge_positions()


def build_path_context(path: DirectedPath, prior_observations: Sequence[Observation]) -> PathContext:
    positions = _edge_positions(path)
    entries = [
        OnPathObservation(index=idx, position=positions[obs.edge], cls=obs.cls)
        for idx, obs in enumerate(prior_observations)
        if obs.edge in positions
    ]
    entries.sort(key=lambda e: (e.position, e.index))
    return PathContext(path=path, on_path=tuple(entries))


def build_path_contexts(paths, prior_observations) -> list:
    return [build_path_context(p, prior_observations) for p in paths]


# ---- chain probabilities -------------------------------------------------------


class ChainTables:
    """Cached matrix powers and source-anchored class marginals per hypothesis.

    One instance can be shared across engines over the same model (e.g. in a
    Monte Carlo sweep) to avoid recomputing powers per trace.
    """

    def __init__(self, model: SpreadModel):
        self.model = model
        self._powers: dict = {}
        self._marginals: dict = {}

    def power(self, hyp: int, k: int) -> np.ndarray:
        key = (hyp, k)
        mat = self._powers.get(key)
        if mat is None:
            mat = np.linalg.matrix_power(self.model.transition_probs[hyp], k)
            self._powers[key] = mat
        return mat

    def log_gap(self, hyp: int, k: int, frm: int, to: int) -> float:
        """log P(class moves frm -> to across k edges); k = 0 is the identity."""
        if k == 0:
            return 0.0 if frm == to else _NEG_INF
        if k == 1:
            return _safe_log(float(self.model.transition_probs[hyp][frm, to]))
        return _safe_log(float(self.power(hyp, k)[frm, to]))

    def log_marginal(self, hyp: int, position: int, cls: int) -> float:
        """log P(edge at this path depth has class cls), anchored at the source."""
        key = (hyp, position)
        vec = self._marginals.get(key)
        if vec is None:
            if position == 1:
                vec = self.model.initial_probs[hyp]
            else:
                vec = self.model.initial_probs[hyp] @ self.power(hyp, position - 1)
            self._marginals[key] = vec
        return _safe_log(float(vec[cls]))


def _log_chain(tables: ChainTables, hyp: int, ctx: PathContext, anchor: bool) -> float:
    """log probability of the previously observed classes along this path."""
    if not ctx.on_path:
        return 0.0
    first = ctx.on_path[0]
    total = tables.log_marginal(hyp, first.position, first.cls) if anchor else 0.0
    for prev, cur in zip(ctx.on_path[:-1], ctx.on_path[1:]):
        total += tables.log_gap(hyp, cur.position - prev.position, prev.cls, cur.cls)
    return total


def _log_arrival(tables: ChainTables, hyp: int, ctx: PathContext, cls: int) -> float:
    """log probability of the new observation's class at the end of this path."""
    depth = len(ctx.path)
    last = ctx.last_observed
    if last is None:
        return tables.log_marginal(hyp, depth, cls)
    return tables.log_gap(hyp, depth - last.position, last.cls, cls)


def _log_a_from_contexts(tables, hyp, contexts, cls, anchor) -> float:
    log_nums = np.array([_log_chain(tables, hyp, ctx, anchor) for ctx in contexts])
    log_arrivals = np.array([_log_arrival(tables, hyp, ctx, cls) for ctx in contexts])
    log_denom = logsumexp(log_nums)
    if log_denom == _NEG_INF:
        logger.warning(
            "all %d candidate paths have zero score; falling back to a uniform mixture",
            len(contexts),
        )
        return float(logsumexp(log_arrivals) - math.log(len(contexts)))
    return float(logsumexp(log_nums + log_arrivals) - log_denom)


# ---- public one-shot operations -------------------------------------------------


def path_score(
    model: SpreadModel,
    contexts: Sequence[PathContext],
    hyp: int,
    anchor: bool = True,
) -> np.ndarray:
    """Posterior weight of each candidate path given the observations on it.

    Under a uniform prior over the enumerated paths, the weight of a path is
    its chain probability normalized across all candidates; the vector sums
    to one.  If every chain probability is zero (a degenerate model), the
    weights fall back to uniform with a warning.
    """
    if not contexts:
        raise ModelError("path_score needs at least one candidate path")
    tables = ChainTables(model)
    log_nums = np.array([_log_chain(tables, hyp, ctx, anchor) for ctx in contexts])
    log_denom = logsumexp(log_nums)
    if log_denom == _NEG_INF:
        logger.warning("all %d path scores are zero; returning uniform weights", len(contexts))
        return np.full(len(contexts), 1.0 / len(contexts))
    return np.exp(log_nums - log_denom)


def conditional_obs_prob(
    model: SpreadModel,
    source,
    graph: SocialGraph,
    prefix: Sequence[Observation],
    new_obs: Observation,
    cfg: PathEnumConfig = PathEnumConfig(),
    hyp: int = FAKE,
    anchor: bool = True,
) -> float:
    """Probability of ``new_obs``'s class given the observation prefix.

    Source-adjacent edges use the initial distribution directly; everything
    else mixes the per-path arrival probabilities under the path scores.
    Raises :class:`UnreachableObservationError` when no directed source path
    reaches the observed edge within the enumeration bounds.
    """
    tables = ChainTables(model)
    if new_obs.u == source:
        return float(model.initial_probs[hyp][new_obs.cls])
    if not graph.has_edge(new_obs.u, new_obs.v):
        raise UnreachableObservationError(new_obs.edge, cfg.max_path_length)
    enumeration = enumerate_paths(graph, source, new_obs.edge, cfg)
    if not enumeration.paths:
        raise UnreachableObservationError(new_obs.edge, cfg.max_path_length)
    contexts = build_path_contexts(enumeration.paths, prefix)
    return math.exp(_log_a_from_contexts(tables, hyp, contexts, new_obs.cls, anchor))


# ---- the engine -----------------------------------------------------------------


class PosteriorEngine:
    """Streaming posterior computation for one observation stream.

    Holds the per-trace state (belief, accepted observations) plus caches for
    matrix powers and path enumerations.  The model and graph are shared
    immutable inputs; one engine serves one trace.
    """

    def __init__(
        self,
        model: SpreadModel,
        graph: SocialGraph,
        source,
        cfg: PathEnumConfig = PathEnumConfig(),
        anchor: bool = True,
        prior: Optional[float] = None,
        tables: Optional[ChainTables] = None,
    ):
        self.model = model
        self.graph = graph
        self.source = source
        self.cfg = cfg
        self.anchor = anchor
        self.belief = BeliefState(prior=model.prior_fake if prior is None else prior)
        self.accepted: list = []
        self._tables = ChainTables(model) if tables is None else tables

    def log_conditionals(self, obs: Observation) -> tuple:
        """(log a_genuine, log a_fake) for the next observation."""
        if not 0 <= obs.cls < self.model.num_classes:
            raise ModelError(f"observed class {obs.cls} out of range")
        if obs.u == self.source:
            return (
                _safe_log(float(self.model.initial_probs[GENUINE][obs.cls])),
                _safe_log(float(self.model.initial_probs[FAKE][obs.cls])),
            )
        if not self.graph.has_edge(obs.u, obs.v):
            raise UnreachableObservationError(obs.edge, self.cfg.max_path_length)
        enumeration = enumerate_paths(self.graph, self.source, obs.edge, self.cfg)
        if not enumeration.paths:
            raise UnreachableObservationError(obs.edge, self.cfg.max_path_length)
        contexts = build_path_contexts(enumeration.paths, self.accepted)
        return (
            _log_a_from_contexts(self._tables, GENUINE, contexts, obs.cls, self.anchor),
            _log_a_from_contexts(self._tables, FAKE, contexts, obs.cls, self.anchor),
        )

    def observe(self, obs: Observation) -> BeliefState:
        """Fold one observation into the belief (raises if unreachable)."""
        log_a0, log_a1 = self.log_conditionals(obs)
        self.belief = _update_from_logs(self.belief, log_a0, log_a1)
        self.accepted.append(obs)
        return self.belief


@dataclass(frozen=True)
class PosteriorRun:
    """Outcome of running the engine over a whole stream."""

    belief: BeliefState
    skipped: tuple  # indices of observations dropped as unreachable

    def trajectory(self) -> list:
        return self.belief.trajectory()


def run_posterior(
    model: SpreadModel,
    graph: SocialGraph,
    stream: ObservationStream,
    cfg: PathEnumConfig = PathEnumConfig(),
    on_unreachable: str = "skip",
    anchor: bool = True,
    prior: Optional[float] = None,
) -> PosteriorRun:
    """Posterior trajectory over a full observation stream.

    ``on_unreachable`` is ``"skip"`` (drop the observation with a warning,
    the robust default for partial real-world data) or ``"fail"`` (raise).
    """
    if on_unreachable not in ("skip", "fail"):
        raise ValueError(f"unknown unreachable policy {on_unreachable!r}")
    engine = PosteriorEngine(model, graph, stream.source, cfg, anchor=anchor, prior=prior)
    skipped = []
    for idx, obs in enumerate(stream.observations):
        try:
            engine.observe(obs)
        except UnreachableObservationError:
            if on_unreachable == "fail":
                raise
            skipped.append(idx)
            logger.warning("skipping unreachable observation %d on edge %r", idx, obs.edge)
    return PosteriorRun(belief=engine.belief, skipped=tuple(skipped))


# ---- trajectory export -----------------------------------------------------------


def write_trajectory(belief: BeliefState, path) -> None:
    """CSV export of the belief trajectory (one row per step, prior first)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,a0,a1,posterior,log_lr\n")
        fh.write(f"0,,,{belief.prior!r},0.0\n")
        for rec in belief.history:
            fh.write(
                f"{rec.step},{rec.a_genuine!r},{rec.a_fake!r},"
                f"{rec.posterior!r},{rec.log_lr!r}\n"
            )
