"""Preferential attachment without self-loops, m edges per arrival, weight k + delta.

The graph process is tracked at edge resolution.  A state labelled ``(s, i)``
holds the graph after ``i`` of the ``m`` edges of vertex ``s`` have been drawn.
Vertex ``s`` is not yet counted: it is absent from ``counts`` and from the
endpoint pool, and its entry in ``degrees`` stays 0 until its last edge lands,
at which point the state is relabelled ``(s + 1, 0)``.  So a stored state always
has ``0 <= i <= m - 1`` and ``PA_t`` is the state ``(t + 1, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    InvariantError,
    ParameterError,
    SelfLoopError,
    TargetRangeError,
)


@dataclass(frozen=True)
class ModelParams:
    """Edges per arrival ``m`` and affine weight offset ``delta``."""

    m: int
    delta: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ParameterError(f"m must be a positive integer, got {self.m!r}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "delta", float(self.delta))
        if not np.isfinite(self.delta) or self.delta <= -self.m:
            raise ParameterError(f"delta must exceed -m = {-self.m}, got {self.delta!r}")

    @property
    def weight_rate(self) -> float:
        """Growth of the total attachment weight per arrival, ``2m + delta``."""
        return 2 * self.m + self.delta


def make_rng(seed=None, index=None) -> np.random.Generator:
    """Generator for replication ``index`` of master seed ``seed``.

    Streams for distinct indices are independent and do not depend on the
    order in which they are created.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if index is None:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    ss = np.random.SeedSequence(seed, spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class GraphState:
    """Mutable multigraph state at edge resolution.

    Arrays are allocated with spare capacity; use the ``*_view`` properties for
    the live parts.
    """

    params: ModelParams
    s: int
    i: int
    degrees: np.ndarray
    counts: np.ndarray
    pool: np.ndarray
    pool_size: int
    max_degree: int
    rng: np.random.Generator

    @property
    def degrees_view(self) -> np.ndarray:
        """Degrees of vertices ``0..s`` (vertex ``s`` reads 0 while arriving)."""
        return self.degrees[: self.s + 1]

    @property
    def endpoint_pool(self) -> np.ndarray:
        return self.pool[: self.pool_size]

    @property
    def counts_view(self) -> np.ndarray:
        """``N_k`` for ``k = 0..max_degree``."""
        return self.counts[: self.max_degree + 1]

    def count_map(self) -> dict[int, int]:
        c = self.counts_view
        return {int(k): int(c[k]) for k in np.flatnonzero(c)}

    @property
    def time(self) -> int:
        """Number of completed arrivals ``t`` when ``i == 0`` (the state is ``PA_t``)."""
        return self.s - 1

    def copy(self) -> "GraphState":
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng.bit_generator.state
        return GraphState(
            params=self.params,
            s=self.s,
            i=self.i,
            degrees=self.degrees.copy(),
            counts=self.counts.copy(),
            pool=self.pool.copy(),
            pool_size=self.pool_size,
            max_degree=self.max_degree,
            rng=rng,
        )


def init_pa1(params: ModelParams, seed=None, capacity: int = 16) -> GraphState:
    """Vertices 0 and 1 joined by ``m`` parallel edges, as the state ``(2, 0)``."""
    m = params.m
    capacity = max(int(capacity), 2)
    degrees = np.zeros(capacity + 1, np.int64)
    counts = np.zeros(m * capacity + 2, np.int64)
    pool = np.empty(2 * m * capacity, np.int64)
    degrees[:2] = m
    counts[m] = 2
    pool[: 2 * m] = np.tile([0, 1], m)
    return GraphState(params, 2, 0, degrees, counts, pool, 2 * m, m, make_rng(seed))


def reserve(state: GraphState, arrivals: int) -> None:
    """Grow array capacity so that ``arrivals`` more arrivals fit."""
    m = state.params.m
    t_final = state.s + int(arrivals)
    if state.degrees.shape[0] < t_final + 1:
        size = max(t_final + 1, 2 * state.degrees.shape[0])
        state.degrees = np.concatenate(
            [state.degrees, np.zeros(size - state.degrees.shape[0], np.int64)])
    if state.counts.shape[0] < m * t_final + 2:
        size = max(m * t_final + 2, 2 * state.counts.shape[0])
        state.counts = np.concatenate(
            [state.counts, np.zeros(size - state.counts.shape[0], np.int64)])
    if state.pool.shape[0] < 2 * m * t_final:
        size = max(2 * m * t_final, 2 * state.pool.shape[0])
        grown = np.empty(size, np.int64)
        grown[: state.pool_size] = state.pool[: state.pool_size]
        state.pool = grown


def normalizer(state: GraphState) -> float:
    """Total attachment weight ``s(2m + delta) - 2m + i`` of the pending draw."""
    p = state.params
    return state.s * (2 * p.m + p.delta) - 2 * p.m + state.i


def attachment_distribution(state: GraphState) -> np.ndarray:
    """Probability of each vertex ``0..s`` receiving the next edge.

    Entry ``s`` (the arriving vertex) is always 0.
    """
    d = state.degrees_view.astype(float)
    probs = np.zeros(state.s + 1)
    probs[: state.s] = (d[: state.s] + state.params.delta) / normalizer(state)
    return probs


def sample_target_exact(state: GraphState, rng=None) -> int:
    """Draw a target by a linear scan over all old vertices. O(s); reference only."""
    rng = state.rng if rng is None else rng
    return int(_kernels.draw_exact(state.degrees, state.s, state.params.delta, rng))


def sample_target_fast(state: GraphState, rng=None) -> int:
    """Draw a target in O(1) expected time from the endpoint pool.

    For ``delta >= 0`` the weight ``k + delta`` splits into a degree part
    (uniform pool entry) and a flat part (uniform vertex).  For negative
    ``delta`` a uniform pool entry of degree ``k`` is accepted with probability
    ``(k + delta) / k``.
    """
    rng = state.rng if rng is None else rng
    v = _kernels.draw_fast(state.degrees, state.pool, state.pool_size, state.s,
                           state.params.delta, rng)
    if v < 0:
        raise InvariantError("rejection sampler hit its iteration cap")
    return int(v)


def attach_edge(state: GraphState, target: int) -> GraphState:
    """Add the edge ``(s, target)`` and update counts, pool and the (s, i) label."""
    m = state.params.m
    s = state.s
    if target == s:
        raise SelfLoopError(f"vertex {s} cannot attach to itself")
    if not 0 <= target < s:
        raise TargetRangeError(f"target {target} outside 0..{s - 1}")
    if state.i + 1 == m:
        reserve(state, 1)
    k = int(state.degrees[target])
    state.counts[k] -= 1
    state.counts[k + 1] += 1
    state.max_degree = max(state.max_degree, k + 1)
    state.degrees[target] = k + 1
    state.pool[state.pool_size] = target
    state.pool_size += 1
    state.i += 1
    if state.i == m:
        state.degrees[s] = m
        state.counts[m] += 1
        state.pool[state.pool_size: state.pool_size + m] = s
        state.pool_size += m
        state.s += 1
        state.i = 0
    return state


def step(state: GraphState) -> int:
    """Draw one target with the fast sampler and attach it; returns the target."""
    target = sample_target_fast(state)
    attach_edge(state, target)
    return target


def check_invariants(state: GraphState, tol: float = 1e-9) -> None:
    """Raise :class:`InvariantError` if any count identity fails at ``(s, i)``."""
    p = state.params
    m, s, i = p.m, state.s, state.i
    c = state.counts_view
    ks = np.arange(c.shape[0])
    if c[:m].any():
        raise InvariantError(f"vertices of degree below m={m}: {c[:m]}")
    if c.sum() != s:
        raise InvariantError(f"sum of counts {c.sum()} != s = {s}")
    if (ks * c).sum() != 2 * m * (s - 1) + i:
        raise InvariantError("degree sum does not match 2m(s-1)+i")
    weighted = ((ks + p.delta) * c).sum()
    if abs(weighted - normalizer(state)) > tol * max(1.0, abs(normalizer(state))):
        raise InvariantError(f"weighted count {weighted} != normalizer {normalizer(state)}")
    if state.pool_size != state.degrees[:s].sum():
        raise InvariantError("endpoint pool length differs from the old-vertex degree sum")
    if np.bincount(state.degrees[:s], minlength=c.shape[0])[: c.shape[0]].tolist() != c.tolist():
        raise InvariantError("counts disagree with the degree sequence")


def advance(state: GraphState, arrivals: int, check: bool = False) -> float:
    """Run ``arrivals`` full arrivals in compiled code.

    Returns the largest invariant residual seen over all sub-steps when
    ``check`` is set, else 0.
    """
    if arrivals <= 0:
        return 0.0
    reserve(state, arrivals + 1)
    p = state.params
    n_edges = arrivals * p.m - state.i
    pool_size, s, i, maxdeg, worst = _kernels.advance(
        state.degrees, state.counts, state.pool, state.pool_size, state.s, state.i,
        state.max_degree, p.m, p.delta, n_edges, state.rng, check)
    if worst < 0:
        raise InvariantError("rejection sampler hit its iteration cap")
    state.pool_size, state.s, state.i, state.max_degree = pool_size, s, i, maxdeg
    return float(worst)


def simulate(params: ModelParams, steps: int, seed=None, check: bool = False,
             snapshots=None):
    """Grow ``PA_steps`` from ``PA_1``.

    Args:
        params: model parameters.
        steps: final time ``t``; the result has ``t + 1`` vertices.
        seed: seed or ``Generator``.
        check: verify the count identities after every edge (slower).
        snapshots: optional increasing times at which to record the
            degree-count vector.

    Returns:
        The final state, or ``(state, {t: counts})`` when ``snapshots`` is given.
    """
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    state = init_pa1(params, seed, capacity=steps + 1)
    if check:
        check_invariants(state)
    taken = {}
    times = sorted(set(int(t) for t in snapshots)) if snapshots is not None else []
    if times and (times[0] < 1 or times[-1] > steps):
        raise ParameterError("snapshot times must lie in [1, steps]")
    for t in times + [steps]:
        worst = advance(state, t - state.time, check=check)
        if check and worst > 1e-9:
            raise InvariantError(f"count identity residual {worst:g} before time {t}")
        if t in times:
            taken[t] = state.counts_view.copy()
    if snapshots is not None:
        return state, taken
    return state
