"""Acceptance-rejection sampling, partition estimation and exit simulation.

The shape derivative needs three stochastic ingredients per descent step:

* uniform clouds on the level-set partitions  O+ = {v >= z} & {v >= 0}
  and  O- = {v <= z} & {v >= 0},  which yield the partition measures (ratio
  of accepted proposals), the constants  m+- = +-|O+-| E[v - z]  and the
  acceptance bounds for the start densities;
* random starts distributed like  |v - z| / m  on each partition;
* boundary exit points of scaled Brownian paths started there, stopped at
  the first step where the level-set value drops to zero or below and then
  projected onto the polygonal chain.

State and tracking data enter as batch callables (n,2) -> (n,) so synthetic
level sets are as easy to drive as trained networks.  All sampling is
reproducible: proposal streams draw from a caller-supplied generator in
fixed-size batches, and exit paths use per-path substreams keyed by path
index, so results do not depend on batching or scheduling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import ChainPoint, PolygonalBoundary, Rectangle, project_points

__all__ = [
    "SamplingError",
    "RejectionResult",
    "PartitionEstimate",
    "ExitSampleSet",
    "substream",
    "acceptance_rejection",
    "estimate_partition",
    "sample_random_starts",
    "euler_maruyama_exit",
    "sample_exits",
]

log = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]

AR_BATCH = 1 << 16
RATIO_CHECK_AT = 10_000_000
MIN_ACCEPT_RATIO = 1e-6


class SamplingError(RuntimeError):
    pass


def substream(seed, *key: int) -> np.random.Generator:
    """Independent, order-insensitive generator for (seed, key...)."""
    base = tuple(int(s) for s in seed) if isinstance(seed, tuple) else (int(seed),)
    entropy = base + tuple(int(k) for k in key)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass
class RejectionResult:
    samples: np.ndarray  # (m, 2), m == requested unless truncated
    trials: int  # proposals up to and including the one yielding the last sample
    bound_violations: int  # proposals where target > C * reference density
    truncated: bool = False  # stopped at max_trials before reaching the request


def acceptance_rejection(
    target_density: Field,
    C: float,
    reference: Rectangle,
    M: int,
    rng: np.random.Generator,
    batch_size: int = AR_BATCH,
    max_trials: int | None = None,
) -> RejectionResult:
    """Draw M samples from an (unnormalized) target via uniform proposals.

    A proposal X ~ Uniform(reference) is accepted when
    U <= target(X) / (C * ref(X)) with ref = 1/area.  The caller guarantees
    target <= C * ref; violations are counted, never silently clipped.
    Trials are counted like a sequential loop: proposals after the one that
    produced the M-th acceptance do not count, so the accepted/trials ratio
    matches the batch-free algorithm exactly.

    Aborts when the running acceptance ratio is below MIN_ACCEPT_RATIO after
    RATIO_CHECK_AT proposals (misconfigured bound or empty support).  If
    max_trials is given the draw stops there and returns what it found,
    flagged as truncated.
    """
    if C <= 0.0:
        raise ValueError("acceptance bound C must be positive")
    if M <= 0:
        raise ValueError("sample count M must be positive")
    ref_density = 1.0 / reference.area
    chunks: list[np.ndarray] = []
    accepted = 0
    trials = 0
    violations = 0
    while accepted < M:
        X = reference.sample(batch_size, rng)
        U = rng.random(batch_size)
        rho = np.asarray(target_density(X), dtype=float)
        ratio = rho / (C * ref_density)
        violating = ratio > 1.0 + 1e-12
        accept = U <= ratio
        idx = np.flatnonzero(accept)
        if accepted + idx.size >= M:
            # count proposals only up to the one completing the request
            last = int(idx[M - accepted - 1])
            trials += last + 1
            violations += int(np.count_nonzero(violating[: last + 1]))
            chunks.append(X[idx[: M - accepted]])
            accepted = M
            break
        trials += batch_size
        violations += int(np.count_nonzero(violating))
        accepted += idx.size
        if idx.size:
            chunks.append(X[idx])
        if trials >= RATIO_CHECK_AT and accepted < MIN_ACCEPT_RATIO * trials:
            raise SamplingError(
                f"acceptance ratio {accepted}/{trials} below {MIN_ACCEPT_RATIO:g}; "
                "check the bound constant or the target support"
            )
        if max_trials is not None and trials >= max_trials:
            samples = np.concatenate(chunks) if chunks else np.zeros((0, 2))
            return RejectionResult(samples, trials, violations, truncated=True)
    samples = np.concatenate(chunks) if chunks else np.zeros((0, 2))
    return RejectionResult(samples, trials, violations)


@dataclass
class PartitionEstimate:
    """Monte Carlo description of the level-set partition.

    measure_* estimate the areas, m_* the partition constants, C_* the
    acceptance bounds for random-start sampling (nan for a side that came
    up empty).  The uniform clouds are retained for the start sampling and
    the objective estimate.
    """

    measure_plus: float
    measure_minus: float
    m_plus: float
    m_minus: float
    C_plus: float
    C_minus: float
    samples_plus: np.ndarray
    samples_minus: np.ndarray
    trials_plus: int
    trials_minus: int
    holdall: Rectangle
    safety: float
    plus_empty: bool = False
    minus_empty: bool = False

    def side(self, sign: str) -> tuple[float, float, float, np.ndarray, bool]:
        if sign == "+":
            return self.measure_plus, self.m_plus, self.C_plus, self.samples_plus, self.plus_empty
        if sign == "-":
            return self.measure_minus, self.m_minus, self.C_minus, self.samples_minus, self.minus_empty
        raise ValueError(f"side must be '+' or '-', got {sign!r}")


def partition_indicators(state: Field, tracking: Field):
    """Membership indicators of the two partitions as batch callables."""

    def plus(X: np.ndarray) -> np.ndarray:
        v = state(X)
        return ((v >= tracking(X)) & (v >= 0.0)).astype(float)

    def minus(X: np.ndarray) -> np.ndarray:
        v = state(X)
        return ((v <= tracking(X)) & (v >= 0.0)).astype(float)

    return plus, minus


def estimate_partition(
    state: Field,
    tracking: Field,
    holdall: Rectangle,
    M: int,
    rng: np.random.Generator,
    safety: float = 1.1,
    n_mean: int | None = None,
    max_trials: int | None = None,
) -> PartitionEstimate:
    """Uniform clouds on both partitions plus measures, constants and bounds.

    Each side draws M uniform points by accepting exactly the proposals that
    land in the partition; the area estimate is holdall area times the
    accepted/trials ratio.  The constant is  m = measure * |mean(v - z)|
    over the retained cloud (first n_mean points when given), clamped at
    zero.  The acceptance bound is  C = area * safety * max |v - z| / m
    over the cloud.

    A side whose sampler aborts with a vanishing acceptance ratio is
    treated as empty (measure and m zero); both sides empty is an error.
    By default the proposal budget per side is capped at 10^7 + 20 M; when
    the cap is hit the side keeps its partial cloud and the fixed-trials
    ratio, which is accurate precisely when the side is small.
    """
    if M < 1:
        raise ValueError("M must be positive")
    if max_trials is None:
        max_trials = RATIO_CHECK_AT + 20 * M
    ind_plus, ind_minus = partition_indicators(state, tracking)
    area = holdall.area

    results = {}
    for sign, indicator in (("+", ind_plus), ("-", ind_minus)):
        try:
            res = acceptance_rejection(indicator, area, holdall, M, rng, max_trials=max_trials)
        except SamplingError:
            res = RejectionResult(np.zeros((0, 2)), RATIO_CHECK_AT, 0, truncated=True)
        if res.truncated:
            log.warning(
                "partition side %s: %d/%d samples after %d proposals",
                sign,
                res.samples.shape[0],
                M,
                res.trials,
            )
        results[sign] = res

    if results["+"].samples.shape[0] == 0 and results["-"].samples.shape[0] == 0:
        raise SamplingError("both partition sides came up empty; state level set has no positive region")

    out = {}
    for sign, res in results.items():
        cloud = res.samples
        n = cloud.shape[0]
        empty = n == 0
        measure = area * n / res.trials if res.trials else 0.0
        if empty:
            out[sign] = (0.0, 0.0, np.nan, cloud, res.trials, True)
            continue
        n_use = n if n_mean is None else min(n_mean, n)
        diff = state(cloud) - tracking(cloud)
        mean = float(np.mean(diff[:n_use]))
        m = measure * mean if sign == "+" else -measure * mean
        if m < 0.0:
            log.warning("clamping negative constant m%s = %.3e to 0", sign, m)
            m = 0.0
        if m > 0.0:
            # C = area * safety * max over cloud of |v - z| / m
            C = area * safety * float(np.max(np.abs(diff))) / m
        else:
            C = np.nan
        out[sign] = (measure, m, C, cloud, res.trials, False)

    mp, m_p, Cp, cp, tp, ep = out["+"]
    mm, m_m, Cm, cm, tm, em = out["-"]
    return PartitionEstimate(
        measure_plus=mp,
        measure_minus=mm,
        m_plus=m_p,
        m_minus=m_m,
        C_plus=Cp,
        C_minus=Cm,
        samples_plus=cp,
        samples_minus=cm,
        trials_plus=tp,
        trials_minus=tm,
        holdall=holdall,
        safety=safety,
        plus_empty=ep,
        minus_empty=em,
    )


def sample_random_starts(
    state: Field,
    tracking: Field,
    partition: PartitionEstimate,
    side: str,
    M: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """M starts from the density |v - z| / m restricted to one partition.

    Uses the acceptance bound estimated from the uniform cloud.  Proposals
    where the density exceeds the bound are counted; more than 0.1% of them
    aborts the draw since the bound extrapolation is then untrustworthy and
    the safety factor needs to grow.
    """
    measure, m, C, _, empty = partition.side(side)
    if empty or m <= 0.0 or not np.isfinite(C):
        raise SamplingError(f"partition side {side} is degenerate (m = {m!r}); no starts to draw")
    ind_plus, ind_minus = partition_indicators(state, tracking)
    indicator = ind_plus if side == "+" else ind_minus

    def density(X: np.ndarray) -> np.ndarray:
        return np.abs(state(X) - tracking(X)) * indicator(X) / m

    res = acceptance_rejection(density, C, partition.holdall, M, rng)
    if res.bound_violations > 1e-3 * res.trials:
        raise SamplingError(
            f"{res.bound_violations} of {res.trials} proposals exceeded the acceptance bound "
            f"on side {side}; increase the safety factor above {partition.safety}"
        )
    if res.bound_violations:
        log.info(
            "side %s: %d bound violations over %d proposals (below abort threshold)",
            side,
            res.bound_violations,
            res.trials,
        )
    return res.samples


@dataclass
class ExitSampleSet:
    """Exit points of the scaled Brownian paths, projected onto the chain."""

    starts: np.ndarray  # (m, 2)
    exits: np.ndarray  # (m, 2), all on the chain
    edges: np.ndarray  # (m,) edge index, -1 for vertex-cone projections
    vertex_tags: np.ndarray  # (m,) vertex index, -1 for edge projections
    ts: np.ndarray  # (m,) local edge coordinate of each exit
    steps_taken: np.ndarray  # (m,)
    delta: float

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if not (len(self.starts) == len(self.exits) == len(self.steps_taken)):
            raise ValueError("inconsistent exit sample arrays")


def euler_maruyama_exit(
    state: Field,
    boundary: PolygonalBoundary,
    start,
    delta: float,
    rng: np.random.Generator,
    max_steps: int = 10_000_000,
) -> tuple[ChainPoint, int]:
    """Single path: step x += sqrt(2 delta) * xi until the state value is
    no longer positive, then project onto the chain.

    A start outside the positive level set exits immediately with zero
    steps.  Exceeding max_steps aborts; that usually means the level set
    has a spurious unbounded positive region.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    x = np.array(start, dtype=float)
    scale = np.sqrt(2.0 * delta)
    steps = 0
    while float(state(x[None, :])[0]) > 0.0:
        if steps >= max_steps:
            raise SamplingError(
                f"no exit after {max_steps} steps from {start}; "
                "the level set may have a spurious positive region"
            )
        x += scale * rng.standard_normal(2)
        steps += 1
    cp = project_points(boundary, x[None, :])[0]
    return cp, steps


def sample_exits(
    state: Field,
    boundary: PolygonalBoundary,
    starts: np.ndarray,
    delta: float,
    seed: int,
    max_steps: int = 10_000_000,
    block: int = 512,
) -> ExitSampleSet:
    """Exit points for a batch of starts, one RNG substream per path.

    Paths are advanced together but each consumes normal increments only
    from its own substream(seed, path index), so the result is bit-equal to
    simulating every path alone with that generator, independent of batch
    composition.  Increments are drawn in blocks per path; blocks of paths
    that exited early are simply never consumed.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    X = np.array(starts, dtype=float)
    m = X.shape[0]
    if m == 0:
        return ExitSampleSet(
            starts=X,
            exits=np.zeros((0, 2)),
            edges=np.zeros(0, dtype=int),
            vertex_tags=np.zeros(0, dtype=int),
            ts=np.zeros(0),
            steps_taken=np.zeros(0, dtype=np.int64),
            delta=delta,
        )
    rngs = [substream(seed, i) for i in range(m)]
    buf = np.empty((m, block, 2))
    scale = np.sqrt(2.0 * delta)
    pos = X.copy()
    steps = np.zeros(m, dtype=np.int64)
    active = np.asarray(state(pos), dtype=float) > 0.0
    k = 0
    while np.any(active):
        if k >= max_steps:
            raise SamplingError(f"paths still alive after {max_steps} steps")
        off = k % block
        if off == 0:
            for i in np.flatnonzero(active):
                buf[i] = rngs[i].standard_normal((block, 2))
        idx = np.flatnonzero(active)
        pos[idx] += scale * buf[idx, off]
        steps[idx] += 1
        k += 1
        vals = np.asarray(state(pos[idx]), dtype=float)
        active[idx] = vals > 0.0
    cps = project_points(boundary, pos)
    exits = np.stack([cp.point for cp in cps])
    edges = np.array([cp.edge for cp in cps], dtype=int)
    verts = np.array([cp.vertex for cp in cps], dtype=int)
    ts = np.array([cp.t for cp in cps])
    return ExitSampleSet(
        starts=X,
        exits=exits,
        edges=edges,
        vertex_tags=verts,
        ts=ts,
        steps_taken=steps,
        delta=delta,
    )
