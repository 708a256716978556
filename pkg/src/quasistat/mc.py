"""Monte Carlo cross-checks: path batches and a particle ensemble.

Randomness is counter-based: every path or particle owns a keyed stream
whose k-th draw depends only on (seed, stream id, k).  Scheduling, batch
splits, or platform thread counts therefore cannot change any output;
rerunning with the same seed reproduces results bit for bit.

The particle ensemble keeps n walkers moving under the chain dynamics;
a walker that gets absorbed is instantly respawned on the position of a
uniformly chosen other walker.  Its empirical law converges to the
quasi-stationary law as n grows, which is the cross-check used against
the exact engine.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .chain import AbsorbedChain, DistributionOnStates
from .errors import ComputationError, ValidationError
from .streams import SubStream
from .textio import fmt, write_csv

STATUS_ABSORBED = 0
STATUS_SURVIVED = 1
STATUS_HIT_SET = 2
STATUS_KILLED = 3

# stream kinds keep path and particle draws on disjoint keys
_KIND_PATH = 1
_KIND_PARTICLE = 2

# end-state sentinel for paths killed through the window top
KILLED_STATE = -1


def _jump_tables(chain: AbsorbedChain):
    """Per-state jump targets and cumulative rates as plain lists.

    targets[x] pairs with cum[x]; target 0 is absorption and -1 is
    truncation killing.  Plain Python lists beat numpy here: the inner
    simulation loop draws from tiny arrays millions of times.
    """
    tables = chain._cache.get("jump_tables")
    if tables is not None:
        return tables
    n = chain.n_transient
    targets: list[list[int]] = [[] for _ in range(n + 1)]
    cum: list[list[float]] = [[] for _ in range(n + 1)]
    totals = [0.0] * (n + 1)
    rows = chain.sub_generator.tocsr()
    for x in range(1, n + 1):
        tg, cw = [], []
        acc = 0.0
        a = float(chain.absorption_rates[x - 1])
        if a > 0:
            acc += a
            tg.append(0)
            cw.append(acc)
        start, end = rows.indptr[x - 1], rows.indptr[x]
        for pos in range(start, end):
            y = int(rows.indices[pos]) + 1
            r = float(rows.data[pos])
            if y == x or r <= 0:
                continue
            acc += r
            tg.append(y)
            cw.append(acc)
        k = float(chain.kill_rates[x - 1])
        if k > 0:
            acc += k
            tg.append(KILLED_STATE)
            cw.append(acc)
        targets[x] = tg
        cum[x] = cw
        totals[x] = acc
    tables = (targets, cum, totals)
    chain._cache["jump_tables"] = tables
    return tables


@dataclass
class TrajectoryBatch:
    """Outcome of n independent paths run to absorption, a set hit,
    killing, or the horizon; times carry the event time (horizon for
    survivors)."""

    seed: int
    n_paths: int
    horizon: float
    n_states: int
    stop_set: tuple[int, ...] | None
    end_states: np.ndarray
    times: np.ndarray
    status: np.ndarray

    def __post_init__(self):
        if self.end_states.shape != (self.n_paths,) or self.times.shape != (self.n_paths,):
            raise ValidationError("batch arrays must have one entry per path")
        if self.status.shape != (self.n_paths,):
            raise ValidationError("batch arrays must have one entry per path")

    def survivor_mask(self) -> np.ndarray:
        return self.status == STATUS_SURVIVED

    def absorption_times(self) -> np.ndarray:
        return self.times[self.status == STATUS_ABSORBED]

    def hit_times(self) -> np.ndarray:
        return self.times[self.status == STATUS_HIT_SET]

    def survival_fraction(self) -> float:
        return float(np.count_nonzero(self.survivor_mask())) / self.n_paths


def simulate_batch(
    chain: AbsorbedChain,
    mu,
    horizon: float,
    n_paths: int,
    seed: int,
    stop_on_set=None,
) -> TrajectoryBatch:
    """Run n_paths independent jump paths from law mu up to the horizon.

    Paths stop early at absorption (state 0), at truncation killing, or
    on first entry into stop_on_set when given (a start already inside
    counts as an immediate hit at time 0).  horizon may be math.inf as
    long as one of the stopping events is almost sure.  States with zero
    exit rate hold forever and survive any finite horizon.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    if not horizon > 0:
        raise ValidationError(f"horizon must be > 0, got {horizon}")
    if isinstance(mu, DistributionOnStates):
        if mu.n_states != chain.n_states:
            raise ValidationError("initial law lives on a different window")
        weights = mu.weights
    else:
        weights = np.asarray(mu, dtype=np.float64)
        if weights.shape != (chain.n_transient,):
            raise ValidationError("initial law length does not match the window")
    cum_init = np.cumsum(weights).tolist()
    stop = frozenset(int(x) for x in stop_on_set) if stop_on_set is not None else None
    if stop is not None and (not stop or min(stop) < 1 or max(stop) > chain.n_transient):
        raise ValidationError("stop_on_set must be non-empty transient states")

    targets, cum, totals = _jump_tables(chain)
    end = np.empty(n_paths, dtype=np.int64)
    times = np.empty(n_paths, dtype=np.float64)
    status = np.empty(n_paths, dtype=np.uint8)
    log = math.log

    for i in range(n_paths):
        s = SubStream(seed, _KIND_PATH, i)
        x = s.next_choice(cum_init) + 1
        if stop is not None and x in stop:
            end[i], times[i], status[i] = x, 0.0, STATUS_HIT_SET
            continue
        t = 0.0
        while True:
            q = totals[x]
            if q <= 0.0:
                if horizon == math.inf:
                    raise ComputationError(
                        f"path {i} reached the trap state {x} with an infinite horizon"
                    )
                end[i], times[i], status[i] = x, horizon, STATUS_SURVIVED
                break
            t -= log(s.next_u01()) / q
            if t >= horizon:
                end[i], times[i], status[i] = x, horizon, STATUS_SURVIVED
                break
            y = targets[x][s.next_choice(cum[x])]
            if y == 0:
                end[i], times[i], status[i] = 0, t, STATUS_ABSORBED
                break
            if y == KILLED_STATE:
                end[i], times[i], status[i] = KILLED_STATE, t, STATUS_KILLED
                break
            x = y
            if stop is not None and x in stop:
                end[i], times[i], status[i] = x, t, STATUS_HIT_SET
                break
    return TrajectoryBatch(
        seed=seed,
        n_paths=n_paths,
        horizon=horizon,
        n_states=chain.n_states,
        stop_set=tuple(sorted(stop)) if stop is not None else None,
        end_states=end,
        times=times,
        status=status,
    )


def conditional_estimate(batch: TrajectoryBatch) -> tuple[DistributionOnStates, float]:
    """Empirical law of surviving paths' end states, with the survival
    fraction.  No survivors means the conditioning event was not
    observed and raises."""
    mask = batch.survivor_mask()
    n_surv = int(np.count_nonzero(mask))
    if n_surv == 0:
        raise ComputationError(
            "no path survived the horizon; increase n_paths or shorten the horizon"
        )
    counts = np.bincount(batch.end_states[mask], minlength=batch.n_states)
    law = counts[1:].astype(np.float64) / n_surv
    return DistributionOnStates(law, _skip_checks=True), n_surv / batch.n_paths


@dataclass
class ParticleEnsemble:
    """Snapshot of the interacting ensemble at one sample time."""

    time: float
    n_particles: int
    positions: np.ndarray
    redraw_count: int

    def empirical_distribution(self, n_states: int) -> DistributionOnStates:
        counts = np.bincount(self.positions, minlength=n_states)
        return DistributionOnStates(counts[1:].astype(np.float64) / self.n_particles,
                                    _skip_checks=True)


def fleming_viot(
    chain: AbsorbedChain,
    n_particles: int,
    horizon: float,
    seed: int,
    sample_times=None,
    mu=None,
) -> list[ParticleEnsemble]:
    """Interacting-particle estimate of the quasi-stationary law.

    Events run in global time order off one heap; an absorbed (or
    killed) particle adopts the position of a uniformly drawn other
    particle, the choice coming from its own stream so results do not
    depend on event interleaving across particles.  Ties in event times
    break by particle index.  Returns one snapshot per sample time
    (default: just the horizon).
    """
    if n_particles < 2:
        raise ValidationError("the ensemble needs at least 2 particles to respawn")
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ValidationError(f"horizon must be finite and > 0, got {horizon}")
    if sample_times is None:
        samples = [float(horizon)]
    else:
        samples = sorted(float(t) for t in sample_times)
        if not samples or samples[0] < 0 or samples[-1] > horizon:
            raise ValidationError("sample times must lie in [0, horizon]")
    if mu is None:
        weights = np.full(chain.n_transient, 1.0 / chain.n_transient)
    elif isinstance(mu, DistributionOnStates):
        if mu.n_states != chain.n_states:
            raise ValidationError("initial law lives on a different window")
        weights = mu.weights
    else:
        weights = np.asarray(mu, dtype=np.float64)
    cum_init = np.cumsum(weights).tolist()

    targets, cum, totals = _jump_tables(chain)
    streams = [SubStream(seed, _KIND_PARTICLE, i) for i in range(n_particles)]
    positions = np.empty(n_particles, dtype=np.int64)
    heap: list[tuple[float, int]] = []
    for i, s in enumerate(streams):
        x = s.next_choice(cum_init) + 1
        positions[i] = x
        q = totals[x]
        if q > 0.0:
            heap.append((-math.log(s.next_u01()) / q, i))
    heapq.heapify(heap)

    redraws = 0
    snapshots: list[ParticleEnsemble] = []
    for tau in samples:
        while heap and heap[0][0] <= tau:
            t_ev, i = heapq.heappop(heap)
            s = streams[i]
            x = int(positions[i])
            y = targets[x][s.next_choice(cum[x])]
            if y <= 0:  # absorbed or killed: respawn on another particle
                u = s.next_u01()
                k = int(u * (n_particles - 1))
                if k >= n_particles - 1:
                    k = n_particles - 2
                if k >= i:
                    k += 1
                y = int(positions[k])
                redraws += 1
            positions[i] = y
            q = totals[y]
            if q > 0.0:
                heapq.heappush(heap, (t_ev - math.log(s.next_u01()) / q, i))
        snapshots.append(
            ParticleEnsemble(
                time=tau,
                n_particles=n_particles,
                positions=positions.copy(),
                redraw_count=redraws,
            )
        )
    return snapshots


# -- text output ---------------------------------------------------------------


def batch_to_csv(batch: TrajectoryBatch, target) -> None:
    """One row per path; the time cell is empty for surviving paths."""

    def rows():
        for i in range(batch.n_paths):
            t = "" if batch.status[i] == STATUS_SURVIVED else fmt(batch.times[i])
            yield [str(i), str(int(batch.end_states[i])), t]

    write_csv(target, ["path", "end_state", "absorption_time"], rows())


def ensembles_to_csv(snapshots: list[ParticleEnsemble], target) -> None:
    def rows():
        for snap in snapshots:
            counts = np.bincount(snap.positions)
            for state in np.nonzero(counts)[0]:
                yield [fmt(snap.time), str(int(state)), str(int(counts[state]))]

    write_csv(target, ["t", "state", "count"], rows())
