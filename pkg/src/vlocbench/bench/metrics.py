"""Benchmark metrics: failure rate (re-initializations per km), recall at
the three accuracy thresholds, and success rate."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..geometry import pose_error


@dataclass(frozen=True)
class RecallThresholds:
    t1: tuple = (0.25, 2.0)
    t2: tuple = (0.5, 5.0)
    t3: tuple = (5.0, 10.0)

    def __post_init__(self) -> None:
        pairs = (self.t1, self.t2, self.t3)
        for (a_t, a_r), (b_t, b_r) in zip(pairs, pairs[1:]):
            if not (a_t < b_t and a_r < b_r):
                raise ValueError("thresholds must be strictly increasing")


def failure_rate(reinit_counts: list, route_length_km: float) -> float:
    """Mean re-initializations per kilometer over the episode batch."""
    if not reinit_counts:
        raise ValueError("need at least one episode")
    if route_length_km <= 0:
        raise ValueError("route length must be positive")
    return sum(r / route_length_km for r in reinit_counts) / len(reinit_counts)


def recall(localization_log: list, thresholds: RecallThresholds = RecallThresholds()):
    """Fractions of attempts within T1/T2/T3; absent estimates are misses."""
    total = len(localization_log)
    if total == 0:
        return (0.0, 0.0, 0.0)
    hits = [0, 0, 0]
    for record in localization_log:
        if record.estimate is None:
            continue
        err = pose_error(record.estimate.pose, record.truth_camera)
        for i, (max_t, max_r) in enumerate((thresholds.t1, thresholds.t2, thresholds.t3)):
            if err.translation_error < max_t and err.rotation_error < max_r:
                hits[i] += 1
    return (hits[0] / total, hits[1] / total, hits[2] / total)


def success_rate(results: list) -> float:
    """Fraction of episodes completed without any re-initialization."""
    if not results:
        raise ValueError("need at least one episode")
    good = sum(1 for r in results if r.completed and r.reinit_count == 0)
    return good / len(results)


@dataclass
class MetricsReport:
    failure_rate: float
    recall_t1: float
    recall_t2: float
    recall_t3: float
    success_rate: float
    episodes: int
    per_episode: list = field(default_factory=list)
    crash_locations: list = field(default_factory=list)

    def __post_init__(self) -> None:
        assert self.recall_t1 <= self.recall_t2 <= self.recall_t3
        assert self.failure_rate >= 0.0
        for frac in (self.recall_t1, self.recall_t2, self.recall_t3, self.success_rate):
            assert 0.0 <= frac <= 1.0


def build_report(
    results: list,
    reference_log: list,
    route_length_km: float,
    thresholds: RecallThresholds = RecallThresholds(),
) -> MetricsReport:
    r1, r2, r3 = recall(reference_log, thresholds)
    return MetricsReport(
        failure_rate=failure_rate([r.reinit_count for r in results], route_length_km),
        recall_t1=r1,
        recall_t2=r2,
        recall_t3=r3,
        success_rate=success_rate(results),
        episodes=len(results),
        per_episode=[
            {
                "episode_index": r.episode_index,
                "reinit_count": r.reinit_count,
                "completed": r.completed,
            }
            for r in results
        ],
        crash_locations=[
            {
                "episode_index": r.episode_index,
                "timestamp": ev.timestamp,
                "x": ev.x,
                "y": ev.y,
                "cause": ev.cause,
            }
            for r in results
            for ev in r.failure_events
        ],
    )
