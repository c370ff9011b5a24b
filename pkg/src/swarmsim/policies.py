"""Peer and neighbour selection strategies.

The central strategy builds a neighbour set greedily: at every step it
admits the candidate whose popularity record, merged with the records of
the node itself and the already-selected set, yields the lowest spatial
dispersion. Dispersion ties fall to the highest request rate, then (for
low-interactivity workloads) to candidates that already hold data, then
to the lowest peer id. The remaining strategies implement classic
unchoking (rate-ranked and randomized slots) and request-target schemes
used as baselines.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError
from .metrics import PopularityRecord, merge_records, spatial_dispersion
from .workload import InteractivityProfile


class PolicyKind(enum.Enum):
    DISPERSION_GREEDY = "dispersiongreedy"
    TIT_FOR_TAT = "titfortat"
    RANDOM = "random"
    LLP = "llp"
    LRP = "lrp"
    TRACKER_CLOSEST = "trackerclosest"
    YNP = "ynp"
    CNP = "cnp"
    GIVE_TO_GET = "givetoget"
    PER_PIECE_OPTIMISTIC = "perpieceoptimistic"


@dataclass(frozen=True)
class PolicySpec:
    """A policy kind plus its parameters (n for the youngest/closest-n schemes)."""

    kind: PolicyKind
    n: int | None = None

    def __post_init__(self):
        if self.kind in (PolicyKind.YNP, PolicyKind.CNP):
            if self.n is None or self.n < 2:
                raise ConfigError(f"{self.kind.value} requires n >= 2")
        elif self.n is not None:
            raise ConfigError(f"policy {self.kind.value} takes no n parameter")

    @classmethod
    def from_name(cls, name: str, n: int | None = None) -> "PolicySpec":
        try:
            kind = PolicyKind(name.strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in PolicyKind)
            raise ConfigError(f"unknown policy {name!r}; valid kinds: {valid}")
        return cls(kind, n)


@dataclass(frozen=True)
class CandidateInfo:
    """What a node learns about a possible neighbour before selecting it."""

    peer_id: str
    popularity_record: PopularityRecord
    request_rate: float = 0.0
    join_time: float = 0.0
    has_started: bool = False
    buffer_summary: np.ndarray | None = None
    queue_length: int = 0
    requests_sent_to: int = 0
    recent_forward_rate: float = 0.0

    def __post_init__(self):
        if self.request_rate < 0:
            raise ValueError("request_rate must be non-negative")
        if self.buffer_summary is not None:
            started = bool(np.any(self.buffer_summary))
            if started != self.has_started:
                raise ValueError("has_started must match a non-empty buffer_summary")


@dataclass(frozen=True)
class SelectionOutcome:
    """Neighbour ids in greedy order with the merged dispersion after each step."""

    selected: tuple[str, ...]
    per_step_dispersion: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "selected", tuple(self.selected))
        object.__setattr__(self, "per_step_dispersion", tuple(self.per_step_dispersion))
        if len(self.selected) != len(self.per_step_dispersion):
            raise ValueError("one dispersion value per selection step required")
        if len(set(self.selected)) != len(self.selected):
            raise ValueError("selection contains duplicate peers")


def _dense_rank_desc(values: Sequence[float]) -> np.ndarray:
    """Rank values so the largest gets 0 and exact ties share a rank."""
    arr = np.asarray(values, dtype=np.float64)
    uniq = np.unique(-arr)
    return np.searchsorted(uniq, -arr).astype(np.int64)


def _id_rank(ids: Sequence[str]) -> np.ndarray:
    if len(set(ids)) != len(ids):
        raise ValueError("candidate peer ids must be unique")
    rank = np.empty(len(ids), dtype=np.int64)
    for pos, idx in enumerate(sorted(range(len(ids)), key=lambda i: ids[i])):
        rank[idx] = pos
    return rank


def _check_shapes(own: PopularityRecord, candidates: Sequence[CandidateInfo]) -> None:
    for c in candidates:
        r = c.popularity_record
        if r.granularity != own.granularity or r.horizon != own.horizon:
            raise ValueError(
                f"record of {c.peer_id} disagrees on granularity or horizon with own record"
            )


def _tie_keys(
    candidates: Sequence[CandidateInfo],
    profile_hint: InteractivityProfile | None,
    forward_first: bool,
) -> np.ndarray:
    cols = []
    if forward_first:
        cols.append(_dense_rank_desc([c.recent_forward_rate for c in candidates]))
    cols.append(_dense_rank_desc([c.request_rate for c in candidates]))
    if profile_hint is InteractivityProfile.LI:
        cols.append(np.array([0 if c.has_started else 1 for c in candidates], dtype=np.int64))
    cols.append(_id_rank([c.peer_id for c in candidates]))
    return np.column_stack(cols)


def _run_greedy(
    own: PopularityRecord,
    candidates: Sequence[CandidateInfo],
    max_size: int,
    profile_hint: InteractivityProfile | None,
    forward_first: bool,
) -> SelectionOutcome:
    if max_size < 0:
        raise ValueError("max_size must be >= 0")
    if not candidates or max_size == 0:
        return SelectionOutcome((), ())
    _check_shapes(own, candidates)
    cand_matrix = np.stack([c.popularity_record.counts for c in candidates])
    keys = _tie_keys(candidates, profile_hint, forward_first)
    order, distinct, mass = kernels.greedy_select(own.counts, cand_matrix, keys, max_size)
    selected = tuple(candidates[i].peer_id for i in order)
    per_step = tuple(
        (int(n) / int(m)) if m > 0 else 1.0 for n, m in zip(distinct, mass)
    )
    return SelectionOutcome(selected, per_step)


def select_neighbors_greedy(
    own: PopularityRecord,
    candidates: Sequence[CandidateInfo],
    max_size: int,
    profile_hint: InteractivityProfile | None = None,
) -> SelectionOutcome:
    """Build a neighbour set of up to max_size peers minimizing dispersion.

    Starting from the node's own popularity record, each step merges every
    remaining candidate's record into the running set and admits the one
    producing the lowest spatial dispersion. Ties prefer the highest
    request rate, then (when profile_hint is LI) peers that have already
    started receiving data, then the lowest peer id.
    """
    return _run_greedy(own, candidates, max_size, profile_hint, forward_first=False)


def evaluate_set_dispersion(own: PopularityRecord, chosen: Sequence[CandidateInfo]) -> float:
    """Spatial dispersion of the node's record merged with a candidate set."""
    merged = merge_records(
        [own, *(c.popularity_record for c in chosen)],
        granularity=own.granularity,
        horizon=own.horizon,
    )
    return spatial_dispersion(merged)


def capacity_check_and_reselect(
    outcome: SelectionOutcome,
    own: PopularityRecord,
    candidates: Sequence[CandidateInfo],
    expected_rates: Mapping[str, float],
    demand: float,
    max_size: int,
    profile_hint: InteractivityProfile | None = None,
) -> SelectionOutcome:
    """Keep the outcome when its aggregate capacity meets demand, else reselect.

    expected_rates estimates the upload each candidate could dedicate to
    this node (capacity divided by its upload slots). When the selected
    set cannot jointly sustain `demand`, the greedy loop reruns with the
    step score extended to prefer, among dispersion-minimizing candidates,
    those that recently forwarded data to third parties the fastest.
    """
    aggregate = sum(expected_rates.get(pid, 0.0) for pid in outcome.selected)
    if aggregate >= demand or not candidates:
        return outcome
    return _run_greedy(own, candidates, max_size, profile_hint, forward_first=True)


def tit_for_tat_unchoke(rates: Mapping[str, float], slots: int) -> list[str]:
    """The `slots` peers with the highest recent rates, ties to the lowest id."""
    if slots < 0:
        raise ValueError("slots must be >= 0")
    ranked = sorted(rates.items(), key=lambda kv: (-kv[1], kv[0]))
    return [pid for pid, _ in ranked[:slots]]


def optimistic_unchoke(candidates: Sequence[str], rng: random.Random) -> str | None:
    """Uniform choice among choked, interested neighbours; None when empty."""
    if not candidates:
        return None
    ordered = sorted(candidates)
    return ordered[rng.randrange(len(ordered))]


def baseline_request_target(
    spec: PolicySpec,
    piece: int,
    neighbours: Sequence[CandidateInfo],
    self_join_time: float,
    rng: random.Random | None = None,
) -> str:
    """Pick the neighbour to ask for `piece` under a baseline scheme.

    llp: shortest request queue. lrp: fewest requests sent so far.
    trackerclosest: nearest join time to our own. ynp: uniform among the
    n youngest holders. cnp: uniform among the n holders closest in age.
    """
    holders = [
        c
        for c in neighbours
        if c.buffer_summary is not None and bool(c.buffer_summary[piece])
    ]
    if not holders:
        raise ValueError(f"no neighbour holds piece {piece}")
    kind = spec.kind
    if kind is PolicyKind.LLP:
        return min(holders, key=lambda c: (c.queue_length, c.peer_id)).peer_id
    if kind is PolicyKind.LRP:
        return min(holders, key=lambda c: (c.requests_sent_to, c.peer_id)).peer_id
    if kind is PolicyKind.TRACKER_CLOSEST:
        return min(holders, key=lambda c: (abs(c.join_time - self_join_time), c.peer_id)).peer_id
    if kind is PolicyKind.YNP:
        if rng is None:
            raise ValueError("ynp needs a random generator")
        pool = sorted(holders, key=lambda c: (-c.join_time, c.peer_id))[: spec.n]
        return pool[rng.randrange(len(pool))].peer_id
    if kind is PolicyKind.CNP:
        if rng is None:
            raise ValueError("cnp needs a random generator")
        pool = sorted(holders, key=lambda c: (abs(c.join_time - self_join_time), c.peer_id))[: spec.n]
        return pool[rng.randrange(len(pool))].peer_id
    raise ConfigError(f"{kind.value} is not a request-target scheme")


def per_piece_optimistic_hook(playback_times: Sequence[float]) -> list[float]:
    """Optimistic re-evaluation instants for the play-triggered unchoke variant.

    One trigger per played piece, at the playback instant itself.
    """
    return list(playback_times)
