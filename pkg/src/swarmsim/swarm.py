"""Swarm protocol state: content grid, peers, tracker, piece scheduling.

Content is split into pieces (the accounting unit; only complete pieces
can be served) and pieces into blocks (the transmission unit). Peers
hold a piece bitmap plus per-piece partial block maps, a bounded set of
upload slots, and rolling rate bookkeeping used by the unchoke policies.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvariantError
from .metrics import PopularityRecord

DEFAULT_PIECE_SIZE = 262144
DEFAULT_BLOCK_SIZE = 16384


@dataclass(frozen=True)
class ContentSpec:
    """Geometry of the shared object."""

    total_size: int
    piece_size: int = DEFAULT_PIECE_SIZE
    block_size: int = DEFAULT_BLOCK_SIZE
    playback_rate: float = float(DEFAULT_PIECE_SIZE)

    def __post_init__(self):
        if self.total_size <= 0 or self.piece_size <= 0 or self.block_size <= 0:
            raise ValueError("sizes must be positive")
        if self.piece_size % self.block_size != 0:
            raise ValueError("block_size must divide piece_size")
        if self.playback_rate <= 0:
            raise ValueError("playback_rate must be positive")

    @classmethod
    def for_duration(
        cls,
        duration: float,
        playback_rate: float,
        piece_size: int = DEFAULT_PIECE_SIZE,
        block_size: int = DEFAULT_BLOCK_SIZE,
    ) -> "ContentSpec":
        total = int(math.ceil(duration * playback_rate))
        return cls(total, piece_size, block_size, playback_rate)

    @property
    def num_pieces(self) -> int:
        return (self.total_size + self.piece_size - 1) // self.piece_size

    @property
    def duration(self) -> float:
        return self.total_size / self.playback_rate

    @property
    def piece_duration(self) -> float:
        return self.piece_size / self.playback_rate

    def piece_length(self, piece: int) -> int:
        if piece == self.num_pieces - 1:
            rem = self.total_size - piece * self.piece_size
            return rem
        return self.piece_size

    def blocks_in_piece(self, piece: int) -> int:
        return (self.piece_length(piece) + self.block_size - 1) // self.block_size

    def block_length(self, piece: int, block: int) -> int:
        length = self.piece_length(piece)
        last = self.blocks_in_piece(piece) - 1
        if block == last:
            return length - last * self.block_size
        return self.block_size

    def pieces_for_interval(self, start: float, end: float) -> range:
        """Pieces whose playback span intersects the content interval [start, end)."""
        if end <= start:
            return range(0, 0)
        pd = self.piece_duration
        lo = int(math.floor(start / pd + 1e-9))
        hi = int(math.ceil(end / pd - 1e-9))
        return range(max(lo, 0), min(hi, self.num_pieces))


class PeerRole(enum.Enum):
    LEECHER = "leecher"
    SEED = "seed"


@dataclass
class PeerState:
    """Protocol-visible state of one peer."""

    peer_id: str
    role: PeerRole
    upload_capacity: float
    join_time: float
    have: np.ndarray
    partial: dict[int, np.ndarray] = field(default_factory=dict)
    neighbourhood: set[str] = field(default_factory=set)
    regular_slots: set[str] = field(default_factory=set)
    optimistic_slot: str | None = None
    download_rate_history: dict[str, float] = field(default_factory=dict)
    forward_rate_history: dict[str, float] = field(default_factory=dict)
    popularity_record: PopularityRecord | None = None

    @property
    def is_seed(self) -> bool:
        return self.role is PeerRole.SEED

    def has_piece(self, piece: int) -> bool:
        return bool(self.have[piece])

    def has_started(self) -> bool:
        return bool(self.have.any())


def new_peer(
    peer_id: str,
    role: PeerRole,
    upload_capacity: float,
    join_time: float,
    content: ContentSpec,
    record_granularity: float | None = None,
) -> PeerState:
    have = np.zeros(content.num_pieces, dtype=bool)
    if role is PeerRole.SEED:
        have[:] = True
    granularity = record_granularity or content.piece_duration
    horizon = int(math.ceil(content.duration / granularity - 1e-9))
    return PeerState(
        peer_id=peer_id,
        role=role,
        upload_capacity=upload_capacity,
        join_time=join_time,
        have=have,
        popularity_record=PopularityRecord.empty(granularity, horizon),
    )


def record_block(peer: PeerState, content: ContentSpec, piece: int, block: int) -> bool:
    """Mark a received block; True when it completes the piece.

    Duplicate blocks signal a scheduler bug and raise InvariantError.
    """
    if not 0 <= piece < content.num_pieces:
        raise ValueError(f"piece {piece} out of range")
    if peer.has_piece(piece):
        raise InvariantError(f"{peer.peer_id} received block for already complete piece {piece}")
    blocks = peer.partial.get(piece)
    if blocks is None:
        blocks = np.zeros(content.blocks_in_piece(piece), dtype=bool)
        peer.partial[piece] = blocks
    if not 0 <= block < blocks.shape[0]:
        raise ValueError(f"block {block} out of range for piece {piece}")
    if blocks[block]:
        raise InvariantError(f"{peer.peer_id} received duplicate block ({piece}, {block})")
    blocks[block] = True
    if blocks.all():
        peer.have[piece] = True
        del peer.partial[piece]
        return True
    return False


def rarest_first(
    peer: PeerState,
    neighbour_have_maps: Sequence[np.ndarray],
    rng: random.Random,
    among: np.ndarray | None = None,
) -> int | None:
    """Pick a missing piece with the fewest replicas among neighbours.

    `among` optionally restricts candidates (e.g. to the wanted region).
    Ties break uniformly at random with the run's generator. Returns None
    when no neighbour holds anything useful.
    """
    need = ~peer.have
    if among is not None:
        need = need & among
    if not need.any() or not neighbour_have_maps:
        return None
    replicas = np.zeros(peer.have.shape[0], dtype=np.int64)
    for have_map in neighbour_have_maps:
        replicas += have_map
    candidates = need & (replicas > 0)
    if not candidates.any():
        return None
    counts = np.where(candidates, replicas, np.iinfo(np.int64).max)
    best = counts.min()
    tied = np.flatnonzero(counts == best)
    return int(tied[rng.randrange(len(tied))])


def pipeline_requests(
    outstanding: int, pipeline_depth: int, candidate_blocks: Iterable[tuple[int, int]]
) -> list[tuple[int, int]]:
    """Blocks to request now so `pipeline_depth` stay outstanding.

    Takes from candidate_blocks until the pipeline is full or candidates
    run out.
    """
    want = pipeline_depth - outstanding
    if want <= 0:
        return []
    out = []
    for blk in candidate_blocks:
        out.append(blk)
        if len(out) >= want:
            break
    return out


@dataclass(frozen=True)
class SwarmConfig:
    """Protocol timing and sizing knobs."""

    unchoke_interval: float = 10.0
    optimistic_interval: float = 30.0
    neighbourhood_range: tuple[int, int] = (40, 80)
    neighbourhood_target: int | None = None
    neighbourhood_floor: int = 20
    pipeline_depth: int = 5
    regular_slot_count: int = 4
    optimistic_slot_count: int = 1
    tracker_list_size: int = 40
    tracker_update_interval: float = 1800.0

    def __post_init__(self):
        if self.unchoke_interval <= 0:
            raise ValueError("unchoke_interval must be positive")
        ratio = self.optimistic_interval / self.unchoke_interval
        if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise ValueError("optimistic_interval must be a multiple of the unchoke interval")
        lo, hi = self.neighbourhood_range
        if not 0 < lo <= hi:
            raise ValueError("invalid neighbourhood range")
        if self.neighbourhood_floor >= lo:
            raise ValueError("neighbourhood_floor must sit below the target range")
        if self.pipeline_depth <= 0:
            raise ValueError("pipeline_depth must be positive")
        if self.regular_slot_count < 0 or self.optimistic_slot_count < 0:
            raise ValueError("slot counts must be non-negative")
        if self.tracker_list_size <= 0:
            raise ValueError("tracker_list_size must be positive")
        if self.tracker_update_interval <= 0:
            raise ValueError("tracker_update_interval must be positive")

    @property
    def target(self) -> int:
        if self.neighbourhood_target is not None:
            return self.neighbourhood_target
        lo, hi = self.neighbourhood_range
        return (lo + hi) // 2

    @property
    def total_slots(self) -> int:
        return self.regular_slot_count + self.optimistic_slot_count


@dataclass(frozen=True)
class TrackerEntry:
    join_time: float
    last_update: float


@dataclass
class TrackerState:
    """Central registry of swarm members with join times."""

    update_interval: float = 1800.0
    list_size: int = 40
    registry: dict[str, TrackerEntry] = field(default_factory=dict)
    _last_join: float = field(default=-math.inf, repr=False)

    def join_time(self, peer_id: str) -> float:
        return self.registry[peer_id].join_time


def tracker_join(
    tracker: TrackerState, peer_id: str, now: float, rng: random.Random
) -> list[str]:
    """Register a peer and hand back a random list of other members."""
    if peer_id in tracker.registry:
        raise ValueError(f"{peer_id} already registered")
    if now < tracker._last_join:
        raise ValueError("join times must be non-decreasing")
    others = list(tracker.registry)
    sample = rng.sample(others, min(len(others), tracker.list_size))
    tracker.registry[peer_id] = TrackerEntry(join_time=now, last_update=now)
    tracker._last_join = now
    return sample


def tracker_refill(
    tracker: TrackerState, peer_id: str, exclude: set[str], rng: random.Random
) -> list[str]:
    """Fresh random candidates excluding the peer's current neighbours."""
    if peer_id not in tracker.registry:
        raise ValueError(f"{peer_id} is not registered")
    others = [p for p in tracker.registry if p != peer_id and p not in exclude]
    return rng.sample(others, min(len(others), tracker.list_size))


def tracker_leave(tracker: TrackerState, peer_id: str) -> None:
    tracker.registry.pop(peer_id, None)
