"""Deterministic discrete-event engine binding workloads, swarm state, and policies.

One run simulates a swarm serving a single object to interactive clients.
Each workload session becomes a leecher that joins at its first request,
downloads the pieces its requests cover, and departs when its session
ends. Transfers share each sender's upload capacity equally across its
busy slots, with completion events rescheduled whenever the share
changes. All randomness flows from one seeded generator, and events tie
on time through monotonically assigned sequence numbers, so a (config,
seed) pair reproduces the run byte for byte.
"""

from __future__ import annotations

import dataclasses
import enum
import heapq
import json
import math
import random
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, InvariantError
from .metrics import DispersionReport, PopularityRecord, make_report, merge_records
from .policies import (
    CandidateInfo,
    PolicyKind,
    PolicySpec,
    baseline_request_target,
    capacity_check_and_reselect,
    optimistic_unchoke,
    select_neighbors_greedy,
    tit_for_tat_unchoke,
)
from .swarm import (
    ContentSpec,
    PeerRole,
    PeerState,
    SwarmConfig,
    TrackerState,
    new_peer,
    pipeline_requests,
    rarest_first,
    record_block,
    tracker_join,
    tracker_leave,
    tracker_refill,
)
from .workload import (
    GeneratorConfig,
    Request,
    Session,
    Workload,
    classify_session,
    generate_workload,
)

_EPS = 1e-9

_YANG_KINDS = (
    PolicyKind.LLP,
    PolicyKind.LRP,
    PolicyKind.TRACKER_CLOSEST,
    PolicyKind.YNP,
    PolicyKind.CNP,
)


class EventKind(enum.Enum):
    PEER_ARRIVAL = "peer_arrival"
    REQUEST_ISSUED = "request_issued"
    BLOCK_TRANSFER_COMPLETE = "block_transfer_complete"
    UNCHOKE_TICK = "unchoke_tick"
    OPTIMISTIC_TICK = "optimistic_tick"
    PLAYBACK_TICK = "playback_tick"
    TRACKER_UPDATE = "tracker_update"
    PEER_DEPARTURE = "peer_departure"


@dataclass(frozen=True)
class CapacityClass:
    rate: float
    fraction: float


@dataclass(frozen=True)
class SimConfig:
    """Everything one simulation run needs.

    The run seed governs all randomness. When the workload is a
    GeneratorConfig, its seed field is replaced by a value derived from
    the run seed, so distinct seeds see distinct workloads while runs
    with equal seeds (e.g. two policies under comparison) share one.
    """

    content: ContentSpec
    swarm: SwarmConfig
    policy: PolicySpec
    workload: Workload | GeneratorConfig
    capacity_classes: tuple[CapacityClass, ...]
    seed: int
    horizon: float
    initial_seeds: int = 1
    startup_pieces: int = 1
    linger_as_seed_fraction: float = 0.0
    record_events: bool = False
    check_invariants: bool = False

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.initial_seeds < 1:
            raise ConfigError("at least one initial seed is required")
        if self.startup_pieces < 1:
            raise ConfigError("startup_pieces must be >= 1")
        if not 0.0 <= self.linger_as_seed_fraction <= 1.0:
            raise ConfigError("linger_as_seed_fraction must lie in [0, 1]")
        if not self.capacity_classes:
            raise ConfigError("at least one capacity class is required")
        total = 0.0
        for cc in self.capacity_classes:
            if cc.rate <= 0:
                raise ConfigError("capacity class rates must be positive")
            if cc.fraction < 0:
                raise ConfigError("capacity class fractions must be non-negative")
            total += cc.fraction
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"capacity fractions must sum to 1, got {total}")
        length = (
            self.workload.object_length
            if isinstance(self.workload, (Workload, GeneratorConfig))
            else None
        )
        if length is not None and length > self.content.duration + _EPS:
            raise ConfigError(
                "workload object_length exceeds the content duration implied by the content spec"
            )


# ---------------------------------------------------------------------------
# QoS primitives


def continuity_index(deadlines: Sequence[float], arrivals: Sequence[float | None]) -> float:
    """Fraction of pieces that arrived no later than their deadline."""
    if len(deadlines) != len(arrivals):
        raise ValueError("deadline and arrival sequences must align")
    if not deadlines:
        raise ValueError("continuity undefined for an empty playback path")
    on_time = sum(
        1
        for due, arr in zip(deadlines, arrivals)
        if arr is not None and arr <= due + _EPS
    )
    return on_time / len(deadlines)


def fairness(rates: Sequence[float]) -> float:
    """Jain index of the per-peer rates: (sum x)^2 / (n * sum x^2)."""
    if not rates:
        raise ValueError("fairness needs at least one peer")
    if all(r == 0 for r in rates):
        raise ValueError("fairness undefined when every rate is zero")
    total = sum(rates)
    squares = sum(r * r for r in rates)
    return (total * total) / (len(rates) * squares)


def _merge_intervals(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    if not intervals:
        return []
    intervals.sort()
    merged = [intervals[0]]
    for start, end in intervals[1:]:
        last_start, last_end = merged[-1]
        if start <= last_end + _EPS:
            merged[-1] = (last_start, max(last_end, end))
        else:
            merged.append((start, end))
    return merged


@dataclass(frozen=True)
class PlaybackReport:
    """Deadline bookkeeping for one session against recorded piece arrivals."""

    play_starts: tuple[float | None, ...]
    pieces_due: int
    pieces_on_time: int
    stall_intervals: tuple[tuple[float, float], ...]

    @property
    def continuity_index(self) -> float:
        if self.pieces_due == 0:
            return 1.0
        return self.pieces_on_time / self.pieces_due

    @property
    def interruption_count(self) -> int:
        return len(self.stall_intervals)

    @property
    def mean_time_to_return(self) -> float:
        if not self.stall_intervals:
            return 0.0
        return sum(e - s for s, e in self.stall_intervals) / len(self.stall_intervals)


def playback_model(
    requests: Sequence[Request],
    piece_arrivals: Mapping[int, float],
    content: ContentSpec,
    *,
    startup_pieces: int = 1,
    end_time: float = math.inf,
) -> PlaybackReport:
    """Walk a session's playback against recorded piece arrival times.

    Each request opens a playback window that closes at the next request
    (a jump resets the deadline frontier) or at end_time. Playback of a
    request starts once its region's first startup_pieces pieces are all
    present; piece k of the region is then due a fixed piece duration
    after its predecessor. A piece missing at its deadline opens a stall
    that closes when the piece arrives, at the window edge at the latest.
    """
    pd = content.piece_duration
    play_starts: list[float | None] = []
    due_total = 0
    due_on_time = 0
    stalls: list[tuple[float, float]] = []

    for idx, req in enumerate(requests):
        window_end = end_time
        if idx + 1 < len(requests):
            window_end = min(window_end, requests[idx + 1].arrival_time)
        region = content.pieces_for_interval(req.start_pos, req.end_pos)
        if len(region) == 0:
            play_starts.append(req.arrival_time if req.arrival_time < window_end else None)
            continue
        lead = list(region)[: min(startup_pieces, len(region))]
        start = req.arrival_time
        startable = True
        for k in lead:
            arr = piece_arrivals.get(k)
            if arr is None:
                startable = False
                break
            start = max(start, arr)
        if not startable or start >= window_end - _EPS:
            play_starts.append(None)
            continue
        play_starts.append(start)
        request_stalls: list[tuple[float, float]] = []
        for j, k in enumerate(region):
            due = start + j * pd
            if due >= window_end - _EPS:
                break
            due_total += 1
            arr = piece_arrivals.get(k)
            if arr is not None and arr <= due + _EPS:
                due_on_time += 1
            else:
                stall_end = window_end if arr is None else min(arr, window_end)
                if stall_end > due:
                    request_stalls.append((due, stall_end))
        stalls.extend(_merge_intervals(request_stalls))

    return PlaybackReport(
        play_starts=tuple(play_starts),
        pieces_due=due_total,
        pieces_on_time=due_on_time,
        stall_intervals=tuple(stalls),
    )


# ---------------------------------------------------------------------------
# Engine internals


class _Transfer:
    __slots__ = (
        "sender",
        "receiver",
        "piece",
        "block",
        "nbytes",
        "remaining",
        "rate",
        "t_last",
        "version",
        "cancelled",
    )

    def __init__(self, sender: str, receiver: str, piece: int, block: int, nbytes: int):
        self.sender = sender
        self.receiver = receiver
        self.piece = piece
        self.block = block
        self.nbytes = nbytes
        self.remaining = float(nbytes)
        self.rate = 0.0
        self.t_last = 0.0
        self.version = 0
        self.cancelled = False


class _Channel:
    __slots__ = ("queue", "current")

    def __init__(self):
        self.queue: deque[tuple[int, int]] = deque()
        self.current: _Transfer | None = None


class _RunPeer:
    """Engine-side runtime wrapper around a protocol PeerState."""

    def __init__(self, state: PeerState, session: Session | None):
        self.state = state
        self.session = session
        self.joined = False
        self.alive = False
        self.lingering = False
        self.qos_cutoff: float | None = None
        # upload side
        self.channels: dict[str, _Channel] = {}
        self.sent_window: dict[str, int] = {}
        self.forward_accum: dict[str, int] = {}
        self.forward_snapshot: dict[str, int] = {}
        # download side
        self.unchoked_by: set[str] = set()
        self.outstanding: dict[str, set[tuple[int, int]]] = {}
        self.inflight: set[tuple[int, int]] = set()
        self.piece_owner: dict[int, str] = {}
        self.assigned_to: dict[str, set[int]] = {}
        self.recv_window: dict[str, int] = {}
        self.block_source: dict[tuple[int, int], str] = {}
        self.requests_sent: dict[str, int] = {}
        self.wanted = np.zeros(state.have.shape[0], dtype=bool)
        # session progress
        self.requests_made = 0
        self.current_req = -1
        self.pending_start = False
        self.playback_version = 0
        self.play_starts_live: list[float | None] = []
        # accounting
        self.uploaded = 0
        self.downloaded = 0
        self.piece_arrival: dict[int, float] = {}
        self.first_piece_time: float | None = None
        self.formation: DispersionReport | None = None

    @property
    def peer_id(self) -> str:
        return self.state.peer_id

    def unchokes(self, other: str) -> bool:
        return other in self.state.regular_slots or self.state.optimistic_slot == other

    def unchoked_set(self) -> set[str]:
        out = set(self.state.regular_slots)
        if self.state.optimistic_slot is not None:
            out.add(self.state.optimistic_slot)
        return out


@dataclass(frozen=True)
class PeerQoS:
    continuity_index: float
    startup_delay: float
    bootstrap_time: float
    mean_time_to_return: float
    interruption_count: int
    total_download_time: float
    link_utilization: float
    downloaded_bytes: int
    uploaded_bytes: int
    download_rate: float
    formation: dict | None

    def to_dict(self) -> dict:
        return {
            "continuity_index": self.continuity_index,
            "startup_delay": self.startup_delay,
            "bootstrap_time": self.bootstrap_time,
            "mean_time_to_return": self.mean_time_to_return,
            "interruption_count": self.interruption_count,
            "total_download_time": self.total_download_time,
            "link_utilization": self.link_utilization,
            "downloaded_bytes": self.downloaded_bytes,
            "uploaded_bytes": self.uploaded_bytes,
            "download_rate": self.download_rate,
            "formation": self.formation,
        }


@dataclass(frozen=True)
class QoSReport:
    seed: int
    policy: str
    horizon: float
    peer_count: int
    leecher_count: int
    aggregate: dict
    per_peer: dict[str, PeerQoS]

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "policy": self.policy,
            "horizon": self.horizon,
            "peer_count": self.peer_count,
            "leecher_count": self.leecher_count,
            "aggregate": self.aggregate,
            "per_peer": {pid: q.to_dict() for pid, q in sorted(self.per_peer.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"


@dataclass(frozen=True)
class RunResult:
    report: QoSReport
    events: list[dict] | None


def event_log_lines(events: Iterable[dict]) -> str:
    """Newline-delimited JSON records of the event log."""
    return "".join(json.dumps(e) + "\n" for e in events)


class _Engine:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.content = cfg.content
        self.swarm = cfg.swarm
        root = random.Random(cfg.seed)
        self.workload_seed = root.getrandbits(63)
        self.rng = random.Random(root.getrandbits(63))
        self.now = 0.0
        self.seq = 0
        self.heap: list = []
        self.peers: dict[str, _RunPeer] = {}
        self.tracker = TrackerState(
            update_interval=cfg.swarm.tracker_update_interval,
            list_size=cfg.swarm.tracker_list_size,
        )
        self.total_uploaded = 0
        self.total_downloaded = 0
        self.events: list[dict] | None = [] if cfg.record_events else None
        self.granularity = self.content.piece_duration

        wl = cfg.workload
        if isinstance(wl, GeneratorConfig):
            wl = generate_workload(dataclasses.replace(wl, seed=self.workload_seed))
        self.workload: Workload = wl

    # -- scheduling ---------------------------------------------------------

    def _schedule(self, t: float, kind: EventKind, payload: tuple) -> None:
        heapq.heappush(self.heap, (t, self.seq, kind, payload))
        self.seq += 1

    def _log(self, kind: EventKind, actor: str | None, **detail) -> None:
        if self.events is not None:
            self.events.append(
                {"time": self.now, "kind": kind.value, "actor": actor, **detail}
            )

    def setup(self) -> None:
        cfg = self.cfg
        cap_rng = random.Random(self.rng.getrandbits(63))
        num_seeds = cfg.initial_seeds
        width = max(2, len(str(num_seeds)))
        for i in range(num_seeds):
            pid = f"seed{i:0{width}d}"
            state = new_peer(
                pid, PeerRole.SEED, self._draw_capacity(cap_rng), 0.0, self.content
            )
            self.peers[pid] = _RunPeer(state, None)
            self._schedule(0.0, EventKind.PEER_ARRIVAL, (pid,))

        for session in self.workload.sessions:
            pid = session.client_id
            if pid in self.peers:
                raise ConfigError(f"duplicate client id {pid}")
            first = session.requests[0].arrival_time
            state = new_peer(
                pid, PeerRole.LEECHER, self._draw_capacity(cap_rng), first, self.content
            )
            peer = _RunPeer(state, session)
            self.peers[pid] = peer
            self._schedule(first, EventKind.PEER_ARRIVAL, (pid,))
            for idx, req in enumerate(session.requests):
                self._schedule(req.arrival_time, EventKind.REQUEST_ISSUED, (pid, idx))
            last = session.requests[-1]
            self._schedule(
                last.arrival_time + last.duration, EventKind.PEER_DEPARTURE, (pid,)
            )

        self._schedule(self.swarm.unchoke_interval, EventKind.UNCHOKE_TICK, ())
        self._schedule(self.swarm.optimistic_interval, EventKind.OPTIMISTIC_TICK, ())
        self._schedule(self.tracker.update_interval, EventKind.TRACKER_UPDATE, ())

    def _draw_capacity(self, rng: random.Random) -> float:
        u = rng.random()
        acc = 0.0
        for cc in self.cfg.capacity_classes:
            acc += cc.fraction
            if u <= acc + _EPS:
                return cc.rate
        return self.cfg.capacity_classes[-1].rate

    def loop(self) -> None:
        horizon = self.cfg.horizon
        while self.heap:
            t, _, kind, payload = heapq.heappop(self.heap)
            if t > horizon + _EPS:
                break
            self.now = t
            handled = self._dispatch(kind, payload)
            if handled and self.cfg.check_invariants:
                self._check_invariants()
        self.now = min(self.now, horizon)

    def _dispatch(self, kind: EventKind, payload: tuple) -> bool:
        if kind is EventKind.PEER_ARRIVAL:
            return self._on_arrival(*payload)
        if kind is EventKind.REQUEST_ISSUED:
            return self._on_request(*payload)
        if kind is EventKind.BLOCK_TRANSFER_COMPLETE:
            return self._on_block_complete(*payload)
        if kind is EventKind.UNCHOKE_TICK:
            return self._on_unchoke_tick()
        if kind is EventKind.OPTIMISTIC_TICK:
            return self._on_optimistic_tick()
        if kind is EventKind.PLAYBACK_TICK:
            return self._on_playback_tick(*payload)
        if kind is EventKind.TRACKER_UPDATE:
            return self._on_tracker_update()
        if kind is EventKind.PEER_DEPARTURE:
            return self._on_departure(*payload)
        raise InvariantError(f"unhandled event kind {kind}")

    # -- peer lifecycle -----------------------------------------------------

    def _alive_ids(self) -> list[str]:
        return sorted(pid for pid, p in self.peers.items() if p.alive)

    def _on_arrival(self, pid: str) -> bool:
        peer = self.peers[pid]
        peer.joined = True
        peer.alive = True
        candidates = tracker_join(self.tracker, pid, self.now, self.rng)
        candidates = [c for c in candidates if self.peers[c].alive]
        if peer.session is not None:
            first = peer.session.requests[0]
            self._record_request_coverage(peer, first)
            peer.requests_made = 1
        selected = self._form_neighbourhood(peer, candidates)
        for other in selected:
            self._connect(peer, self.peers[other])
        self._log(EventKind.PEER_ARRIVAL, pid, neighbours=sorted(selected))
        return True

    def _request_rate(self, peer: _RunPeer) -> float:
        """Requests per object duration, floored at one elapsed duration."""
        elapsed = max(self.now - peer.state.join_time, 0.0)
        spans = max(elapsed / self.content.duration, 1.0)
        return peer.requests_made / spans

    def _candidate_info(self, peer: _RunPeer, requester: _RunPeer | None = None) -> CandidateInfo:
        st = peer.state
        queue_len = sum(
            len(ch.queue) + (1 if ch.current else 0) for ch in peer.channels.values()
        )
        fwd_window = self.swarm.optimistic_interval
        return CandidateInfo(
            peer_id=st.peer_id,
            popularity_record=PopularityRecord(
                self.granularity, st.popularity_record.counts.copy()
            ),
            request_rate=self._request_rate(peer),
            join_time=st.join_time,
            has_started=st.has_started(),
            buffer_summary=st.have.copy(),
            queue_length=queue_len,
            requests_sent_to=(
                requester.requests_sent.get(st.peer_id, 0) if requester else 0
            ),
            recent_forward_rate=sum(peer.forward_snapshot.values()) / fwd_window,
        )

    def _form_neighbourhood(self, peer: _RunPeer, candidates: list[str]) -> list[str]:
        target = self.swarm.target
        if not candidates or target == 0:
            return []
        if (
            self.cfg.policy.kind is PolicyKind.DISPERSION_GREEDY
            and peer.session is not None
        ):
            infos = [self._candidate_info(self.peers[c]) for c in candidates]
            own = PopularityRecord(
                self.granularity, peer.state.popularity_record.counts.copy()
            )
            hint = classify_session(peer.session, self.workload.object_length)
            outcome = select_neighbors_greedy(own, infos, target, hint)
            expected = {
                c: self.peers[c].state.upload_capacity
                / max(1, self.swarm.regular_slot_count)
                for c in candidates
            }
            outcome = capacity_check_and_reselect(
                outcome,
                own,
                infos,
                expected,
                self.content.playback_rate,
                target,
                hint,
            )
            selected = list(outcome.selected)
        else:
            selected = self.rng.sample(candidates, min(target, len(candidates)))
        if peer.session is not None:
            peer.formation = self._formation_report(peer, selected)
        return selected

    def _formation_report(self, peer: _RunPeer, selected: list[str]) -> DispersionReport | None:
        records = [peer.state.popularity_record] + [
            self.peers[s].state.popularity_record for s in selected
        ]
        merged = merge_records(
            records, granularity=self.granularity, horizon=records[0].horizon
        )
        if merged.mass == 0:
            return None
        return make_report(merged, self._request_rate(peer))

    def _connect(self, a: _RunPeer, b: _RunPeer) -> None:
        if a.peer_id == b.peer_id:
            return
        a.state.neighbourhood.add(b.peer_id)
        b.state.neighbourhood.add(a.peer_id)

    def _refill_neighbourhood(self, peer: _RunPeer) -> None:
        fresh = tracker_refill(
            self.tracker, peer.peer_id, peer.state.neighbourhood, self.rng
        )
        needed = self.swarm.target - len(peer.state.neighbourhood)
        for other in fresh[: max(needed, 0)]:
            self._connect(peer, self.peers[other])

    def _on_departure(self, pid: str) -> bool:
        peer = self.peers[pid]
        if not peer.alive or peer.lingering:
            return False
        peer.qos_cutoff = self.now
        if (
            peer.session is not None
            and self.cfg.linger_as_seed_fraction > 0
            and self.rng.random() < self.cfg.linger_as_seed_fraction
        ):
            # Stays as an uploader of what it holds; stops requesting.
            peer.lingering = True
            peer.wanted[:] = False
            self._cancel_downloads(peer)
            self._log(EventKind.PEER_DEPARTURE, pid, lingering=True)
            return True
        peer.alive = False
        tracker_leave(self.tracker, pid)
        self._cancel_downloads(peer)
        self._cancel_uploads(peer)
        for nid in sorted(peer.state.neighbourhood):
            other = self.peers.get(nid)
            if other is None or not other.alive:
                continue
            other.state.neighbourhood.discard(pid)
            other.state.regular_slots.discard(pid)
            if other.state.optimistic_slot == pid:
                other.state.optimistic_slot = None
            alive_neigh = sum(
                1 for n in other.state.neighbourhood if self.peers[n].alive
            )
            if alive_neigh < self.swarm.neighbourhood_floor:
                self._refill_neighbourhood(other)
        peer.state.neighbourhood.clear()
        self._log(EventKind.PEER_DEPARTURE, pid, lingering=False)
        return True

    def _cancel_downloads(self, peer: _RunPeer) -> None:
        """Drop this peer's pending requests and in-flight inbound blocks."""
        for uid in sorted(peer.unchoked_by):
            up = self.peers[uid]
            ch = up.channels.pop(peer.peer_id, None)
            if ch is not None:
                ch.queue.clear()
                if ch.current is not None:
                    ch.current.cancelled = True
                    ch.current = None
                    self._reshare_sender(up)
        peer.unchoked_by.clear()
        peer.outstanding.clear()
        peer.inflight.clear()
        peer.piece_owner.clear()
        peer.assigned_to.clear()

    def _cancel_uploads(self, peer: _RunPeer) -> None:
        for rid, ch in sorted(peer.channels.items()):
            dl = self.peers[rid]
            for blk in ch.queue:
                dl.outstanding.get(peer.peer_id, set()).discard(blk)
                dl.inflight.discard(blk)
            ch.queue.clear()
            if ch.current is not None:
                ch.current.cancelled = True
                blk = (ch.current.piece, ch.current.block)
                dl.outstanding.get(peer.peer_id, set()).discard(blk)
                dl.inflight.discard(blk)
                ch.current = None
            dl.unchoked_by.discard(peer.peer_id)
            dl.outstanding.pop(peer.peer_id, None)
            for piece in dl.assigned_to.pop(peer.peer_id, set()):
                dl.piece_owner.pop(piece, None)
        peer.channels.clear()
        peer.state.regular_slots.clear()
        peer.state.optimistic_slot = None

    # -- requests and playback ----------------------------------------------

    def _record_request_coverage(self, peer: _RunPeer, req: Request) -> None:
        record = peer.state.popularity_record
        lo, hi = kernels.bin_span(req.start_pos, req.end_pos, self.granularity, record.horizon)
        if hi > lo:
            record.counts[lo:hi] += 1

    def _on_request(self, pid: str, idx: int) -> bool:
        peer = self.peers[pid]
        if not peer.alive or peer.lingering or peer.session is None:
            return False
        if peer.state.is_seed:
            raise InvariantError(f"seed {pid} issued a content request")
        req = peer.session.requests[idx]
        if idx > 0:
            self._record_request_coverage(peer, req)
            peer.requests_made += 1
        peer.current_req = idx
        peer.playback_version += 1
        peer.pending_start = False
        while len(peer.play_starts_live) <= idx:
            peer.play_starts_live.append(None)
        region = self.content.pieces_for_interval(req.start_pos, req.end_pos)
        peer.wanted[:] = False
        if len(region) > 0:
            peer.wanted[region.start : region.stop] = True
            peer.wanted &= ~peer.state.have
            peer.pending_start = True
            self._try_start_playback(peer)
        for uid in sorted(peer.unchoked_by):
            self._fill_pipeline(peer, self.peers[uid])
        self._log(
            EventKind.REQUEST_ISSUED,
            pid,
            index=idx,
            start=req.start_pos,
            end=req.end_pos,
        )
        return True

    def _current_region(self, peer: _RunPeer) -> range:
        req = peer.session.requests[peer.current_req]
        return self.content.pieces_for_interval(req.start_pos, req.end_pos)

    def _try_start_playback(self, peer: _RunPeer) -> None:
        if not peer.pending_start:
            return
        region = self._current_region(peer)
        lead = list(region)[: min(self.cfg.startup_pieces, len(region))]
        if not all(peer.state.has_piece(k) for k in lead):
            return
        peer.pending_start = False
        peer.play_starts_live[peer.current_req] = self.now
        if self.cfg.policy.kind is PolicyKind.PER_PIECE_OPTIMISTIC:
            self._schedule_playback_ticks(peer, region)

    def _schedule_playback_ticks(self, peer: _RunPeer, region: range) -> None:
        pd = self.content.piece_duration
        start = self.now
        window_end = self.cfg.horizon
        idx = peer.current_req
        if idx + 1 < len(peer.session.requests):
            window_end = min(window_end, peer.session.requests[idx + 1].arrival_time)
        for j, k in enumerate(region):
            due = start + j * pd
            if due >= window_end - _EPS:
                break
            self._schedule(
                due, EventKind.PLAYBACK_TICK, (peer.peer_id, peer.playback_version, k, due)
            )

    def _on_playback_tick(self, pid: str, version: int, piece: int, due: float) -> bool:
        peer = self.peers[pid]
        if not peer.alive or version != peer.playback_version:
            return False
        if peer.state.has_piece(piece):
            # Piece consumed on time: the play-triggered variant re-rolls
            # this peer's optimistic slot at every played piece.
            self._reoptimistic(peer)
            self._log(EventKind.PLAYBACK_TICK, pid, piece=piece, due=due)
            return True
        return False

    # -- neighbour interest and unchoking ------------------------------------

    def _interested_in(self, wanting: _RunPeer, holder: _RunPeer) -> bool:
        return bool(np.any(wanting.wanted & holder.state.have))

    def _rank_rates(self, peer: _RunPeer, interested: list[str]) -> dict[str, float]:
        delta = self.swarm.unchoke_interval
        if peer.state.is_seed or peer.lingering:
            return {n: peer.sent_window.get(n, 0) / delta for n in interested}
        if self.cfg.policy.kind is PolicyKind.GIVE_TO_GET:
            window = self.swarm.optimistic_interval
            return {
                n: self.peers[n].forward_snapshot.get(peer.peer_id, 0) / window
                for n in interested
            }
        return {n: peer.recv_window.get(n, 0) / delta for n in interested}

    def _on_unchoke_tick(self) -> bool:
        for pid in self._alive_ids():
            peer = self.peers[pid]
            interested = [
                n
                for n in sorted(peer.state.neighbourhood)
                if self.peers[n].alive and self._interested_in(self.peers[n], peer)
            ]
            rates = self._rank_rates(peer, interested)
            peer.state.download_rate_history = dict(rates)
            regular = tit_for_tat_unchoke(rates, self.swarm.regular_slot_count)
            old = peer.unchoked_set()
            peer.state.regular_slots = set(regular)
            if peer.state.optimistic_slot in peer.state.regular_slots:
                peer.state.optimistic_slot = None
            if peer.state.optimistic_slot is not None:
                opt = peer.state.optimistic_slot
                if not self.peers[opt].alive or opt not in peer.state.neighbourhood:
                    peer.state.optimistic_slot = None
            self._apply_slot_diff(peer, old, peer.unchoked_set())
        for p in self.peers.values():
            p.recv_window.clear()
            p.sent_window.clear()
        self._log(EventKind.UNCHOKE_TICK, None)
        next_t = self.now + self.swarm.unchoke_interval
        if next_t <= self.cfg.horizon + _EPS:
            self._schedule(next_t, EventKind.UNCHOKE_TICK, ())
        return True

    def _reoptimistic(self, peer: _RunPeer) -> None:
        if self.swarm.optimistic_slot_count == 0:
            return
        choked = [
            n
            for n in sorted(peer.state.neighbourhood)
            if self.peers[n].alive
            and n not in peer.state.regular_slots
            and self._interested_in(self.peers[n], peer)
        ]
        pick = optimistic_unchoke(choked, self.rng)
        old = peer.unchoked_set()
        peer.state.optimistic_slot = pick
        self._apply_slot_diff(peer, old, peer.unchoked_set())

    def _on_optimistic_tick(self) -> bool:
        for pid in self._alive_ids():
            self._reoptimistic(self.peers[pid])
        for p in self.peers.values():
            p.forward_snapshot = dict(p.forward_accum)
            p.forward_accum.clear()
            p.state.forward_rate_history = {
                k: v / self.swarm.optimistic_interval for k, v in p.forward_snapshot.items()
            }
        self._log(EventKind.OPTIMISTIC_TICK, None)
        next_t = self.now + self.swarm.optimistic_interval
        if next_t <= self.cfg.horizon + _EPS:
            self._schedule(next_t, EventKind.OPTIMISTIC_TICK, ())
        return True

    def _apply_slot_diff(self, peer: _RunPeer, old: set[str], new: set[str]) -> None:
        for rid in sorted(old - new):
            dl = self.peers.get(rid)
            ch = peer.channels.get(rid)
            if ch is not None:
                for blk in ch.queue:
                    if dl is not None:
                        dl.outstanding.get(peer.peer_id, set()).discard(blk)
                        dl.inflight.discard(blk)
                ch.queue.clear()
                if ch.current is None:
                    peer.channels.pop(rid, None)
            if dl is not None:
                dl.unchoked_by.discard(peer.peer_id)
                dl.outstanding.pop(peer.peer_id, None)
                for piece in dl.assigned_to.pop(peer.peer_id, set()):
                    dl.piece_owner.pop(piece, None)
        for rid in sorted(new - old):
            dl = self.peers.get(rid)
            if dl is None or not dl.alive:
                continue
            dl.unchoked_by.add(peer.peer_id)
            self._fill_pipeline(dl, peer)

    def _on_tracker_update(self) -> bool:
        for pid in self._alive_ids():
            peer = self.peers[pid]
            entry = self.tracker.registry.get(pid)
            if entry is not None:
                self.tracker.registry[pid] = dataclasses.replace(
                    entry, last_update=self.now
                )
            alive_neigh = sum(1 for n in peer.state.neighbourhood if self.peers[n].alive)
            if alive_neigh < self.swarm.neighbourhood_floor:
                self._refill_neighbourhood(peer)
        self._log(EventKind.TRACKER_UPDATE, None)
        next_t = self.now + self.tracker.update_interval
        if next_t <= self.cfg.horizon + _EPS:
            self._schedule(next_t, EventKind.TRACKER_UPDATE, ())
        return True

    # -- block transfer machinery ---------------------------------------------

    def _missing_blocks(self, peer: _RunPeer, piece: int):
        part = peer.state.partial.get(piece)
        if part is None:
            blocks = range(self.content.blocks_in_piece(piece))
        else:
            blocks = [int(b) for b in np.flatnonzero(~part)]
        for b in blocks:
            if (piece, b) not in peer.inflight:
                yield (piece, b)

    def _pick_new_piece(self, dl: _RunPeer, up: _RunPeer) -> int | None:
        avail = dl.wanted & up.state.have
        if dl.piece_owner:
            assigned = np.fromiter(dl.piece_owner.keys(), dtype=np.int64)
            avail[assigned] = False
        if not avail.any():
            return None
        neighbour_maps = [
            self.peers[n].state.have
            for n in sorted(dl.state.neighbourhood)
            if self.peers[n].alive
        ]
        piece = rarest_first(dl.state, neighbour_maps, self.rng, among=avail)
        if piece is None:
            return None
        if self.cfg.policy.kind in _YANG_KINDS:
            holders = [
                self._candidate_info(self.peers[u], requester=dl)
                for u in sorted(dl.unchoked_by)
                if self.peers[u].alive and self.peers[u].state.has_piece(piece)
            ]
            if holders:
                target = baseline_request_target(
                    self.cfg.policy, piece, holders, dl.state.join_time, self.rng
                )
                if target != up.peer_id:
                    return None
        return piece

    def _candidate_blocks(self, dl: _RunPeer, up: _RunPeer):
        for piece in sorted(dl.assigned_to.get(up.peer_id, ())):
            yield from self._missing_blocks(dl, piece)
        while True:
            piece = self._pick_new_piece(dl, up)
            if piece is None:
                return
            dl.piece_owner[piece] = up.peer_id
            dl.assigned_to.setdefault(up.peer_id, set()).add(piece)
            yielded = False
            for blk in self._missing_blocks(dl, piece):
                yielded = True
                yield blk
            if not yielded:
                return

    def _fill_pipeline(self, dl: _RunPeer, up: _RunPeer) -> None:
        if not dl.alive or not up.alive or dl.state.is_seed or dl.lingering:
            return
        if not up.unchokes(dl.peer_id):
            return
        outst = dl.outstanding.setdefault(up.peer_id, set())
        new = pipeline_requests(
            len(outst), self.swarm.pipeline_depth, self._candidate_blocks(dl, up)
        )
        if not new:
            return
        ch = up.channels.get(dl.peer_id)
        if ch is None:
            ch = up.channels[dl.peer_id] = _Channel()
        for blk in new:
            outst.add(blk)
            dl.inflight.add(blk)
            dl.requests_sent[up.peer_id] = dl.requests_sent.get(up.peer_id, 0) + 1
            ch.queue.append(blk)
        if ch.current is None:
            self._service_channel(up, dl.peer_id)

    def _service_channel(self, up: _RunPeer, rid: str) -> None:
        ch = up.channels.get(rid)
        if ch is None or ch.current is not None or not ch.queue:
            return
        piece, block = ch.queue.popleft()
        if not up.state.has_piece(piece):
            raise InvariantError(
                f"{up.peer_id} asked to serve incomplete piece {piece}"
            )
        tr = _Transfer(up.peer_id, rid, piece, block, self.content.block_length(piece, block))
        tr.t_last = self.now
        ch.current = tr
        self._reshare_sender(up)

    def _reshare_sender(self, up: _RunPeer) -> None:
        active = [ch.current for ch in up.channels.values() if ch.current is not None]
        if not active:
            return
        share = up.state.upload_capacity / len(active)
        for tr in sorted(active, key=lambda t: t.receiver):
            elapsed = self.now - tr.t_last
            if elapsed > 0 and tr.rate > 0:
                tr.remaining = max(tr.remaining - tr.rate * elapsed, 0.0)
            tr.t_last = self.now
            tr.rate = share
            tr.version += 1
            eta = self.now + tr.remaining / share
            self._schedule(eta, EventKind.BLOCK_TRANSFER_COMPLETE, (tr, tr.version))

    def _on_block_complete(self, tr: _Transfer, version: int) -> bool:
        if tr.cancelled or version != tr.version:
            return False
        up = self.peers[tr.sender]
        dl = self.peers[tr.receiver]
        ch = up.channels.get(tr.receiver)
        if ch is not None and ch.current is tr:
            ch.current = None
        blk = (tr.piece, tr.block)
        if dl.alive:
            nbytes = tr.nbytes
            up.uploaded += nbytes
            dl.downloaded += nbytes
            self.total_uploaded += nbytes
            self.total_downloaded += nbytes
            up.sent_window[dl.peer_id] = up.sent_window.get(dl.peer_id, 0) + nbytes
            dl.recv_window[up.peer_id] = dl.recv_window.get(up.peer_id, 0) + nbytes
            origin = up.block_source.get(blk)
            if origin is not None and origin != dl.peer_id:
                up.forward_accum[origin] = up.forward_accum.get(origin, 0) + nbytes
            dl.block_source[blk] = up.peer_id
            dl.outstanding.get(up.peer_id, set()).discard(blk)
            dl.inflight.discard(blk)
            completed = record_block(dl.state, self.content, tr.piece, tr.block)
            self._log(
                EventKind.BLOCK_TRANSFER_COMPLETE,
                tr.receiver,
                sender=tr.sender,
                piece=tr.piece,
                block=tr.block,
                completed=completed,
            )
            if completed:
                self._on_piece_complete(dl, up, tr.piece)
            self._fill_pipeline(dl, up)
        if ch is not None and ch.current is None:
            self._service_channel(up, tr.receiver)
            if ch.current is None:
                if not ch.queue:
                    up.channels.pop(tr.receiver, None)
                self._reshare_sender(up)
        return True

    def _on_piece_complete(self, dl: _RunPeer, up: _RunPeer, piece: int) -> None:
        dl.piece_arrival[piece] = self.now
        if dl.first_piece_time is None:
            dl.first_piece_time = self.now
        dl.wanted[piece] = False
        owner = dl.piece_owner.pop(piece, None)
        if owner is not None:
            dl.assigned_to.get(owner, set()).discard(piece)
        self._try_start_playback(dl)
        if (
            self.cfg.policy.kind is PolicyKind.PER_PIECE_OPTIMISTIC
            and dl.current_req >= 0
            and dl.play_starts_live[dl.current_req] is not None
        ):
            region = self._current_region(dl)
            if region.start <= piece < region.stop:
                due = dl.play_starts_live[dl.current_req] + (
                    piece - region.start
                ) * self.content.piece_duration
                if due <= self.now + _EPS:
                    # Late piece consumed on arrival counts as played.
                    self._reoptimistic(dl)

    # -- invariants -----------------------------------------------------------

    def _check_invariants(self) -> None:
        if self.total_uploaded != self.total_downloaded:
            raise InvariantError(
                f"byte conservation broken: up={self.total_uploaded} down={self.total_downloaded}"
            )
        for pid, peer in self.peers.items():
            if not peer.alive:
                continue
            st = peer.state
            if len(st.regular_slots) > self.swarm.regular_slot_count:
                raise InvariantError(f"{pid} exceeds regular slot cap")
            extra = 1 if st.optimistic_slot is not None else 0
            if st.optimistic_slot in st.regular_slots:
                raise InvariantError(f"{pid} optimistic slot duplicates a regular slot")
            if len(st.regular_slots) + extra > self.swarm.total_slots:
                raise InvariantError(f"{pid} exceeds total slot cap")
            if st.is_seed and (peer.inflight or peer.outstanding):
                raise InvariantError(f"seed {pid} has outstanding requests")
            if st.is_seed and not st.have.all():
                raise InvariantError(f"seed {pid} lost pieces")

    # -- reporting -------------------------------------------------------------

    def build_report(self) -> QoSReport:
        horizon = self.cfg.horizon
        per_peer: dict[str, PeerQoS] = {}
        leechers = [
            p
            for p in self.peers.values()
            if p.session is not None and p.joined
        ]
        for peer in sorted(leechers, key=lambda p: p.peer_id):
            cutoff = min(
                peer.qos_cutoff if peer.qos_cutoff is not None else horizon, horizon
            )
            join = peer.state.join_time
            session = peer.session
            playback = playback_model(
                session.requests,
                peer.piece_arrival,
                self.content,
                startup_pieces=self.cfg.startup_pieces,
                end_time=cutoff,
            )
            first_start = playback.play_starts[0] if playback.play_starts else None
            startup = (
                first_start - session.requests[0].arrival_time
                if first_start is not None
                else max(cutoff - session.requests[0].arrival_time, 0.0)
            )
            bootstrap = (
                peer.first_piece_time - join
                if peer.first_piece_time is not None
                else max(cutoff - join, 0.0)
            )
            wanted_union: set[int] = set()
            for req in session.requests:
                wanted_union.update(
                    self.content.pieces_for_interval(req.start_pos, req.end_pos)
                )
            if wanted_union and all(k in peer.piece_arrival for k in wanted_union):
                download_time = max(peer.piece_arrival[k] for k in wanted_union) - join
            else:
                download_time = max(cutoff - join, 0.0)
            residence = max(cutoff - join, 0.0)
            rate = peer.downloaded / residence if residence > 0 else 0.0
            util = (
                peer.uploaded / (peer.state.upload_capacity * residence)
                if residence > 0
                else 0.0
            )
            per_peer[peer.peer_id] = PeerQoS(
                continuity_index=playback.continuity_index,
                startup_delay=startup,
                bootstrap_time=bootstrap,
                mean_time_to_return=playback.mean_time_to_return,
                interruption_count=playback.interruption_count,
                total_download_time=download_time,
                link_utilization=min(util, 1.0),
                downloaded_bytes=peer.downloaded,
                uploaded_bytes=peer.uploaded,
                download_rate=rate,
                formation=peer.formation.to_dict() if peer.formation else None,
            )

        def _mean(values: list[float]) -> float | None:
            return sum(values) / len(values) if values else None

        qs = list(per_peer.values())
        rates = [q.download_rate for q in qs]
        formation_ds = [q.formation["d"] for q in qs if q.formation is not None]
        seed_peers = [p for p in self.peers.values() if p.session is None and p.joined]
        seed_util = []
        for p in seed_peers:
            span = horizon - p.state.join_time
            if span > 0:
                seed_util.append(min(p.uploaded / (p.state.upload_capacity * span), 1.0))
        aggregate = {
            "continuity_index": _mean([q.continuity_index for q in qs]),
            "startup_delay": _mean([q.startup_delay for q in qs]),
            "bootstrap_time": _mean([q.bootstrap_time for q in qs]),
            "mean_time_to_return": _mean([q.mean_time_to_return for q in qs]),
            "interruption_count": _mean([float(q.interruption_count) for q in qs]),
            "total_download_time": _mean([q.total_download_time for q in qs]),
            "link_utilization": _mean([q.link_utilization for q in qs] + seed_util),
            "fairness": (
                fairness(rates) if rates and any(r > 0 for r in rates) else None
            ),
            "formation_dispersion": _mean(formation_ds),
            "uploaded_bytes": self.total_uploaded,
            "downloaded_bytes": self.total_downloaded,
        }
        return QoSReport(
            seed=self.cfg.seed,
            policy=self.cfg.policy.kind.value,
            horizon=horizon,
            peer_count=len([p for p in self.peers.values() if p.joined]),
            leecher_count=len(qs),
            aggregate=aggregate,
            per_peer=per_peer,
        )


def run(cfg: SimConfig) -> RunResult:
    """Execute one simulation run; deterministic for a (config, seed) pair."""
    engine = _Engine(cfg)
    engine.setup()
    engine.loop()
    return RunResult(report=engine.build_report(), events=engine.events)
