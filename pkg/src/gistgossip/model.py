"""Core domain types and the pure set/list operations of the gossip loop.

Everything here is a plain value: descriptors, views and the four primitive
operations (merge, select_peer, randomize, truncate) used by both the active
and the passive gossip threads. No I/O, no clocks, no simulator state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from ipaddress import IPv4Address
from random import Random
from typing import Iterable, Optional, Sequence

NodeId = int
Address = IPv4Address
PeerIdentity = bytes  # 16 opaque octets, stable per node, unique per run
SessionId = bytes  # 16 octets, fresh per Rumor exchange
NslpId = int  # 16-bit; 0 is the reserved null NSLPID used by discovery

IDENTITY_LEN = 16
NULL_NSLPID: NslpId = 0


class MetricKind(IntEnum):
    """Distance metrics a node can know about a peer."""

    GIST_HOPS = 0  # measurable only with the process-and-forward approach
    IP_HOPS = 1
    LATENCY = 2


class EmptyViewError(Exception):
    """Raised by select_peer on an empty view; the node must (re)contact its tracker."""


@dataclass(frozen=True)
class NodeDescriptor:
    """What one node knows about one peer.

    Metric fields and the path vector are relative to the view owner and are
    absent (None) whenever the discovery approach could not measure them;
    they are never guessed. ``path_vector`` lists the GIST-capable nodes on
    the IP path from the owner to the peer, owner excluded, peer included.
    ``learned_at`` is bookkeeping for conflict resolution and is excluded
    from equality.
    """

    identity: PeerIdentity
    address: Address
    supported_nslps: frozenset[NslpId] = frozenset()
    gist_hops: Optional[int] = None
    ip_hops: Optional[int] = None
    latency_ms: Optional[float] = None
    path_vector: Optional[tuple[Address, ...]] = None
    learned_at: float = field(default=0.0, compare=False)

    def __post_init__(self) -> None:
        if len(self.identity) != IDENTITY_LEN:
            raise ValueError(f"identity must be {IDENTITY_LEN} bytes")
        if self.path_vector is not None:
            if self.gist_hops is None or len(self.path_vector) != self.gist_hops:
                raise ValueError("path_vector length must equal gist_hops")
            if self.path_vector[-1] != self.address:
                raise ValueError("path_vector must end at the descriptor's address")

    def without_metrics(self) -> "NodeDescriptor":
        """Copy with owner-relative data removed, fit for sharing with peers."""
        return replace(
            self, gist_hops=None, ip_hops=None, latency_ms=None, path_vector=None
        )

    def distance(self, metric: MetricKind) -> Optional[float]:
        if metric is MetricKind.GIST_HOPS:
            return self.gist_hops
        if metric is MetricKind.IP_HOPS:
            return self.ip_hops
        return self.latency_ms


@dataclass
class View:
    """A node's bounded, deduplicated set of peer descriptors.

    ``entries`` is keyed by peer identity; at most one descriptor per peer,
    never one for the owner itself. ``capacity`` of None means unbounded.
    """

    owner: NodeId
    owner_identity: PeerIdentity
    entries: dict[PeerIdentity, NodeDescriptor] = field(default_factory=dict)
    capacity: Optional[int] = None

    def __len__(self) -> int:
        return len(self.entries)

    def descriptors(self) -> list[NodeDescriptor]:
        return list(self.entries.values())

    def identities(self) -> set[PeerIdentity]:
        return set(self.entries)


def _combine(current: NodeDescriptor, incoming: NodeDescriptor) -> NodeDescriptor:
    """Resolve an identity conflict: later learned_at wins, field-wise.

    Present metric fields are sticky: a fresher but metric-less descriptor
    must not erase measured values. The gist hop count and the path vector
    travel as a unit so the length invariant cannot be broken by mixing
    sources.
    """
    if incoming.learned_at >= current.learned_at:
        winner, loser = incoming, current
    else:
        winner, loser = current, incoming
    gist_hops, path_vector = winner.gist_hops, winner.path_vector
    if gist_hops is None and loser.gist_hops is not None:
        gist_hops, path_vector = loser.gist_hops, loser.path_vector
    return replace(
        winner,
        gist_hops=gist_hops,
        path_vector=path_vector,
        ip_hops=winner.ip_hops if winner.ip_hops is not None else loser.ip_hops,
        latency_ms=winner.latency_ms if winner.latency_ms is not None else loser.latency_ms,
        learned_at=max(winner.learned_at, loser.learned_at),
    )


def _eviction_key(descriptor: NodeDescriptor) -> tuple:
    # Farthest-first eviction; entries with no distance information at all
    # count as farthest, ties broken by identity for determinism.
    def val(x: Optional[float]) -> float:
        return math.inf if x is None else float(x)

    known = any(
        m is not None
        for m in (descriptor.gist_hops, descriptor.ip_hops, descriptor.latency_ms)
    )
    return (
        not known,
        val(descriptor.gist_hops),
        val(descriptor.ip_hops),
        val(descriptor.latency_ms),
        descriptor.identity,
    )


def merge(view: View, incoming: Iterable[NodeDescriptor]) -> View:
    """Fold a batch of descriptors into a view, keeping one entry per peer.

    Descriptors matching the owner's identity are dropped. When the view has
    a capacity, the largest-distance entries are evicted first.
    """
    entries = dict(view.entries)
    for desc in incoming:
        if desc.identity == view.owner_identity:
            continue
        current = entries.get(desc.identity)
        entries[desc.identity] = desc if current is None else _combine(current, desc)
    if view.capacity is not None and len(entries) > view.capacity:
        keep = sorted(entries.values(), key=_eviction_key)[: view.capacity]
        entries = {d.identity: d for d in keep}
    return View(
        owner=view.owner,
        owner_identity=view.owner_identity,
        entries=entries,
        capacity=view.capacity,
    )


def select_peer(view: View, rng: Random) -> NodeDescriptor:
    """Pick one known peer uniformly at random."""
    if not view.entries:
        raise EmptyViewError(f"node {view.owner} has an empty view")
    return rng.choice(list(view.entries.values()))


def randomize(
    excluded: PeerIdentity, buffer: Sequence[NodeDescriptor], rng: Random
) -> list[NodeDescriptor]:
    """Shuffle a descriptor list, forcing the excluded peer's own entry last.

    Taking the first m entries of the result therefore never wastes a slot
    telling a peer about itself.
    """
    others = [d for d in buffer if d.identity != excluded]
    matches = [d for d in buffer if d.identity == excluded]
    rng.shuffle(others)
    return others + matches


def truncate(buffer: Sequence[NodeDescriptor], m: int) -> list[NodeDescriptor]:
    """First min(m, len) entries, order preserved."""
    if m < 1:
        raise ValueError("message size m must be >= 1")
    return list(buffer[:m])
