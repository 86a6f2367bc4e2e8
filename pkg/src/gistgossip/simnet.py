"""Deterministic discrete-event network simulator.

Models an undirected topology of GIST-capable and plain nodes with per-link
latencies, min-hop IP routing with a fixed tie-break, and the three message
delivery semantics: plain datagram to the destination, router-alert
interception at the first GIST-capable node, and process-and-forward at
every GIST-capable node on the path. Also the ground-truth oracle for
GIST distances and paths.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from ipaddress import IPv4Address
from random import Random
from typing import Callable, Optional, Protocol

from .model import Address, NodeId
from .wire import DecodeError, Message, MsgType, decode, encode


class TopologyError(Exception):
    pass


class RouteError(Exception):
    pass


def default_address(node_id: NodeId) -> Address:
    return IPv4Address(f"10.0.0.{node_id + 1}")


@dataclass(frozen=True)
class NodeSpec:
    id: NodeId
    address: Address
    gist_capable: bool = True
    kind: str = "router"  # router | host


@dataclass(frozen=True)
class Link:
    a: NodeId
    b: NodeId
    latency_ms: float = 10.0


@dataclass(frozen=True)
class Route:
    nodes: tuple[NodeId, ...]
    latency_ms: float

    @property
    def ip_hops(self) -> int:
        return len(self.nodes) - 1


class Topology:
    """Validated undirected graph with routing and GIST-distance oracles."""

    def __init__(self, nodes: list[NodeSpec], links: list[Link]):
        self.nodes: dict[NodeId, NodeSpec] = {}
        for spec in nodes:
            if spec.id in self.nodes:
                raise TopologyError(f"duplicate node id {spec.id}")
            if spec.id < 0:
                raise TopologyError("node ids must be non-negative")
            if spec.kind not in ("router", "host"):
                raise TopologyError(f"unknown node kind {spec.kind!r}")
            self.nodes[spec.id] = spec
        self.by_address: dict[Address, NodeId] = {}
        for spec in self.nodes.values():
            if spec.address in self.by_address:
                raise TopologyError(f"duplicate address {spec.address}")
            self.by_address[spec.address] = spec.id

        self.adjacency: dict[NodeId, dict[NodeId, float]] = {n: {} for n in self.nodes}
        self.links: list[Link] = []
        for link in links:
            if link.a == link.b:
                raise TopologyError("self-loops are not allowed")
            if link.a not in self.nodes or link.b not in self.nodes:
                raise TopologyError(f"link references unknown node: {link}")
            if link.b in self.adjacency[link.a]:
                raise TopologyError(f"parallel link {link.a}-{link.b}")
            if link.latency_ms <= 0:
                raise TopologyError("link latency must be positive")
            self.adjacency[link.a][link.b] = link.latency_ms
            self.adjacency[link.b][link.a] = link.latency_ms
            self.links.append(link)

        if self.nodes and not self._connected():
            raise TopologyError("topology must be connected")
        self.gist_ids: tuple[NodeId, ...] = tuple(
            sorted(n for n, s in self.nodes.items() if s.gist_capable)
        )
        self._route_cache: dict[tuple[NodeId, NodeId], Route] = {}

    def _connected(self) -> bool:
        start = next(iter(self.nodes))
        seen = {start}
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for nxt in self.adjacency[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return len(seen) == len(self.nodes)

    def address_of(self, node: NodeId) -> Address:
        return self.nodes[node].address

    def node_at(self, address: Address) -> NodeId:
        try:
            return self.by_address[address]
        except KeyError:
            raise RouteError(f"no node has address {address}")

    def route(self, x: NodeId, y: NodeId) -> Route:
        """Min-hop route; equal-cost ties resolved to the lexicographically
        smallest node sequence in the canonical (smaller id first) direction,
        so route(y, x) is always the reverse of route(x, y)."""
        if x == y:
            raise RouteError("route endpoints must differ")
        if x not in self.nodes or y not in self.nodes:
            raise RouteError("route endpoint not in topology")
        if x > y:
            fwd = self.route(y, x)
            return Route(tuple(reversed(fwd.nodes)), fwd.latency_ms)
        key = (x, y)
        cached = self._route_cache.get(key)
        if cached is not None:
            return cached

        dist = self._bfs_dist(y)
        if x not in dist:
            raise RouteError(f"nodes {x} and {y} are disconnected")
        path = [x]
        cur = x
        while cur != y:
            cur = min(n for n in self.adjacency[cur] if dist.get(n) == dist[cur] - 1)
            path.append(cur)
        latency = sum(self.adjacency[a][b] for a, b in zip(path, path[1:]))
        route = Route(tuple(path), latency)
        self._route_cache[key] = route
        return route

    def _bfs_dist(self, source: NodeId) -> dict[NodeId, int]:
        dist = {source: 0}
        queue = deque([source])
        while queue:
            cur = queue.popleft()
            for nxt in self.adjacency[cur]:
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
        return dist

    def gist_path(self, x: NodeId, y: NodeId) -> list[NodeId]:
        """GIST-capable nodes along the route from x to y, excluding x,
        including y when y itself is GIST-capable."""
        return [n for n in self.route(x, y).nodes[1:] if self.nodes[n].gist_capable]

    def gist_distance(self, x: NodeId, y: NodeId) -> int:
        """Number of GIST-capable nodes crossed from x to y; 1 means adjacent
        GIST peers with nothing GIST-capable in between; 0 only for x == y."""
        if x == y:
            return 0
        return len(self.gist_path(x, y))

    def to_text(self) -> str:
        lines = []
        for spec in sorted(self.nodes.values(), key=lambda s: s.id):
            cap = "gist" if spec.gist_capable else "plain"
            lines.append(f"node {spec.id} {cap} {spec.kind} {spec.address}")
        for link in sorted(self.links, key=lambda l: (min(l.a, l.b), max(l.a, l.b))):
            a, b = sorted((link.a, link.b))
            lines.append(f"link {a} {b} {link.latency_ms:g}")
        return "\n".join(lines) + "\n"


def parse_topology(text: str) -> Topology:
    """Parse the line-oriented topology format.

    ``node <id> <gist|plain> <router|host> [<ipv4>]`` and
    ``link <id1> <id2> <latency_ms>``; ``#`` starts a comment. A missing
    address defaults to 10.0.0.<id+1>.
    """
    nodes: list[NodeSpec] = []
    links: list[Link] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "node":
                node_id = int(parts[1])
                cap = parts[2]
                if cap not in ("gist", "plain"):
                    raise ValueError(f"expected gist|plain, got {cap!r}")
                kind = parts[3]
                address = IPv4Address(parts[4]) if len(parts) > 4 else default_address(node_id)
                nodes.append(NodeSpec(node_id, address, cap == "gist", kind))
            elif parts[0] == "link":
                links.append(Link(int(parts[1]), int(parts[2]), float(parts[3])))
            else:
                raise ValueError(f"unknown directive {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            raise TopologyError(f"line {lineno}: {exc}")
    return Topology(nodes, links)


# The classic 14-node, 21-link NSFnet T1 backbone shape used throughout the
# experiments. The default GIST-capable subset is a documented stand-in.
NSFNET_EDGES: tuple[tuple[NodeId, NodeId], ...] = (
    (0, 1), (0, 2), (0, 8),
    (1, 2), (1, 3),
    (2, 5),
    (3, 4), (3, 10),
    (4, 5), (4, 6),
    (5, 13),
    (6, 7),
    (7, 8), (7, 11),
    (8, 9), (8, 12),
    (9, 10), (9, 13),
    (10, 11),
    (11, 12),
    (12, 13),
)

# Chosen so node 9 is the unique minimizer of average GIST distance among
# GIST-capable nodes and the distance-1 overlay stays connected.
DEFAULT_NSFNET_GIST: frozenset[NodeId] = frozenset({0, 1, 2, 3, 4, 5, 6, 7, 9})


def build_nsfnet(
    gist: frozenset[NodeId] | set[NodeId] = DEFAULT_NSFNET_GIST,
    latency_ms: float = 10.0,
) -> Topology:
    nodes = [NodeSpec(i, default_address(i), gist_capable=i in gist) for i in range(14)]
    links = [Link(a, b, latency_ms) for a, b in NSFNET_EDGES]
    return Topology(nodes, links)


def build_line(
    n: int, gist: Optional[set[NodeId]] = None, latency_ms: float = 10.0
) -> Topology:
    """Chain 0-1-...-(n-1); every node GIST-capable unless a subset is given."""
    gist_set = set(range(n)) if gist is None else set(gist)
    nodes = [NodeSpec(i, default_address(i), gist_capable=i in gist_set) for i in range(n)]
    links = [Link(i, i + 1, latency_ms) for i in range(n - 1)]
    return Topology(nodes, links)


def random_topology(
    n: int, gist_count: int, seed: int, extra_links: Optional[int] = None,
    latency_ms: float = 10.0,
) -> Topology:
    """Random connected graph: a random tree plus extra edges, with a random
    GIST-capable subset of the requested size."""
    if gist_count > n:
        raise ValueError("gist_count exceeds node count")
    rng = Random(seed)
    edges: set[tuple[NodeId, NodeId]] = set()
    for i in range(1, n):
        edges.add((rng.randrange(i), i))
    extra = n // 2 if extra_links is None else extra_links
    attempts = 0
    while extra > 0 and attempts < 50 * n:
        attempts += 1
        a, b = rng.randrange(n), rng.randrange(n)
        if a == b:
            continue
        edge = (min(a, b), max(a, b))
        if edge in edges:
            continue
        edges.add(edge)
        extra -= 1
    gist = set(rng.sample(range(n), gist_count))
    nodes = [NodeSpec(i, default_address(i), gist_capable=i in gist) for i in range(n)]
    links = [Link(a, b, latency_ms) for a, b in sorted(edges)]
    return Topology(nodes, links)


class DeliveryMode(Enum):
    D_MODE = "d-mode"
    Q_MODE_INTERCEPT = "q-mode"
    Q_MODE_FULLPATH = "q-full"


@dataclass
class DeliveryMeta:
    """Per-arrival transport information handed to node handlers."""

    time_ms: float
    ttl: int  # remaining IP TTL at arrival
    mode: DeliveryMode
    to_address: Address  # transport destination of the original send


class NodeHandler(Protocol):
    def on_message(self, node: NodeId, msg: Message, meta: DeliveryMeta) -> None: ...

    def on_intercept(
        self, node: NodeId, msg: Message, meta: DeliveryMeta
    ) -> Optional[Message]: ...


@dataclass
class SimStats:
    messages: dict[MsgType, int] = field(
        default_factory=lambda: {t: 0 for t in MsgType}
    )
    forwarded: int = 0
    link_traversals: int = 0
    per_link: dict[tuple[NodeId, NodeId], int] = field(default_factory=dict)

    def snapshot(self) -> "SimStats":
        return SimStats(dict(self.messages), self.forwarded, self.link_traversals, dict(self.per_link))

    def total_messages(self) -> int:
        return sum(self.messages.values()) + self.forwarded

    @property
    def distinct_links(self) -> int:
        return len(self.per_link)


class Simulator:
    """Single-threaded event loop over a topology.

    Events dispatch in (time, scheduling order); equal seeds and inputs give
    identical traces. Optional Bernoulli loss drops a delivery leg after the
    bytes have crossed the wire (the traversal still counts).
    """

    def __init__(self, topology: Topology, loss_p: float = 0.0, loss_seed: int = 0):
        self.topology = topology
        self.now: float = 0.0
        self._queue: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = 0
        self.handlers: dict[NodeId, NodeHandler] = {}
        self.stats = SimStats()
        self.loss_p = loss_p
        self._loss_rng = Random(loss_seed)

    def attach(self, node: NodeId, handler: NodeHandler) -> None:
        self.handlers[node] = handler

    def schedule(self, delay_ms: float, fn: Callable[[], None]) -> None:
        if delay_ms < 0:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._queue, (self.now + delay_ms, self._seq, fn))
        self._seq += 1

    def run_until(self, t_ms: float) -> int:
        """Dispatch all events up to and including t_ms; returns the count."""
        dispatched = 0
        while self._queue and self._queue[0][0] <= t_ms:
            time, _, fn = heapq.heappop(self._queue)
            self.now = time
            fn()
            dispatched += 1
        self.now = max(self.now, t_ms)
        return dispatched

    def run_to_completion(self, limit_ms: float = float("inf")) -> int:
        dispatched = 0
        while self._queue and self._queue[0][0] <= limit_ms:
            time, _, fn = heapq.heappop(self._queue)
            self.now = time
            fn()
            dispatched += 1
        return dispatched

    @property
    def pending_events(self) -> int:
        return len(self._queue)

    def send(
        self, msg: Message, src: NodeId, to: Address, mode: DeliveryMode
    ) -> None:
        """Inject a message; the codec round-trip is enforced at this boundary."""
        try:
            wire_msg = decode(encode(msg))
        except DecodeError as exc:  # pragma: no cover - encode/decode mismatch
            raise AssertionError(f"codec round-trip failed: {exc}")
        dest = self.topology.node_at(to)
        if dest == src:
            raise RouteError("cannot send to self")
        self.stats.messages[MsgType(wire_msg.header.msg_type)] += 1
        self._transmit(wire_msg, src, dest, to, mode, wire_msg.nli.ip_ttl)

    def _transmit(
        self,
        msg: Message,
        src: NodeId,
        dest: NodeId,
        to_address: Address,
        mode: DeliveryMode,
        ttl: int,
    ) -> None:
        route = self.topology.route(src, dest)
        stop_index = len(route.nodes) - 1
        deliverable = True
        if mode is not DeliveryMode.D_MODE:
            for i, n in enumerate(route.nodes[1:], start=1):
                if self.topology.nodes[n].gist_capable:
                    stop_index = i
                    break
            else:
                # router-alert packet crossed the whole path uncaught; it dies
                # at a destination that cannot process it
                deliverable = self.topology.nodes[dest].gist_capable
        hops = min(stop_index, ttl)
        self._count_traversal(route.nodes, hops)
        if hops < stop_index or not deliverable:
            return  # TTL expired mid-path, or nothing on path could intercept
        stop = route.nodes[stop_index]
        latency = sum(
            self.topology.adjacency[a][b]
            for a, b in zip(route.nodes[: stop_index + 1], route.nodes[1 : stop_index + 1])
        )
        arrival_ttl = ttl - stop_index
        if self.loss_p > 0.0 and self._loss_rng.random() < self.loss_p:
            return
        self.schedule(
            latency, lambda: self._arrive(msg, stop, dest, to_address, mode, arrival_ttl)
        )

    def _count_traversal(self, nodes: tuple[NodeId, ...], hops: int) -> None:
        for a, b in zip(nodes[:hops], nodes[1 : hops + 1]):
            key = (min(a, b), max(a, b))
            self.stats.link_traversals += 1
            self.stats.per_link[key] = self.stats.per_link.get(key, 0) + 1

    def _arrive(
        self,
        msg: Message,
        node: NodeId,
        dest: NodeId,
        to_address: Address,
        mode: DeliveryMode,
        ttl: int,
    ) -> None:
        meta = DeliveryMeta(time_ms=self.now, ttl=ttl, mode=mode, to_address=to_address)
        handler = self.handlers.get(node)
        if node == dest or mode is DeliveryMode.Q_MODE_INTERCEPT:
            if handler is not None:
                handler.on_message(node, msg, meta)
            return
        # process-and-forward at an intermediate GIST node
        forwarded = msg
        if handler is not None:
            forwarded = handler.on_intercept(node, msg, meta)
            if forwarded is None:
                return
        forwarded.header.gist_hop_count -= 1
        if forwarded.header.gist_hop_count <= 0:
            return  # hop budget exhausted: silent drop
        self.stats.forwarded += 1
        self._transmit(forwarded, node, dest, to_address, mode, ttl)
