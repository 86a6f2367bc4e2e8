"""Scoped epidemic signaling: bubble / balloon / hose dissemination.

The pure half computes radius sets over either the topology oracle or
converged views: peers at exactly a given distance, peers within a radius,
and the minimal explicit-destination cover (destinations whose GIST paths
jointly blanket the radius set). The execution half runs the three delivery
strategies over a simulator and reports delivered nodes, message counts and
link usage.

Strategies:
  * simple unicast: one datagram per node inside the radius;
  * GIST unicast: one process-and-forward message per cover destination,
    with every on-path GIST node delivering the payload locally;
  * overlay broadcast: hop-budgeted flooding across GIST-distance-1
    neighbors with duplicate suppression, the echo-pattern style baseline.

Balloon and hose reduce to bubbles re-triggered at the target, or at every
GIST node on the source-to-target path plus the source itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from random import Random
from typing import Optional, Protocol

from .model import Address, MetricKind, NodeId, View
from .simnet import DeliveryMeta, DeliveryMode, Simulator, Topology
from .wire import (
    FLAG_FULLPATH,
    FLAG_QMODE,
    MRM_EPIDEMIC,
    ANY_ADDRESS,
    CommonHeader,
    EpidemicType,
    Message,
    MriObject,
    MsgType,
    NliObject,
)

FLAG_FLOOD = 0x04  # header flag marking flood-forwarded epidemic messages


class KnowledgeError(Exception):
    """A node lacks the view information a strategy needs."""


class UnsupportedCombination(Exception):
    """Strategy/metric pairing the protocol does not define."""


class Knowledge(Protocol):
    """Distance and path answers from some vantage point: either ground
    truth or a node's converged view."""

    def peers(self, x: NodeId) -> list[NodeId]: ...

    def distance(self, x: NodeId, y: NodeId, metric: MetricKind) -> Optional[float]: ...

    def gist_path(self, x: NodeId, y: NodeId) -> Optional[list[NodeId]]: ...


class OracleKnowledge:
    """Ground-truth knowledge straight from the topology."""

    def __init__(self, topology: Topology):
        self.topology = topology

    def peers(self, x: NodeId) -> list[NodeId]:
        return [n for n in self.topology.gist_ids if n != x]

    def distance(self, x: NodeId, y: NodeId, metric: MetricKind) -> Optional[float]:
        if metric is MetricKind.GIST_HOPS:
            return self.topology.gist_distance(x, y)
        route = self.topology.route(x, y)
        return route.ip_hops if metric is MetricKind.IP_HOPS else route.latency_ms

    def gist_path(self, x: NodeId, y: NodeId) -> Optional[list[NodeId]]:
        return self.topology.gist_path(x, y)


class ViewKnowledge:
    """Knowledge reconstructed from per-node views after discovery."""

    def __init__(self, views: dict[NodeId, View], topology: Topology):
        self.topology = topology
        self._peers: dict[NodeId, dict[NodeId, object]] = {}
        for owner, view in views.items():
            table = {}
            for d in view.descriptors():
                peer = topology.by_address.get(d.address)
                if peer is not None:
                    table[peer] = d
            self._peers[owner] = table

    def _table(self, x: NodeId) -> dict:
        try:
            return self._peers[x]
        except KeyError:
            raise KnowledgeError(f"node {x} has no view")

    def peers(self, x: NodeId) -> list[NodeId]:
        return sorted(self._table(x))

    def distance(self, x: NodeId, y: NodeId, metric: MetricKind) -> Optional[float]:
        d = self._table(x).get(y)
        return None if d is None else d.distance(metric)

    def gist_path(self, x: NodeId, y: NodeId) -> Optional[list[NodeId]]:
        d = self._table(x).get(y)
        if d is None or d.path_vector is None:
            return None
        return [self.topology.node_at(a) for a in d.path_vector]


def nodes_at_distance(
    knowledge: Knowledge, x: NodeId, r: float, metric: MetricKind
) -> set[NodeId]:
    """GIST peers at distance exactly r from x under the metric."""
    if r <= 0:
        raise ValueError("radius must be positive")
    return {
        y for y in knowledge.peers(x) if knowledge.distance(x, y, metric) == r
    }


def nodes_within(
    knowledge: Knowledge, x: NodeId, r: float, metric: MetricKind
) -> set[NodeId]:
    """GIST peers within radius r of x (x itself excluded)."""
    if r <= 0:
        raise ValueError("radius must be positive")
    inside = set()
    for y in knowledge.peers(x):
        d = knowledge.distance(x, y, metric)
        if d is not None and 0 < d <= r:
            inside.add(y)
    return inside


def select_destinations(knowledge: Knowledge, x: NodeId, r: int) -> set[NodeId]:
    """Minimal explicit-destination set whose GIST paths cover the radius.

    Working outward-in over exact distances, a peer is selected unless some
    already-selected farther destination's path passes through it; selected
    paths then erase their interior nodes from the candidate pool. Defined
    for the GIST-hop metric only, and requires a path vector for every peer
    inside the radius.
    """
    scope = nodes_within(knowledge, x, int(r), MetricKind.GIST_HOPS)
    paths: dict[NodeId, list[NodeId]] = {}
    for y in sorted(scope):
        path = knowledge.gist_path(x, y)
        if path is None:
            raise KnowledgeError(f"node {x} lacks a path vector for peer {y}")
        paths[y] = path
    selected: set[NodeId] = set()
    candidates = set(scope)
    for i in range(int(r), 0, -1):
        chosen = nodes_at_distance(knowledge, x, i, MetricKind.GIST_HOPS) & candidates
        selected |= chosen
        for y in chosen:
            candidates -= set(paths[y])
    return selected


class Strategy(Enum):
    SIMPLE_UNICAST = "simple-unicast"
    GIST_UNICAST = "gist-unicast"
    OVERLAY_BROADCAST = "overlay-broadcast"


@dataclass
class DisseminationRequest:
    source: NodeId
    epidemic_type: EpidemicType
    strategy: Strategy
    radius: int
    metric: MetricKind = MetricKind.GIST_HOPS
    target: Optional[NodeId] = None
    payload: bytes = b"\x00"
    nslpid: int = 1

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if (self.target is None) != (self.epidemic_type is EpidemicType.BUBBLE):
            raise ValueError("target is required exactly for balloon and hose")


@dataclass
class DisseminationReport:
    delivered: set[NodeId] = field(default_factory=set)
    messages_sent: int = 0
    link_traversals: int = 0
    per_link: dict[tuple[NodeId, NodeId], int] = field(default_factory=dict)

    @property
    def distinct_links(self) -> int:
        return len(self.per_link)


class DisseminationEngine:
    """Executes dissemination requests over a simulator.

    One engine instance acts as the epidemic NSLP of every GIST node in the
    simulation; per-session state (delivery dedup, flood suppression) is
    keyed by the session id so overlapping bubbles deliver at most once per
    node.
    """

    def __init__(self, sim: Simulator, knowledge: Knowledge, seed: int = 0):
        self.sim = sim
        self.knowledge = knowledge
        self.rng = Random(seed)
        self._requests: dict[bytes, DisseminationRequest] = {}
        self._delivered: dict[bytes, set[NodeId]] = {}
        self._flood_seen: dict[bytes, set[NodeId]] = {}
        for node in sim.topology.gist_ids:
            sim.attach(node, self)

    # --------------------------------------------------------------- handlers

    def on_message(self, node: NodeId, msg: Message, meta: DeliveryMeta) -> None:
        if MsgType(msg.header.msg_type) is not MsgType.EPIDEMIC_SIGNALING:
            return
        if msg.header.flags & FLAG_FLOOD:
            self._on_flood(node, msg)
            return
        etype = msg.mri.epidemic_type
        if etype is EpidemicType.BUBBLE:
            self._deliver(node, msg.sid)
        else:
            # carrier reached its target: deliver there and re-trigger a bubble
            self._deliver(node, msg.sid)
            self._bubble_from(node, msg.sid)

    def on_intercept(self, node: NodeId, msg: Message, meta: DeliveryMeta):
        if MsgType(msg.header.msg_type) is not MsgType.EPIDEMIC_SIGNALING:
            return msg
        etype = msg.mri.epidemic_type
        if etype is EpidemicType.BUBBLE:
            # GIST-unicast messages serve every GIST node they cross
            self._deliver(node, msg.sid)
        elif etype is EpidemicType.HOSE:
            self._deliver(node, msg.sid)
            self._bubble_from(node, msg.sid)
        # balloon carriers relay without local delivery
        return msg

    # ------------------------------------------------------------------ flows

    def run(self, request: DisseminationRequest) -> DisseminationReport:
        """Execute one dissemination request to completion and report it."""
        self._validate(request)
        sid = self.rng.randbytes(16)
        self._requests[sid] = request
        self._delivered[sid] = set()
        self._flood_seen[sid] = set()
        before = self.sim.stats.snapshot()

        if request.epidemic_type is EpidemicType.BUBBLE:
            self._bubble_from(request.source, sid)
        elif request.epidemic_type is EpidemicType.BALLOON:
            if request.target == request.source:
                self._deliver(request.source, sid)
                self._bubble_from(request.source, sid)
            else:
                self._send_carrier(request, sid)
        else:  # hose: the source is itself a bubble center on the path
            self._deliver(request.source, sid)
            self._bubble_from(request.source, sid)
            if request.target != request.source:
                self._send_carrier(request, sid)

        self.sim.run_to_completion()
        after = self.sim.stats
        per_link = {
            k: after.per_link[k] - before.per_link.get(k, 0)
            for k in after.per_link
            if after.per_link[k] != before.per_link.get(k, 0)
        }
        return DisseminationReport(
            delivered=set(self._delivered[sid]),
            messages_sent=after.messages[MsgType.EPIDEMIC_SIGNALING]
            - before.messages[MsgType.EPIDEMIC_SIGNALING],
            link_traversals=after.link_traversals - before.link_traversals,
            per_link=per_link,
        )

    def _validate(self, request: DisseminationRequest) -> None:
        topo = self.sim.topology
        if not topo.nodes[request.source].gist_capable:
            raise ValueError(f"source {request.source} is not GIST-capable")
        if request.strategy is Strategy.GIST_UNICAST and request.metric is not MetricKind.GIST_HOPS:
            raise UnsupportedCombination(
                "GIST unicast needs GIST-hop path vectors; "
                f"metric {request.metric.name} is not supported"
            )
        if request.target is not None and not topo.nodes[request.target].gist_capable:
            raise ValueError(f"target {request.target} is not GIST-capable")

    def _send_carrier(self, request: DisseminationRequest, sid: bytes) -> None:
        target_addr = self.sim.topology.address_of(request.target)
        msg = self._epidemic_message(
            request, sid, request.source,
            epidemic_type=request.epidemic_type,
            destination=target_addr,
            flags=FLAG_QMODE | FLAG_FULLPATH,
        )
        self.sim.send(msg, request.source, target_addr, DeliveryMode.Q_MODE_FULLPATH)

    def _bubble_from(self, center: NodeId, sid: bytes) -> None:
        request = self._requests[sid]
        if request.strategy is Strategy.SIMPLE_UNICAST:
            for y in sorted(nodes_within(self.knowledge, center, request.radius, request.metric)):
                msg = self._epidemic_message(request, sid, center)
                self.sim.send(
                    msg, center, self.sim.topology.address_of(y), DeliveryMode.D_MODE
                )
        elif request.strategy is Strategy.GIST_UNICAST:
            for y in sorted(select_destinations(self.knowledge, center, request.radius)):
                msg = self._epidemic_message(
                    request, sid, center, flags=FLAG_QMODE | FLAG_FULLPATH
                )
                self.sim.send(
                    msg, center, self.sim.topology.address_of(y),
                    DeliveryMode.Q_MODE_FULLPATH,
                )
        else:
            self._flood_seen[sid].add(center)
            self._flood_out(center, center, sid, budget=request.radius)

    def _flood_out(
        self,
        center: NodeId,
        node: NodeId,
        sid: bytes,
        budget: int,
        skip: Optional[NodeId] = None,
    ) -> None:
        # the MRI names the scope (center + radius) and survives re-floods;
        # the NLI names the per-hop sender
        request = self._requests[sid]
        neighbors = sorted(
            nodes_at_distance(self.knowledge, node, 1, MetricKind.GIST_HOPS)
        )
        for w in neighbors:
            if w == skip:
                continue
            msg = self._epidemic_message(
                request, sid, node, center=center, flags=FLAG_FLOOD, hop_count=budget
            )
            self.sim.send(msg, node, self.sim.topology.address_of(w), DeliveryMode.D_MODE)

    def _on_flood(self, node: NodeId, msg: Message) -> None:
        sid = msg.sid
        seen = self._flood_seen.setdefault(sid, set())
        if node in seen:
            return  # duplicate: suppressed
        seen.add(node)
        request = self._requests.get(msg.sid)
        if request is None:
            return
        center = self.sim.topology.by_address.get(msg.mri.source)
        if center is None:
            return
        d = self.knowledge.distance(node, center, request.metric)
        if d is not None and d <= msg.mri.radius:
            self._deliver(node, sid)
        budget = msg.header.gist_hop_count - 1
        if budget >= 1:
            sender = self.sim.topology.by_address.get(msg.nli.address)
            self._flood_out(center, node, sid, budget, skip=sender)

    def _deliver(self, node: NodeId, sid: bytes) -> None:
        self._delivered.setdefault(sid, set()).add(node)

    def _epidemic_message(
        self,
        request: DisseminationRequest,
        sid: bytes,
        sender: NodeId,
        center: Optional[NodeId] = None,
        epidemic_type: Optional[EpidemicType] = None,
        destination: Address = ANY_ADDRESS,
        flags: int = 0,
        hop_count: int = 64,
    ) -> Message:
        address = self.sim.topology.address_of(sender)
        source = self.sim.topology.address_of(center) if center is not None else address
        return Message(
            header=CommonHeader(
                MsgType.EPIDEMIC_SIGNALING,
                nslpid=request.nslpid,
                gist_hop_count=hop_count,
                flags=flags,
            ),
            mri=MriObject(
                mrm_id=MRM_EPIDEMIC,
                source=source,
                destination=destination,
                epidemic_type=EpidemicType.BUBBLE if epidemic_type is None else epidemic_type,
                metric_kind=request.metric,
                radius=request.radius,
            ),
            sid=sid,
            nli=NliObject(
                identity=sender.to_bytes(16, "big"), address=address, validity_time_ms=1
            ),
            payload=request.payload,
        )


def disseminate_bubble(
    sim: Simulator, knowledge: Knowledge, request: DisseminationRequest, seed: int = 0
) -> DisseminationReport:
    if request.epidemic_type is not EpidemicType.BUBBLE:
        raise ValueError("request is not bubble-scoped")
    return DisseminationEngine(sim, knowledge, seed).run(request)


def disseminate_balloon(
    sim: Simulator, knowledge: Knowledge, request: DisseminationRequest, seed: int = 0
) -> DisseminationReport:
    if request.epidemic_type is not EpidemicType.BALLOON:
        raise ValueError("request is not balloon-scoped")
    return DisseminationEngine(sim, knowledge, seed).run(request)


def disseminate_hose(
    sim: Simulator, knowledge: Knowledge, request: DisseminationRequest, seed: int = 0
) -> DisseminationReport:
    if request.epidemic_type is not EpidemicType.HOSE:
        raise ValueError("request is not hose-scoped")
    return DisseminationEngine(sim, knowledge, seed).run(request)
