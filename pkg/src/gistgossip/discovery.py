"""The gossip discovery engine: active cycles, passive responder, metric
acquisition, idle relaxation/suspension, and the sharing/storing policies.

Each GIST-capable node runs two logical threads. The active one wakes every
cycle, picks a random known peer and sends it a Rumor carrying up to m
descriptors; the passive one answers Rumors with a Rumor-Response built the
same way and acknowledges nothing beyond the final Rumor-Ack. Both threads
are realized as simulator event handlers, which keeps runs deterministic.

Three exchange approaches are supported. With plain UDP the Rumor reaches
the addressed peer and GIST hop counts stay unknown. With router-alert
interception the Rumor is consumed by the first GIST-capable node on the
path, so direct measurements never extend past GIST distance 1. With the
process-and-forward variant every on-path GIST node records the origin,
stamps itself into the path record, and forwards; the addressed peer echoes
the completed record back so the origin learns the full GIST path.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from random import Random
from typing import Callable, Optional

from .bootstrap import (
    AsnResolver,
    BootstrapError,
    StaticAsnResolver,
    StaticTrackerResolver,
    TrackerResolver,
    bootstrap,
    tracker_domain,
)
from .model import (
    Address,
    MetricKind,
    NodeDescriptor,
    NodeId,
    NslpId,
    PeerIdentity,
    View,
    merge,
    randomize,
    select_peer,
    truncate,
)
from .simnet import DeliveryMeta, DeliveryMode, Simulator
from .wire import (
    FLAG_FULLPATH,
    FLAG_QMODE,
    CommonHeader,
    Message,
    MriObject,
    MsgType,
    NliObject,
)


class Approach(Enum):
    Q_MODE = "q-mode"
    UDP_MODE = "udp-mode"
    Q_FULL = "q-full"


class Activity(Enum):
    ACTIVE = "active"
    RELAXED = "relaxed"
    SUSPENDED = "suspended"


_MODE_FOR = {
    Approach.Q_MODE: DeliveryMode.Q_MODE_INTERCEPT,
    Approach.UDP_MODE: DeliveryMode.D_MODE,
    Approach.Q_FULL: DeliveryMode.Q_MODE_FULLPATH,
}
_FLAGS_FOR = {
    Approach.Q_MODE: FLAG_QMODE,
    Approach.UDP_MODE: 0,
    Approach.Q_FULL: FLAG_QMODE | FLAG_FULLPATH,
}


@dataclass
class GossipConfig:
    """Tunables of the discovery protocol; defaults follow the experiments."""

    delta_ms: float = 10_000.0
    m: int = 1
    approach: Approach = Approach.Q_FULL
    idle_cycles_threshold: int = 5
    relax_factor: float = 2.0
    max_delta_ms: Optional[float] = None  # None: 8 x delta_ms
    share_netmask: int = 0  # prefix length; 0 shares everything
    store_max_gist_hops: Optional[int] = None
    store_max_ip_hops: Optional[int] = None
    initial_ip_ttl: int = 64
    gist_hop_limit: int = 64
    view_capacity: Optional[int] = None
    container_domain: str = "nsis.org"

    def __post_init__(self) -> None:
        if self.delta_ms <= 0:
            raise ValueError("delta_ms must be positive")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.relax_factor <= 1:
            raise ValueError("relax_factor must exceed 1")
        if not 0 <= self.share_netmask <= 32:
            raise ValueError("share_netmask must be a prefix length 0..32")

    @property
    def effective_max_delta_ms(self) -> float:
        return 8 * self.delta_ms if self.max_delta_ms is None else self.max_delta_ms

    @classmethod
    def from_text(cls, text: str) -> "GossipConfig":
        """Parse key=value lines; '#' starts a comment; unknown keys rejected."""
        kwargs: dict = {}
        converters: dict[str, Callable[[str], object]] = {
            "delta_ms": float,
            "m": int,
            "approach": Approach,
            "idle_cycles_threshold": int,
            "relax_factor": float,
            "max_delta_ms": float,
            "share_netmask": int,
            "store_max_gist_hops": int,
            "store_max_ip_hops": int,
            "initial_ip_ttl": int,
            "gist_hop_limit": int,
            "view_capacity": int,
            "container_domain": str,
        }
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in converters:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            kwargs[key] = None if value.lower() == "none" else converters[key](value)
        return cls(**kwargs)


def share_filter(
    config: GossipConfig, buffer: list[NodeDescriptor], requester: Address
) -> list[NodeDescriptor]:
    """Keep descriptors whose address shares the configured prefix with the
    requester; prefix length 0 keeps everything."""
    bits = config.share_netmask
    if bits == 0:
        return list(buffer)
    shift = 32 - bits
    want = int(requester) >> shift
    return [d for d in buffer if int(d.address) >> shift == want]


def store_policy(config: GossipConfig, descriptor: NodeDescriptor) -> bool:
    """Whether a peer is worth keeping under the configured distance bounds.

    Absent metrics never cause rejection: refusing peers just because their
    distance is unknown would stall discovery under the UDP approach.
    """
    if (
        config.store_max_gist_hops is not None
        and descriptor.gist_hops is not None
        and descriptor.gist_hops > config.store_max_gist_hops
    ):
        return False
    if (
        config.store_max_ip_hops is not None
        and descriptor.ip_hops is not None
        and descriptor.ip_hops > config.store_max_ip_hops
    ):
        return False
    return True


@dataclass
class PendingSession:
    peer_address: Address
    sent_at_ms: float
    expires_at_ms: float


@dataclass
class GossipNode:
    """Protocol state machine for one GIST-capable node."""

    sim: Simulator
    node_id: NodeId
    identity: PeerIdentity
    config: GossipConfig
    rng: Random
    supported_nslps: frozenset[NslpId] = frozenset({1})
    asn_resolver: Optional[AsnResolver] = None
    tracker_resolver: Optional[TrackerResolver] = None
    on_view_change: Optional[Callable[[NodeId], None]] = None

    activity: Activity = Activity.ACTIVE
    current_delta_ms: float = field(init=False)
    cycles_without_view_change: int = 0
    pending_sessions: dict[bytes, PendingSession] = field(default_factory=dict)
    view: View = field(init=False)
    _changed_since_cycle: bool = field(default=False, init=False)
    _bootstrapped: bool = field(default=False, init=False)

    def __post_init__(self) -> None:
        self.address = self.sim.topology.address_of(self.node_id)
        self.current_delta_ms = self.config.delta_ms
        self.view = View(
            owner=self.node_id,
            owner_identity=self.identity,
            capacity=self.config.view_capacity,
        )

    # ---------------------------------------------------------- active thread

    def start(self) -> None:
        """Schedule the first active cycle at a random offset within one
        cycle length, modeling desynchronized boots. Offsets land on whole
        milliseconds, keeping wire timestamps exact for integral-latency
        topologies."""
        offset = self.rng.randrange(0, max(1, int(self.config.delta_ms)))
        self.sim.schedule(float(offset), self._cycle)

    def _cycle(self) -> None:
        if self.activity is Activity.SUSPENDED:
            return
        self._check_idle()
        if self.activity is Activity.SUSPENDED:
            return
        self._expire_sessions()
        self._gossip_once()
        self.sim.schedule(self.current_delta_ms, self._cycle)

    def _check_idle(self) -> None:
        if self._changed_since_cycle:
            self.cycles_without_view_change = 0
        else:
            self.cycles_without_view_change += 1
        self._changed_since_cycle = False
        if self.cycles_without_view_change >= self.config.idle_cycles_threshold:
            limit = self.config.effective_max_delta_ms
            if self.current_delta_ms >= limit:
                self.activity = Activity.SUSPENDED
            else:
                self.current_delta_ms = min(
                    self.current_delta_ms * self.config.relax_factor, limit
                )
                self.activity = Activity.RELAXED

    def _expire_sessions(self) -> None:
        now = self.sim.now
        stale = [sid for sid, s in self.pending_sessions.items() if s.expires_at_ms < now]
        for sid in stale:
            del self.pending_sessions[sid]

    def _gossip_once(self) -> None:
        # The first exchange always aims at the tracker, even if intercepted
        # rumors populated the view earlier; afterwards the tracker is only
        # consulted again when the view is empty.
        target = None
        exclude: bytes = b""
        if not self._bootstrapped or not self.view.entries:
            try:
                target = self._bootstrap_target()
                self._bootstrapped = True
            except BootstrapError:
                if not self.view.entries:
                    return  # retry at the next cycle
                self._bootstrapped = True  # a tracker cannot bootstrap off itself
        if target is None:
            peer = select_peer(self.view, self.rng)
            target, exclude = peer.address, peer.identity
        buffer = self._outgoing_buffer(exclude, target)
        sid = self.rng.randbytes(16)
        now = self.sim.now
        msg = Message(
            header=CommonHeader(
                MsgType.RUMOR,
                gist_hop_count=self.config.gist_hop_limit,
                flags=_FLAGS_FOR[self.config.approach],
            ),
            mri=MriObject(source=self.address, destination=target),
            sid=sid,
            nli=self._nli(),
            supported_nslps=self.supported_nslps,
            node_list=buffer,
            origin_send_time_ms=int(round(now)),
            path_record=[] if self.config.approach is Approach.Q_FULL else None,
        )
        self.pending_sessions[sid] = PendingSession(
            peer_address=target,
            sent_at_ms=now,
            expires_at_ms=now + 2 * self.current_delta_ms,
        )
        self.sim.send(msg, self.node_id, target, _MODE_FOR[self.config.approach])

    def _bootstrap_target(self) -> Address:
        if self.asn_resolver is None or self.tracker_resolver is None:
            raise BootstrapError("no resolvers configured")
        return bootstrap(
            self.address,
            self.asn_resolver,
            self.tracker_resolver,
            self.rng,
            container=self.config.container_domain,
        )

    def _self_descriptor(self) -> NodeDescriptor:
        return NodeDescriptor(
            identity=self.identity,
            address=self.address,
            supported_nslps=self.supported_nslps,
        )

    def _outgoing_buffer(
        self, exclude: PeerIdentity, requester: Address
    ) -> list[NodeDescriptor]:
        # Shared entries carry identity, address and NSLPs only: stored
        # metrics are relative to this node and would be fabrications in
        # anyone else's view.
        candidates = [self._self_descriptor()]
        candidates += [d.without_metrics() for d in self.view.descriptors()]
        shuffled = randomize(exclude, candidates, self.rng)
        return truncate(share_filter(self.config, shuffled, requester), self.config.m)

    def _nli(self) -> NliObject:
        return NliObject(
            identity=self.identity,
            address=self.address,
            ip_ttl=self.config.initial_ip_ttl,
            validity_time_ms=max(1, int(2 * self.config.delta_ms)),
        )

    # --------------------------------------------------------- passive thread

    def on_message(self, node: NodeId, msg: Message, meta: DeliveryMeta) -> None:
        mtype = MsgType(msg.header.msg_type)
        if mtype is MsgType.RUMOR:
            self._on_rumor(msg, meta)
        elif mtype is MsgType.RUMOR_RESPONSE:
            self._on_response(msg, meta)
        elif mtype is MsgType.RUMOR_ACK:
            pass  # loss-tolerant by design; nothing to clean up
        # epidemic signaling is handled by the dissemination engine

    def _on_rumor(self, msg: Message, meta: DeliveryMeta) -> None:
        origin = self._descriptor_of_origin(msg, meta)
        reply_list = self._outgoing_buffer(origin.identity, origin.address)
        echoed_record = None
        if msg.header.flags & FLAG_QMODE:
            echoed_record = list(msg.path_record or []) + [self.address]
        response = Message(
            header=CommonHeader(MsgType.RUMOR_RESPONSE, gist_hop_count=self.config.gist_hop_limit),
            mri=MriObject(source=self.address, destination=origin.address),
            sid=msg.sid,
            nli=self._nli(),
            supported_nslps=self.supported_nslps,
            node_list=reply_list,
            origin_send_time_ms=int(round(self.sim.now)),
            path_record=echoed_record,
        )
        self.sim.send(response, self.node_id, origin.address, DeliveryMode.D_MODE)
        self._absorb(msg.node_list, origin)

    def _on_response(self, msg: Message, meta: DeliveryMeta) -> None:
        session = self.pending_sessions.pop(msg.sid, None)
        if session is None or session.expires_at_ms < self.sim.now:
            return  # unknown, duplicate or stale session
        responder = self._descriptor_of_responder(msg, meta, session)
        ack = Message(
            header=CommonHeader(MsgType.RUMOR_ACK),
            mri=MriObject(source=self.address, destination=responder.address),
            sid=msg.sid,
            nli=self._nli(),
        )
        self._absorb(msg.node_list, responder)
        self.sim.send(ack, self.node_id, responder.address, DeliveryMode.D_MODE)

    def on_intercept(
        self, node: NodeId, msg: Message, meta: DeliveryMeta
    ) -> Optional[Message]:
        """Process-and-forward handling of a transiting Rumor: learn the
        origin, stamp ourselves into the path record, pass it on."""
        if MsgType(msg.header.msg_type) is not MsgType.RUMOR:
            return msg
        origin = self._descriptor_of_origin(msg, meta)
        self._absorb(msg.node_list, origin)
        msg.path_record = list(msg.path_record or []) + [self.address]
        return msg

    # ------------------------------------------------------------- descriptors

    def _descriptor_of_origin(self, msg: Message, meta: DeliveryMeta) -> NodeDescriptor:
        gist_hops = None
        path_vector = None
        if msg.header.flags & FLAG_FULLPATH:
            record = list(msg.path_record or [])
            gist_hops = len(record) + 1
            path_vector = tuple(reversed(record)) + (msg.nli.address,)
        elif msg.header.flags & FLAG_QMODE:
            # an intercepted Rumor reaches precisely this node's GIST-distance-1
            # neighborhood, in either direction
            gist_hops = 1
            path_vector = (msg.nli.address,)
        latency = None
        if msg.origin_send_time_ms is not None:
            latency = self.sim.now - msg.origin_send_time_ms
        return NodeDescriptor(
            identity=msg.nli.identity,
            address=msg.nli.address,
            supported_nslps=msg.supported_nslps or frozenset(),
            gist_hops=gist_hops,
            ip_hops=msg.nli.ip_ttl - meta.ttl,
            latency_ms=latency,
            path_vector=path_vector,
            learned_at=self.sim.now,
        )

    def _descriptor_of_responder(
        self, msg: Message, meta: DeliveryMeta, session: PendingSession
    ) -> NodeDescriptor:
        gist_hops = None
        path_vector = None
        record = msg.path_record or []
        if record and record[-1] == msg.nli.address:
            gist_hops = len(record)
            path_vector = tuple(record)
        return NodeDescriptor(
            identity=msg.nli.identity,
            address=msg.nli.address,
            supported_nslps=msg.supported_nslps or frozenset(),
            gist_hops=gist_hops,
            ip_hops=msg.nli.ip_ttl - meta.ttl,
            latency_ms=(self.sim.now - session.sent_at_ms) / 2,
            path_vector=path_vector,
            learned_at=self.sim.now,
        )

    # -------------------------------------------------------------- view logic

    def _absorb(
        self, node_list: Optional[list[NodeDescriptor]], measured: NodeDescriptor
    ) -> None:
        """Merge gossiped entries (defensively stripped) plus one locally
        measured descriptor, subject to the store policy."""
        now = self.sim.now
        incoming = [
            replace(d.without_metrics(), learned_at=now) for d in node_list or []
        ]
        incoming.append(measured)
        kept = [d for d in incoming if store_policy(self.config, d)]
        before = self.view.identities()
        self.view = merge(self.view, kept)
        if self.view.identities() != before:
            self._note_view_change()

    def _note_view_change(self) -> None:
        self._changed_since_cycle = True
        self.cycles_without_view_change = 0
        was_suspended = self.activity is Activity.SUSPENDED
        if self.activity is not Activity.ACTIVE:
            self.activity = Activity.ACTIVE
            self.current_delta_ms = self.config.delta_ms
            if was_suspended:
                self.sim.schedule(self.current_delta_ms, self._cycle)
        if self.on_view_change is not None:
            self.on_view_change(self.node_id)

    # ------------------------------------------------------------------ status

    def known_identities(self) -> set[PeerIdentity]:
        return self.view.identities()

    def has_full_metrics(self, peer: PeerIdentity) -> bool:
        d = self.view.entries.get(peer)
        return d is not None and None not in (d.gist_hops, d.ip_hops, d.latency_ms)


DEFAULT_ASN = 65000


@dataclass
class DiscoveryRuntime:
    """All gossip nodes of one simulated AS plus their shared setup."""

    sim: Simulator
    config: GossipConfig
    tracker: NodeId
    nodes: dict[NodeId, GossipNode]

    def start(self) -> None:
        for node in self.nodes.values():
            node.start()

    def identity_converged(self) -> bool:
        """True when every GIST node knows every other GIST node."""
        want = {n: {p.identity for p in self.nodes.values() if p.node_id != n}
                for n in self.nodes}
        return all(
            node.known_identities() >= want[node_id]
            for node_id, node in self.nodes.items()
        )

    def metrics_complete(self) -> bool:
        """True when every descriptor everywhere carries all three metrics."""
        for node in self.nodes.values():
            for peer in self.nodes.values():
                if peer.node_id == node.node_id:
                    continue
                if not node.has_full_metrics(peer.identity):
                    return False
        return True


def install_discovery(
    sim: Simulator,
    config: GossipConfig,
    tracker: NodeId,
    seed: int,
    supported_nslps: Optional[dict[NodeId, frozenset[NslpId]]] = None,
    on_view_change: Optional[Callable[[NodeId], None]] = None,
) -> DiscoveryRuntime:
    """Create one GossipNode per GIST-capable node, wire them to the
    simulator, and point everyone's resolvers at the given tracker."""
    topo = sim.topology
    if tracker not in topo.nodes or not topo.nodes[tracker].gist_capable:
        raise ValueError(f"tracker {tracker} must be a GIST-capable node")
    master = Random(seed)
    asn_table = {spec.address: DEFAULT_ASN for spec in topo.nodes.values()}
    name = tracker_domain(DEFAULT_ASN, config.container_domain)
    trackers = StaticTrackerResolver({name: [topo.address_of(tracker)]})
    asns = StaticAsnResolver(asn_table)

    nodes: dict[NodeId, GossipNode] = {}
    identities: set[bytes] = set()
    for node_id in topo.gist_ids:
        identity = master.randbytes(16)
        while identity in identities:
            identity = master.randbytes(16)
        identities.add(identity)
        node = GossipNode(
            sim=sim,
            node_id=node_id,
            identity=identity,
            config=config,
            rng=Random(master.getrandbits(64)),
            supported_nslps=(supported_nslps or {}).get(node_id, frozenset({1})),
            asn_resolver=asns,
            tracker_resolver=trackers,
            on_view_change=on_view_change,
        )
        sim.attach(node_id, node)
        nodes[node_id] = node
    return DiscoveryRuntime(sim=sim, config=config, tracker=tracker, nodes=nodes)
