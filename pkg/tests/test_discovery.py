"""Gossip engine: exchanges, metric acquisition, activity ladder, policies."""
from __future__ import annotations

from ipaddress import IPv4Address

import pytest

from gistgossip.discovery import (
    Activity,
    Approach,
    GossipConfig,
    GossipNode,
    install_discovery,
    share_filter,
    store_policy,
)
from gistgossip.model import NodeDescriptor
from gistgossip.simnet import DeliveryMeta, DeliveryMode, Simulator, build_line, build_nsfnet
from gistgossip.wire import CommonHeader, Message, MriObject, MsgType, NliObject


def cfg(approach: Approach = Approach.UDP_MODE, **kw) -> GossipConfig:
    return GossipConfig(approach=approach, **kw)


def runtime_on(topo, config, tracker=0, seed=1):
    sim = Simulator(topo)
    runtime = install_discovery(sim, config, tracker, seed)
    return sim, runtime


def node_ids_known(runtime, node_id) -> set[int]:
    by_identity = {n.identity: nid for nid, n in runtime.nodes.items()}
    return {by_identity[i] for i in runtime.nodes[node_id].known_identities()}


def run_to_convergence(sim, runtime, config, max_cycles=600):
    runtime.start()
    budget = max_cycles * config.delta_ms
    while sim.now < budget and not runtime.identity_converged() and sim.pending_events:
        sim.run_until(min(budget, sim.now + config.delta_ms))
    assert runtime.identity_converged(), "discovery did not converge"


class TestActiveCycle:
    def test_first_cycle_targets_tracker(self):
        topo = build_line(3, gist={0, 2})
        config = cfg(Approach.UDP_MODE)
        sim, runtime = runtime_on(topo, config, tracker=2)
        node0 = runtime.nodes[0]
        node0._gossip_once()
        assert sim.stats.messages[MsgType.RUMOR] == 1
        (session,) = node0.pending_sessions.values()
        assert session.peer_address == topo.address_of(2)

    def test_first_exchange_aims_at_tracker_even_with_populated_view(self):
        topo = build_line(3, gist={0, 1, 2})
        config = cfg(Approach.UDP_MODE)
        sim, runtime = runtime_on(topo, config, tracker=2)
        node0 = runtime.nodes[0]
        node0._absorb([], runtime.nodes[1]._self_descriptor())
        node0._gossip_once()
        (session,) = node0.pending_sessions.values()
        assert session.peer_address == topo.address_of(2)
        # afterwards the tracker is no longer forced
        assert node0._bootstrapped

    def test_outgoing_node_list_has_m_entries(self):
        topo = build_line(3, gist={0, 2})
        config = cfg(Approach.UDP_MODE, m=1)
        sim, runtime = runtime_on(topo, config, tracker=2)
        node0 = runtime.nodes[0]
        for i in range(3, 6):
            node0._absorb(
                [],
                NodeDescriptor(
                    identity=bytes([i]) * 16,
                    address=IPv4Address(f"10.9.0.{i}"),
                    learned_at=1.0,
                ),
            )
        buffer = node0._outgoing_buffer(b"", topo.address_of(2))
        assert len(buffer) == 1

    def test_tracker_with_empty_view_skips_quietly(self):
        topo = build_line(3, gist={0, 2})
        config = cfg(Approach.UDP_MODE)
        sim, runtime = runtime_on(topo, config, tracker=2)
        tracker = runtime.nodes[2]
        tracker._gossip_once()
        assert sim.stats.messages[MsgType.RUMOR] == 0

    def test_q_mode_rumor_consumed_by_interceptor(self):
        topo = build_line(5, gist={0, 2, 4})
        config = cfg(Approach.Q_MODE)
        sim, runtime = runtime_on(topo, config, tracker=4)
        node0 = runtime.nodes[0]
        node0._gossip_once()  # toward the tracker at node 4
        sim.run_to_completion()
        # node 2 intercepted and answered; node 4 saw nothing
        assert node_ids_known(runtime, 2) == {0}
        assert node_ids_known(runtime, 4) == set()
        assert node_ids_known(runtime, 0) == {2}

    def test_exchange_is_exactly_three_messages(self):
        topo = build_line(3, gist={0, 2})
        config = cfg(Approach.UDP_MODE)
        sim, runtime = runtime_on(topo, config, tracker=2)
        runtime.nodes[0]._gossip_once()
        sim.run_to_completion()
        assert sim.stats.messages[MsgType.RUMOR] == 1
        assert sim.stats.messages[MsgType.RUMOR_RESPONSE] == 1
        assert sim.stats.messages[MsgType.RUMOR_ACK] == 1
        assert sim.stats.forwarded == 0


class TestMetricAcquisition:
    def test_q_full_interceptor_and_destination_measurements(self):
        topo = build_line(5, gist={0, 2, 4})
        config = cfg(Approach.Q_FULL)
        sim, runtime = runtime_on(topo, config, tracker=4)
        node0 = runtime.nodes[0]
        node0._gossip_once()
        sim.run_to_completion()

        at2 = runtime.nodes[2].view.entries[node0.identity]
        assert (at2.gist_hops, at2.ip_hops, at2.latency_ms) == (1, 2, 20.0)
        assert at2.path_vector == (topo.address_of(0),)

        at4 = runtime.nodes[4].view.entries[node0.identity]
        assert (at4.gist_hops, at4.ip_hops, at4.latency_ms) == (2, 4, 40.0)
        assert at4.path_vector == (topo.address_of(2), topo.address_of(0))

        # the origin learns the responder's full path from the echoed record
        at0 = node0.view.entries[runtime.nodes[4].identity]
        assert (at0.gist_hops, at0.ip_hops, at0.latency_ms) == (2, 4, 40.0)
        assert at0.path_vector == (topo.address_of(2), topo.address_of(4))

    def test_udp_round_trip_latency_halved(self):
        topo = build_line(3, gist={0, 2})
        config = cfg(Approach.UDP_MODE)
        sim, runtime = runtime_on(topo, config, tracker=2)
        runtime.nodes[0]._gossip_once()
        sim.run_to_completion()
        at0 = runtime.nodes[0].view.entries[runtime.nodes[2].identity]
        assert at0.latency_ms == 20.0  # 40 ms round trip over two 10 ms links
        assert at0.ip_hops == 2
        assert at0.gist_hops is None

    def test_q_full_hop_budget_exhaustion_is_silent(self):
        topo = build_line(5, gist={0, 2, 4})
        config = cfg(Approach.Q_FULL, gist_hop_limit=1)
        sim, runtime = runtime_on(topo, config, tracker=4)
        runtime.nodes[0]._gossip_once()
        sim.run_to_completion()
        assert node_ids_known(runtime, 2) == {0}  # processed before the drop
        assert node_ids_known(runtime, 4) == set()
        assert node_ids_known(runtime, 0) == set()  # no response ever comes

    def test_duplicate_response_dropped(self):
        topo = build_line(3, gist={0, 2})
        config = cfg(Approach.UDP_MODE)
        sim, runtime = runtime_on(topo, config, tracker=2)
        node0, node2 = runtime.nodes[0], runtime.nodes[2]
        node0._gossip_once()
        (sid,) = node0.pending_sessions.keys()
        response = Message(
            header=CommonHeader(MsgType.RUMOR_RESPONSE),
            mri=MriObject(source=node2.address, destination=node0.address),
            sid=sid,
            nli=node2._nli(),
        )
        meta = DeliveryMeta(time_ms=sim.now, ttl=62, mode=DeliveryMode.D_MODE,
                            to_address=node0.address)
        node0._on_response(response, meta)
        acks = sim.stats.messages[MsgType.RUMOR_ACK]
        node0._on_response(response, meta)  # same sid again: silently ignored
        assert sim.stats.messages[MsgType.RUMOR_ACK] == acks
        assert node0.view.entries[node2.identity] is not None

    def test_pending_sessions_expire(self):
        topo = build_line(3, gist={0, 2})
        config = cfg(Approach.UDP_MODE)
        sim, runtime = runtime_on(topo, config, tracker=2)
        node0 = runtime.nodes[0]
        node0._gossip_once()
        sim.now = sim.now + 2 * config.delta_ms + 1
        node0._expire_sessions()
        assert not node0.pending_sessions


class TestActivityLadder:
    def make_idle_node(self) -> tuple[Simulator, GossipNode]:
        topo = build_line(3, gist={0, 2})
        config = cfg(Approach.UDP_MODE)
        sim, runtime = runtime_on(topo, config, tracker=2)
        return sim, runtime.nodes[0]

    def test_single_relax_step_after_threshold(self):
        _, node = self.make_idle_node()
        for _ in range(5):
            node._check_idle()
        assert node.current_delta_ms == 20_000.0
        assert node.activity is Activity.RELAXED

    def test_ladder_reaches_suspension(self):
        _, node = self.make_idle_node()
        deltas = []
        for _ in range(9):
            node._check_idle()
            deltas.append(node.current_delta_ms)
            if node.activity is Activity.SUSPENDED:
                break
        assert deltas[4:8] == [20_000.0, 40_000.0, 80_000.0, 80_000.0]
        assert node.activity is Activity.SUSPENDED

    def test_view_change_resets_relaxed_node(self):
        sim, node = self.make_idle_node()
        for _ in range(5):
            node._check_idle()
        assert node.activity is Activity.RELAXED
        node._absorb(
            [], NodeDescriptor(identity=bytes([9]) * 16, address=IPv4Address("10.9.9.9"))
        )
        assert node.activity is Activity.ACTIVE
        assert node.current_delta_ms == 10_000.0
        assert node.cycles_without_view_change == 0

    def test_suspended_node_reactivates_and_reschedules(self):
        sim, node = self.make_idle_node()
        for _ in range(9):
            node._check_idle()
        assert node.activity is Activity.SUSPENDED
        pending_before = sim.pending_events
        node._absorb(
            [], NodeDescriptor(identity=bytes([9]) * 16, address=IPv4Address("10.9.9.9"))
        )
        assert node.activity is Activity.ACTIVE
        assert node.current_delta_ms == 10_000.0
        assert sim.pending_events == pending_before + 1

    def test_fully_suspended_network_goes_quiet(self):
        topo = build_line(3, gist={0, 2})
        config = cfg(Approach.UDP_MODE)  # spec'd relax defaults stay on
        sim, runtime = runtime_on(topo, config, tracker=2)
        runtime.start()
        sim.run_to_completion(limit_ms=10_000_000)
        assert runtime.identity_converged()
        assert all(n.activity is Activity.SUSPENDED for n in runtime.nodes.values())
        quiet = sim.stats.total_messages()
        assert sim.pending_events == 0
        sim.run_until(sim.now + 1_000_000)
        assert sim.stats.total_messages() == quiet
        # an externally injected view change wakes the node up again
        runtime.nodes[0]._absorb(
            [], NodeDescriptor(identity=bytes([9]) * 16, address=topo.address_of(1))
        )
        sim.run_until(sim.now + 50_000)
        assert sim.stats.total_messages() > quiet


class TestPolicies:
    def test_share_filter_prefix_zero_keeps_all(self):
        config = cfg(share_netmask=0)
        buf = [
            NodeDescriptor(identity=bytes([1]) * 16, address=IPv4Address("10.0.1.9")),
            NodeDescriptor(identity=bytes([2]) * 16, address=IPv4Address("10.0.2.9")),
        ]
        assert share_filter(config, buf, IPv4Address("10.0.1.5")) == buf

    def test_share_filter_prefix_24(self):
        config = cfg(share_netmask=24)
        keep = NodeDescriptor(identity=bytes([1]) * 16, address=IPv4Address("10.0.1.9"))
        drop = NodeDescriptor(identity=bytes([2]) * 16, address=IPv4Address("10.0.2.9"))
        assert share_filter(config, [keep, drop], IPv4Address("10.0.1.5")) == [keep]

    def test_share_filter_empty(self):
        assert share_filter(cfg(share_netmask=24), [], IPv4Address("10.0.1.5")) == []

    def test_store_policy_rejects_beyond_bound(self):
        config = cfg(store_max_gist_hops=2)
        d = NodeDescriptor(
            identity=bytes([1]) * 16, address=IPv4Address("10.0.0.9"),
            gist_hops=3, path_vector=(IPv4Address("10.0.0.7"), IPv4Address("10.0.0.8"),
                                      IPv4Address("10.0.0.9")),
        )
        assert store_policy(config, d) is False

    def test_store_policy_unset_bound_accepts(self):
        d = NodeDescriptor(identity=bytes([1]) * 16, address=IPv4Address("10.0.0.9"),
                           gist_hops=9, path_vector=tuple(
                               IPv4Address(f"10.0.1.{i}") for i in range(1, 9)
                           ) + (IPv4Address("10.0.0.9"),))
        assert store_policy(cfg(), d) is True

    def test_store_policy_never_rejects_absent_metric(self):
        config = cfg(store_max_gist_hops=1)
        d = NodeDescriptor(identity=bytes([1]) * 16, address=IPv4Address("10.0.0.9"))
        assert store_policy(config, d) is True

    def test_udp_discovery_converges_despite_gist_bound(self):
        # regression: rejecting on a missing metric would stall UDP discovery
        topo = build_line(5, gist={0, 2, 4})
        config = cfg(Approach.UDP_MODE, store_max_gist_hops=1,
                     idle_cycles_threshold=10**9)
        sim, runtime = runtime_on(topo, config, tracker=0)
        run_to_convergence(sim, runtime, config)


class TestConvergence:
    def test_q_full_views_match_oracle_on_line(self):
        topo = build_line(5, gist={0, 2, 4})
        config = cfg(Approach.Q_FULL, idle_cycles_threshold=10**9)
        sim, runtime = runtime_on(topo, config, tracker=0, seed=3)
        runtime.start()
        budget = 200 * config.delta_ms
        while sim.now < budget and not runtime.metrics_complete():
            sim.run_until(sim.now + config.delta_ms)
        assert runtime.identity_converged() and runtime.metrics_complete()
        for x, node in runtime.nodes.items():
            for y, peer in runtime.nodes.items():
                if x == y:
                    continue
                d = node.view.entries[peer.identity]
                route = topo.route(x, y)
                assert d.gist_hops == topo.gist_distance(x, y)
                assert d.ip_hops == route.ip_hops
                assert d.latency_ms == route.latency_ms
                assert d.path_vector == tuple(
                    topo.address_of(n) for n in topo.gist_path(x, y)
                )

    def test_q_full_views_match_oracle_on_nsfnet(self):
        topo = build_nsfnet()
        config = cfg(Approach.Q_FULL, idle_cycles_threshold=10**9)
        sim, runtime = runtime_on(topo, config, tracker=0, seed=5)
        runtime.start()
        budget = 400 * config.delta_ms
        while sim.now < budget and not runtime.metrics_complete():
            sim.run_until(sim.now + config.delta_ms)
        assert runtime.metrics_complete()
        for x, node in runtime.nodes.items():
            for y, peer in runtime.nodes.items():
                if x == y:
                    continue
                d = node.view.entries[peer.identity]
                assert d.gist_hops == topo.gist_distance(x, y)
                assert d.ip_hops == topo.route(x, y).ip_hops
                assert d.latency_ms == topo.route(x, y).latency_ms

    def test_udp_converges_with_gist_hops_absent(self):
        topo = build_nsfnet()
        config = cfg(Approach.UDP_MODE, idle_cycles_threshold=10**9)
        sim, runtime = runtime_on(topo, config, tracker=0, seed=7)
        run_to_convergence(sim, runtime, config)
        for node in runtime.nodes.values():
            for d in node.view.descriptors():
                assert d.gist_hops is None
                assert d.path_vector is None

    def test_q_mode_metrics_limited_to_distance_one(self):
        topo = build_nsfnet()
        config = cfg(Approach.Q_MODE, idle_cycles_threshold=10**9)
        sim, runtime = runtime_on(topo, config, tracker=0, seed=11)
        run_to_convergence(sim, runtime, config)
        addr_to_node = topo.by_address
        for x, node in runtime.nodes.items():
            for d in node.view.descriptors():
                peer = addr_to_node[d.address]
                if d.gist_hops is not None:
                    assert topo.gist_distance(x, peer) == 1
                    assert d.gist_hops == 1


class TestConfigFile:
    def test_parse_key_values(self):
        config = GossipConfig.from_text(
            """
            # lab profile
            delta_ms = 5000
            m = 2
            approach = q-full
            idle_cycles_threshold = 7
            relax_factor = 3.0
            max_delta_ms = none
            share_netmask = 24
            store_max_ip_hops = 6
            """
        )
        assert config.delta_ms == 5000
        assert config.m == 2
        assert config.approach is Approach.Q_FULL
        assert config.idle_cycles_threshold == 7
        assert config.relax_factor == 3.0
        assert config.effective_max_delta_ms == 40_000
        assert config.share_netmask == 24
        assert config.store_max_ip_hops == 6
        assert config.store_max_gist_hops is None

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            GossipConfig.from_text("bogus = 1")

    def test_defaults(self):
        config = GossipConfig()
        assert config.delta_ms == 10_000.0
        assert config.m == 1
        assert config.idle_cycles_threshold == 5
        assert config.relax_factor == 2.0
        assert config.effective_max_delta_ms == 80_000.0

    def test_validation(self):
        with pytest.raises(ValueError):
            GossipConfig(m=0)
        with pytest.raises(ValueError):
            GossipConfig(delta_ms=0)
        with pytest.raises(ValueError):
            GossipConfig(share_netmask=40)

    def test_tracker_must_be_gist_capable(self):
        topo = build_line(3, gist={0, 2})
        with pytest.raises(ValueError):
            install_discovery(Simulator(topo), GossipConfig(), tracker=1, seed=0)
