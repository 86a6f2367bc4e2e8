"""Experiment harness: seeded discovery and dissemination campaigns with
CSV emission.

Discovery runs measure cycles-to-convergence (every GIST node knows every
other) and message overhead per approach; dissemination runs measure link
usage per strategy and radius, averaged over senders. Every run is a pure
function of (topology, config, seed), so re-running a spec reproduces its
CSV byte for byte.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Optional, Sequence

from .discovery import (
    Approach,
    DiscoveryRuntime,
    GossipConfig,
    install_discovery,
)
from .dissemination import (
    DisseminationEngine,
    DisseminationRequest,
    OracleKnowledge,
    Knowledge,
    Strategy,
    ViewKnowledge,
)
from .model import MetricKind
from .simnet import Simulator, Topology, build_nsfnet, parse_topology
from .wire import EpidemicType, MsgType

DEFAULT_CYCLE_BUDGET = 200


def load_topology(source: str) -> Topology:
    """Resolve a topology argument: the builtin name ``nsfnet``, a file path,
    or raw topology text."""
    if source.strip() == "nsfnet":
        return build_nsfnet()
    if "\n" in source or source.lstrip().startswith(("node ", "link ", "#")):
        return parse_topology(source)
    return parse_topology(Path(source).read_text())


def is_converged(runtime: DiscoveryRuntime) -> bool:
    """Identity-level convergence: every GIST node's view contains every
    other GIST node. Metric completeness is reported separately."""
    return runtime.identity_converged()


@dataclass
class RunRecord:
    approach: str
    tracker: int
    seed: int
    cycles: int
    messages_rumor: int
    messages_response: int
    messages_ack: int
    messages_forwarded: int
    converged: bool
    metrics_complete: bool

    @property
    def total_messages(self) -> int:
        return (
            self.messages_rumor
            + self.messages_response
            + self.messages_ack
            + self.messages_forwarded
        )


@dataclass
class DiscoverySummary:
    approach: str
    tracker: int
    seeds: int
    converged: int
    failed: int
    mean_cycles: float
    p95_cycles: float
    mean_messages: float
    p95_messages: float


def run_discovery_once(
    topology: Topology,
    config: GossipConfig,
    tracker: int,
    seed: int,
    budget_cycles: int = DEFAULT_CYCLE_BUDGET,
) -> RunRecord:
    """One seeded discovery run; stops counting at the convergence instant."""
    sim = Simulator(topology)
    state: dict = {"converged_at": None, "stats": None, "metrics_complete": False}
    runtime_box: list[DiscoveryRuntime] = []

    def on_view_change(_node: int) -> None:
        if state["converged_at"] is None and runtime_box[0].identity_converged():
            state["converged_at"] = sim.now
            state["stats"] = sim.stats.snapshot()
            state["metrics_complete"] = runtime_box[0].metrics_complete()

    runtime = install_discovery(
        sim, config, tracker, seed, on_view_change=on_view_change
    )
    runtime_box.append(runtime)

    if runtime.identity_converged():  # degenerate: nothing to discover
        state["converged_at"] = 0.0
        state["stats"] = sim.stats.snapshot()
        state["metrics_complete"] = runtime.metrics_complete()
    else:
        runtime.start()
        budget_ms = budget_cycles * config.delta_ms
        # step one cycle at a time so the run can stop right after the
        # convergence event instead of simulating out the whole budget
        while (
            sim.now < budget_ms
            and state["converged_at"] is None
            and sim.pending_events
        ):
            sim.run_until(min(budget_ms, sim.now + config.delta_ms))

    converged = state["converged_at"] is not None
    stats = state["stats"] if converged else sim.stats
    cycles = (
        math.ceil(state["converged_at"] / config.delta_ms) if converged else budget_cycles
    )
    return RunRecord(
        approach=config.approach.value,
        tracker=tracker,
        seed=seed,
        cycles=cycles,
        messages_rumor=stats.messages[MsgType.RUMOR],
        messages_response=stats.messages[MsgType.RUMOR_RESPONSE],
        messages_ack=stats.messages[MsgType.RUMOR_ACK],
        messages_forwarded=stats.forwarded,
        converged=converged,
        metrics_complete=state["metrics_complete"],
    )


def _p95(values: Sequence[float]) -> float:
    ordered = sorted(values)
    idx = max(0, math.ceil(0.95 * len(ordered)) - 1)
    return float(ordered[idx])


def summarize_discovery(records: Sequence[RunRecord]) -> DiscoverySummary:
    ok = [r for r in records if r.converged]
    cycles = [r.cycles for r in ok]
    msgs = [r.total_messages for r in ok]
    return DiscoverySummary(
        approach=records[0].approach,
        tracker=records[0].tracker,
        seeds=len(records),
        converged=len(ok),
        failed=len(records) - len(ok),
        mean_cycles=statistics.mean(cycles) if cycles else float("nan"),
        p95_cycles=_p95(cycles) if cycles else float("nan"),
        mean_messages=statistics.mean(msgs) if msgs else float("nan"),
        p95_messages=_p95(msgs) if msgs else float("nan"),
    )


def run_discovery(
    topology: Topology,
    config: GossipConfig,
    tracker: int,
    seeds: Sequence[int],
    budget_cycles: int = DEFAULT_CYCLE_BUDGET,
) -> tuple[list[RunRecord], DiscoverySummary]:
    if not seeds:
        raise ValueError("at least one seed is required")
    records = [
        run_discovery_once(topology, config, tracker, seed, budget_cycles)
        for seed in sorted(seeds)
    ]
    return records, summarize_discovery(records)


@dataclass
class DisseminationRow:
    strategy: str
    mode: str
    metric: str
    radius: int
    avg_traversals: float
    avg_distinct_links: float
    avg_messages: float
    senders: int


def discovered_knowledge(
    topology: Topology,
    tracker: int,
    seed: int,
    budget_cycles: int = DEFAULT_CYCLE_BUDGET,
) -> Knowledge:
    """Run process-and-forward discovery until every pair has measured every
    metric, then freeze the views into a knowledge source.

    Suspension is disabled for the pre-run: membership stabilizes long
    before all pairwise measurements exist.
    """
    config = GossipConfig(
        approach=Approach.Q_FULL, idle_cycles_threshold=10**9
    )
    sim = Simulator(topology)
    runtime = install_discovery(sim, config, tracker, seed)
    runtime.start()
    budget_ms = budget_cycles * config.delta_ms
    while sim.now < budget_ms and not (
        runtime.identity_converged() and runtime.metrics_complete()
    ):
        sim.run_until(min(budget_ms, sim.now + config.delta_ms))
    if not runtime.metrics_complete():
        raise RuntimeError(
            f"views incomplete after {budget_cycles} cycles; raise the budget"
        )
    return ViewKnowledge(
        {node_id: node.view for node_id, node in runtime.nodes.items()}, topology
    )


def run_dissemination(
    topology: Topology,
    modes: Sequence[EpidemicType],
    strategies: Sequence[Strategy],
    metric: MetricKind,
    radii: Sequence[int],
    seeds: Sequence[int],
    source: Optional[int] = None,
    target: Optional[int] = None,
    knowledge: Optional[Knowledge] = None,
) -> list[DisseminationRow]:
    """Average dissemination cost per (strategy, mode, radius) over senders
    and seeds. Ground-truth knowledge is used unless a converged-view
    knowledge source is supplied."""
    if knowledge is None:
        knowledge = OracleKnowledge(topology)
    senders = [source] if source is not None else list(topology.gist_ids)
    rows: list[DisseminationRow] = []
    for strategy in strategies:
        for mode in modes:
            for radius in radii:
                traversals: list[int] = []
                distinct: list[int] = []
                messages: list[int] = []
                for seed in sorted(seeds):
                    rng = Random(f"{seed}/{strategy.value}/{mode.name}/{radius}")
                    for sender in senders:
                        req_target = None
                        if mode is not EpidemicType.BUBBLE:
                            req_target = target
                            if req_target is None:
                                others = [n for n in topology.gist_ids if n != sender]
                                req_target = rng.choice(others)
                        request = DisseminationRequest(
                            source=sender,
                            epidemic_type=mode,
                            strategy=strategy,
                            radius=radius,
                            metric=metric,
                            target=req_target,
                        )
                        sim = Simulator(topology)
                        engine = DisseminationEngine(
                            sim, knowledge, seed=rng.getrandbits(32)
                        )
                        report = engine.run(request)
                        traversals.append(report.link_traversals)
                        distinct.append(report.distinct_links)
                        messages.append(report.messages_sent)
                rows.append(
                    DisseminationRow(
                        strategy=strategy.value,
                        mode=mode.name.lower(),
                        metric=metric.name.lower().replace("_", "-"),
                        radius=radius,
                        avg_traversals=statistics.mean(traversals),
                        avg_distinct_links=statistics.mean(distinct),
                        avg_messages=statistics.mean(messages),
                        senders=len(senders),
                    )
                )
    return rows


# ------------------------------------------------------------------ CSV output

def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def discovery_csv(records: Sequence[RunRecord]) -> str:
    header = (
        "approach,tracker,seed,cycles,messages_rumor,messages_response,"
        "messages_ack,messages_forwarded,converged,metrics_complete"
    )
    lines = [header]
    for r in records:
        lines.append(
            ",".join(
                _cell(v)
                for v in (
                    r.approach, r.tracker, r.seed, r.cycles, r.messages_rumor,
                    r.messages_response, r.messages_ack, r.messages_forwarded,
                    r.converged, r.metrics_complete,
                )
            )
        )
    return "\n".join(lines) + "\n"


def discovery_summary_csv(summaries: Sequence[DiscoverySummary]) -> str:
    header = (
        "approach,tracker,seeds,converged,failed,mean_cycles,p95_cycles,"
        "mean_messages,p95_messages"
    )
    lines = [header]
    for s in summaries:
        lines.append(
            ",".join(
                _cell(v)
                for v in (
                    s.approach, s.tracker, s.seeds, s.converged, s.failed,
                    s.mean_cycles, s.p95_cycles, s.mean_messages, s.p95_messages,
                )
            )
        )
    return "\n".join(lines) + "\n"


def dissemination_csv(rows: Sequence[DisseminationRow]) -> str:
    header = (
        "strategy,mode,metric,radius,avg_traversals,avg_distinct_links,"
        "avg_messages,senders"
    )
    lines = [header]
    for r in rows:
        lines.append(
            ",".join(
                _cell(v)
                for v in (
                    r.strategy, r.mode, r.metric, r.radius, r.avg_traversals,
                    r.avg_distinct_links, r.avg_messages, r.senders,
                )
            )
        )
    return "\n".join(lines) + "\n"
