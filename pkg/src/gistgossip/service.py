"""HTTP service exposing the experiment harness.

Endpoints accept an inline topology (builtin name or topology text), run the
seeded campaign server-side and return structured rows plus the rendered CSV
so clients reproduce files byte for byte.
"""
from __future__ import annotations

from dataclasses import asdict
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .bootstrap import BootstrapError
from .discovery import Approach, GossipConfig
from .dissemination import (
    KnowledgeError,
    Strategy,
    UnsupportedCombination,
)
from .harness import (
    DEFAULT_CYCLE_BUDGET,
    discovered_knowledge,
    discovery_csv,
    discovery_summary_csv,
    dissemination_csv,
    run_discovery,
    run_dissemination,
)
from .model import MetricKind
from .simnet import Topology, TopologyError, build_nsfnet, parse_topology
from .wire import EpidemicType

_METRICS = {
    "gist-hops": MetricKind.GIST_HOPS,
    "ip-hops": MetricKind.IP_HOPS,
    "latency": MetricKind.LATENCY,
}
_MODES = {
    "bubble": EpidemicType.BUBBLE,
    "balloon": EpidemicType.BALLOON,
    "hose": EpidemicType.HOSE,
}


class TopologySpec(BaseModel):
    """Where the topology comes from: a builtin name or inline text."""

    builtin: Optional[str] = "nsfnet"
    text: Optional[str] = None

    def resolve(self) -> Topology:
        if self.text:
            return parse_topology(self.text)
        if self.builtin == "nsfnet":
            return build_nsfnet()
        raise TopologyError(f"unknown builtin topology {self.builtin!r}")


class DiscoverRequest(BaseModel):
    topology: TopologySpec = TopologySpec()
    tracker: int = 0
    approach: Literal["q-mode", "udp-mode", "q-full"] = "q-full"
    seeds: int = Field(100, ge=1, description="number of consecutive seeds")
    seed_base: int = 0
    cycles: int = Field(DEFAULT_CYCLE_BUDGET, ge=1, description="cycle budget")
    delta_ms: float = Field(10_000.0, gt=0)
    m: int = Field(1, ge=1)
    idle_cycles_threshold: Optional[int] = Field(
        None,
        description="idle cycles before relaxing; unset disables suspension "
        "so convergence measurements are not cut short",
    )
    share_netmask: int = Field(0, ge=0, le=32)
    store_max_gist_hops: Optional[int] = None
    store_max_ip_hops: Optional[int] = None

    def config(self) -> GossipConfig:
        return GossipConfig(
            delta_ms=self.delta_ms,
            m=self.m,
            approach=Approach(self.approach),
            idle_cycles_threshold=(
                10**9 if self.idle_cycles_threshold is None else self.idle_cycles_threshold
            ),
            share_netmask=self.share_netmask,
            store_max_gist_hops=self.store_max_gist_hops,
            store_max_ip_hops=self.store_max_ip_hops,
        )


class RunRecordOut(BaseModel):
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


class DiscoverySummaryOut(BaseModel):
    approach: str
    tracker: int
    seeds: int
    converged: int
    failed: int
    mean_cycles: float
    p95_cycles: float
    mean_messages: float
    p95_messages: float


class DiscoverResponse(BaseModel):
    records: list[RunRecordOut]
    summary: DiscoverySummaryOut
    csv: str
    summary_csv: str


class DisseminateRequest(BaseModel):
    topology: TopologySpec = TopologySpec()
    mode: Literal["bubble", "balloon", "hose"] = "bubble"
    strategy: list[
        Literal["simple-unicast", "gist-unicast", "overlay-broadcast"]
    ] = ["gist-unicast"]
    metric: Literal["gist-hops", "ip-hops", "latency"] = "gist-hops"
    radius: list[int] = Field([2], min_length=1)
    source: Optional[int] = None
    target: Optional[int] = None
    seeds: int = Field(1, ge=1)
    seed_base: int = 0
    views: Literal["oracle", "discovered"] = "oracle"
    tracker: int = 0  # tracker for the discovery pre-run when views=discovered
    prerun_cycles: int = DEFAULT_CYCLE_BUDGET


class DisseminationRowOut(BaseModel):
    strategy: str
    mode: str
    metric: str
    radius: int
    avg_traversals: float
    avg_distinct_links: float
    avg_messages: float
    senders: int


class DisseminateResponse(BaseModel):
    rows: list[DisseminationRowOut]
    csv: str


class TopologyResponse(BaseModel):
    text: str


app = FastAPI(title="gistgossip", version=__version__)


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/discover", response_model=DiscoverResponse)
def discover(request: DiscoverRequest) -> DiscoverResponse:
    try:
        topology = request.topology.resolve()
        seeds = range(request.seed_base, request.seed_base + request.seeds)
        records, summary = run_discovery(
            topology, request.config(), request.tracker, list(seeds), request.cycles
        )
    except (TopologyError, BootstrapError, ValueError) as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    return DiscoverResponse(
        records=[RunRecordOut(**asdict(r)) for r in records],
        summary=DiscoverySummaryOut(**asdict(summary)),
        csv=discovery_csv(records),
        summary_csv=discovery_summary_csv([summary]),
    )


@app.post("/disseminate", response_model=DisseminateResponse)
def disseminate(request: DisseminateRequest) -> DisseminateResponse:
    try:
        topology = request.topology.resolve()
        knowledge = None
        if request.views == "discovered":
            knowledge = discovered_knowledge(
                topology, request.tracker, request.seed_base, request.prerun_cycles
            )
        rows = run_dissemination(
            topology,
            modes=[_MODES[request.mode]],
            strategies=[Strategy(s) for s in request.strategy],
            metric=_METRICS[request.metric],
            radii=request.radius,
            seeds=list(range(request.seed_base, request.seed_base + request.seeds)),
            source=request.source,
            target=request.target,
            knowledge=knowledge,
        )
    except (
        TopologyError,
        KnowledgeError,
        UnsupportedCombination,
        ValueError,
        RuntimeError,
    ) as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    return DisseminateResponse(
        rows=[DisseminationRowOut(**asdict(r)) for r in rows],
        csv=dissemination_csv(rows),
    )


@app.post("/topology", response_model=TopologyResponse)
def topology_dump(spec: TopologySpec) -> TopologyResponse:
    try:
        return TopologyResponse(text=spec.resolve().to_text())
    except TopologyError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
