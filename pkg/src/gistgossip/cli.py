"""Thin command-line client for the gistgossip service.

Every subcommand builds an HTTP request against the service API; by default
the requests run against an in-process instance of the app, and ``--server``
points them at a remote one instead. ``serve`` starts the real server.
"""
from __future__ import annotations

import asyncio
from pathlib import Path
from typing import Optional

import click
import httpx


def _call(server: Optional[str], path: str, payload: dict) -> dict:
    async def go() -> httpx.Response:
        if server:
            async with httpx.AsyncClient(base_url=server, timeout=600.0) as client:
                return await client.post(path, json=payload)
        from .service import app

        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://gistgossip.internal", timeout=600.0
        ) as client:
            return await client.post(path, json=payload)

    response = asyncio.run(go())
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise click.ClickException(f"{path} failed ({response.status_code}): {detail}")
    return response.json()


def _topology_payload(source: str) -> dict:
    if source == "nsfnet":
        return {"builtin": "nsfnet"}
    return {"text": Path(source).read_text()}


def _parse_radius(spec: str) -> list[int]:
    """Radius argument: a value ``2``, a range ``1..4`` or a list ``1,2,3``."""
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(part) for part in spec.split(",") if part]


@click.group()
def main() -> None:
    """Gossip discovery and scoped signaling dissemination experiments."""


@main.command()
@click.option("--topology", default="nsfnet", show_default=True,
              help="builtin name 'nsfnet' or a topology file path")
@click.option("--tracker", type=int, default=0, show_default=True)
@click.option("--approach", type=click.Choice(["q-mode", "udp-mode", "q-full"]),
              default="q-full", show_default=True)
@click.option("--seeds", type=int, default=100, show_default=True,
              help="number of consecutive seeds")
@click.option("--seed-base", type=int, default=0, show_default=True)
@click.option("--cycles", type=int, default=200, show_default=True,
              help="cycle budget per run")
@click.option("--delta-ms", type=float, default=10_000.0, show_default=True)
@click.option("--m", "m", type=int, default=1, show_default=True,
              help="descriptors per gossip message")
@click.option("--idle-threshold", type=int, default=None,
              help="idle cycles before relaxing; omit to keep nodes active "
                   "for the whole measurement")
@click.option("--share-netmask", type=int, default=0, show_default=True)
@click.option("--store-max-gist-hops", type=int, default=None)
@click.option("--store-max-ip-hops", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default="discovery.csv",
              show_default=True)
@click.option("--summary-out", type=click.Path(dir_okay=False), default=None,
              help="summary CSV path; defaults to <out> with a .summary.csv suffix")
@click.option("--server", default=None, help="base URL of a running service")
def discover(topology, tracker, approach, seeds, seed_base, cycles, delta_ms, m,
             idle_threshold, share_netmask, store_max_gist_hops, store_max_ip_hops,
             out, summary_out, server) -> None:
    """Run seeded discovery campaigns and write per-seed and summary CSVs."""
    payload = {
        "topology": _topology_payload(topology),
        "tracker": tracker,
        "approach": approach,
        "seeds": seeds,
        "seed_base": seed_base,
        "cycles": cycles,
        "delta_ms": delta_ms,
        "m": m,
        "idle_cycles_threshold": idle_threshold,
        "share_netmask": share_netmask,
        "store_max_gist_hops": store_max_gist_hops,
        "store_max_ip_hops": store_max_ip_hops,
    }
    result = _call(server, "/discover", payload)
    Path(out).write_text(result["csv"])
    summary_path = summary_out or str(Path(out).with_suffix(".summary.csv"))
    Path(summary_path).write_text(result["summary_csv"])
    s = result["summary"]
    click.echo(
        f"{s['approach']}: {s['converged']}/{s['seeds']} converged, "
        f"mean {s['mean_cycles']:.2f} cycles (p95 {s['p95_cycles']:.0f}), "
        f"mean {s['mean_messages']:.1f} messages -> {out}"
    )


@main.command()
@click.option("--topology", default="nsfnet", show_default=True)
@click.option("--mode", type=click.Choice(["bubble", "balloon", "hose"]),
              default="bubble", show_default=True)
@click.option("--strategy", default="gist-unicast", show_default=True,
              help="one of simple-unicast|gist-unicast|overlay-broadcast, "
                   "a comma list, or 'all'")
@click.option("--metric", type=click.Choice(["gist-hops", "ip-hops", "latency"]),
              default="gist-hops", show_default=True)
@click.option("--radius", default="2", show_default=True,
              help="radius value, range 'a..b', or comma list")
@click.option("--source", type=int, default=None,
              help="single sender; omit to average over all GIST senders")
@click.option("--target", type=int, default=None,
              help="balloon/hose target; omit to sample per sender")
@click.option("--seeds", type=int, default=1, show_default=True)
@click.option("--seed-base", type=int, default=0, show_default=True)
@click.option("--views", type=click.Choice(["oracle", "discovered"]),
              default="oracle", show_default=True,
              help="ground-truth knowledge or views from a discovery pre-run")
@click.option("--tracker", type=int, default=0, show_default=True,
              help="tracker for the pre-run when --views discovered")
@click.option("--prerun-cycles", type=int, default=200, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default="dissemination.csv",
              show_default=True)
@click.option("--server", default=None)
def disseminate(topology, mode, strategy, metric, radius, source, target, seeds,
                seed_base, views, tracker, prerun_cycles, out, server) -> None:
    """Run dissemination campaigns and write the per-row CSV."""
    strategies = (
        ["simple-unicast", "gist-unicast", "overlay-broadcast"]
        if strategy == "all"
        else [s.strip() for s in strategy.split(",") if s.strip()]
    )
    payload = {
        "topology": _topology_payload(topology),
        "mode": mode,
        "strategy": strategies,
        "metric": metric,
        "radius": _parse_radius(radius),
        "source": source,
        "target": target,
        "seeds": seeds,
        "seed_base": seed_base,
        "views": views,
        "tracker": tracker,
        "prerun_cycles": prerun_cycles,
    }
    result = _call(server, "/disseminate", payload)
    Path(out).write_text(result["csv"])
    click.echo(f"{len(result['rows'])} rows -> {out}")


@main.command()
@click.option("--builtin", default="nsfnet", show_default=True)
@click.option("--print", "do_print", is_flag=True, help="print the topology text")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--server", default=None)
def topo(builtin, do_print, out, server) -> None:
    """Dump a builtin topology in the topology file format."""
    result = _call(server, "/topology", {"builtin": builtin})
    if out:
        Path(out).write_text(result["text"])
        click.echo(f"wrote {out}")
    if do_print or not out:
        click.echo(result["text"], nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
