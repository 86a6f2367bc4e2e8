"""Tracker identification: IP-to-ASN mapping and ASN-based DNS names.

A joining node maps its own address to an AS number, builds the tracker
domain name ``as<ASN>.<container>`` and resolves it to one or more tracker
addresses. Both lookups sit behind small interfaces; the shipped backends
are static maps so simulations stay deterministic. Live whois/DNS clients
can implement the same interfaces but are out of scope here.
"""
from __future__ import annotations

from ipaddress import IPv4Address
from random import Random
from typing import Protocol, Sequence

from .model import Address


class BootstrapError(Exception):
    """Tracker identification failed; retry after one cycle."""


class AsnResolver(Protocol):
    def lookup(self, ip: Address) -> int: ...


class TrackerResolver(Protocol):
    def resolve(self, name: str) -> list[Address]: ...


class StaticAsnResolver:
    """IP-to-ASN mapping backed by a fixed table."""

    def __init__(self, table: dict[Address, int]):
        self.table = dict(table)

    def lookup(self, ip: Address) -> int:
        try:
            return self.table[ip]
        except KeyError:
            raise BootstrapError(f"no ASN known for {ip}")


class StaticTrackerResolver:
    """DNS stand-in: domain name to tracker address list."""

    def __init__(self, table: dict[str, list[Address]]):
        self.table = {name.lower(): list(addrs) for name, addrs in table.items()}

    def resolve(self, name: str) -> list[Address]:
        addrs = self.table.get(name.lower())
        if not addrs:
            raise BootstrapError(f"{name} does not resolve")
        return list(addrs)


class FixedTrackerResolver:
    """Degenerate resolver for statically configured tracker addresses;
    returns the same list for every name."""

    def __init__(self, addrs: Sequence[Address]):
        self.addrs = list(addrs)

    def resolve(self, name: str) -> list[Address]:
        if not self.addrs:
            raise BootstrapError("no tracker addresses configured")
        return list(self.addrs)


def tracker_domain(asn: int, container: str) -> str:
    """Build the tracker domain name for an AS, e.g. (137, "nsis.org") ->
    "as137.nsis.org"."""
    if asn < 0:
        raise ValueError("ASN must be non-negative")
    if not container:
        raise ValueError("container domain must be non-empty")
    return f"as{asn}.{container}".lower()


def bootstrap(
    own_address: Address,
    asn_resolver: AsnResolver,
    tracker_resolver: TrackerResolver,
    rng: Random,
    container: str = "nsis.org",
) -> Address:
    """Pick the address of a bootstrapping node for a joining node.

    Resolves the node's ASN, builds the tracker domain, and picks one of the
    resolved addresses uniformly at random (never the node's own address).
    """
    asn = asn_resolver.lookup(own_address)
    name = tracker_domain(asn, container)
    candidates = [a for a in tracker_resolver.resolve(name) if a != own_address]
    if not candidates:
        raise BootstrapError(f"{name} resolves to no usable tracker address")
    return rng.choice(candidates)


def parse_resolver_config(text: str) -> tuple[StaticAsnResolver, StaticTrackerResolver]:
    """Parse the static resolver config format.

    Lines: ``asn <ipv4> <asn>`` and ``tracker <domain> <ipv4>[,<ipv4>...]``;
    ``#`` starts a comment.
    """
    asn_table: dict[Address, int] = {}
    tracker_table: dict[str, list[Address]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "asn":
                asn_table[IPv4Address(parts[1])] = int(parts[2])
            elif parts[0] == "tracker":
                tracker_table[parts[1]] = [
                    IPv4Address(a) for a in parts[2].split(",") if a
                ]
            else:
                raise ValueError(f"unknown directive {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            raise BootstrapError(f"line {lineno}: {exc}")
    return StaticAsnResolver(asn_table), StaticTrackerResolver(tracker_table)
