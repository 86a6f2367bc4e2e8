"""Binary codec for the discovery and epidemic signaling messages.

Layout is big-endian: an 8-byte common header followed by objects in
type-length-value form, where the 3-byte object header is {type: u8,
length: u16} and the length counts the value only. Unknown object types are
skipped on decode so future extensions stay compatible.

Object types:
  1 MRI, 2 Session-ID, 3 NLI, 4 Supported-NSLPs, 5 Node-List, 6 Timestamp,
  7 Path-Record (addresses stamped by on-path processing nodes),
  8 Payload (opaque NSLP bytes for epidemic signaling).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from ipaddress import IPv4Address
from typing import Optional

from .model import (
    IDENTITY_LEN,
    Address,
    MetricKind,
    NodeDescriptor,
    NslpId,
    PeerIdentity,
    SessionId,
)

VERSION = 1

FLAG_QMODE = 0x01  # router-alert encapsulation: on-path interception
FLAG_FULLPATH = 0x02  # process at every on-path GIST node, then forward

MRM_PATH_COUPLED = 0
MRM_EPIDEMIC = 125  # experimental-range MRM id

_OBJ_MRI = 1
_OBJ_SID = 2
_OBJ_NLI = 3
_OBJ_NSLPS = 4
_OBJ_NODELIST = 5
_OBJ_TIMESTAMP = 6
_OBJ_PATHREC = 7
_OBJ_PAYLOAD = 8

ANY_ADDRESS = IPv4Address("0.0.0.0")


class MsgType(IntEnum):
    RUMOR = 1
    RUMOR_RESPONSE = 2
    RUMOR_ACK = 3
    EPIDEMIC_SIGNALING = 4


class EpidemicType(IntEnum):
    BUBBLE = 0
    BALLOON = 1
    HOSE = 2


class EncodeError(Exception):
    """Message violates a type invariant and cannot be serialized."""


class DecodeError(Exception):
    """Input bytes do not form a valid message."""


@dataclass
class CommonHeader:
    msg_type: MsgType
    nslpid: NslpId = 0
    gist_hop_count: int = 64
    flags: int = 0
    version: int = VERSION
    total_length: int = field(default=0, compare=False)  # filled by the codec


@dataclass
class MriObject:
    """Message routing information: which nodes should see this message.

    mrm_id 0 is the path-coupled method used by discovery; mrm_id 125 is the
    epidemic method and additionally carries the scope type. Bubble-scoped
    messages have no meaningful destination and carry 0.0.0.0.
    """

    mrm_id: int = MRM_PATH_COUPLED
    source: Address = ANY_ADDRESS
    destination: Address = ANY_ADDRESS
    epidemic_type: Optional[EpidemicType] = None
    metric_kind: MetricKind = MetricKind.GIST_HOPS
    radius: int = 0


@dataclass
class NliObject:
    """Network layer info of the sending node."""

    identity: PeerIdentity
    address: Address
    ip_ttl: int = 64
    validity_time_ms: int = 1


@dataclass
class Message:
    header: CommonHeader
    mri: MriObject
    sid: SessionId
    nli: NliObject
    supported_nslps: Optional[frozenset[NslpId]] = None
    node_list: Optional[list[NodeDescriptor]] = None
    origin_send_time_ms: Optional[int] = None
    path_record: Optional[list[Address]] = None
    payload: Optional[bytes] = None


def _require(cond: bool, what: str) -> None:
    if not cond:
        raise EncodeError(what)


def _u8(v: int) -> bytes:
    return struct.pack(">B", v)


def _u16(v: int) -> bytes:
    return struct.pack(">H", v)


def _u32(v: int) -> bytes:
    return struct.pack(">I", v)


def _obj(obj_type: int, value: bytes) -> bytes:
    return struct.pack(">BH", obj_type, len(value)) + value


def _encode_mri(mri: MriObject) -> bytes:
    _require(0 <= mri.mrm_id <= 255, "mrm_id out of range")
    if mri.mrm_id == MRM_EPIDEMIC:
        _require(mri.epidemic_type is not None, "epidemic MRI needs an epidemic_type")
        if mri.epidemic_type is EpidemicType.BUBBLE:
            _require(mri.destination == ANY_ADDRESS, "bubble MRI must carry 0.0.0.0")
    else:
        _require(mri.epidemic_type is None, "epidemic_type only valid for mrm_id 125")
    _require(0 <= mri.radius <= 0xFFFFFFFF, "radius out of range")
    parts = [_u8(mri.mrm_id), mri.source.packed, mri.destination.packed]
    if mri.mrm_id == MRM_EPIDEMIC:
        parts.append(_u8(int(mri.epidemic_type)))
    parts.append(_u8(int(mri.metric_kind)))
    parts.append(_u32(mri.radius))
    return b"".join(parts)


def _encode_nli(nli: NliObject) -> bytes:
    _require(len(nli.identity) == IDENTITY_LEN, "peer identity must be 16 bytes")
    _require(0 <= nli.ip_ttl <= 255, "ip_ttl out of range")
    _require(0 < nli.validity_time_ms <= 0xFFFFFFFF, "validity_time_ms must be positive")
    return nli.identity + nli.address.packed + _u8(nli.ip_ttl) + _u32(nli.validity_time_ms)


def _encode_descriptor(d: NodeDescriptor) -> bytes:
    nslps = sorted(d.supported_nslps)
    _require(all(0 <= n <= 0xFFFF for n in nslps), "NSLP id out of range")
    parts = [d.identity, d.address.packed, _u16(len(nslps))]
    parts += [_u16(n) for n in nslps]
    parts.append(_u8(1 if d.gist_hops is not None else 0))
    parts.append(_u8(1 if d.ip_hops is not None else 0))
    parts.append(_u8(1 if d.latency_ms is not None else 0))
    if d.gist_hops is not None:
        _require(0 <= d.gist_hops <= 0xFFFFFFFF, "gist_hops out of range")
        parts.append(_u32(d.gist_hops))
    if d.ip_hops is not None:
        _require(0 <= d.ip_hops <= 0xFFFFFFFF, "ip_hops out of range")
        parts.append(_u32(d.ip_hops))
    if d.latency_ms is not None:
        parts.append(struct.pack(">f", d.latency_ms))
    pv = d.path_vector or ()
    parts.append(_u16(len(pv)))
    parts += [a.packed for a in pv]
    return b"".join(parts)


def encode(msg: Message) -> bytes:
    """Serialize a message, computing and embedding its total length."""
    hdr = msg.header
    _require(hdr.version == VERSION, "unsupported version")
    try:
        msg_type = MsgType(hdr.msg_type)
    except ValueError:
        raise EncodeError(f"unknown msg_type {hdr.msg_type}")
    _require(0 <= hdr.nslpid <= 0xFFFF, "nslpid out of range")
    _require(0 <= hdr.gist_hop_count <= 255, "gist_hop_count out of range")
    _require(0 <= hdr.flags <= 255, "flags out of range")
    if msg_type is not MsgType.EPIDEMIC_SIGNALING:
        _require(hdr.nslpid == 0, "discovery messages must carry the null NSLPID")
    if msg_type is MsgType.RUMOR_ACK:
        _require(
            msg.supported_nslps is None and msg.node_list is None,
            "Rumor-Ack carries neither Supported-NSLPs nor Node-List",
        )
    _require(len(msg.sid) == IDENTITY_LEN, "session id must be 16 bytes")

    objs = [_obj(_OBJ_MRI, _encode_mri(msg.mri)), _obj(_OBJ_SID, msg.sid)]
    objs.append(_obj(_OBJ_NLI, _encode_nli(msg.nli)))
    if msg.supported_nslps is not None:
        nslps = sorted(msg.supported_nslps)
        _require(all(0 <= n <= 0xFFFF for n in nslps), "NSLP id out of range")
        objs.append(_obj(_OBJ_NSLPS, _u16(len(nslps)) + b"".join(_u16(n) for n in nslps)))
    if msg.node_list is not None:
        body = _u16(len(msg.node_list)) + b"".join(
            _encode_descriptor(d) for d in msg.node_list
        )
        objs.append(_obj(_OBJ_NODELIST, body))
    if msg.origin_send_time_ms is not None:
        _require(
            isinstance(msg.origin_send_time_ms, int)
            and 0 <= msg.origin_send_time_ms < 2**64,
            "origin_send_time_ms must fit u64",
        )
        objs.append(_obj(_OBJ_TIMESTAMP, struct.pack(">Q", msg.origin_send_time_ms)))
    if msg.path_record is not None:
        body = _u16(len(msg.path_record)) + b"".join(a.packed for a in msg.path_record)
        objs.append(_obj(_OBJ_PATHREC, body))
    if msg.payload is not None:
        objs.append(_obj(_OBJ_PAYLOAD, msg.payload))

    body = b"".join(objs)
    total = 8 + len(body)
    _require(total <= 0xFFFF, "message too large")
    hdr.total_length = total
    head = struct.pack(
        ">BBHBBH", hdr.version, int(msg_type), hdr.nslpid, hdr.gist_hop_count, hdr.flags, total
    )
    return head + body


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated object")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def address(self) -> Address:
        return IPv4Address(self.take(4))

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def _decode_mri(r: _Reader) -> MriObject:
    mrm_id = r.u8()
    source = r.address()
    destination = r.address()
    epidemic_type = None
    if mrm_id == MRM_EPIDEMIC:
        try:
            epidemic_type = EpidemicType(r.u8())
        except ValueError:
            raise DecodeError("unknown epidemic type")
    try:
        metric_kind = MetricKind(r.u8())
    except ValueError:
        raise DecodeError("unknown metric kind")
    radius = r.u32()
    return MriObject(mrm_id, source, destination, epidemic_type, metric_kind, radius)


def _decode_nli(r: _Reader) -> NliObject:
    identity = r.take(IDENTITY_LEN)
    address = r.address()
    ip_ttl = r.u8()
    validity = r.u32()
    if validity == 0:
        raise DecodeError("validity_time_ms must be positive")
    return NliObject(identity, address, ip_ttl, validity)


def _decode_descriptor(r: _Reader) -> NodeDescriptor:
    identity = r.take(IDENTITY_LEN)
    address = r.address()
    nslps = frozenset(r.u16() for _ in range(r.u16()))
    has_gist, has_ip, has_lat = r.u8(), r.u8(), r.u8()
    gist_hops = r.u32() if has_gist else None
    ip_hops = r.u32() if has_ip else None
    latency = struct.unpack(">f", r.take(4))[0] if has_lat else None
    count = r.u16()
    path = tuple(r.address() for _ in range(count)) or None
    try:
        return NodeDescriptor(
            identity=identity,
            address=address,
            supported_nslps=nslps,
            gist_hops=gist_hops,
            ip_hops=ip_hops,
            latency_ms=latency,
            path_vector=path,
        )
    except ValueError as exc:
        raise DecodeError(f"inconsistent descriptor: {exc}")


def decode(data: bytes) -> Message:
    """Parse one message; the inverse of encode on valid inputs."""
    if len(data) < 8:
        raise DecodeError("truncated header")
    version, raw_type, nslpid, hop_count, flags, total = struct.unpack(">BBHBBH", data[:8])
    if version != VERSION:
        raise DecodeError(f"bad version {version}")
    try:
        msg_type = MsgType(raw_type)
    except ValueError:
        raise DecodeError(f"unknown msg_type {raw_type}")
    if total != len(data):
        raise DecodeError("total_length does not match input size")

    header = CommonHeader(
        msg_type=msg_type,
        nslpid=nslpid,
        gist_hop_count=hop_count,
        flags=flags,
        total_length=total,
    )
    seen: dict[int, object] = {}
    pos = 8
    while pos < len(data):
        if pos + 3 > len(data):
            raise DecodeError("truncated object header")
        obj_type, obj_len = struct.unpack(">BH", data[pos : pos + 3])
        pos += 3
        if pos + obj_len > len(data):
            raise DecodeError("object overruns message")
        value = data[pos : pos + obj_len]
        pos += obj_len
        if obj_type > _OBJ_PAYLOAD or obj_type == 0:
            continue  # unknown type: skip, stay forward compatible
        if obj_type in seen:
            raise DecodeError(f"duplicate object type {obj_type}")
        r = _Reader(value)
        try:
            if obj_type == _OBJ_MRI:
                seen[obj_type] = _decode_mri(r)
            elif obj_type == _OBJ_SID:
                seen[obj_type] = r.take(IDENTITY_LEN)
            elif obj_type == _OBJ_NLI:
                seen[obj_type] = _decode_nli(r)
            elif obj_type == _OBJ_NSLPS:
                seen[obj_type] = frozenset(r.u16() for _ in range(r.u16()))
            elif obj_type == _OBJ_NODELIST:
                seen[obj_type] = [_decode_descriptor(r) for _ in range(r.u16())]
            elif obj_type == _OBJ_TIMESTAMP:
                seen[obj_type] = struct.unpack(">Q", r.take(8))[0]
            elif obj_type == _OBJ_PATHREC:
                seen[obj_type] = [r.address() for _ in range(r.u16())]
            elif obj_type == _OBJ_PAYLOAD:
                seen[obj_type] = value
                r.pos = len(value)
        except struct.error as exc:
            raise DecodeError(str(exc))
        if not r.exhausted:
            raise DecodeError(f"trailing bytes inside object type {obj_type}")

    for mandatory, name in ((_OBJ_MRI, "MRI"), (_OBJ_SID, "SID"), (_OBJ_NLI, "NLI")):
        if mandatory not in seen:
            raise DecodeError(f"missing mandatory {name} object")

    return Message(
        header=header,
        mri=seen[_OBJ_MRI],
        sid=seen[_OBJ_SID],
        nli=seen[_OBJ_NLI],
        supported_nslps=seen.get(_OBJ_NSLPS),
        node_list=seen.get(_OBJ_NODELIST),
        origin_send_time_ms=seen.get(_OBJ_TIMESTAMP),
        path_record=seen.get(_OBJ_PATHREC),
        payload=seen.get(_OBJ_PAYLOAD),
    )
