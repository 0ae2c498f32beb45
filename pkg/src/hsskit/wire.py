"""Binary framing for protocol messages, shares and keystore files.

Frame layout (all integers big-endian)::

    "MRSE" | version:u8 | msg_type:u8 | session_id:u64 | length:u32 | payload

Z_N values occupy ``w = ceil(|N| / 8)`` bytes and Z_{N^2} values ``2w``
bytes, so payload sizes depend only on ``|N|``.  The framing header is not
part of the metered payload.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from typing import Any, Tuple

from .errors import WireError
from .fastpai import Ciphertext, PrivateKey, PublicKey, SecurityParams
from .protocols import AssistedTuple, ScmpRound1, UploadRecord
from .sharing import INTEGERS, MOD_N, MOD_THETA, Z, Share, mod_n, mod_theta

MAGIC = b"MRSE"
VERSION = 1
HEADER = struct.Struct(">4sBBQI")
HEADER_SIZE = HEADER.size


class MsgType(enum.IntEnum):
    UPLOAD_CT = 1
    UPLOAD_SHARE = 2
    ASSISTED_INIT = 3
    SCMP_ROUND1 = 4
    SCMP_ROUND2 = 5
    S2C_SHARE_CT = 6
    C2S_CT = 7
    RESULT_SHARE = 8
    RESULT_CT = 9
    CONTROL = 10


CT_TYPES = frozenset(
    {MsgType.UPLOAD_CT, MsgType.SCMP_ROUND2, MsgType.S2C_SHARE_CT, MsgType.C2S_CT, MsgType.RESULT_CT}
)
SHARE_TYPES = frozenset({MsgType.UPLOAD_SHARE, MsgType.RESULT_SHARE})


@dataclass(frozen=True)
class ProtocolMessage:
    """``payload`` is a Ciphertext, Share, AssistedTuple, ScmpRound1 or (for
    CONTROL) a JSON-serialisable dict, depending on ``msg_type``."""

    msg_type: MsgType
    session_id: int
    payload: Any


def width(N: int) -> int:
    return (N.bit_length() + 7) // 8


def _uint(v: int, n: int) -> bytes:
    if v < 0 or v.bit_length() > 8 * n:
        raise WireError(f"value does not fit in {n} bytes")
    return v.to_bytes(n, "big")


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WireError("payload truncated")
        out = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return out

    def uint(self, n: int) -> int:
        return int.from_bytes(self.take(n), "big")

    def done(self) -> None:
        if self.pos != len(self.data):
            raise WireError(f"{len(self.data) - self.pos} trailing bytes in payload")


# ------------------------------------------------------------------ values

_CTX_TAGS = {Z: 0, MOD_N: 1, MOD_THETA: 2}


def encode_ct(ct: Ciphertext, N: int) -> bytes:
    if ct.N != N:
        raise WireError("ciphertext belongs to a different modulus")
    return _uint(ct.value, 2 * width(N))


def _read_ct(r: _Reader, N: int) -> Ciphertext:
    try:
        return Ciphertext(r.uint(2 * width(N)), N)
    except ValueError as exc:
        raise WireError(str(exc)) from None


def encode_share(s: Share, N: int) -> bytes:
    """role:u8 | ctx:u8 | width:u16 | magnitude | [sign:u8 if Z] | [theta_width:u16 theta if mod theta]"""
    mag = abs(s.value)
    if s.ctx.kind == MOD_N:
        if s.ctx.modulus != N:
            raise WireError("mod-N share under a different modulus")
        w = width(N)
    else:
        w = max(width(N), (mag.bit_length() + 7) // 8)
    out = bytes([s.role, _CTX_TAGS[s.ctx.kind]]) + struct.pack(">H", w) + _uint(mag, w)
    if s.ctx.kind == Z:
        out += bytes([1 if s.value < 0 else 0])
    elif s.ctx.kind == MOD_THETA:
        tw = (s.ctx.modulus.bit_length() + 7) // 8
        out += struct.pack(">H", tw) + _uint(s.ctx.modulus, tw)
    return out


def _read_share(r: _Reader, N: int) -> Share:
    role, tag = r.take(2)
    w = r.uint(2)
    mag = r.uint(w)
    if tag == 0:
        sign = r.uint(1)
        if sign not in (0, 1) or (sign and not mag):
            raise WireError("bad sign byte")
        ctx, value = INTEGERS, -mag if sign else mag
    elif tag == 1:
        if w != width(N):
            raise WireError("mod-N share width mismatch")
        ctx, value = mod_n(N), mag
    elif tag == 2:
        ctx, value = mod_theta(r.uint(r.uint(2))), mag
    else:
        raise WireError(f"unknown share context tag {tag}")
    try:
        return Share(value, role, ctx)
    except ValueError as exc:
        raise WireError(str(exc)) from None


def decode_share_bytes(data: bytes, N: int) -> Share:
    r = _Reader(data)
    s = _read_share(r, N)
    r.done()
    return s


def encode_payload(msg_type: MsgType, payload: Any, N: int) -> bytes:
    if msg_type in CT_TYPES:
        return encode_ct(payload, N)
    if msg_type in SHARE_TYPES:
        return encode_share(payload, N)
    if msg_type == MsgType.SCMP_ROUND1:
        return encode_ct(payload.D, N) + _uint(payload.z0_masked, width(N))
    if msg_type == MsgType.ASSISTED_INIT:
        a: AssistedTuple = payload
        return (
            encode_ct(a.ct_two_alpha_inv, N)
            + encode_ct(a.ct_zero, N)
            + encode_ct(a.ct_one, N)
            + encode_share(a.two_alpha_share, N)
        )
    if msg_type == MsgType.CONTROL:
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    raise WireError(f"unknown message type {msg_type}")


def decode_payload(msg_type: MsgType, data: bytes, N: int) -> Any:
    if msg_type == MsgType.CONTROL:
        try:
            return json.loads(data.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise WireError(f"bad control payload: {exc}") from None
    r = _Reader(data)
    if msg_type in CT_TYPES:
        out = _read_ct(r, N)
    elif msg_type in SHARE_TYPES:
        out = _read_share(r, N)
    elif msg_type == MsgType.SCMP_ROUND1:
        D = _read_ct(r, N)
        z0 = r.uint(width(N))
        if z0 >= N:
            raise WireError("masked share not reduced mod N")
        out = ScmpRound1(D, z0)
    elif msg_type == MsgType.ASSISTED_INIT:
        cts = [_read_ct(r, N) for _ in range(3)]
        out = AssistedTuple(_read_share(r, N), *cts)
    else:
        raise WireError(f"unknown message type {msg_type}")
    r.done()
    return out


# ------------------------------------------------------------------ frames


def encode_message(msg: ProtocolMessage, N: int) -> bytes:
    body = encode_payload(msg.msg_type, msg.payload, N)
    return HEADER.pack(MAGIC, VERSION, int(msg.msg_type), msg.session_id, len(body)) + body


def parse_header(head: bytes) -> Tuple[MsgType, int, int]:
    """Validate a frame header; returns ``(msg_type, session_id, payload_length)``."""
    if len(head) < HEADER_SIZE:
        raise WireError("frame truncated inside header")
    magic, version, mtype, sid, length = HEADER.unpack(head[:HEADER_SIZE])
    if magic != MAGIC:
        raise WireError(f"bad magic {magic!r}")
    if version != VERSION:
        raise WireError(f"unsupported version {version}")
    try:
        mt = MsgType(mtype)
    except ValueError:
        raise WireError(f"unknown message type {mtype}") from None
    return mt, sid, length


def decode_message(data: bytes, N: int) -> ProtocolMessage:
    mt, sid, length = parse_header(data)
    body = data[HEADER_SIZE:]
    if len(body) < length:
        raise WireError(f"frame truncated: expected {length} payload bytes, got {len(body)}")
    if len(body) > length:
        raise WireError(f"{len(body) - length} trailing bytes after frame")
    return ProtocolMessage(mt, sid, decode_payload(mt, body, N))


def payload_bits(msg: ProtocolMessage, N: int) -> int:
    return 8 * len(encode_payload(msg.msg_type, msg.payload, N))


# ------------------------------------------------------------------ keystore


class FileKind(enum.IntEnum):
    PUBLIC_KEY = 0x10
    PRIVATE_KEY = 0x11
    SERVER_BUNDLE = 0x12
    UPLOAD = 0x13


_PARAMS = struct.Struct(">HHHHB")


def _pack_params(p: SecurityParams) -> bytes:
    return _PARAMS.pack(p.kappa, p.n_bits, p.sigma, p.data_bits, int(p.toy))


def _read_params(r: _Reader) -> SecurityParams:
    kappa, n_bits, sigma, data_bits, toy = _PARAMS.unpack(r.take(_PARAMS.size))
    return SecurityParams(kappa=kappa, n_bits=n_bits, sigma=sigma, data_bits=data_bits, toy=bool(toy))


def _pack_pk(pk: PublicKey) -> bytes:
    w = width(pk.N)
    return struct.pack(">HH", w, pk.r_bits) + _uint(pk.N, w) + _uint(pk.h, w)


def _read_pk(r: _Reader) -> PublicKey:
    w, r_bits = struct.unpack(">HH", r.take(4))
    try:
        return PublicKey(r.uint(w), r.uint(w), r_bits)
    except Exception as exc:
        raise WireError(f"bad public key: {exc}") from None


def _file(kind: FileKind, body: bytes) -> bytes:
    return HEADER.pack(MAGIC, VERSION, int(kind), 0, len(body)) + body


def _open_file(data: bytes, kind: FileKind) -> _Reader:
    magic, version, fkind, _, length = HEADER.unpack(data[:HEADER_SIZE]) if len(data) >= HEADER_SIZE else (None,) * 5
    if magic != MAGIC:
        raise WireError("not an MRSE file")
    if version != VERSION:
        raise WireError(f"unsupported version {version}")
    if fkind != kind:
        raise WireError(f"expected file kind {kind.name}, found {fkind:#x}")
    if len(data) - HEADER_SIZE != length:
        raise WireError("file length mismatch")
    return _Reader(data[HEADER_SIZE:])


def dump_public_key(pk: PublicKey, params: SecurityParams) -> bytes:
    return _file(FileKind.PUBLIC_KEY, _pack_params(params) + _pack_pk(pk))


def load_public_key(data: bytes) -> Tuple[PublicKey, SecurityParams]:
    r = _open_file(data, FileKind.PUBLIC_KEY)
    params = _read_params(r)
    pk = _read_pk(r)
    r.done()
    return pk, params


def dump_private_key(sk: PrivateKey) -> bytes:
    w = width(sk.N)
    return _file(FileKind.PRIVATE_KEY, struct.pack(">H", w) + _uint(sk.N, w) + _uint(sk.alpha, w))


def load_private_key(data: bytes) -> PrivateKey:
    r = _open_file(data, FileKind.PRIVATE_KEY)
    w = r.uint(2)
    N, alpha = r.uint(w), r.uint(w)
    r.done()
    return PrivateKey(N, alpha)


def dump_server_bundle(pk: PublicKey, params: SecurityParams, assisted: AssistedTuple) -> bytes:
    body = _pack_params(params) + _pack_pk(pk) + encode_payload(MsgType.ASSISTED_INIT, assisted, pk.N)
    return _file(FileKind.SERVER_BUNDLE, body)


def load_server_bundle(data: bytes) -> Tuple[PublicKey, SecurityParams, AssistedTuple]:
    r = _open_file(data, FileKind.SERVER_BUNDLE)
    params = _read_params(r)
    pk = _read_pk(r)
    N = pk.N
    cts = [_read_ct(r, N) for _ in range(3)]
    assisted = AssistedTuple(_read_share(r, N), *cts)
    r.done()
    return pk, params, assisted


def dump_upload(rec: UploadRecord) -> bytes:
    N = rec.ct.N
    return _file(FileKind.UPLOAD, struct.pack(">H", width(N)) + _uint(N, width(N)) + encode_ct(rec.ct, N) + encode_share(rec.share_2ax, N))


def load_upload(data: bytes) -> UploadRecord:
    r = _open_file(data, FileKind.UPLOAD)
    w = r.uint(2)
    N = r.uint(w)
    rec = UploadRecord(_read_ct(r, N), _read_share(r, N))
    r.done()
    return rec
