"""Data owner and server endpoints over an in-process or TCP transport.

Every endpoint owns a :class:`CommMeter` that counts the payload bits it
sends, per link.  Control messages (hello, commands, acks) are harness
orchestration and are tallied separately from protocol payload so that the
server-to-server counters line up with the protocol's closed-form costs.

Servers execute commands from the data owner.  Each command runs as a
generator keyed by session id: it yields the message types it is waiting
for and is resumed when one arrives.  Peer messages that legitimately
arrive before the matching command are buffered; anything else is a
protocol-order violation.
"""

from __future__ import annotations

import itertools
import logging
import queue
import random
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from . import errors
from .errors import HSSError, ProtocolOrderError, RoleViolation, TransportError, WireError
from .fastpai import (
    Ciphertext,
    PrivateKey,
    PublicKey,
    SecurityParams,
    add_ct,
    decode_signed,
    decrypt,
    default_rng,
    scalar_mul_ct,
    sub_ct,
)
from .protocols import (
    AssistedTuple,
    c2s_local,
    do_init,
    do_recover_product,
    do_recover_product_theta,
    do_upload,
    s2c_finish,
    s2c_local,
    scmp_s0_finalize,
    scmp_s0_round1,
    scmp_s1_round,
    smul_local,
)
from .sharing import SharePair, reduce_share_mod_theta, share_add, share_scalar_mul, share_sub
from .wire import HEADER_SIZE, MsgType, ProtocolMessage, decode_message, encode_message, parse_header

log = logging.getLogger(__name__)

DO, S0, S1 = "DO", "S0", "S1"
SERVERS = (S0, S1)
PEER = {S0: S1, S1: S0}

# (sender, receiver) -> message types the sender may emit on that link
ALLOWED = {
    (DO, S0): {MsgType.UPLOAD_CT, MsgType.UPLOAD_SHARE, MsgType.ASSISTED_INIT},
    (DO, S1): {MsgType.UPLOAD_CT, MsgType.UPLOAD_SHARE, MsgType.ASSISTED_INIT},
    (S0, S1): {MsgType.SCMP_ROUND1, MsgType.S2C_SHARE_CT, MsgType.C2S_CT},
    (S1, S0): {MsgType.SCMP_ROUND2, MsgType.S2C_SHARE_CT},
    (S0, DO): {MsgType.RESULT_SHARE, MsgType.RESULT_CT},
    # S1 may only return shares to the data owner
    (S1, DO): {MsgType.RESULT_SHARE},
}

# peer messages a server may receive before the command that consumes them
EARLY_OK = {
    S0: {MsgType.S2C_SHARE_CT},
    S1: {MsgType.SCMP_ROUND1, MsgType.S2C_SHARE_CT, MsgType.C2S_CT},
}

DEFAULT_TIMEOUT = 120.0


def check_route(src: str, dst: str, msg_type: MsgType) -> None:
    if msg_type == MsgType.CONTROL:
        return
    if msg_type not in ALLOWED.get((src, dst), ()):
        raise RoleViolation(f"{src} may not send {msg_type.name} to {dst}")


class CommMeter:
    """Thread-safe payload-bit counters per directed link."""

    LINKS = ((S0, S1), (S1, S0), (S0, DO), (S1, DO), (DO, S0), (DO, S1))

    def __init__(self):
        self._lock = threading.Lock()
        self._bits = {link: 0 for link in self.LINKS}
        self._control_bits = 0
        self._messages = {link: 0 for link in self.LINKS}

    def record(self, src: str, dst: str, msg_type: MsgType, payload_bytes: int) -> None:
        with self._lock:
            if msg_type == MsgType.CONTROL:
                self._control_bits += 8 * payload_bytes
            else:
                self._bits[(src, dst)] += 8 * payload_bytes
                self._messages[(src, dst)] += 1

    def bits(self, src: str, dst: str) -> int:
        with self._lock:
            return self._bits[(src, dst)]

    @property
    def inter_server_bits(self) -> int:
        with self._lock:
            return self._bits[(S0, S1)] + self._bits[(S1, S0)]

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            snap = {f"{a}->{b}": v for (a, b), v in self._bits.items()}
            snap.update({f"msgs:{a}->{b}": v for (a, b), v in self._messages.items()})
            snap["control"] = self._control_bits
            return snap

    def merge(self, snap: Dict[str, int]) -> None:
        with self._lock:
            for (a, b) in self.LINKS:
                self._bits[(a, b)] += snap.get(f"{a}->{b}", 0)
                self._messages[(a, b)] += snap.get(f"msgs:{a}->{b}", 0)
            self._control_bits += snap.get("control", 0)


def meter_diff(after: Dict[str, int], before: Dict[str, int]) -> Dict[str, int]:
    return {k: after[k] - before.get(k, 0) for k in after}


def inter_server(snap: Dict[str, int]) -> int:
    return snap["S0->S1"] + snap["S1->S0"]


# ------------------------------------------------------------------ links


class InProcLink:
    """Delivers frames to another endpoint's inbox, decoding them on the way."""

    def __init__(self, src: str, dst: "Endpoint"):
        self.src = src
        self.dst = dst

    def deliver(self, frame: bytes) -> None:
        self.dst.inbox.put((self.src, decode_message(frame, self.dst.N)))

    def close(self) -> None:
        pass


class TcpLink:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._lock = threading.Lock()

    def deliver(self, frame: bytes) -> None:
        with self._lock:
            try:
                self.sock.sendall(frame)
            except OSError as exc:
                raise TransportError(f"send failed: {exc}") from None

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportError("connection closed")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket, N: int) -> ProtocolMessage:
    head = _recv_exact(sock, HEADER_SIZE)
    _, _, length = parse_header(head)
    return decode_message(head + _recv_exact(sock, length), N)


# ------------------------------------------------------------------ endpoints


class Endpoint:
    def __init__(self, role: str, N: int):
        self.role = role
        self.N = N
        self.meter = CommMeter()
        self.inbox: "queue.Queue[Tuple[str, ProtocolMessage]]" = queue.Queue()
        self.links: Dict[str, object] = {}

    def send(self, dst: str, msg: ProtocolMessage) -> None:
        check_route(self.role, dst, msg.msg_type)
        frame = encode_message(msg, self.N)
        link = self.links.get(dst)
        if link is None:
            raise TransportError(f"{self.role} has no link to {dst}")
        self.meter.record(self.role, dst, msg.msg_type, len(frame) - HEADER_SIZE)
        link.deliver(frame)

    def control(self, dst: str, sid: int, **payload) -> None:
        self.send(dst, ProtocolMessage(MsgType.CONTROL, sid, payload))

    def start_reader(self, src: str, sock: socket.socket) -> threading.Thread:
        def pump():
            try:
                while True:
                    self.inbox.put((src, read_frame(sock, self.N)))
            except (TransportError, WireError, OSError) as exc:
                self.inbox.put((src, ProtocolMessage(MsgType.CONTROL, 0, {"closed": str(exc)})))

        t = threading.Thread(target=pump, name=f"{self.role}<-{src}", daemon=True)
        t.start()
        return t


Op = Callable[..., Iterable]


class ServerNode(Endpoint):
    """Command-driven S0/S1 state machine."""

    def __init__(
        self,
        role: str,
        pk: PublicKey,
        params: SecurityParams,
        assisted: Optional[AssistedTuple] = None,
        rng=None,
        fresh_rerandomize: bool = False,
        instrument: bool = False,
    ):
        if role not in SERVERS:
            raise ValueError(f"not a server role: {role}")
        super().__init__(role, pk.N)
        self.index = SERVERS.index(role)
        self.pk = pk
        self.params = params
        self.assisted = assisted
        self.rng = rng or default_rng()
        self.fresh_rerandomize = fresh_rerandomize
        self.cts: Dict[str, Ciphertext] = {}
        self.shares: Dict[str, object] = {}
        self.active: Dict[int, Tuple[object, frozenset]] = {}
        self.buffered: Dict[int, List[Tuple[str, ProtocolMessage]]] = {}
        self.trace: Optional[List[int]] = [] if instrument else None
        self.stopped = threading.Event()

    # -- main loop

    def serve_forever(self) -> None:
        while not self.stopped.is_set():
            src, msg = self.inbox.get()
            if msg.msg_type == MsgType.CONTROL and src == DO and msg.payload.get("op") == "shutdown":
                break
            if msg.msg_type == MsgType.CONTROL and "closed" in msg.payload:
                if src == DO:
                    break
                continue
            try:
                self.dispatch(src, msg)
            except HSSError as exc:
                self.active.pop(msg.session_id, None)
                self._report(msg.session_id, exc)
        self.stopped.set()

    def _report(self, sid: int, exc: Exception) -> None:
        log.debug("%s: session %d failed: %s", self.role, sid, exc)
        try:
            self.control(DO, sid, error=str(exc), kind=type(exc).__name__)
        except HSSError:
            pass

    def dispatch(self, src: str, msg: ProtocolMessage) -> None:
        sid = msg.session_id
        if msg.msg_type == MsgType.CONTROL:
            if src != DO:
                raise ProtocolOrderError(f"{self.role} got a command from {src}")
            self._start(sid, msg.payload)
            return
        if sid in self.active:
            gen, expected = self.active[sid]
            if msg.msg_type not in expected:
                raise ProtocolOrderError(
                    f"{self.role} session {sid}: got {msg.msg_type.name}, expected {sorted(t.name for t in expected)}"
                )
            self._advance(sid, gen, (src, msg))
        elif src == PEER[self.role] and msg.msg_type in EARLY_OK[self.role]:
            self.buffered.setdefault(sid, []).append((src, msg))
        else:
            raise ProtocolOrderError(f"{self.role}: unexpected {msg.msg_type.name} from {src} (session {sid})")

    def _start(self, sid: int, cmd: dict) -> None:
        op = cmd.get("op")
        if op == "meter":
            self.control(DO, sid, ack=sid, meter=self.meter.snapshot())
            return
        if op == "trace":
            self.control(DO, sid, ack=sid, trace=list(self.trace or []))
            return
        handler = getattr(self, f"_op_{op}", None)
        if handler is None:
            raise ProtocolOrderError(f"unknown command {op!r}")
        if sid in self.active:
            raise ProtocolOrderError(f"session {sid} already running")
        gen = handler(sid, cmd)
        self._advance(sid, gen, None)
        for item in self.buffered.pop(sid, []):
            if sid not in self.active:
                raise ProtocolOrderError(f"session {sid}: unconsumed {item[1].msg_type.name}")
            self.dispatch(*item)

    def _advance(self, sid: int, gen, item) -> None:
        try:
            expected = gen.send(item) if item is not None else next(gen)
        except StopIteration as stop:
            self.active.pop(sid, None)
            self.control(DO, sid, ack=sid, **(stop.value or {}))
            return
        except HSSError:
            self.active.pop(sid, None)
            raise
        self.active[sid] = (gen, frozenset(expected if isinstance(expected, (set, frozenset, tuple)) else {expected}))

    # -- helpers

    def _ct(self, name: str) -> Ciphertext:
        if name == "@one":
            return self._assisted().ct_one
        if name == "@zero":
            return self._assisted().ct_zero
        try:
            return self.cts[name]
        except KeyError:
            raise ProtocolOrderError(f"{self.role} holds no ciphertext {name!r}") from None

    def _share(self, name: str):
        if name == "@two_alpha":
            return self._assisted().two_alpha_share
        try:
            return self.shares[name]
        except KeyError:
            raise ProtocolOrderError(f"{self.role} holds no share {name!r}") from None

    def _assisted(self) -> AssistedTuple:
        if self.assisted is None:
            raise ProtocolOrderError(f"{self.role} has not been initialised")
        return self.assisted

    # -- commands; each is a generator yielding the message types it awaits

    def _op_init(self, sid, cmd):
        _, msg = yield MsgType.ASSISTED_INIT
        if msg.payload.role != self.index:
            raise RoleViolation(f"{self.role} received the other server's assisted tuple")
        self.assisted = msg.payload

    def _op_upload(self, sid, cmd):
        _, ct_msg = yield MsgType.UPLOAD_CT
        _, sh_msg = yield MsgType.UPLOAD_SHARE
        if sh_msg.payload.role != self.index:
            raise RoleViolation(f"{self.role} received a share for the other role")
        self.cts[cmd["name"]] = ct_msg.payload
        self.shares[cmd["name"]] = sh_msg.payload

    def _op_smul(self, sid, cmd):
        self.shares[cmd["out"]] = smul_local(self._ct(cmd["ct"]), self._share(cmd["share"]))
        return
        yield

    def _op_theta(self, sid, cmd):
        self.shares[cmd["out"]] = reduce_share_mod_theta(self._share(cmd["share"]), int(cmd["theta"]))
        return
        yield

    def _op_share_add(self, sid, cmd):
        self.shares[cmd["out"]] = share_add(self._share(cmd["a"]), self._share(cmd["b"]))
        return
        yield

    def _op_share_sub(self, sid, cmd):
        self.shares[cmd["out"]] = share_sub(self._share(cmd["a"]), self._share(cmd["b"]))
        return
        yield

    def _op_share_scalar(self, sid, cmd):
        self.shares[cmd["out"]] = share_scalar_mul(self._share(cmd["a"]), int(cmd["k"]))
        return
        yield

    def _op_ct_add(self, sid, cmd):
        self.cts[cmd["out"]] = add_ct(self._ct(cmd["a"]), self._ct(cmd["b"]))
        return
        yield

    def _op_ct_sub(self, sid, cmd):
        self.cts[cmd["out"]] = sub_ct(self._ct(cmd["a"]), self._ct(cmd["b"]))
        return
        yield

    def _op_ct_scalar(self, sid, cmd):
        self.cts[cmd["out"]] = scalar_mul_ct(self._ct(cmd["a"]), int(cmd["k"]))
        return
        yield

    def _op_scmp(self, sid, cmd):
        assisted = self._assisted()
        if self.role == S0:
            msg, session = scmp_s0_round1(
                self._ct(cmd["a"]), self._ct(cmd["b"]), assisted, self.params.sigma, self.rng,
                pi=cmd.get("pi"), session_id=sid,
            )
            self.send(S1, ProtocolMessage(MsgType.SCMP_ROUND1, sid, msg))
            _, reply = yield MsgType.SCMP_ROUND2
            result = scmp_s0_finalize(session, reply.payload, assisted, self.pk, self.fresh_rerandomize, self.rng)
            self.cts[cmd["out"]] = result.ct_mu
        else:
            _, msg = yield MsgType.SCMP_ROUND1
            reply = scmp_s1_round(msg.payload, assisted)
            if self.trace is not None:
                self.trace.append(reply.d)
            self.send(S0, ProtocolMessage(MsgType.SCMP_ROUND2, sid, reply.ct_mu0))

    def _op_s2c(self, sid, cmd):
        own = s2c_local(self._share(cmd["share"]), self._assisted(), self.pk, self.rng)
        self.send(PEER[self.role], ProtocolMessage(MsgType.S2C_SHARE_CT, sid, own))
        _, peer = yield MsgType.S2C_SHARE_CT
        self.cts[cmd["out"]] = s2c_finish(self.index, own, peer.payload)

    def _op_c2s(self, sid, cmd):
        if self.role == S0:
            ct = self._ct(cmd["ct"])
            self.send(S1, ProtocolMessage(MsgType.C2S_CT, sid, ct))
        else:
            _, msg = yield MsgType.C2S_CT
            ct = msg.payload
            if "ct_out" in cmd:
                self.cts[cmd["ct_out"]] = ct
        self.shares[cmd["out"]] = c2s_local(ct, self._assisted())

    def _op_reveal_share(self, sid, cmd):
        self.send(DO, ProtocolMessage(MsgType.RESULT_SHARE, sid, self._share(cmd["name"])))
        return
        yield

    def _op_reveal_ct(self, sid, cmd):
        self.send(DO, ProtocolMessage(MsgType.RESULT_CT, sid, self._ct(cmd["name"])))
        return
        yield


class DataOwner(Endpoint):
    """Key holder: uploads data, issues commands, recovers results."""

    def __init__(self, pk: PublicKey, sk: PrivateKey, params: SecurityParams, rng=None, timeout: float = DEFAULT_TIMEOUT):
        super().__init__(DO, pk.N)
        self.pk = pk
        self.sk = sk
        self.params = params
        self.rng = rng or default_rng()
        self.timeout = timeout
        self._sids = itertools.count(1)
        self._stash: List[Tuple[str, ProtocolMessage]] = []

    def new_sid(self) -> int:
        return next(self._sids)

    # -- plumbing

    def command(self, roles: Iterable[str], op: str, **args) -> int:
        sid = self.new_sid()
        for r in roles:
            self.control(r, sid, op=op, **args)
        return sid

    def wait(self, sid: int, roles: Iterable[str]) -> Dict[str, dict]:
        """Block until every role in *roles* acked session *sid*; collect results."""
        pending = set(roles)
        got: Dict[str, dict] = {r: {} for r in pending}
        deadline = time.monotonic() + self.timeout
        while pending:
            item = self._next(sid, deadline)
            src, msg = item
            if msg.msg_type == MsgType.CONTROL:
                p = msg.payload
                if "error" in p:
                    exc_type = getattr(errors, p.get("kind", ""), HSSError)
                    if not (isinstance(exc_type, type) and issubclass(exc_type, HSSError)):
                        exc_type = HSSError
                    raise exc_type(f"{src}: {p['error']}")
                if "closed" in p:
                    raise TransportError(f"link to {src} closed: {p['closed']}")
                got[src].update(p)
                pending.discard(src)
            else:
                got.setdefault(src, {})["payload"] = msg.payload
        return got

    def _next(self, sid: int, deadline: float):
        for i, (src, msg) in enumerate(self._stash):
            if msg.session_id == sid:
                return self._stash.pop(i)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError(f"timed out waiting for session {sid}")
            try:
                src, msg = self.inbox.get(timeout=remaining)
            except queue.Empty:
                continue
            if msg.session_id == sid or (msg.msg_type == MsgType.CONTROL and "closed" in msg.payload):
                return src, msg
            self._stash.append((src, msg))

    def run(self, roles: Iterable[str], op: str, **args) -> Dict[str, dict]:
        roles = tuple(roles)
        return self.wait(self.command(roles, op, **args), roles)

    # -- protocol-level operations

    def init_servers(self, assisted: Optional[Tuple[AssistedTuple, AssistedTuple]] = None) -> Tuple[AssistedTuple, AssistedTuple]:
        assisted = assisted or do_init(self.sk, self.pk, self.params, self.rng)
        sid = self.command(SERVERS, "init")
        for i, r in enumerate(SERVERS):
            self.send(r, ProtocolMessage(MsgType.ASSISTED_INIT, sid, assisted[i]))
        self.wait(sid, SERVERS)
        return assisted

    def upload(self, name: str, x: int) -> None:
        recs = do_upload(self.sk, self.pk, x, self.params, self.rng)
        sid = self.command(SERVERS, "upload", name=name)
        for r, rec in zip(SERVERS, recs):
            self.send(r, ProtocolMessage(MsgType.UPLOAD_CT, sid, rec.ct))
            self.send(r, ProtocolMessage(MsgType.UPLOAD_SHARE, sid, rec.share_2ax))
        self.wait(sid, SERVERS)

    def smul(self, ct: str, share: str, out: str) -> None:
        self.run(SERVERS, "smul", ct=ct, share=share, out=out)

    def scmp(self, a: str, b: str, out: str, pi: Optional[int] = None) -> None:
        self.run(SERVERS, "scmp", a=a, b=b, out=out, **({} if pi is None else {"pi": pi}))

    def s2c(self, share: str, out: str) -> None:
        self.run(SERVERS, "s2c", share=share, out=out)

    def c2s(self, ct: str, out: str) -> None:
        self.run(SERVERS, "c2s", ct=ct, out=out)

    def theta(self, share: str, out: str) -> None:
        self.run(SERVERS, "theta", share=share, out=out, theta=str(self.params.theta))

    def share_add(self, a: str, b: str, out: str) -> None:
        self.run(SERVERS, "share_add", a=a, b=b, out=out)

    def ct_add(self, a: str, b: str, out: str, roles=SERVERS) -> None:
        self.run(roles, "ct_add", a=a, b=b, out=out)

    def reveal_shares(self, name: str) -> SharePair:
        got = self.run(SERVERS, "reveal_share", name=name)
        return SharePair(got[S0]["payload"], got[S1]["payload"])

    def reveal_ct(self, name: str, role: str = S0) -> Ciphertext:
        return self.run((role,), "reveal_ct", name=name)[role]["payload"]

    def recover_product(self, name: str) -> int:
        return do_recover_product(self.reveal_shares(name), self.sk, self.params.data_bits)

    def recover_theta(self, name: str) -> int:
        return do_recover_product_theta(self.reveal_shares(name), self.sk, self.params.theta, self.params.data_bits)

    def decrypt_result(self, name: str) -> int:
        return decode_signed(decrypt(self.sk, self.reveal_ct(name)), self.pk.N)

    def server_meters(self) -> Dict[str, Dict[str, int]]:
        got = self.run(SERVERS, "meter")
        return {r: got[r]["meter"] for r in SERVERS}

    def meter_snapshot(self) -> Dict[str, int]:
        total = CommMeter()
        total.merge(self.meter.snapshot())
        for snap in self.server_meters().values():
            total.merge(snap)
        return total.snapshot()

    def server_trace(self, role: str = S1) -> List[int]:
        return self.run((role,), "trace")[role]["trace"]

    def shutdown(self) -> None:
        for r in SERVERS:
            if r in self.links:
                try:
                    self.control(r, 0, op="shutdown")
                except HSSError:
                    pass

    # -- composite drivers

    def poly(self, x: int, path: str = "s2c") -> int:
        """``x^5 + x^4 + x^3 + x^2 + x + 1`` through four chained secure multiplications."""
        self.upload("px", x)
        if path == "s2c":
            self.ct_add("px", "@one", "pacc")
            cur = "px"
            for k in range(2, 6):
                self.smul(cur, "px", f"pz{k}")
                self.s2c(f"pz{k}", f"px{k}")
                self.ct_add("pacc", f"px{k}", "pacc")
                cur = f"px{k}"
            return self.decrypt_result("pacc")
        if path == "theta":
            self.theta("px", "pt1")
            self.theta("@two_alpha", "pacc")
            self.share_add("pacc", "pt1", "pacc")
            cur = "px"
            for k in range(2, 6):
                self.smul("px", cur, f"pz{k}")
                self.theta(f"pz{k}", f"pt{k}")
                self.share_add("pacc", f"pt{k}", "pacc")
                cur = f"pt{k}"
            return self.recover_theta("pacc")
        raise ValueError(f"unknown path {path!r}")


# ------------------------------------------------------------------ topologies


def seeded_rng(seed, role: str):
    return default_rng() if seed is None else random.Random(f"{seed}:{role}")


@dataclass
class Cluster:
    """A running DO + S0 + S1 deployment."""

    owner: DataOwner
    servers: Dict[str, ServerNode]
    threads: List[threading.Thread] = field(default_factory=list)
    closers: List[Callable[[], None]] = field(default_factory=list)

    def close(self) -> None:
        self.owner.shutdown()
        for t in self.threads:
            t.join(timeout=10)
        for c in self.closers:
            c()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _make_nodes(pk, sk, params, seed, assisted, fresh_rerandomize, instrument, timeout):
    owner = DataOwner(pk, sk, params, seeded_rng(seed, DO), timeout=timeout)
    servers = {
        r: ServerNode(
            r, pk, params,
            assisted=None if assisted is None else assisted[i],
            rng=seeded_rng(seed, r), fresh_rerandomize=fresh_rerandomize, instrument=instrument,
        )
        for i, r in enumerate(SERVERS)
    }
    return owner, servers


def start_inproc(
    pk: PublicKey, sk: PrivateKey, params: SecurityParams, seed=None,
    assisted: Optional[Tuple[AssistedTuple, AssistedTuple]] = None,
    fresh_rerandomize: bool = False, instrument: bool = False, timeout: float = DEFAULT_TIMEOUT,
) -> Cluster:
    owner, servers = _make_nodes(pk, sk, params, seed, assisted, fresh_rerandomize, instrument, timeout)
    nodes = {DO: owner, **servers}
    for a, ea in nodes.items():
        for b, eb in nodes.items():
            if a != b:
                ea.links[b] = InProcLink(a, eb)
    threads = [threading.Thread(target=s.serve_forever, name=f"node-{r}", daemon=True) for r, s in servers.items()]
    for t in threads:
        t.start()
    cluster = Cluster(owner, servers, threads)
    if assisted is None:
        owner.init_servers()
    return cluster


# -- TCP


def parse_addr(addr: str) -> Tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host, int(port)


def _hello(sock: socket.socket, role: str, N: int) -> None:
    sock.sendall(encode_message(ProtocolMessage(MsgType.CONTROL, 0, {"hello": role}), N))


def _dial(addr: Tuple[str, int], timeout: float, who: str) -> socket.socket:
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection(addr, timeout=timeout)
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError as exc:
            if time.monotonic() > deadline:
                raise TransportError(f"{who}: cannot connect to {addr[0]}:{addr[1]}: {exc}") from None
            time.sleep(0.05)


class TcpServer:
    """A server node listening on TCP.  S0 also dials S1 (``peer``)."""

    def __init__(self, node: ServerNode, listen: str, peer: Optional[str] = None, timeout: float = DEFAULT_TIMEOUT):
        self.node = node
        self.timeout = timeout
        self.peer = peer
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind(parse_addr(listen))
        except OSError as exc:
            raise TransportError(f"{node.role}: cannot bind {listen}: {exc}") from None
        self.sock.listen(4)
        self.address = "%s:%d" % self.sock.getsockname()[:2]
        self._conns: List[socket.socket] = []
        self.thread: Optional[threading.Thread] = None

    def _accept_loop(self) -> None:
        while not self.node.stopped.is_set():
            try:
                conn, _ = self.sock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            try:
                hello = read_frame(conn, self.node.N)
                src = hello.payload.get("hello") if hello.msg_type == MsgType.CONTROL else None
                if src not in (DO, PEER[self.node.role]):
                    raise TransportError(f"unexpected hello {hello.payload!r}")
            except (HSSError, OSError) as exc:
                log.warning("%s: rejected connection: %s", self.node.role, exc)
                conn.close()
                continue
            self._conns.append(conn)
            self.node.links[src] = TcpLink(conn)
            self.node.start_reader(src, conn)

    def start(self) -> "TcpServer":
        threading.Thread(target=self._accept_loop, name=f"accept-{self.node.role}", daemon=True).start()
        if self.peer is not None:
            sock = _dial(parse_addr(self.peer), self.timeout, self.node.role)
            _hello(sock, self.node.role, self.node.N)
            self._conns.append(sock)
            self.node.links[PEER[self.node.role]] = TcpLink(sock)
            self.node.start_reader(PEER[self.node.role], sock)
        self.thread = threading.Thread(target=self._run, name=f"node-{self.node.role}", daemon=True)
        self.thread.start()
        return self

    def _run(self) -> None:
        try:
            self.node.serve_forever()
        finally:
            self.close()

    def close(self) -> None:
        self.node.stopped.set()
        try:
            self.sock.close()
        except OSError:
            pass
        for c in self._conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            c.close()


def serve(
    role: str, listen: str, pk: PublicKey, params: SecurityParams, assisted: Optional[AssistedTuple] = None,
    peer: Optional[str] = None, seed=None, fresh_rerandomize: bool = False, instrument: bool = False,
    timeout: float = DEFAULT_TIMEOUT,
) -> TcpServer:
    node = ServerNode(role, pk, params, assisted, seeded_rng(seed, role), fresh_rerandomize, instrument)
    return TcpServer(node, listen, peer, timeout).start()


def connect_owner(owner: DataOwner, s0_addr: str, s1_addr: str) -> List[socket.socket]:
    socks = []
    for role, addr in ((S0, s0_addr), (S1, s1_addr)):
        sock = _dial(parse_addr(addr), owner.timeout, DO)
        _hello(sock, DO, owner.N)
        owner.links[role] = TcpLink(sock)
        owner.start_reader(role, sock)
        socks.append(sock)
    return socks


def start_tcp(
    pk: PublicKey, sk: PrivateKey, params: SecurityParams, seed=None,
    assisted: Optional[Tuple[AssistedTuple, AssistedTuple]] = None,
    fresh_rerandomize: bool = False, instrument: bool = False, timeout: float = DEFAULT_TIMEOUT,
    host: str = "127.0.0.1",
) -> Cluster:
    """Run both servers on loopback sockets in this process and connect a data owner."""
    owner, servers = _make_nodes(pk, sk, params, seed, assisted, fresh_rerandomize, instrument, timeout)
    s1 = TcpServer(servers[S1], f"{host}:0", timeout=timeout).start()
    s0 = TcpServer(servers[S0], f"{host}:0", peer=s1.address, timeout=timeout).start()
    socks = connect_owner(owner, s0.address, s1.address)

    def close_socks():
        for s in socks:
            try:
                s.close()
            except OSError:
                pass

    cluster = Cluster(owner, servers, [s0.thread, s1.thread], [close_socks, s0.close, s1.close])
    if assisted is None:
        owner.init_servers()
    return cluster


def connect_remote(
    pk: PublicKey, sk: PrivateKey, params: SecurityParams, s0_addr: str, s1_addr: str, seed=None,
    timeout: float = DEFAULT_TIMEOUT,
) -> Cluster:
    """Data owner for servers started elsewhere (e.g. ``hsskit serve``)."""
    owner = DataOwner(pk, sk, params, seeded_rng(seed, DO), timeout=timeout)
    socks = connect_owner(owner, s0_addr, s1_addr)
    return Cluster(owner, {}, [], [lambda: [s.close() for s in socks]])


TOPOLOGIES = {"inproc": start_inproc, "tcp": start_tcp}


def run_session(
    topology: str,
    script: Callable[[DataOwner], object],
    pk: PublicKey,
    sk: PrivateKey,
    params: SecurityParams,
    seed=None,
    **kwargs,
) -> Tuple[object, Dict[str, int]]:
    """Start a deployment, run *script* against its data owner, return ``(result, meter)``.

    The meter covers only what *script* triggers (server initialisation is
    excluded) and merges the counters of all three endpoints.
    """
    try:
        start = TOPOLOGIES[topology]
    except KeyError:
        raise ValueError(f"unknown topology {topology!r}") from None
    with start(pk, sk, params, seed=seed, **kwargs) as cluster:
        before = cluster.owner.meter_snapshot()
        result = script(cluster.owner)
        after = cluster.owner.meter_snapshot()
    return result, meter_diff(after, before)
