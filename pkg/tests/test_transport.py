import threading
import time

import pytest

from hsskit.errors import ProtocolOrderError, RoleViolation, TransportError
from hsskit.fastpai import encrypt
from hsskit.transport import (
    DO,
    S0,
    S1,
    CommMeter,
    check_route,
    inter_server,
    meter_diff,
    parse_addr,
    run_session,
    start_inproc,
)
from hsskit.wire import MsgType, ProtocolMessage

TOPOS = ["inproc", "tcp"]


def per_op_bits(do):
    do.upload("a", 11)
    do.upload("b", -4)
    out = {}
    for op, call in [
        ("smul", lambda: do.smul("a", "b", "z")),
        ("scmp", lambda: do.scmp("a", "b", "mu")),
        ("s2c", lambda: do.s2c("z", "zc")),
        ("c2s", lambda: do.c2s("mu", "ms")),
    ]:
        before = do.meter_snapshot()
        call()
        out[op] = meter_diff(do.meter_snapshot(), before)
    results = (do.recover_product("z"), do.decrypt_result("mu"), do.decrypt_result("zc"), do.recover_product("ms"))
    return results, out


@pytest.fixture(scope="module")
def sessions(keys, params):
    pk, sk = keys
    return {t: run_session(t, per_op_bits, pk, sk, params, seed=99) for t in TOPOS}


@pytest.mark.parametrize("topo", TOPOS)
def test_results(sessions, topo):
    (results, _), _ = sessions[topo]
    assert results == (-44, 0, -44, 0)


@pytest.mark.parametrize("topo", TOPOS)
def test_closed_form_bits(sessions, topo, keys):
    n = keys[0].N.bit_length()
    (_, bits), _ = sessions[topo]
    assert inter_server(bits["smul"]) == 0
    assert inter_server(bits["scmp"]) == 5 * n
    assert inter_server(bits["s2c"]) == 4 * n
    assert inter_server(bits["c2s"]) == 2 * n
    assert bits["scmp"]["S0->S1"] == 3 * n and bits["scmp"]["S1->S0"] == 2 * n


def test_transport_transparency(sessions):
    assert sessions["inproc"] == sessions["tcp"]


def test_session_meter_covers_script_only(sessions):
    _, meter = sessions["inproc"]
    assert meter["control"] > 0
    assert meter["DO->S0"] > 0 and meter["S0->DO"] > 0


class TestMeter:
    def test_control_is_separate(self):
        m = CommMeter()
        m.record(S0, S1, MsgType.CONTROL, 100)
        m.record(S0, S1, MsgType.SCMP_ROUND1, 10)
        assert m.bits(S0, S1) == 80
        assert m.snapshot()["control"] == 800

    def test_concurrent_updates(self):
        m = CommMeter()

        def hammer():
            for _ in range(2000):
                m.record(S1, S0, MsgType.SCMP_ROUND2, 1)

        threads = [threading.Thread(target=hammer) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert m.inter_server_bits == 8 * 2000 * 8

    def test_merge(self):
        a, b = CommMeter(), CommMeter()
        a.record(DO, S0, MsgType.UPLOAD_CT, 2)
        b.record(DO, S0, MsgType.UPLOAD_CT, 3)
        a.merge(b.snapshot())
        assert a.bits(DO, S0) == 40


class TestRouting:
    def test_s1_may_not_return_ciphertexts(self):
        with pytest.raises(RoleViolation):
            check_route(S1, DO, MsgType.RESULT_CT)
        check_route(S0, DO, MsgType.RESULT_CT)

    def test_servers_may_not_upload(self):
        with pytest.raises(RoleViolation):
            check_route(S0, S1, MsgType.UPLOAD_CT)

    def test_addresses(self):
        assert parse_addr("127.0.0.1:8000") == ("127.0.0.1", 8000)
        with pytest.raises(ValueError):
            parse_addr("localhost")


@pytest.fixture
def cluster(keys, params):
    pk, sk = keys
    c = start_inproc(pk, sk, params, seed=1, instrument=True)
    c.owner.timeout = 20
    yield c
    c.close()


class TestServerNode:
    def test_reveal_ct_from_s1_rejected(self, cluster):
        do = cluster.owner
        do.upload("x", 3)
        with pytest.raises(RoleViolation):
            do.reveal_ct("x", role=S1)
        # the cluster keeps working afterwards
        assert do.decrypt_result("x") == 3

    def test_round2_without_round1(self, cluster):
        do = cluster.owner
        sid = do.new_sid()
        ct = encrypt(do.pk, 1)
        cluster.servers[S1].send(S0, ProtocolMessage(MsgType.SCMP_ROUND2, sid, ct))
        with pytest.raises(ProtocolOrderError):
            do.wait(sid, (S0,))

    def test_wrong_message_for_session(self, cluster):
        do = cluster.owner
        do.upload("x", 3)
        sid = do.command((S1,), "scmp", a="x", b="x", out="m")
        cluster.servers[S0].send(S1, ProtocolMessage(MsgType.C2S_CT, sid, encrypt(do.pk, 1)))
        with pytest.raises(ProtocolOrderError):
            do.wait(sid, (S1,))

    def test_peer_message_before_command_is_buffered(self, cluster):
        do = cluster.owner
        do.upload("x", 2)
        do.upload("y", 9)
        sid = do.new_sid()
        do.control(S0, sid, op="scmp", a="x", b="y", out="mu")
        time.sleep(0.3)
        do.control(S1, sid, op="scmp", a="x", b="y", out="mu")
        do.wait(sid, (S0, S1))
        assert do.decrypt_result("mu") == 1

    def test_unknown_command(self, cluster):
        with pytest.raises(ProtocolOrderError):
            cluster.owner.run((S0,), "frobnicate")

    def test_missing_operand(self, cluster):
        with pytest.raises(ProtocolOrderError):
            cluster.owner.smul("nope", "nope", "z")

    def test_instrumented_d(self, cluster):
        do = cluster.owner
        do.upload("x", 1)
        do.upload("y", 1)
        for pi in (0, 1):
            do.scmp("x", "y", "mu", pi=pi)
        d = do.server_trace()
        assert len(d) == 2 and all(0 < v < do.pk.N for v in d)
        # pi = 0 with x >= y lands above N/2, pi = 1 below
        assert 2 * d[0] > do.pk.N and 2 * d[1] <= do.pk.N

    def test_timeout(self, cluster):
        do = cluster.owner
        do.upload("x", 1)
        do.timeout = 0.5
        sid = do.command((S0,), "scmp", a="x", b="x", out="m")
        with pytest.raises(TransportError, match="timed out"):
            do.wait(sid, (S0,))

    def test_theta_path_through_servers(self, cluster):
        assert cluster.owner.poly(2, "theta") == 63

    def test_unknown_poly_path(self, cluster):
        with pytest.raises(ValueError):
            cluster.owner.poly(1, "other")


def test_unknown_topology(keys, params):
    with pytest.raises(ValueError):
        run_session("carrier-pigeon", lambda do: None, *keys, params)


def test_tcp_bind_failure(keys, params):
    from hsskit.transport import serve

    with pytest.raises(TransportError, match="S1"):
        serve(S1, "256.0.0.1:1", keys[0], params)
