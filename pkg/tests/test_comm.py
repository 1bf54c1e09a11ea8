import struct
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from strategies import messages

from fedsim.comm import (
    InProcessTransport,
    Message,
    Simulator,
    TcpTransport,
    WorkerManager,
    decode_message,
    encode_message,
    tags,
)
from fedsim.errors import (
    DeadlockError,
    DuplicateHandlerError,
    MalformedFrameError,
    ReservedTagError,
    UnknownMessageTypeError,
    UnknownReceiverError,
)


# ---------------------------------------------------------------- codec


def test_roundtrip_example():
    m = Message(1, 0, 2, [("w", np.array([1.0]))])
    assert decode_message(encode_message(m)) == m


def test_header_bytes_match_hand_assembled_layout():
    m = Message(1, 0, 2, [("w", np.array([1.0]))])
    expected = (
        bytes([0x46, 0x4D, 0x4C, 0x31])
        + struct.pack("<IIII", 1, 0, 2, 1)
        + struct.pack("<I", 1)
        + b"w"
        + bytes([3])
        + struct.pack("<I", 1)
        + struct.pack("<d", 1.0)
    )
    assert encode_message(m) == expected


def test_every_value_tag_layout():
    m = Message(9, 1, 1, [("f", 2.5), ("i", -3), ("t", "hé"), ("b", b"\x00\xff")])
    frame = encode_message(m)
    body = frame[20:]
    assert body[:6] == struct.pack("<I", 1) + b"f" + bytes([1])
    assert struct.unpack_from("<d", body, 6)[0] == 2.5
    assert bytes([2]) + struct.pack("<q", -3) in body
    assert bytes([4]) + struct.pack("<I", 3) + "hé".encode() in body
    assert bytes([5]) + struct.pack("<I", 2) + b"\x00\xff" in body


@settings(max_examples=300, deadline=None)
@given(messages())
def test_roundtrip_property(m):
    assert decode_message(encode_message(m)) == m


@pytest.mark.parametrize(
    "mutate",
    [
        lambda f: b"XML1" + f[4:],
        lambda f: f[:-1],
        lambda f: f[:10],
        lambda f: f + b"\x00",
    ],
    ids=["bad-magic", "truncated-value", "truncated-header", "trailing-bytes"],
)
def test_malformed_frames(mutate):
    frame = encode_message(Message(1, 0, 2, [("w", np.array([1.0, 2.0]))]))
    with pytest.raises(MalformedFrameError):
        decode_message(mutate(frame))


def test_bad_value_tag_and_duplicate_key_rejected():
    frame = bytearray(encode_message(Message(1, 0, 2, [("a", 1.0)])))
    tag_pos = 20 + 4 + 1
    frame[tag_pos] = 7
    with pytest.raises(MalformedFrameError):
        decode_message(bytes(frame))
    one = struct.pack("<I", 1) + b"a" + bytes([1]) + struct.pack("<d", 1.0)
    dup = b"FML1" + struct.pack("<IIII", 1, 0, 2, 2) + one + one
    with pytest.raises(MalformedFrameError):
        decode_message(dup)


def test_message_rejects_duplicate_keys_and_bools():
    with pytest.raises(ValueError):
        Message(1, 0, 1, [("a", 1), ("a", 2)])
    with pytest.raises(TypeError):
        Message(1, 0, 1, {"flag": True})


def test_message_equality_is_bitwise_and_ordered():
    assert Message(1, 0, 1, {"x": float("nan")}) == Message(1, 0, 1, {"x": float("nan")})
    assert Message(1, 0, 1, {"x": 0.0}) != Message(1, 0, 1, {"x": -0.0})
    assert Message(1, 0, 1, [("a", 1), ("b", 2)]) != Message(1, 0, 1, [("b", 2), ("a", 1)])
    assert Message(1, 0, 1, {"x": 1}) != Message(1, 0, 1, {"x": 1.0})


def test_vector_payload_is_immutable():
    v = np.array([1.0, 2.0])
    m = Message(1, 0, 1, {"v": v})
    v[0] = 99.0
    assert m["v"][0] == 1.0
    with pytest.raises(ValueError):
        m["v"][0] = 5.0


# ---------------------------------------------------------------- transports


def test_in_process_fifo_1000():
    t = InProcessTransport([0, 1])
    for i in range(1000):
        t.send(Message(3, 0, 1, {"i": i}))
    assert [t.poll(1)["i"] for _ in range(1000)] == list(range(1000))
    assert t.poll(1) is None


def test_unknown_receiver():
    t = InProcessTransport([0, 1])
    mgr = WorkerManager(0, t)
    with pytest.raises(UnknownReceiverError):
        mgr.send(3, 99)


def test_tcp_fifo_1000_with_concurrent_senders():
    a, b, c = TcpTransport(0), TcpTransport(1), TcpTransport(2)
    peers = {0: a.address, 1: b.address, 2: c.address}
    for t in (a, b, c):
        t.set_peers(peers)
    try:

        def blast(t, sender):
            for i in range(1000):
                t.send(Message(3, sender, 2, {"i": i, "v": np.full(3, float(i))}))

        threads = [threading.Thread(target=blast, args=(t, s)) for t, s in ((a, 0), (b, 1))]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        got = {0: [], 1: []}
        for _ in range(2000):
            m = c.receive(timeout=10)
            got[m.sender_id].append(m["i"])
        assert got[0] == list(range(1000))
        assert got[1] == list(range(1000))
    finally:
        for t in (a, b, c):
            t.close()


def test_tcp_loopback_uses_codec():
    t = TcpTransport(0)
    t.set_peers({0: t.address})
    try:
        m = Message(5, 0, 0, {"x": np.array([0.1, -0.0])})
        t.send(m)
        assert t.receive(timeout=5) == m
    finally:
        t.close()


# ---------------------------------------------------------------- worker manager


class Recorder(WorkerManager):
    def __init__(self, wid, transport, types=(3, 4), **kw):
        super().__init__(wid, transport, **kw)
        self.seen = []
        for t in types:
            self.register_message_receive_handler(t, self.seen.append)


def test_handler_invoked_once():
    t = InProcessTransport([0, 1])
    w = Recorder(1, t, types=(3,))
    msg = Message(3, 0, 1, {"a": 1})
    t.send(msg)
    t.send(Message(tags.FINISH, 0, 1))
    w.run(timeout=1)
    assert w.seen == [msg]


def test_duplicate_and_reserved_registration():
    w = WorkerManager(0, InProcessTransport([0]))
    w.register_message_receive_handler(3, print)
    with pytest.raises(DuplicateHandlerError):
        w.register_message_receive_handler(3, print)
    with pytest.raises(ReservedTagError):
        w.register_message_receive_handler(0, print)


def test_run_returns_on_immediate_finish():
    t = InProcessTransport([0, 1])
    w = Recorder(1, t)
    t.send(Message(tags.FINISH, 0, 1))
    w.run(timeout=1)
    assert w.finished and w.seen == []


def test_run_dispatches_in_order_then_stops():
    t = InProcessTransport([0, 1])
    w = Recorder(1, t)
    for m in (Message(3, 0, 1), Message(4, 0, 1), Message(tags.FINISH, 0, 1), Message(3, 0, 1, {"late": 1})):
        t.send(m)
    w.run(timeout=1)
    assert [m.msg_type for m in w.seen] == [3, 4]
    assert t.pending(1) == 1


def test_unknown_tag_fails_fast_by_default():
    t = InProcessTransport([0, 1])
    w = Recorder(1, t)
    t.send(Message(7, 0, 1))
    t.send(Message(tags.FINISH, 0, 1))
    with pytest.raises(UnknownMessageTypeError):
        w.run(timeout=1)


def test_unknown_tag_warn_and_drop(caplog):
    t = InProcessTransport([0, 1])
    w = Recorder(1, t, on_unknown="warn")
    t.send(Message(7, 0, 1))
    t.send(Message(3, 0, 1))
    t.send(Message(tags.FINISH, 0, 1))
    w.run(timeout=1)
    assert [m.msg_type for m in w.seen] == [3]
    assert "unknown type 7" in caplog.text


def test_sender_must_be_self():
    w = WorkerManager(0, InProcessTransport([0, 1]))
    with pytest.raises(ValueError):
        w.send_message(Message(3, 1, 0))


class PingPong(WorkerManager):
    """Worker 0 pings every other worker; each replies; 0 finishes everyone after n rounds."""

    def __init__(self, wid, transport, peers, rounds):
        super().__init__(wid, transport)
        self.peers, self.rounds, self.round, self.replies = peers, rounds, 0, 0
        self.register_message_receive_handler(3, self._ping)
        self.register_message_receive_handler(4, self._pong)

    def on_start(self):
        if self.worker_id == 0:
            self._broadcast()

    def _broadcast(self):
        self.round += 1
        for p in self.peers:
            self.send(3, p, {"round": self.round})

    def _ping(self, msg):
        self.send(4, 0, {"round": msg["round"]})

    def _pong(self, msg):
        self.replies += 1
        if self.replies % len(self.peers) == 0:
            if self.round < self.rounds:
                self._broadcast()
            else:
                self.finish_all(list(self.peers) + [0])


def _simulate_pingpong():
    t = InProcessTransport(range(4))
    workers = [PingPong(i, t, [1, 2, 3], 5) for i in range(4)]
    Simulator(t, workers).run()
    return t.trace


def test_simulator_trace_is_deterministic():
    first = _simulate_pingpong()
    assert first == _simulate_pingpong()
    assert first[:3] == [(0, 1, 3), (0, 2, 3), (0, 3, 3)]
    assert first[-4:] == [(0, 1, 0), (0, 2, 0), (0, 3, 0), (0, 0, 0)]


def test_simulator_detects_deadlock():
    t = InProcessTransport([0, 1])
    with pytest.raises(DeadlockError):
        Simulator(t, [Recorder(0, t), Recorder(1, t)]).run()
