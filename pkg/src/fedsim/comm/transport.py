"""Transports: an in-process queue fabric and a TCP transport.

Both give per-(sender, receiver) FIFO delivery without loss or duplication.
``receive`` blocks (optionally with a timeout); ``poll`` never blocks and is
what the deterministic simulator uses.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from collections import deque

from fedsim.comm.message import Message, decode_message, encode_message, read_frame, write_frame
from fedsim.errors import UnknownReceiverError

log = logging.getLogger(__name__)


class InProcessTransport:
    """Shared mailbox fabric for workers living in one process.

    Every delivered message is appended to :attr:`trace` as
    ``(sender_id, receiver_id, msg_type)`` in global send order, and the full
    messages to :attr:`messages` when ``keep_messages`` is set.
    """

    def __init__(self, worker_ids, keep_messages: bool = False):
        self._boxes: dict[int, deque[Message]] = {int(w): deque() for w in worker_ids}
        self._cond = threading.Condition()
        self.trace: list[tuple[int, int, int]] = []
        self.keep_messages = keep_messages
        self.messages: list[Message] = []

    @property
    def worker_ids(self) -> list[int]:
        return sorted(self._boxes)

    def send(self, msg: Message) -> None:
        box = self._boxes.get(msg.receiver_id)
        if box is None:
            raise UnknownReceiverError(f"no worker {msg.receiver_id} registered")
        with self._cond:
            box.append(msg)
            self.trace.append((msg.sender_id, msg.receiver_id, msg.msg_type))
            if self.keep_messages:
                self.messages.append(msg)
            self._cond.notify_all()

    def poll(self, worker_id: int) -> Message | None:
        with self._cond:
            box = self._boxes[worker_id]
            return box.popleft() if box else None

    def receive(self, worker_id: int, timeout: float | None = None) -> Message:
        box = self._boxes[worker_id]
        with self._cond:
            if not self._cond.wait_for(lambda: bool(box), timeout):
                raise TimeoutError(f"worker {worker_id}: no message within {timeout}s")
            return box.popleft()

    def pending(self, worker_id: int) -> int:
        return len(self._boxes[worker_id])

    def close(self) -> None:
        pass


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


class TcpTransport:
    """One worker's endpoint on a TCP mesh.

    Each sender keeps a single persistent connection per receiver and writes
    length-prefixed FML1 frames under a per-peer lock, so per-pair ordering is
    the TCP stream order. Incoming connections each get a reader thread that
    decodes frames into this worker's inbox.

    Args:
        worker_id: Own ID.
        listen: ``(host, port)`` to bind; port 0 picks a free port (see :attr:`address`).
        peers: worker_id -> ``(host, port)``; may be supplied later via :meth:`set_peers`.
        connect_timeout: How long :meth:`send` keeps retrying a peer that is not up yet.
    """

    def __init__(
        self,
        worker_id: int,
        listen: tuple[str, int] = ("127.0.0.1", 0),
        peers: dict[int, tuple[str, int]] | None = None,
        connect_timeout: float = 30.0,
    ):
        self.worker_id = int(worker_id)
        self.connect_timeout = connect_timeout
        self._peers: dict[int, tuple[str, int]] = {}
        self._inbox: deque[Message] = deque()
        self._cond = threading.Condition()
        self._conns: dict[int, socket.socket] = {}
        self._locks: dict[int, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._closed = False
        self._readers: list[socket.socket] = []

        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind(listen)
        self._server.listen(64)
        self.address: tuple[str, int] = self._server.getsockname()[:2]
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        self._acceptor.start()
        if peers:
            self.set_peers(peers)

    def set_peers(self, peers: dict[int, tuple[str, int]]) -> None:
        self._peers = {int(k): tuple(v) for k, v in peers.items()}
        self._peers.setdefault(self.worker_id, self.address)

    # receiving side -------------------------------------------------------
    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._readers.append(conn)
            threading.Thread(target=self._read_loop, args=(conn,), daemon=True).start()

    def _read_loop(self, conn: socket.socket) -> None:
        try:
            while True:
                frame = read_frame(conn)
                if frame is None:
                    return
                self._deliver(decode_message(frame))
        except OSError:
            if not self._closed:
                log.warning("worker %d: inbound connection dropped", self.worker_id)
        except Exception:
            log.exception("worker %d: failed to decode inbound frame", self.worker_id)
        finally:
            conn.close()

    def _deliver(self, msg: Message) -> None:
        with self._cond:
            self._inbox.append(msg)
            self._cond.notify_all()

    def poll(self, worker_id: int | None = None) -> Message | None:
        with self._cond:
            return self._inbox.popleft() if self._inbox else None

    def receive(self, worker_id: int | None = None, timeout: float | None = None) -> Message:
        with self._cond:
            if not self._cond.wait_for(lambda: bool(self._inbox), timeout):
                raise TimeoutError(f"worker {self.worker_id}: no message within {timeout}s")
            return self._inbox.popleft()

    # sending side ---------------------------------------------------------
    def _lock_for(self, peer: int) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(peer, threading.Lock())

    def _connect(self, peer: int) -> socket.socket:
        addr = self._peers[peer]
        deadline = time.monotonic() + self.connect_timeout
        delay = 0.01
        while True:
            try:
                sock = socket.create_connection(addr, timeout=self.connect_timeout)
                sock.settimeout(None)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                return sock
            except OSError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(delay)
                delay = min(delay * 2, 0.5)

    def send(self, msg: Message) -> None:
        peer = msg.receiver_id
        if peer not in self._peers:
            raise UnknownReceiverError(f"no address for worker {peer}")
        frame = encode_message(msg)
        if peer == self.worker_id:
            # loopback still goes through the codec so payloads match what peers see
            self._deliver(decode_message(frame))
            return
        with self._lock_for(peer):
            sock = self._conns.get(peer)
            if sock is None:
                sock = self._conns[peer] = self._connect(peer)
            write_frame(sock, frame)

    def close(self) -> None:
        self._closed = True
        for sock in self._conns.values():
            try:
                sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass
            sock.close()
        self._conns.clear()
        try:
            self._server.close()
        except OSError:
            pass
