"""Worker-oriented programming: handlers keyed by message type, and the loops that drive them."""

from __future__ import annotations

import logging
from typing import Callable

from fedsim.comm import tags
from fedsim.comm.message import Message
from fedsim.comm.transport import InProcessTransport
from fedsim.errors import (
    DeadlockError,
    DuplicateHandlerError,
    ReservedTagError,
    UnknownMessageTypeError,
)

log = logging.getLogger(__name__)

Handler = Callable[[Message], None]


class WorkerManager:
    """Base class for a participant in a message-passing protocol.

    Subclasses register one handler per message type in ``__init__`` and
    send messages from inside handlers (or from :meth:`on_start`). The
    reserved FINISH type (0) ends the loop; messages already queued ahead of
    it are handled first.

    Args:
        worker_id: This worker's ID.
        transport: Any object with ``send(msg)`` and ``receive(worker_id, timeout)``.
        on_unknown: ``"raise"`` (default) to fail on a message type without a
            handler, or ``"warn"`` to log and drop it.
    """

    def __init__(self, worker_id: int, transport, on_unknown: str = "raise"):
        if on_unknown not in ("raise", "warn"):
            raise ValueError(f"on_unknown must be 'raise' or 'warn', got {on_unknown!r}")
        self.worker_id = int(worker_id)
        self.transport = transport
        self.on_unknown = on_unknown
        self.finished = False
        self._handlers: dict[int, Handler] = {}

    def register_message_receive_handler(self, msg_type: int, handler: Handler) -> None:
        if msg_type == tags.FINISH:
            raise ReservedTagError("message type 0 is reserved for FINISH")
        if msg_type in self._handlers:
            raise DuplicateHandlerError(f"worker {self.worker_id}: type {msg_type} already has a handler")
        self._handlers[msg_type] = handler

    def send_message(self, msg: Message) -> None:
        if msg.sender_id != self.worker_id:
            raise ValueError(f"worker {self.worker_id} cannot send as {msg.sender_id}")
        self.transport.send(msg)

    def send(self, msg_type: int, receiver_id: int, params=()) -> None:
        self.send_message(Message(msg_type, self.worker_id, receiver_id, params))

    def finish_all(self, worker_ids) -> None:
        """Send FINISH to each worker in ``worker_ids`` (may include self)."""
        for wid in worker_ids:
            self.send(tags.FINISH, wid)

    def on_start(self) -> None:
        """Hook run once before the first message is handled."""

    def on_finish(self) -> None:
        """Hook run when FINISH arrives."""

    def handle(self, msg: Message) -> None:
        if self.finished:
            log.debug("worker %d: dropping %r after FINISH", self.worker_id, msg)
            return
        if msg.msg_type == tags.FINISH:
            self.finished = True
            self.on_finish()
            return
        handler = self._handlers.get(msg.msg_type)
        if handler is None:
            if self.on_unknown == "raise":
                raise UnknownMessageTypeError(
                    f"worker {self.worker_id}: no handler for message type {msg.msg_type} from {msg.sender_id}"
                )
            log.warning("worker %d: dropping message of unknown type %d", self.worker_id, msg.msg_type)
            return
        handler(msg)

    def run(self, timeout: float | None = None) -> None:
        """Blocking event loop: receive, dispatch, stop on FINISH.

        ``timeout`` bounds the wait for each individual message.
        """
        self.on_start()
        while not self.finished:
            self.handle(self.transport.receive(self.worker_id, timeout))


class Simulator:
    """Deterministic single-threaded driver over an :class:`InProcessTransport`.

    Workers start in ascending ID order; then, round-robin by ascending ID,
    each worker empties its inbox (including messages it sends itself while
    doing so) before the next one steps.
    """

    def __init__(self, transport: InProcessTransport, workers):
        self.transport = transport
        self.workers = sorted(workers, key=lambda w: w.worker_id)

    def run(self, max_steps: int | None = None) -> int:
        """Run until every worker has finished; returns the number of messages handled."""
        for w in self.workers:
            w.on_start()
        steps = 0
        while not all(w.finished for w in self.workers):
            progressed = False
            for w in self.workers:
                while not w.finished:
                    msg = self.transport.poll(w.worker_id)
                    if msg is None:
                        break
                    w.handle(msg)
                    steps += 1
                    progressed = True
                    if max_steps is not None and steps >= max_steps:
                        return steps
            if not progressed:
                waiting = [w.worker_id for w in self.workers if not w.finished]
                raise DeadlockError(f"no messages pending but workers {waiting} have not finished")
        return steps
