"""Message passing: codec, transports, and the worker event loop."""

from fedsim.comm import tags
from fedsim.comm.manager import Simulator, WorkerManager
from fedsim.comm.message import Message, decode_message, encode_message, read_frame, write_frame
from fedsim.comm.transport import InProcessTransport, TcpTransport, parse_address

__all__ = [
    "InProcessTransport",
    "Message",
    "Simulator",
    "TcpTransport",
    "WorkerManager",
    "decode_message",
    "encode_message",
    "parse_address",
    "read_frame",
    "tags",
    "write_frame",
]
