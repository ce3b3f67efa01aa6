"""Message transport with latest-frame-wins delivery semantics.

Two wire modes move encoded messages between sender and receiver:

* reliable stream: each message is prefixed with its u32 little-endian
  length and written to a byte stream (TCP),
* datagram: each message is split into chunks of at most 60 KiB, each
  carried in a fragment datagram with a 16-byte subheader
  ``frame_id u64 | msg_type u16 | fragment_index u16 | fragment_count
  u16 | chunk_len u16`` (UDP).

The receiver keeps only the newest complete, validated message per
message type; anything older, partial, or corrupt is counted and
discarded. Counters satisfy
``received = exposed + dropped_stale + corrupt + pending`` at any
quiescent point.
"""

from __future__ import annotations

import random
import socket
import struct
import threading
import time
from dataclasses import dataclass

from . import protocol

LENGTH_PREFIX = struct.Struct("<I")
FRAGMENT_HEADER = struct.Struct("<QHHHH")
FRAGMENT_CHUNK = 61_440  # 60 KiB of message bytes per datagram
MAX_FRAGMENTS = 65_535


class TransportError(RuntimeError):
    """Send/receive failure (oversize message, dead connection, ...)."""


@dataclass(frozen=True)
class TransportConfig:
    """Endpoint plus sizing limits for one stream."""

    host: str = "127.0.0.1"
    port: int = 0
    mode: str = "stream"  # "stream" or "datagram"
    max_message_bytes: int = protocol.message_size(75_000)
    receive_buffer_frames: int = 2

    def __post_init__(self):
        if self.mode not in ("stream", "datagram"):
            raise ValueError(f"mode must be 'stream' or 'datagram', got {self.mode!r}")
        if self.max_message_bytes < protocol.HEADER_SIZE + 4:
            raise ValueError("max_message_bytes smaller than the smallest legal message")
        if self.receive_buffer_frames < 1:
            raise ValueError("receive_buffer_frames must be >= 1")


@dataclass
class ReceiverCounters:
    received: int = 0
    exposed: int = 0
    dropped_stale: int = 0
    corrupt: int = 0
    pending: int = 0

    def consistent(self) -> bool:
        return self.received == self.exposed + self.dropped_stale + self.corrupt + self.pending


class ReceiverState:
    """Latest-wins mailbox keyed by message type; thread-safe."""

    def __init__(self):
        self._lock = threading.Lock()
        self._latest: dict[int, object] = {}
        self._last_seen: dict[int, int] = {}
        self.counters = ReceiverCounters()

    def note_started(self, count: int = 1):
        """Account for message attempts that have begun arriving."""
        with self._lock:
            self.counters.received += count

    def note_corrupt(self):
        with self._lock:
            self.counters.corrupt += 1

    def note_abandoned(self):
        """An in-flight message was evicted before completing."""
        with self._lock:
            self.counters.dropped_stale += 1

    def offer(self, message_bytes: bytes) -> bool:
        """Classify one complete message; True if it became the latest."""
        try:
            message = protocol.decode(message_bytes)
        except protocol.WireDecodeError:
            self.note_corrupt()
            return False
        if isinstance(message, protocol.WristRgbMessage):
            msg_type = protocol.MSG_WRIST_RGB
        else:
            msg_type = protocol.MSG_POINT_CLOUD
        with self._lock:
            last = self._last_seen.get(msg_type)
            if last is not None and message.frame_id <= last:
                self.counters.dropped_stale += 1
                return False
            self._last_seen[msg_type] = message.frame_id
            self._latest[msg_type] = message
            self.counters.exposed += 1
            return True

    def receive_latest(self, msg_type: int):
        """Newest complete message of that type, or None."""
        with self._lock:
            return self._latest.get(msg_type)

    def last_seen(self, msg_type: int):
        with self._lock:
            return self._last_seen.get(msg_type)

    def set_pending(self, pending: int):
        with self._lock:
            self.counters.pending = pending


class StreamSender:
    """Length-prefixed writer over a connected byte-stream socket."""

    def __init__(self, conn, max_message_bytes: int = protocol.message_size(75_000)):
        self.conn = conn
        self.max_message_bytes = max_message_bytes

    def send(self, message: bytes):
        if len(message) > self.max_message_bytes:
            raise TransportError(
                f"message of {len(message)} bytes exceeds limit {self.max_message_bytes}"
            )
        try:
            self.conn.sendall(LENGTH_PREFIX.pack(len(message)) + message)
        except OSError as exc:
            raise TransportError(f"stream send failed: {exc}") from exc


class StreamParser:
    """Incremental parser turning stream bytes back into messages.

    Feed raw socket reads; complete messages are offered to the
    receiver state. A half-read message at end of stream counts as
    corrupt (it was started but can never complete).
    """

    def __init__(self, state: ReceiverState, max_message_bytes: int):
        self.state = state
        self.max_message_bytes = max_message_bytes
        self._buf = bytearray()
        self._expect: int | None = None

    def feed(self, data: bytes):
        self._buf.extend(data)
        while True:
            if self._expect is None:
                if len(self._buf) < LENGTH_PREFIX.size:
                    return
                (self._expect,) = LENGTH_PREFIX.unpack_from(self._buf)
                del self._buf[: LENGTH_PREFIX.size]
                self.state.note_started()
                if self._expect > self.max_message_bytes:
                    declared = self._expect
                    self._expect = None
                    self.state.note_corrupt()
                    raise TransportError(f"declared message of {declared} bytes exceeds limit")
            if len(self._buf) < self._expect:
                return
            message = bytes(self._buf[: self._expect])
            del self._buf[: self._expect]
            self._expect = None
            self.state.offer(message)

    def close(self):
        """Signal end of stream; any half-read message is corrupt."""
        if self._expect is not None or self._buf:
            if self._expect is not None:
                self.state.note_corrupt()
            self._buf.clear()
            self._expect = None


def fragment_message(message: bytes, frame_id: int, msg_type: int) -> list[bytes]:
    """Split a message into datagram fragments of <= FRAGMENT_CHUNK bytes."""
    count = max(1, -(-len(message) // FRAGMENT_CHUNK))
    if count > MAX_FRAGMENTS:
        raise TransportError(f"message needs {count} fragments, limit {MAX_FRAGMENTS}")
    frags = []
    for index in range(count):
        chunk = message[index * FRAGMENT_CHUNK : (index + 1) * FRAGMENT_CHUNK]
        frags.append(
            FRAGMENT_HEADER.pack(frame_id, msg_type, index, count, len(chunk)) + chunk
        )
    return frags


class Reassembler:
    """Rebuild messages from fragments, newest frames first to finish.

    At most `buffer_frames` partial messages are held; when a new frame
    arrives over that limit the oldest partial is evicted and counted as
    dropped_stale (it lost the latest-wins race before completing).
    """

    def __init__(self, state: ReceiverState, buffer_frames: int = 2):
        self.state = state
        self.buffer_frames = buffer_frames
        self._partial: dict[tuple[int, int], list] = {}  # key -> [count, got, chunks]

    def feed(self, datagram: bytes):
        if len(datagram) < FRAGMENT_HEADER.size:
            self.state.note_started()
            self.state.note_corrupt()
            return
        frame_id, msg_type, index, count, chunk_len = FRAGMENT_HEADER.unpack_from(datagram)
        chunk = datagram[FRAGMENT_HEADER.size :]
        if count == 0 or index >= count or len(chunk) != chunk_len:
            self.state.note_started()
            self.state.note_corrupt()
            return
        key = (msg_type, frame_id)
        entry = self._partial.get(key)
        if entry is None:
            entry = [count, 0, [None] * count]
            self._partial[key] = entry
            self.state.note_started()
            while len(self._partial) > self.buffer_frames:
                oldest = min(self._partial, key=lambda k: (k[1], k[0]))
                del self._partial[oldest]
                self.state.note_abandoned()
            if key not in self._partial:
                self._sync_pending()
                return
        if entry[0] != count:
            # contradictory fragment counts: poison the whole frame
            del self._partial[key]
            self.state.note_corrupt()
            self._sync_pending()
            return
        if entry[2][index] is None:
            entry[2][index] = chunk
            entry[1] += 1
        if entry[1] == entry[0]:
            del self._partial[key]
            self.state.offer(b"".join(entry[2]))
        self._sync_pending()

    def _sync_pending(self):
        self.state.set_pending(len(self._partial))


class DatagramSender:
    """Fragmenting sender over an unconnected UDP socket."""

    def __init__(self, sock, address, max_message_bytes: int = protocol.message_size(75_000)):
        self.sock = sock
        self.address = address
        self.max_message_bytes = max_message_bytes

    def send(self, message: bytes):
        if len(message) > self.max_message_bytes:
            raise TransportError(
                f"message of {len(message)} bytes exceeds limit {self.max_message_bytes}"
            )
        frame_id, msg_type = _message_identity(message)
        for frag in fragment_message(message, frame_id, msg_type):
            try:
                self.sock.sendto(frag, self.address)
            except OSError as exc:
                raise TransportError(f"datagram send failed: {exc}") from exc


def _message_identity(message: bytes) -> tuple[int, int]:
    """frame_id and msg_type from an encoded message header."""
    if len(message) < protocol.HEADER_SIZE:
        raise TransportError("message shorter than a wire header")
    _, _, msg_type, frame_id, _, _ = protocol.HEADER.unpack_from(message)
    return frame_id, msg_type


@dataclass
class LossyLink:
    """Deterministic datagram impairment for tests.

    Applies independent loss, extra reorder-inducing delay, and uniform
    latency jitter to each datagram. Delivery order sorts by arrival
    time with the send index as tiebreak, so a given seed always yields
    the same trace.
    """

    seed: int = 0
    loss_rate: float = 0.0
    reorder_rate: float = 0.0
    latency_range: tuple[float, float] = (0.0, 0.0)
    spacing: float = 1.0  # nominal send interval between datagrams

    def __post_init__(self):
        for name in ("loss_rate", "reorder_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {rate}")

    def transmit(self, datagrams) -> list[bytes]:
        """Datagrams that survive, in arrival order."""
        rng = random.Random(self.seed)
        arrivals = []
        for i, dgram in enumerate(datagrams):
            lost = rng.random() < self.loss_rate
            latency = rng.uniform(*self.latency_range)
            reordered = rng.random() < self.reorder_rate
            if reordered:
                latency += rng.uniform(0.0, 4.0) * self.spacing
            if lost:
                continue
            arrivals.append((i * self.spacing + latency, i, dgram))
        arrivals.sort(key=lambda item: (item[0], item[1]))
        return [dgram for _, _, dgram in arrivals]


def simulate_link(loss_rate: float, reorder_rate: float, latency_range=(0.0, 0.0), seed: int = 0) -> LossyLink:
    """Test conduit applying seeded loss, reordering, and delay."""
    return LossyLink(
        seed=seed, loss_rate=loss_rate, reorder_rate=reorder_rate, latency_range=latency_range
    )


def open_stream_listener(host: str, port: int) -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    return srv


def open_stream_connection(host: str, port: int, timeout: float = 10.0) -> socket.socket:
    """Connect to a stream endpoint, retrying refusals until the deadline.

    Receivers routinely start before their sender has bound the port.
    """
    deadline = time.monotonic() + timeout
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise ConnectionRefusedError(f"{host}:{port} not accepting within {timeout}s")
        try:
            return socket.create_connection((host, port), timeout=remaining)
        except ConnectionRefusedError:
            time.sleep(min(0.05, max(remaining, 0.0)))


def open_datagram_socket(host: str | None = None, port: int = 0) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    if host is not None:
        # a full-budget frame bursts ~1.1 MB of fragments; ask for a large
        # receive buffer (the kernel clamps to its configured maximum)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 8 << 20)
        sock.bind((host, port))
    return sock


def drain_stream_socket(conn, state: ReceiverState, max_message_bytes: int, chunk_size: int = 1 << 16):
    """Read a stream socket to EOF, feeding messages into the mailbox."""
    parser = StreamParser(state, max_message_bytes)
    try:
        while True:
            data = conn.recv(chunk_size)
            if not data:
                break
            parser.feed(data)
    finally:
        parser.close()
