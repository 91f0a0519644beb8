"""Point-to-point endpoints: in-memory queues and TCP loopback sockets.

Both carry the same length-prefixed frames, so byte counters agree exactly
between the two.  An endpoint is read by one thread; ``send`` may be called
from any thread.
"""
import queue
import socket
import struct
import threading

from ..errors import ConfigError, PeerClosed, ProtocolTimeout
from .codec import LENGTH_PREFIX, decode, encode

_LEN = struct.Struct("<I")
_CLOSED = object()


class Endpoint:
    """One side of a connection with wire-byte counters and an optional tap.

    ``tap(direction, frame_bytes)`` sees every frame with ``direction`` in
    {"send", "recv"}; it is how audits and replay comparisons observe traffic.
    """

    def __init__(self, timeout=None, tap=None):
        self.timeout = timeout
        self.tap = tap
        self.bytes_sent = 0
        self.bytes_recv = 0
        self.msgs_sent = 0
        self.msgs_recv = 0
        self._inbox = queue.Queue()
        self._send_lock = threading.Lock()

    def send(self, msg):
        frame = encode(msg)
        with self._send_lock:
            self._put_frame(frame)
            self.bytes_sent += LENGTH_PREFIX + len(frame)
            self.msgs_sent += 1
        if self.tap is not None:
            self.tap("send", frame)
        return LENGTH_PREFIX + len(frame)

    def recv(self, timeout=None):
        timeout = self.timeout if timeout is None else timeout
        try:
            frame = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ProtocolTimeout(f"no frame within {timeout} s") from None
        if frame is _CLOSED:
            self._inbox.put(_CLOSED)
            raise PeerClosed("peer closed the connection")
        if isinstance(frame, BaseException):
            raise frame
        self.bytes_recv += LENGTH_PREFIX + len(frame)
        self.msgs_recv += 1
        if self.tap is not None:
            self.tap("recv", frame)
        return decode(frame)

    def _put_frame(self, frame):
        raise NotImplementedError

    def close(self):
        pass


class MemoryEndpoint(Endpoint):
    def __init__(self, timeout=None, tap=None):
        super().__init__(timeout, tap)
        self.peer = None

    def _put_frame(self, frame):
        # the queue keeps frame boundaries; the length prefix is still counted
        self.peer._inbox.put(frame)

    def close(self):
        if self.peer is not None:
            self.peer._inbox.put(_CLOSED)


def memory_pair(timeout=None):
    a, b = MemoryEndpoint(timeout), MemoryEndpoint(timeout)
    a.peer, b.peer = b, a
    return a, b


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


class TcpEndpoint(Endpoint):
    """Socket endpoint; a daemon reader thread moves frames into the inbox."""

    def __init__(self, sock, timeout=None, tap=None):
        super().__init__(timeout, tap)
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            while True:
                head = _recv_exact(self.sock, LENGTH_PREFIX)
                if head is None:
                    break
                frame = _recv_exact(self.sock, _LEN.unpack(head)[0])
                if frame is None:
                    break
                self._inbox.put(frame)
        except OSError:
            pass
        self._inbox.put(_CLOSED)

    def _put_frame(self, frame):
        try:
            self.sock.sendall(_LEN.pack(len(frame)) + frame)
        except OSError as exc:
            raise PeerClosed(f"send failed: {exc}") from None

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def tcp_pairs(m, timeout=None):
    """Loopback connections for ``m`` clients.

    Returns ``(server_side, client_side)`` lists indexed by client id.  Each
    client announces its id with a 2-byte handshake that is not counted in
    the byte statistics.
    """
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.bind(("127.0.0.1", 0))
    listener.listen(m)
    port = listener.getsockname()[1]
    clients = []
    try:
        for cid in range(m):
            s = socket.create_connection(("127.0.0.1", port))
            s.sendall(struct.pack("<H", cid))
            clients.append(s)
        server = [None] * m
        for _ in range(m):
            conn, _ = listener.accept()
            (cid,) = struct.unpack("<H", _recv_exact(conn, 2))
            server[cid] = conn
    finally:
        listener.close()
    return ([TcpEndpoint(s, timeout) for s in server],
            [TcpEndpoint(s, timeout) for s in clients])


def memory_pairs(m, timeout=None):
    pairs = [memory_pair(timeout) for _ in range(m)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def connect(kind, m, timeout=None):
    if kind == "memory":
        return memory_pairs(m, timeout)
    if kind == "tcp":
        return tcp_pairs(m, timeout)
    raise ConfigError(f"unknown transport {kind!r}")
