"""Message transports between simulated workers and the master.

``inprocess`` hands value copies through a queue; ``socket`` pushes encoded
bytes over a loopback TCP connection per worker. Either way the master blocks
until every worker has either delivered its single summary or failed.
"""
from __future__ import annotations

import copy
import queue
import socket
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

from .codec import HEADER_SIZE, decode_header, decode_summary, encode_summary

TRANSPORTS = ("inprocess", "socket")
_POLL = 0.05


def _recv_exact(conn: socket.socket, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        chunk = conn.recv(min(remaining, 1 << 20))
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _recv_message(conn: socket.socket) -> bytes:
    head = _recv_exact(conn, HEADER_SIZE)
    *_, payload_len = decode_header(head)
    return head + _recv_exact(conn, payload_len)


def _failed(futures) -> list:
    return [f.exception() for f in futures if f.done() and f.exception() is not None]


def collect(shards: Sequence, work: Callable, transport: str, concurrent: bool = True):
    """Run ``work`` on every shard and gather the summaries at the master.

    Returns ``(summaries, failures, message_count)``; summaries are in arrival order.
    """
    if transport not in TRANSPORTS:
        raise ValueError(f"unknown transport {transport!r}")
    m = len(shards)
    if transport == "inprocess":
        inbox: queue.Queue = queue.Queue()

        def send(shard):
            inbox.put(copy.deepcopy(work(shard)))

        def receive_one():
            return inbox.get(timeout=_POLL)

        cleanup = None
    else:
        server = socket.create_server(("127.0.0.1", 0), backlog=max(m, 1))
        server.settimeout(_POLL)
        address = server.getsockname()

        def send(shard):
            payload = encode_summary(work(shard))
            with socket.create_connection(address) as conn:
                conn.sendall(payload)

        def receive_one():
            conn, _ = server.accept()
            with conn:
                conn.settimeout(None)
                return decode_summary(_recv_message(conn))

        cleanup = server.close

    summaries: list = []
    failures: list = []
    try:
        if not concurrent:
            # one worker at a time; its message is received before the next starts
            for shard in shards:
                with ThreadPoolExecutor(max_workers=1) as pool:
                    fut = pool.submit(send, shard)
                    while True:
                        try:
                            summaries.append(receive_one())
                            break
                        except (queue.Empty, socket.timeout):
                            if fut.done() and fut.exception() is not None:
                                failures.append(fut.exception())
                                break
            return summaries, failures, len(summaries)
        with ThreadPoolExecutor(max_workers=m) as pool:
            futures = [pool.submit(send, shard) for shard in shards]
            while True:
                failures = _failed(futures)
                if len(summaries) + len(failures) >= m:
                    break
                try:
                    summaries.append(receive_one())
                except (queue.Empty, socket.timeout):
                    continue
        return summaries, failures, len(summaries)
    finally:
        if cleanup is not None:
            cleanup()
