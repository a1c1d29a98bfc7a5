"""Best-effort uplink: bounded queue, per-second rate limit, backoff with jitter.

Nothing in here is ever awaited by the logging path; the driver offers
records to the queue and gives it a chance to send once per tick.
"""
from __future__ import annotations

import random
from collections import deque
from pathlib import Path
from typing import Optional

from .model import Record, TelemetrySettings
from .storage import serialize_record


def backoff_delay(
    attempt: int,
    base_s: float = 5.0,
    cap_s: float = 300.0,
    jitter: float = 0.1,
    u: Optional[float] = None,
) -> float:
    """Retry delay after ``attempt`` consecutive failures.

    ``u`` in [0, 1) selects the jitter; without it the nominal delay is
    returned.
    """
    if attempt < 1:
        raise ValueError("attempt must be >= 1")
    # cap before exponentiating so huge attempt counts stay cheap
    d = base_s * 2.0 ** min(attempt - 1, 64)
    d = min(d, cap_s)
    if u is None:
        return d
    return d * (1.0 + jitter * (2.0 * u - 1.0))


def topic_for(site_id: str) -> str:
    return f"winddaq/{site_id}/records"


class BrokerStub:
    """Records every delivered message in order."""

    def __init__(self):
        self.delivered: list[tuple[float, str, str]] = []

    def publish(self, now: float, topic: str, payload: str) -> None:
        self.delivered.append((now, topic, payload))

    def transcript(self) -> str:
        return "".join(f"{now:.1f} {topic} {payload}\n" for now, topic, payload in self.delivered)

    def write_transcript(self, path: str | Path) -> None:
        Path(path).write_text(self.transcript())


class TelemetryQueue:
    def __init__(
        self,
        settings: TelemetrySettings = TelemetrySettings(),
        seed: int = 0,
        broker: Optional[BrokerStub] = None,
    ):
        self.capacity = settings.queue_capacity
        self.rate_limit = settings.rate_limit
        self.base_s = settings.backoff_base_s
        self.cap_s = settings.backoff_cap_s
        self.jitter = settings.backoff_jitter
        self.topic = topic_for(settings.site_id)
        self.pending: deque[Record] = deque()
        self.drops = 0
        self.attempt = 0
        self.next_attempt_at = float("-inf")
        self.sent_total = 0
        self.failures = 0
        self.broker = broker if broker is not None else BrokerStub()
        self._rng = random.Random(f"telemetry-{seed}")
        self._window = None
        self._window_sent = 0

    def __len__(self):
        return len(self.pending)

    def enqueue(self, record: Record) -> None:
        if len(self.pending) >= self.capacity:
            self.pending.popleft()
            self.drops += 1
        self.pending.append(record)

    def drop_all(self) -> int:
        """Lose the RAM queue (power loss); returns how many were lost."""
        n = len(self.pending)
        self.drops += n
        self.pending.clear()
        return n

    def try_transmit(self, link_up: bool, now: float) -> int:
        if now < self.next_attempt_at or not self.pending:
            return 0
        if not link_up:
            self.attempt += 1
            self.failures += 1
            self.next_attempt_at = now + backoff_delay(
                self.attempt, self.base_s, self.cap_s, self.jitter, self._rng.random()
            )
            return 0
        self.attempt = 0
        second = int(now // 1)
        if second != self._window:
            self._window, self._window_sent = second, 0
        budget = self.rate_limit - self._window_sent
        sent = 0
        while sent < budget and self.pending:
            rec = self.pending.popleft()
            self.broker.publish(now, self.topic, serialize_record(rec))
            sent += 1
        self._window_sent += sent
        self.sent_total += sent
        return sent
