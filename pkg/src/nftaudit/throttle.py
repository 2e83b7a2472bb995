"""Rate limiting and retry helpers shared by the explorer, node and HTTP clients."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, TypeVar

from nftaudit.errors import RateLimitedError, TransportError

log = logging.getLogger(__name__)

T = TypeVar("T")


class TokenBucket:
    """Thread-safe token bucket: ``rate`` tokens per second, bursts up to ``capacity``."""

    def __init__(self, rate: float, capacity: float | None = None, *, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate)
        self.capacity = float(capacity) if capacity else max(1.0, self.rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


@dataclass
class RetryPolicy:
    """Exponential backoff for transient transport failures.

    Rate-limit responses wait for the server-supplied delay when one is given.
    """

    base: float = 1.0
    factor: float = 2.0
    max_attempts: int = 5
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def delay(self, attempt: int) -> float:
        return self.base * self.factor**attempt

    def run(self, fn: Callable[[], T]) -> T:
        for attempt in range(self.max_attempts):
            try:
                return fn()
            except TransportError as exc:
                if not exc.retryable or attempt == self.max_attempts - 1:
                    raise
                wait = self.delay(attempt)
                if isinstance(exc, RateLimitedError) and exc.retry_after is not None:
                    wait = exc.retry_after
                log.debug("attempt %d failed (%s); retrying in %.1fs", attempt + 1, exc, wait)
                self.sleep(wait)
        raise AssertionError("unreachable")


NO_RETRY = RetryPolicy(max_attempts=1)
