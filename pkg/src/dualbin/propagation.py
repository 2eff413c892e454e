"""Asynchronous binary state propagation driven by events.

The state is a binary image plus a per-pixel residual. An event only counts
when its polarity opposes the pixel's current state (a bright pixel ignores
positive events, a dark one negative events). Once the residual magnitude
reaches ``theta_e`` the pixel flips, its residual is cleared, and a 3x3
majority vote around it decides the final value. Frames are snapshots of
this state, so the ingestion work does not depend on the output frame rate.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from dualbin.core import BinaryFrame, CalibrationParams, Event, EventStream


class TimeRegression(ValueError):
    """An event is older than the last ingested one."""


@dataclass
class Counters:
    events: int = 0
    residual_updates: int = 0
    flips: int = 0
    overturned: int = 0

    def as_dict(self) -> dict:
        return dict(vars(self))


class PropagationState:
    """Evolving binary image seeded from a keyframe.

    Internally the image is a flat ``bytearray`` and the residuals a flat list
    so the per-event path stays in plain Python without numpy scalar overhead.
    """

    def __init__(self, seed: BinaryFrame, c: float, theta_e: float):
        if c <= 0:
            raise ValueError("c must be > 0")
        if theta_e <= 0:
            raise ValueError("theta_e must be > 0")
        self.width, self.height = seed.geometry
        self.c = float(c)
        self.theta_e = float(theta_e)
        self.now = seed.timestamp
        self._b = bytearray(seed.pixels.tobytes())
        self._r = [0.0] * (self.width * self.height)
        self.counters = Counters()
        self.ingest_seconds = 0.0

    @classmethod
    def from_params(cls, seed: BinaryFrame, params: CalibrationParams) -> "PropagationState":
        return cls(seed, params.c, params.theta_e)

    @property
    def residuals(self) -> np.ndarray:
        return np.array(self._r).reshape(self.height, self.width)

    def sample(self, timestamp=None) -> BinaryFrame:
        """Snapshot of the current image, stamped with ``now`` unless given."""
        px = np.frombuffer(bytes(self._b), dtype=np.uint8).reshape(self.height, self.width)
        return BinaryFrame(px, timestamp=self.now if timestamp is None else timestamp)

    def ingest_event(self, e: Event) -> None:
        self._ingest([e.x], [e.y], [e.t], [e.p])

    def ingest_stream(self, stream: EventStream, lo: int = 0, hi=None) -> None:
        """Ingest ``stream[lo:hi]`` in stored order."""
        hi = len(stream) if hi is None else hi
        if hi <= lo:
            return
        self._ingest(
            stream.x[lo:hi].tolist(),
            stream.y[lo:hi].tolist(),
            stream.t[lo:hi].tolist(),
            stream.p[lo:hi].tolist(),
        )

    def _ingest(self, xs: Sequence[int], ys: Sequence[int], ts: Sequence[int], ps: Sequence[int]) -> None:
        t_start = time.perf_counter()
        b, r = self._b, self._r
        w, h = self.width, self.height
        c, theta = self.c, self.theta_e
        now = self.now
        n_upd = n_flip = n_over = n_ev = 0
        try:
            for x, y, t, p in zip(xs, ys, ts, ps):
                if t < now:
                    raise TimeRegression(f"event at t={t} precedes state time {now}")
                now = t
                n_ev += 1
                k = y * w + x
                state = b[k]
                # polarity agrees with the state: nothing to accumulate
                if (state == 1) == (p > 0):
                    continue
                v = r[k] + p * c
                n_upd += 1
                if -theta < v < theta:
                    r[k] = v
                    continue
                r[k] = 0.0
                b[k] = 1 - state
                n_flip += 1
                y0 = y - 1 if y > 0 else 0
                y1 = y + 2 if y + 2 <= h else h
                x0 = x - 1 if x > 0 else 0
                x1 = x + 2 if x + 2 <= w else w
                ones = 0
                for yy in range(y0, y1):
                    row = yy * w
                    ones += sum(b[row + x0 : row + x1])
                vote = 1 if 2 * ones > (y1 - y0) * (x1 - x0) else 0
                if vote == state:
                    n_over += 1
                b[k] = vote
        finally:
            self.now = now
            cnt = self.counters
            cnt.events += n_ev
            cnt.residual_updates += n_upd
            cnt.flips += n_flip
            cnt.overturned += n_over
            self.ingest_seconds += time.perf_counter() - t_start


def init_state(seed: BinaryFrame, c: float, theta_e: float) -> PropagationState:
    return PropagationState(seed, c, theta_e)


def ingest_event(state: PropagationState, e: Event) -> PropagationState:
    state.ingest_event(e)
    return state


def sample(state: PropagationState) -> BinaryFrame:
    return state.sample()


def fps_times(start: int, end: int, fps: float) -> List[int]:
    """Sample times ``start, start + 1/fps, ...`` up to ``end`` inclusive (µs)."""
    if fps <= 0:
        raise ValueError("fps must be > 0")
    period = 1e6 / fps
    n = int(np.floor((end - start) / period + 1e-9)) + 1
    return [start + int(round(k * period)) for k in range(n)]


def generate_video(
    seed: BinaryFrame,
    stream: EventStream,
    params: CalibrationParams,
    sample_times: Sequence[int],
    state: PropagationState = None,
) -> List[BinaryFrame]:
    """One pass over ``stream``; frame ``k`` includes every event with ``t <= sample_times[k]``.

    Events at or before the seed time are already reflected in the seed and
    are skipped. Pass ``state`` to read its counters afterwards.
    """
    times = [int(t) for t in sample_times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("sample times must be ascending")
    if times and times[0] < seed.timestamp:
        raise ValueError("sample times must not precede the seed")
    state = state or PropagationState.from_params(seed, params)
    events = stream.after(seed.timestamp)
    bounds = np.searchsorted(events.t, times, side="right").tolist()
    frames = []
    lo = 0
    for t, hi in zip(times, bounds):
        state.ingest_stream(events, lo, hi)
        lo = hi
        frames.append(state.sample(timestamp=t))
    return frames
