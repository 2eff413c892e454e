"""Shared domain types and validation.

Coordinates follow the usual event-camera convention: ``x`` is the column,
``y`` the row, origin at the top-left. Dense arrays are stored row-major with
shape ``(height, width)``. Time is always an integer number of microseconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence, Tuple

import numpy as np

Geometry = Tuple[int, int]  # (width, height)


class StreamError(ValueError):
    """An event stream violates one of its invariants at ``index``."""

    kind = "invalid"

    def __init__(self, index: int, detail: str = ""):
        self.index = int(index)
        msg = f"{self.kind} at event {self.index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class OutOfBounds(StreamError):
    kind = "OutOfBounds"


class NonMonotonicTime(StreamError):
    kind = "NonMonotonicTime"


class BadPolarity(StreamError):
    kind = "BadPolarity"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class ExposureWindow:
    start: int
    duration: int

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"exposure duration must be > 0, got {self.duration}")

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def midpoint(self) -> int:
        return self.start + self.duration // 2

    def __contains__(self, t: int) -> bool:
        return self.start <= t <= self.end


class EventStream:
    """Columnar, read-only container of time-ordered events.

    Construction does not validate; call :func:`validate_stream` (readers do).
    """

    __slots__ = ("width", "height", "t", "x", "y", "p")

    def __init__(self, geometry: Geometry, t=(), x=(), y=(), p=()):
        self.width, self.height = int(geometry[0]), int(geometry[1])
        self.t = _frozen(np.asarray(t, dtype=np.int64))
        self.x = _frozen(np.asarray(x, dtype=np.int64))
        self.y = _frozen(np.asarray(y, dtype=np.int64))
        self.p = _frozen(np.asarray(p, dtype=np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns differ in length")

    @classmethod
    def empty(cls, geometry: Geometry) -> "EventStream":
        return cls(geometry)

    @classmethod
    def from_events(cls, geometry: Geometry, events: Sequence[Event]) -> "EventStream":
        if not events:
            return cls(geometry)
        x, y, t, p = zip(*events)
        return cls(geometry, t=t, x=x, y=y, p=p)

    @property
    def geometry(self) -> Geometry:
        return (self.width, self.height)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    def __getitem__(self, k: int) -> Event:
        return Event(int(self.x[k]), int(self.y[k]), int(self.t[k]), int(self.p[k]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    def __repr__(self) -> str:
        span = f", t=[{self.t[0]}, {self.t[-1]}]" if len(self) else ""
        return f"EventStream({self.width}x{self.height}, K={len(self)}{span})"

    def take(self, index) -> "EventStream":
        return EventStream(self.geometry, self.t[index], self.x[index], self.y[index], self.p[index])

    def between(self, t0: Optional[int] = None, t1: Optional[int] = None) -> "EventStream":
        """Events with ``t0 <= t <= t1`` (either bound may be open)."""
        lo = 0 if t0 is None else int(np.searchsorted(self.t, t0, side="left"))
        hi = len(self) if t1 is None else int(np.searchsorted(self.t, t1, side="right"))
        return self.take(slice(lo, hi))

    def after(self, t0: int) -> "EventStream":
        """Events strictly later than ``t0``."""
        lo = int(np.searchsorted(self.t, t0, side="right"))
        return self.take(slice(lo, None))


def validate_stream(stream: EventStream) -> None:
    """Raise a :class:`StreamError` for the first offending event, else return None."""
    n = len(stream)
    if n == 0:
        return
    bad_xy = (stream.x < 0) | (stream.x >= stream.width) | (stream.y < 0) | (stream.y >= stream.height)
    bad_p = (stream.p != 1) & (stream.p != -1)
    bad_t = np.zeros(n, dtype=bool)
    bad_t[0] = stream.t[0] < 0
    bad_t[1:] = stream.t[1:] < stream.t[:-1]
    checks = ((bad_xy, OutOfBounds), (bad_p, BadPolarity), (bad_t, NonMonotonicTime))
    first = None
    for mask, exc in checks:
        hits = np.flatnonzero(mask)
        if len(hits) and (first is None or hits[0] < first[0]):
            first = (int(hits[0]), exc)
    if first is not None:
        k, exc = first
        raise exc(k, f"{stream[k]}")


@dataclass(frozen=True, eq=False)
class IntensityFrame:
    pixels: np.ndarray
    exposure: Optional[ExposureWindow] = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError("intensity frame must be 2-D")
        if px.size and (np.isnan(px).any() or px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("intensity values must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def geometry(self) -> Geometry:
        return (self.pixels.shape[1], self.pixels.shape[0])


@dataclass(frozen=True, eq=False)
class BinaryFrame:
    pixels: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError("binary frame must be 2-D")
        if px.dtype != np.uint8:
            if not np.isin(px, (0, 1)).all():
                raise ValueError("binary frame values must be 0 or 1")
            px = px.astype(np.uint8)
        elif px.size and px.max() > 1:
            raise ValueError("binary frame values must be 0 or 1")
        object.__setattr__(self, "pixels", _frozen(px))
        object.__setattr__(self, "timestamp", int(self.timestamp))

    @property
    def geometry(self) -> Geometry:
        return (self.pixels.shape[1], self.pixels.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryFrame):
            return NotImplemented
        return self.timestamp == other.timestamp and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class PixelDomain:
    """Dynamic/static split of the pixel grid; ``mask`` is True on dynamic pixels."""

    mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mask", _frozen(np.asarray(self.mask, dtype=bool)))

    @property
    def geometry(self) -> Geometry:
        return (self.mask.shape[1], self.mask.shape[0])

    @property
    def dynamic(self) -> np.ndarray:
        return self.mask

    @property
    def static(self) -> np.ndarray:
        return ~self.mask

    @property
    def n_dynamic(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class CalibrationParams:
    """Live parameter set shared by both inference branches.

    ``keyframes`` counts contrast estimates folded into ``c`` so far; while it
    is zero the first valid instantaneous estimate replaces ``c`` outright.
    """

    c: float = 0.2
    theta_i: float = 0.5
    theta_e: float = 0.2
    alpha: float = 0.2
    beta: float = 20.0
    lam: float = 1.0
    sigma: float = 1.0
    eps: float = 1e-3
    keyframes: int = 0

    def __post_init__(self):
        def check(ok, msg):
            if not ok:
                raise ValueError(msg)

        check(self.c > 0, f"c must be > 0, got {self.c}")
        check(0 < self.theta_i < 1, f"theta_i must be in (0, 1), got {self.theta_i}")
        check(self.theta_e >= 0, f"theta_e must be >= 0, got {self.theta_e}")
        check(0 <= self.alpha <= 1, f"alpha must be in [0, 1], got {self.alpha}")
        check(self.beta > 0, f"beta must be > 0, got {self.beta}")
        check(0 < self.lam <= 1, f"lam must be in (0, 1], got {self.lam}")
        check(self.sigma >= 0, f"sigma must be >= 0, got {self.sigma}")
        check(self.eps > 0, f"eps must be > 0, got {self.eps}")
        check(self.keyframes >= 0, "keyframes must be >= 0")
