"""Synthetic two-level scenes, blurred exposures and ideal event streams.

Scenes are defined on an integer cell grid in *pattern coordinates*
``u = x + 0.5 - vx * t``, ``w = y + 0.5 - vy * t`` (pixel centres, seconds),
so a pixel's radiance is piecewise constant in time and can only change when
its centre crosses an integer line. Those crossing instants are known in
closed form, which lets :func:`generate_events` emit events at exact times
instead of sampling the scene on a fine clock.

Radiance is right-continuous in time: at the exact crossing instant a pixel
already shows its new value. Event timestamps are crossing times rounded up
to the next whole microsecond, so ``render_latent(e.t)`` always reflects the
change that ``e`` reports.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from dualbin.core import BinaryFrame, EventStream, ExposureWindow, IntensityFrame

PATTERNS = ("bar", "checkerboard", "glyph")
MODES = ("none", "lowlight", "glare")

_TIE = 1e-9


class InvalidSpan(ValueError):
    pass

# 5x7 block glyphs; '#' marks foreground cells.
_FONT = {
    "E": ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
    "X": ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
    "I": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####"],
    "T": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    "S": [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
    "O": [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "P": ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
    " ": [".....", ".....", ".....", ".....", ".....", ".....", "....."],
}


def glyph_bitmap(text: str) -> np.ndarray:
    """Boolean bitmap of ``text`` in the built-in 5x7 font, one blank column between glyphs."""
    cols = []
    for i, ch in enumerate(text.upper()):
        rows = _FONT.get(ch)
        if rows is None:
            raise ValueError(f"no glyph for {ch!r}")
        if i:
            cols.append(np.zeros((7, 1), dtype=bool))
        cols.append(np.array([[c == "#" for c in r] for r in rows], dtype=bool))
    return np.hstack(cols) if cols else np.zeros((7, 0), dtype=bool)


@dataclass(frozen=True)
class LatentScene:
    """Two-level scene translating at constant velocity.

    ``size`` is the bar width, checker square side or glyph cell side in
    pixels; ``offset`` is the pattern origin (cells) at t = 0.
    """

    width: int = 346
    height: int = 260
    l_fg: float = 0.9
    l_bg: float = 0.1
    pattern: str = "bar"
    velocity: Tuple[float, float] = (500.0, 0.0)
    size: int = 24
    offset: Tuple[int, int] = (100, 0)
    text: str = "EXIT"
    floor: float = 1e-3

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if self.width <= 0 or self.height <= 0 or self.size <= 0:
            raise ValueError("width, height and size must be positive")
        if self.floor <= 0:
            raise ValueError("radiance floor must be > 0")
        for name, v in (("l_fg", self.l_fg), ("l_bg", self.l_bg)):
            if not (self.floor <= v <= 1.0):
                raise ValueError(f"{name} must lie in [floor, 1], got {v}")
        if self.l_fg == self.l_bg:
            raise ValueError("foreground and background radiance must differ")

    @property
    def geometry(self) -> Tuple[int, int]:
        return (self.width, self.height)

    def foreground(self, t_us: float) -> np.ndarray:
        """Boolean foreground mask at time ``t_us`` (may be fractional)."""
        vx, vy = self.velocity
        t_s = t_us / 1e6
        u = np.arange(self.width) + 0.5 - vx * t_s - math.copysign(_TIE, vx) * (vx != 0)
        w = np.arange(self.height) + 0.5 - vy * t_s - math.copysign(_TIE, vy) * (vy != 0)
        i = np.floor(u).astype(np.int64) - self.offset[0]
        j = np.floor(w).astype(np.int64) - self.offset[1]
        s = self.size
        if self.pattern == "bar":
            col = (i >= 0) & (i < s)
            return np.broadcast_to(col[None, :], (self.height, self.width)).copy()
        if self.pattern == "checkerboard":
            return ((j[:, None] // s) + (i[None, :] // s)) % 2 == 0
        bitmap = glyph_bitmap(self.text)
        gi, gj = i // s, j // s
        ok_i = (gi >= 0) & (gi < bitmap.shape[1])
        ok_j = (gj >= 0) & (gj < bitmap.shape[0])
        out = np.zeros((self.height, self.width), dtype=bool)
        sub = bitmap[np.ix_(gj[ok_j], gi[ok_i])]
        out[np.ix_(ok_j, ok_i)] = sub
        return out

    def radiance(self, t_us: float) -> np.ndarray:
        return np.where(self.foreground(t_us), self.l_fg, self.l_bg)

    def crossing_times(self, t0: float, t1: float) -> np.ndarray:
        """Exact instants in ``(t0, t1]`` (µs) at which any pixel centre crosses a cell line."""
        out = []
        for v in self.velocity:
            if v == 0:
                continue
            # centre hits an integer line when v * t = m + 0.5
            a, b = sorted((v * t0 / 1e6 - 0.5, v * t1 / 1e6 - 0.5))
            m = np.arange(math.floor(a), math.ceil(b) + 1)
            t = (m + 0.5) / v * 1e6
            out.append(t[(t > t0) & (t <= t1)])
        if not out:
            return np.zeros(0)
        return np.unique(np.concatenate(out))


@dataclass(frozen=True)
class DegradationSpec:
    """Photometric frame degradation plus event-stream corruption."""

    mode: str = "none"
    gain: float = 1.0
    read_noise: float = 0.0
    noise_rate: float = 0.0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown degradation mode {self.mode!r}")
        if self.gain <= 0:
            raise ValueError("gain must be > 0")
        if self.read_noise < 0:
            raise ValueError("read noise must be >= 0")
        if self.noise_rate < 0:
            raise ValueError("noise rate must be >= 0")
        if not (0 <= self.dropout < 1):
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @classmethod
    def preset(cls, mode: str, **kw) -> "DegradationSpec":
        """``lowlight``: gain 0.2 with 0.02 read noise; ``glare``: gain 4."""
        base = {"none": {}, "lowlight": {"gain": 0.2, "read_noise": 0.02}, "glare": {"gain": 4.0}}
        if mode not in base:
            raise ValueError(f"unknown degradation mode {mode!r}")
        return cls(mode=mode, **{**base[mode], **kw})

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])


NO_DEGRADATION = DegradationSpec()


def render_latent(scene: LatentScene, t: float) -> IntensityFrame:
    """Sharp two-level frame at time ``t`` (µs)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return IntensityFrame(scene.radiance(t))


def ground_truth(scene: LatentScene, t: int) -> BinaryFrame:
    """Latent frame thresholded halfway between the two levels (1 = brighter level)."""
    mid = 0.5 * (scene.l_fg + scene.l_bg)
    return BinaryFrame(scene.radiance(t) > mid, timestamp=int(t))


def integrate_exposure(scene: LatentScene, window: ExposureWindow, substeps: int = 256) -> IntensityFrame:
    """Motion-blurred frame: midpoint-rule time average of the radiance over ``window``."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    acc = np.zeros((scene.height, scene.width))
    dt = window.duration / substeps
    for k in range(substeps):
        acc += scene.radiance(window.start + (k + 0.5) * dt)
    lo, hi = sorted((scene.l_fg, scene.l_bg))
    return IntensityFrame(np.clip(acc / substeps, lo, hi), exposure=window)


def _quantize_up(t: np.ndarray) -> np.ndarray:
    r = np.round(t)
    return np.where(np.abs(t - r) < 1e-6, r, np.ceil(t)).astype(np.int64)


def ideal_events(scene: LatentScene, t0: int, t1: int, c_true: float):
    """Noise-free events in ``(t0, t1]`` as unsorted ``(t, x, y, p)`` arrays."""
    ref = np.log(np.maximum(scene.radiance(t0), scene.floor))
    cur = scene.foreground(t0)
    times = np.unique(_quantize_up(scene.crossing_times(t0, t1)))
    times = times[(times > t0) & (times <= t1)]
    ts, xs, ys, ps = [], [], [], []
    for tq in times.tolist():
        fg = scene.foreground(tq)
        changed = fg != cur
        if not changed.any():
            continue
        cur = fg
        yy, xx = np.nonzero(changed)
        level = np.log(np.maximum(np.where(fg[yy, xx], scene.l_fg, scene.l_bg), scene.floor))
        delta = level - ref[yy, xx]
        n = np.floor(np.abs(delta) / c_true + _TIE).astype(np.int64)
        sign = np.sign(delta).astype(np.int64)
        ref[yy, xx] += sign * n * c_true
        keep = n > 0
        if not keep.any():
            continue
        reps = n[keep]
        xs.append(np.repeat(xx[keep], reps))
        ys.append(np.repeat(yy[keep], reps))
        ps.append(np.repeat(sign[keep], reps))
        ts.append(np.full(int(reps.sum()), tq, dtype=np.int64))
    if not ts:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z, z
    return np.concatenate(ts), np.concatenate(xs), np.concatenate(ys), np.concatenate(ps)


def sort_events(geometry, t, x, y, p) -> EventStream:
    """Build a stream ordered by (t, y, x, p)."""
    order = np.lexsort((p, x, y, t))
    return EventStream(geometry, t[order], x[order], y[order], p[order])


def generate_events(
    scene: LatentScene,
    span: Tuple[int, int],
    c_true: float,
    spec: DegradationSpec = NO_DEGRADATION,
) -> EventStream:
    """Events for brightness changes in ``(t0, t1]`` with contrast threshold ``c_true``.

    Each pixel keeps a reference log level (initially ``ln L(x, t0)``); one
    event is emitted per whole multiple of ``c_true`` between the new level
    and the reference. Background-activity noise and dropout from ``spec``
    are applied afterwards.
    """
    t0, t1 = int(span[0]), int(span[1])
    if t1 <= t0 or t0 < 0:
        raise InvalidSpan(f"invalid span ({t0}, {t1})")
    if c_true <= 0:
        raise ValueError("c_true must be > 0")
    t, x, y, p = ideal_events(scene, t0, t1, c_true)
    rng = spec.rng(1)
    if spec.dropout > 0 and len(t):
        keep = rng.random(len(t)) >= spec.dropout
        t, x, y, p = t[keep], x[keep], y[keep], p[keep]
    if spec.noise_rate > 0:
        expected = spec.noise_rate * scene.width * scene.height * (t1 - t0) / 1e6
        k = int(rng.poisson(expected))
        t = np.concatenate([t, rng.integers(t0 + 1, t1 + 1, size=k)])
        x = np.concatenate([x, rng.integers(0, scene.width, size=k)])
        y = np.concatenate([y, rng.integers(0, scene.height, size=k)])
        p = np.concatenate([p, rng.choice(np.array([-1, 1]), size=k)])
    return sort_events(scene.geometry, t, x, y, p)


def degrade_frame(frame: IntensityFrame, spec: DegradationSpec) -> IntensityFrame:
    """Apply gain, additive Gaussian read noise and clipping to [0, 1]."""
    if spec.mode == "none":
        return frame
    px = frame.pixels * spec.gain
    if spec.read_noise > 0:
        px = px + spec.rng(0).normal(0.0, spec.read_noise, size=px.shape)
    return IntensityFrame(np.clip(px, 0.0, 1.0), exposure=frame.exposure)


@dataclass
class Sample:
    """One simulated keyframe: blurred (and degraded) frame, events and oracle masks."""

    scene: LatentScene
    window: ExposureWindow
    c_true: float
    frame: IntensityFrame
    clean_frame: IntensityFrame
    events: EventStream
    spec: DegradationSpec = field(default=NO_DEGRADATION)

    def mask(self, t: int) -> BinaryFrame:
        return ground_truth(self.scene, t)


def simulate(
    scene: LatentScene,
    window: ExposureWindow,
    c_true: float,
    spec: DegradationSpec = NO_DEGRADATION,
    span: Optional[Tuple[int, int]] = None,
    substeps: int = 256,
) -> Sample:
    """Blurred frame over ``window`` plus events over ``span`` (default: the window)."""
    span = span or (window.start, window.end)
    clean = integrate_exposure(scene, window, substeps)
    return Sample(
        scene=scene,
        window=window,
        c_true=c_true,
        frame=degrade_frame(clean, spec),
        clean_frame=clean,
        events=generate_events(scene, span, c_true, spec),
        spec=spec,
    )
