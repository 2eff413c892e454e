"""Single-keyframe dual-modal binarization.

Dynamic pixels (those that fired events during the exposure) are decided from
events, static pixels and undecided dynamic pixels from the intensity proxy.

The event branch reads each pixel's log level at ``t'`` against the range
that level spans during the exposure. With ``E(t)`` the running polarity
count from the window start and ``hi``/``lo`` its extremes over the window,
the map ``c * (hi + lo - 2 E(t'))`` is positive when the pixel sits in the
lower half of its range at ``t'`` (dark, label 0) and negative in the upper
half (bright, label 1), which is the sign rule of :func:`infer_event`. For a
single edge crossing it equals the change after ``t'`` minus the change
before it; its magnitude never exceeds the full edge contrast.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator, Optional, Union

import numpy as np
from scipy import ndimage

from dualbin import calibration as cal
from dualbin.core import (
    BinaryFrame,
    CalibrationParams,
    EventStream,
    ExposureWindow,
    IntensityFrame,
    PixelDomain,
)

log = logging.getLogger(__name__)

PIVOT = 0.5


class TernaryLabel(IntEnum):
    ZERO = 0
    ONE = 1
    AMBIGUOUS = 2


class Decision(IntEnum):
    """Which branch produced a pixel's final value."""

    STATIC = 0
    EVENT = 1
    REASSIGNED = 2


def classify_domain(stream: EventStream, window: ExposureWindow, dilation: int = 1) -> PixelDomain:
    """Mark pixels with at least one event inside ``window`` as dynamic, then dilate."""
    if dilation < 0:
        raise ValueError("dilation must be >= 0")
    ev = stream.between(window.start, window.end)
    active = np.zeros((stream.height, stream.width), dtype=bool)
    active[ev.y, ev.x] = True
    if dilation and active.any():
        size = 2 * dilation + 1
        active = ndimage.binary_dilation(active, structure=np.ones((size, size), dtype=bool))
    return PixelDomain(active)


def integrate_log_change(stream: EventStream, c: float, t_ref: int) -> cal.LogChangeFrame:
    """``c`` times the signed event count of every pixel up to ``t_ref``."""
    if c <= 0:
        raise ValueError("c must be > 0")
    return cal.LogChangeFrame.from_counts(cal.accumulate_events(stream, t_ref), c)


def midrange_log_change(stream: EventStream, c: float, window: ExposureWindow, t_ref: int) -> cal.LogChangeFrame:
    """``c * (hi + lo - 2 E(t_ref))`` per pixel over the events inside ``window``."""
    ev = stream.between(window.start, window.end)
    shape = (stream.height, stream.width)
    level = cal.polarity_sum(ev, t_ref)
    hi = np.zeros(shape, dtype=np.int64)
    lo = np.zeros(shape, dtype=np.int64)
    if len(ev):
        idx = ev.y * ev.width + ev.x
        order = np.argsort(idx, kind="stable")  # time order kept within a pixel
        pix = idx[order]
        run = np.cumsum(ev.p[order].astype(np.int64))
        starts = np.flatnonzero(np.r_[True, pix[1:] != pix[:-1]])
        offset = np.r_[0, run[starts[1:] - 1]]
        run -= np.repeat(offset, np.diff(np.r_[starts, len(pix)]))
        hi.flat[pix[starts]] = np.maximum(np.maximum.reduceat(run, starts), 0)
        lo.flat[pix[starts]] = np.minimum(np.minimum.reduceat(run, starts), 0)
    return cal.LogChangeFrame(c * (hi + lo - 2 * level).astype(np.float64), c, int(t_ref))


def event_prior(logchange: cal.LogChangeFrame) -> cal.LogChangeFrame:
    """Log-brightness at ``t'`` relative to the middle of its range, anchored at mid-grey.

    A dynamic pixel without net change maps to the same pivot as static
    pixels after exponentiation.
    """
    return cal.LogChangeFrame(np.log(PIVOT) - 0.5 * logchange.values, logchange.c, logchange.t_ref)


def infer_event(logchange: cal.LogChangeFrame, theta_e: float) -> np.ndarray:
    """Per-pixel :class:`TernaryLabel` codes (uint8)."""
    if theta_e < 0:
        raise ValueError("theta_e must be >= 0")
    v = logchange.values
    out = np.full(v.shape, TernaryLabel.AMBIGUOUS, dtype=np.uint8)
    out[v <= -theta_e] = TernaryLabel.ONE
    out[v >= theta_e] = TernaryLabel.ZERO
    return out


def infer_intensity(frame: IntensityFrame, theta_i: float, timestamp: int = 0) -> BinaryFrame:
    if not 0 < theta_i < 1:
        raise ValueError("theta_i must be in (0, 1)")
    return BinaryFrame(frame.pixels > theta_i, timestamp=timestamp)


def resolve_tprime(window: ExposureWindow, tprime: Union[None, str, int]) -> int:
    """``None``/``"mid"`` -> window midpoint, ``"end"`` -> window end, or an explicit time."""
    if tprime is None or tprime == "mid":
        return window.midpoint
    if tprime == "end":
        return window.end
    t = int(tprime)
    if t not in window:
        raise ValueError(f"t'={t} lies outside the exposure window [{window.start}, {window.end}]")
    return t


@dataclass(frozen=True, eq=False)
class KeyframeResult:
    binary: BinaryFrame
    domain: PixelDomain
    params: CalibrationParams
    decision: np.ndarray
    proxy: IntensityFrame
    theta_star: float
    c_hat: Optional[float]

    def __iter__(self) -> Iterator:
        return iter((self.binary, self.domain, self.params))


def update_contrast(
    frame: IntensityFrame,
    stream: EventStream,
    domain: PixelDomain,
    params: CalibrationParams,
    t_ref: int,
) -> tuple:
    """Return ``(c, keyframes, c_hat)``; on estimator failure the previous ``c`` is kept."""
    counts = cal.accumulate_events(stream, t_ref)
    try:
        c_hat = cal.estimate_contrast_instant(frame, counts, domain, params.sigma, params.eps)
    except cal.CalibrationError as exc:
        log.debug("contrast estimate skipped: %s", exc)
        return params.c, params.keyframes, None
    if params.keyframes == 0:
        return c_hat, 1, c_hat
    return cal.update_contrast_ema(params.c, c_hat, params.alpha), params.keyframes + 1, c_hat


def binarize_keyframe(
    frame: IntensityFrame,
    stream: EventStream,
    params: Optional[CalibrationParams] = None,
    t_ref: Union[None, str, int] = None,
    *,
    window: Optional[ExposureWindow] = None,
    dilation: int = 1,
    fixed_c: Optional[float] = None,
    fixed_lambda: Optional[float] = None,
    gradient_blind: bool = False,
) -> KeyframeResult:
    """Binarize one keyframe and return the refreshed calibration.

    ``fixed_c``, ``fixed_lambda`` and ``gradient_blind`` bypass the matching
    estimator (ablation switches).
    """
    params = params or CalibrationParams()
    window = window or frame.exposure
    if window is None:
        raise ValueError("frame has no exposure window; pass window=")
    if frame.geometry != stream.geometry:
        raise ValueError(f"frame geometry {frame.geometry} != stream geometry {stream.geometry}")
    t = resolve_tprime(window, t_ref)
    in_window = stream.between(window.start, window.end)

    domain = classify_domain(in_window, window, dilation)

    if fixed_c is not None:
        c, keyframes, c_hat = float(fixed_c), params.keyframes, None
    else:
        c, keyframes, c_hat = update_contrast(frame, in_window, domain, params, t)

    lam = float(fixed_lambda) if fixed_lambda is not None else cal.exposure_quality(frame, params.beta)
    lam = min(max(lam, np.finfo(float).tiny), 1.0)

    event_map = midrange_log_change(in_window, c, window, t)
    proxy = cal.reshape_dynamic_range(frame, event_prior(event_map), domain, lam)

    g = cal.gradient_density(proxy)
    try:
        theta_star, theta_i = cal.estimate_threshold(proxy, g, gradient_blind)
    except cal.ConstantImage:
        log.debug("constant proxy; keeping theta_i=%s", params.theta_i)
        theta_star = theta_i = params.theta_i
    theta_e = cal.map_event_threshold(theta_i, event_map, domain)

    labels = infer_event(event_map, theta_e)
    intensity = proxy.pixels > theta_i
    dyn = domain.mask
    decided = dyn & (labels != TernaryLabel.AMBIGUOUS)
    out = np.where(decided, labels == TernaryLabel.ONE, intensity)

    decision = np.full(out.shape, Decision.STATIC, dtype=np.uint8)
    decision[decided] = Decision.EVENT
    decision[dyn & ~decided] = Decision.REASSIGNED

    new_params = dataclasses.replace(
        params, c=c, theta_i=theta_i, theta_e=theta_e, lam=lam, keyframes=keyframes
    )
    return KeyframeResult(
        binary=BinaryFrame(out, timestamp=t),
        domain=domain,
        params=new_params,
        decision=decision,
        proxy=proxy,
        theta_star=theta_star,
        c_hat=c_hat,
    )


def otsu_baseline(frame: IntensityFrame, timestamp: int = 0) -> BinaryFrame:
    """Frame-only classic Otsu; a single-level frame maps to all zeros."""
    try:
        theta = cal.level_to_threshold(cal.otsu_level(frame))
    except cal.ConstantImage:
        return BinaryFrame(np.zeros(frame.pixels.shape, dtype=np.uint8), timestamp=timestamp)
    return infer_intensity(frame, theta, timestamp)
