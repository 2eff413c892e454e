"""Adaptive parameter estimation: contrast, exposure quality, proxy frame, thresholds.

All thresholds are searched over 256 quantized intensity levels. A level
``k`` stands for the intensities that round to ``k / 255``; choosing level
``k`` as the threshold puts every level ``<= k`` in class 0, which in
continuous terms is the threshold ``(k + 0.5) / 255`` used with a strict
``>`` test (see :func:`level_to_threshold`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from dualbin.core import EventStream, IntensityFrame, PixelDomain

LEVELS = 256
MIN_DYNAMIC = 50
RIDGE_RADIUS = 5  # 2% of 256 levels


class CalibrationError(ValueError):
    pass


class InsufficientDynamicPixels(CalibrationError):
    pass


class ZeroEventVariance(CalibrationError):
    pass


class ConstantImage(CalibrationError):
    pass


@dataclass(frozen=True, eq=False)
class EventCountFrame:
    """Per-pixel signed polarity sum of events up to a reference time."""

    values: np.ndarray
    t_ref: int


@dataclass(frozen=True, eq=False)
class LogChangeFrame:
    """Accumulated log-intensity change, ``c`` times an event count frame."""

    values: np.ndarray
    c: float
    t_ref: int

    @classmethod
    def from_counts(cls, counts: EventCountFrame, c: float) -> "LogChangeFrame":
        return cls(c * counts.values.astype(np.float64), c, counts.t_ref)


@dataclass(frozen=True, eq=False)
class GradientDensityTable:
    """Summed gradient magnitude per quantized intensity level."""

    bins: np.ndarray

    @property
    def total(self) -> float:
        return float(self.bins.sum())


def polarity_sum(stream: EventStream, t_ref=None) -> np.ndarray:
    """Signed polarity count per pixel over events with ``t <= t_ref`` (all if None)."""
    if t_ref is not None:
        stream = stream.between(None, t_ref)
    n = stream.width * stream.height
    idx = stream.y * stream.width + stream.x
    counts = np.bincount(idx, weights=stream.p.astype(np.float64), minlength=n)
    return counts.astype(np.int64).reshape(stream.height, stream.width)


def accumulate_events(stream: EventStream, t_ref: int) -> EventCountFrame:
    return EventCountFrame(polarity_sum(stream, t_ref), int(t_ref))


def smoothed_log(frame: IntensityFrame, sigma: float, eps: float) -> np.ndarray:
    px = frame.pixels
    if sigma > 0:
        px = ndimage.gaussian_filter(px, sigma=sigma, mode="reflect", truncate=3.0)
    return np.log(px + eps)


def estimate_contrast_instant(
    frame: IntensityFrame,
    counts: EventCountFrame,
    domain: PixelDomain,
    sigma: float = 1.0,
    eps: float = 1e-3,
    min_dynamic: int = MIN_DYNAMIC,
) -> float:
    """Match the log-frame variance to the event-count variance over dynamic pixels.

    Returns ``sqrt(var(ln(G * I + eps)) / var(E))`` with population variances.
    """
    if frame.pixels.shape != counts.values.shape or counts.values.shape != domain.mask.shape:
        raise ValueError("frame, counts and domain must share geometry")
    sel = domain.mask
    if int(sel.sum()) < min_dynamic:
        raise InsufficientDynamicPixels(f"{int(sel.sum())} dynamic pixels < {min_dynamic}")
    var_e = float(np.var(counts.values[sel].astype(np.float64)))
    if var_e == 0.0:
        raise ZeroEventVariance("event counts are constant over the dynamic set")
    var_log = float(np.var(smoothed_log(frame, sigma, eps)[sel]))
    return contrast_from_variances(var_log, var_e)


def contrast_from_variances(var_log: float, var_events: float) -> float:
    if var_events <= 0:
        raise ZeroEventVariance("event variance must be positive")
    c = float(np.sqrt(var_log / var_events))
    if not c > 0:
        raise ZeroEventVariance("log-frame variance is zero")
    return c


def update_contrast_ema(c_prev: float, c_hat: float, alpha: float) -> float:
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    c = alpha * c_hat + (1.0 - alpha) * c_prev
    # keep the result inside the input range despite rounding
    return float(min(max(c, min(c_prev, c_hat)), max(c_prev, c_hat)))


def exposure_quality(frame: IntensityFrame, beta: float = 20.0) -> float:
    """``exp(-beta * (mean - 0.5)**2)``: 1 for a mid-grey mean, towards 0 when clipped."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    mu = float(np.mean(frame.pixels))
    return float(np.exp(-beta * (mu - 0.5) ** 2))


def reshape_dynamic_range(
    frame: IntensityFrame, logchange: LogChangeFrame, domain: PixelDomain, lam: float
) -> IntensityFrame:
    """Blend the frame with an event prior (dynamic) or the mid-grey pivot (static)."""
    if lam == 1.0:
        return frame
    prior = np.where(domain.mask, np.exp(logchange.values), 0.5)
    proxy = lam * frame.pixels + (1.0 - lam) * prior
    return IntensityFrame(np.clip(proxy, 0.0, 1.0), exposure=frame.exposure)


def quantize(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels * (LEVELS - 1)), 0, LEVELS - 1).astype(np.int64)


def level_to_threshold(level: int) -> float:
    return (level + 0.5) / (LEVELS - 1)


def sobel_magnitude(pixels: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(pixels, axis=1, mode="reflect")
    gy = ndimage.sobel(pixels, axis=0, mode="reflect")
    return np.hypot(gx, gy)


def gradient_density(proxy: IntensityFrame) -> GradientDensityTable:
    levels = quantize(proxy.pixels)
    mag = sobel_magnitude(proxy.pixels)
    return GradientDensityTable(np.bincount(levels.ravel(), weights=mag.ravel(), minlength=LEVELS))


def histogram(proxy: IntensityFrame) -> np.ndarray:
    return np.bincount(quantize(proxy.pixels).ravel(), minlength=LEVELS).astype(np.float64)


def between_class_variance(hist: np.ndarray) -> np.ndarray:
    """Otsu between-class variance for every split "levels <= k" vs "> k"."""
    p = hist / hist.sum()
    w0 = np.cumsum(p)
    mu = np.cumsum(p * np.arange(len(p)))
    mu_t = mu[-1]
    denom = w0 * (1.0 - w0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sb = (mu_t * w0 - mu) ** 2 / denom
    return np.where(denom > 1e-15, sb, 0.0)


def otsu_level(proxy: IntensityFrame) -> int:
    """Classic Otsu split level (lowest on ties)."""
    hist = histogram(proxy)
    if np.count_nonzero(hist) < 2:
        raise ConstantImage("frame has a single intensity level")
    return int(np.argmax(between_class_variance(hist)[: LEVELS - 1]))


def estimate_threshold_levels(
    proxy: IntensityFrame, g: GradientDensityTable, gradient_blind: bool = False
) -> Tuple[int, int]:
    """Gradient-weighted Otsu level and its gradient-ridge refinement.

    With ``gradient_blind`` the gradient term is replaced by the constant
    ``e - 1`` (so the weight ``ln(1 + g)`` is 1 everywhere) and no ridge
    refinement is applied.
    """
    hist = histogram(proxy)
    if np.count_nonzero(hist) < 2:
        raise ConstantImage("frame has a single intensity level")
    bins = np.full(LEVELS, np.e - 1.0) if gradient_blind else g.bins
    objective = between_class_variance(hist) * np.log1p(bins)
    # the top level cannot split anything off
    star = int(np.argmax(objective[: LEVELS - 1]))
    if gradient_blind:
        return star, star
    lo, hi = max(0, star - RIDGE_RADIUS), min(LEVELS - 2, star + RIDGE_RADIUS)
    ridge = lo + int(np.argmax(bins[lo : hi + 1]))
    return star, ridge


def estimate_threshold(
    proxy: IntensityFrame, g: GradientDensityTable, gradient_blind: bool = False
) -> Tuple[float, float]:
    """Return ``(theta_star, theta_i)`` as intensities in (0, 1)."""
    star, ridge = estimate_threshold_levels(proxy, g, gradient_blind)
    return level_to_threshold(star), level_to_threshold(ridge)


def map_event_threshold(theta_i: float, logchange: LogChangeFrame, domain: PixelDomain) -> float:
    """Scale ``theta_i`` by the largest dynamic log change; fall back to one contrast step."""
    sel = domain.mask
    peak = float(np.abs(logchange.values[sel]).max()) if sel.any() else 0.0
    if peak == 0.0:
        return float(logchange.c)
    return theta_i * peak
