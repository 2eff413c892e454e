"""Shared fixtures and independent brute-force oracles used across the suite."""
from __future__ import annotations

import numpy as np
import pytest

from dualbin import simulator as sim
from dualbin.core import BinaryFrame, EventStream, ExposureWindow

WINDOW = ExposureWindow(0, 20000)


def bar_scene(**kw) -> sim.LatentScene:
    base = dict(pattern="bar", size=20, velocity=(1000.0, 0.0), offset=(100, 0))
    base.update(kw)
    return sim.LatentScene(**base)


def checker_scene(**kw) -> sim.LatentScene:
    base = dict(pattern="checkerboard", size=20, velocity=(1000.0, 0.0), offset=(0, 0))
    base.update(kw)
    return sim.LatentScene(**base)


@pytest.fixture
def window():
    return WINDOW


# ------------------------------------------------------------------ oracles


def brute_events(scene: sim.LatentScene, t0: int, t1: int, c: float) -> EventStream:
    """Per-microsecond, per-pixel scan of the log radiance with a last-event reference."""
    ref = np.log(np.maximum(scene.radiance(t0), scene.floor))
    rows = []
    prev = scene.radiance(t0)
    for t in range(t0 + 1, t1 + 1):
        cur = scene.radiance(t)
        for y, x in zip(*np.nonzero(cur != prev)):
            delta = np.log(max(cur[y, x], scene.floor)) - ref[y, x]
            n = int(abs(delta) / c + 1e-9)
            p = 1 if delta > 0 else -1
            ref[y, x] += p * n * c
            rows += [(t, x, y, p)] * n
        prev = cur
    rows.sort(key=lambda r: (r[0], r[2], r[1], r[3]))
    if not rows:
        return EventStream.empty(scene.geometry)
    t, x, y, p = zip(*rows)
    return EventStream(scene.geometry, t=t, x=x, y=y, p=p)


def brute_dilate(mask: np.ndarray, r: int) -> np.ndarray:
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            out[y, x] = mask[max(0, y - r) : y + r + 1, max(0, x - r) : x + r + 1].any()
    return out


def brute_otsu_objective(levels: np.ndarray, weight=None) -> np.ndarray:
    """Between-class variance for every split 'level <= k', by direct class statistics."""
    v = levels.ravel().astype(float)
    out = np.zeros(256)
    for k in range(256):
        a, b = v[v <= k], v[v > k]
        if len(a) == 0 or len(b) == 0:
            continue
        w0, w1 = len(a) / len(v), len(b) / len(v)
        out[k] = w0 * w1 * (a.mean() - b.mean()) ** 2
    if weight is not None:
        out = out * np.log1p(weight)
    return out


def brute_sobel(px: np.ndarray) -> np.ndarray:
    p = np.pad(px, 1, mode="symmetric")
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], float)
    h, w = px.shape
    out = np.zeros_like(px, dtype=float)
    for y in range(h):
        for x in range(w):
            win = p[y : y + 3, x : x + 3]
            out[y, x] = np.hypot((win * kx).sum(), (win * kx.T).sum())
    return out


def replay_oracle(seed: BinaryFrame, stream: EventStream, c: float, theta_e: float, t_end: int) -> np.ndarray:
    """Fresh per-event replay of the flip-and-vote rule on dense arrays."""
    b = seed.pixels.astype(np.int64).copy()
    r = np.zeros(b.shape)
    h, w = b.shape
    for e in stream:
        if e.t <= seed.timestamp:
            continue
        if e.t > t_end:
            break
        implied = 1 if e.p > 0 else 0
        if b[e.y, e.x] == implied:
            continue
        r[e.y, e.x] += e.p * c
        if abs(r[e.y, e.x]) >= theta_e:
            b[e.y, e.x] = 1 - b[e.y, e.x]
            r[e.y, e.x] = 0.0
            win = b[max(0, e.y - 1) : min(h, e.y + 2), max(0, e.x - 1) : min(w, e.x + 2)]
            b[e.y, e.x] = 1 if win.sum() * 2 > win.size else 0
    return b.astype(np.uint8)


def brute_confusion(pred: np.ndarray, gt: np.ndarray):
    tp = tn = fp = fn = 0
    for a, b in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        if a and b:
            tp += 1
        elif a and not b:
            fp += 1
        elif b:
            fn += 1
        else:
            tn += 1
    return tp, tn, fp, fn


# ------------------------------------------------------------------ acceptance report

ACCEPTANCE: dict = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    """Store one acceptance verdict and echo it (shown with ``-s`` or in the summary)."""
    line = f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
