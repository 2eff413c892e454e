"""File formats: event text files, netpbm frames and masks, key-value parameter files.

Event files are UTF-8 text::

    # geometry 346 260
    # any other comment
    100 1 2 1        <- t x y p, t in integer microseconds, p in {1, -1}

Intensity frames are 8-bit PGM and binary frames/masks are PBM (value 1 is
written as white). Parameter files and run manifests are flat ``key = value``
lines with sorted keys; a list value ``k`` is stored as ``k.0``, ``k.1``, ...
plus ``k.count``.
"""
from __future__ import annotations

import dataclasses
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from dualbin.core import (
    BinaryFrame,
    CalibrationParams,
    Event,
    EventStream,
    IntensityFrame,
    PixelDomain,
    StreamError,
    validate_stream,
)

PathLike = Union[str, os.PathLike]


class ParseError(ValueError):
    def __init__(self, msg: str, line: Optional[int] = None, path: Optional[PathLike] = None):
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {msg}" if where else msg)


class ValidationError(ValueError):
    pass


class GeometryMismatch(ValueError):
    pass


# ---------------------------------------------------------------- events


def _parse_geometry(line: str) -> Optional[Tuple[int, int]]:
    parts = line.lstrip("#").split()
    if len(parts) == 3 and parts[0] == "geometry":
        w, h = int(parts[1]), int(parts[2])
        if w <= 0 or h <= 0:
            raise ValueError("geometry must be positive")
        return w, h
    return None


def _parse_event(line: str) -> Event:
    parts = line.split()
    if len(parts) != 4:
        raise ValueError(f"expected 4 fields 't x y p', got {len(parts)}")
    t, x, y, p = (int(v) for v in parts)
    if p not in (1, -1):
        raise ValueError(f"polarity must be 1 or -1, got {p}")
    return Event(x, y, t, p)


def read_event_header(path: PathLike) -> Tuple[int, int]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            s = line.strip()
            if not s:
                continue
            if not s.startswith("#"):
                break
            try:
                geom = _parse_geometry(s)
            except ValueError as exc:
                raise ParseError(str(exc), lineno, path) from None
            if geom:
                return geom
    raise ParseError("missing '# geometry W H' header before the first event", path=path)


def iter_events(path: PathLike) -> Iterator[Event]:
    """Yield events one by one without loading the file (header is checked first)."""
    read_event_header(path)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                yield _parse_event(s)
            except ValueError as exc:
                raise ParseError(str(exc), lineno, path) from None


def read_events(path: PathLike) -> EventStream:
    """Parse and validate an event file.

    Well-formed files take a vectorized path; on any failure the file is
    rescanned line by line to report the offending line number.
    """
    geometry = read_event_header(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty body
            data = np.loadtxt(path, dtype=np.int64, comments="#", ndmin=2, encoding="utf-8")
        ok = data.shape[1] == 4 if data.size else True
    except ValueError:
        ok = False
    if ok and data.size and not np.isin(data[:, 3], (1, -1)).all():
        ok = False
    if not ok:
        events = list(iter_events(path))  # raises ParseError with the line number
        stream = EventStream.from_events(geometry, events)
    elif data.size == 0:
        stream = EventStream.empty(geometry)
    else:
        stream = EventStream(geometry, t=data[:, 0], x=data[:, 1], y=data[:, 2], p=data[:, 3])
    try:
        validate_stream(stream)
    except StreamError as exc:
        raise ValidationError(str(exc)) from exc
    return stream


def write_events(stream: EventStream, path: PathLike) -> None:
    cols = np.column_stack([stream.t, stream.x, stream.y, stream.p.astype(np.int64)])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# geometry {stream.width} {stream.height}\n")
        f.write("# t x y p\n")
        if len(stream):
            np.savetxt(f, cols, fmt="%d")


# ---------------------------------------------------------------- netpbm


def _open_netpbm(path: PathLike, allowed: Tuple[str, ...]) -> Image.Image:
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic.decode("latin-1") not in allowed:
        raise ParseError(f"bad magic number {magic!r}, expected one of {allowed}", path=path)
    try:
        with Image.open(path) as src:
            src.load()
            im = src.copy()
            im.info.update(src.info)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ParseError(f"malformed image: {exc}", path=path) from None
    return im


def write_frame(frame: IntensityFrame, path: PathLike) -> None:
    """8-bit binary PGM, values ``round(255 * I)``."""
    px = np.clip(np.rint(frame.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(px).save(path, format="PPM")


def read_frame(path: PathLike, exposure=None, geometry: Optional[Tuple[int, int]] = None) -> IntensityFrame:
    im = _open_netpbm(path, ("P2", "P5"))
    if im.mode not in ("L", "I", "I;16", "I;16B"):
        raise ParseError(f"unsupported graymap mode {im.mode}", path=path)
    px = np.asarray(im, dtype=np.float64)
    maxval = 255.0 if im.mode == "L" else float(im.info.get("maxval", 65535))
    frame = IntensityFrame(np.clip(px / maxval, 0.0, 1.0), exposure=exposure)
    _check_geometry(frame.geometry, geometry, path)
    return frame


def write_mask(frame: Union[BinaryFrame, PixelDomain, np.ndarray], path: PathLike) -> None:
    """Binary PBM; pixel value 1 is written white."""
    px = frame.pixels if isinstance(frame, BinaryFrame) else getattr(frame, "mask", frame)
    Image.fromarray(np.asarray(px, dtype=bool)).save(path, format="PPM")


def read_mask(path: PathLike, timestamp: int = 0, geometry: Optional[Tuple[int, int]] = None) -> BinaryFrame:
    im = _open_netpbm(path, ("P1", "P4"))
    frame = BinaryFrame(np.asarray(im, dtype=bool).astype(np.uint8), timestamp=timestamp)
    _check_geometry(frame.geometry, geometry, path)
    return frame


def _check_geometry(got, expected, path) -> None:
    if expected is not None and tuple(got) != tuple(expected):
        raise GeometryMismatch(f"{path}: geometry {got} != expected {tuple(expected)}")


# ---------------------------------------------------------------- key-value files


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


def flatten(data: Dict[str, object]) -> Dict[str, str]:
    flat: Dict[str, str] = {}
    for key, value in data.items():
        if any(ch in key for ch in "=\n") or key != key.strip():
            raise ValueError(f"invalid key {key!r}")
        if isinstance(value, (list, tuple)):
            flat[f"{key}.count"] = str(len(value))
            for i, item in enumerate(value):
                flat[f"{key}.{i}"] = _format_value(item)
        elif isinstance(value, dict):
            for sub, item in flatten(value).items():
                flat[f"{key}.{sub}"] = item
        else:
            text = _format_value(value)
            if "\n" in text:
                raise ValueError(f"value for {key!r} spans lines")
            flat[key] = text
    return flat


def dumps_kv(data: Dict[str, object]) -> str:
    flat = flatten(data)
    return "".join(f"{k} = {flat[k]}\n" for k in sorted(flat))


def loads_kv(text: str, source: str = "<string>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        key, sep, value = s.partition("=")
        if not sep or not key.strip():
            raise ParseError("expected 'key = value'", lineno, source)
        out[key.strip()] = value.strip()
    return out


def get_list(flat: Dict[str, str], key: str) -> List[str]:
    n = int(flat.get(f"{key}.count", 0))
    return [flat[f"{key}.{i}"] for i in range(n)]


def write_params(params: CalibrationParams, path: PathLike) -> None:
    Path(path).write_text(dumps_kv(dataclasses.asdict(params)), encoding="utf-8")


def params_from_flat(flat: Dict[str, str], source: str = "<params>") -> CalibrationParams:
    kwargs = {}
    for f in dataclasses.fields(CalibrationParams):
        if f.name in flat:
            try:
                kwargs[f.name] = int(flat[f.name]) if f.type in ("int", int) else float(flat[f.name])
            except ValueError:
                raise ParseError(f"bad value for {f.name}: {flat[f.name]!r}", path=source) from None
    unknown = set(flat) - {f.name for f in dataclasses.fields(CalibrationParams)}
    if unknown:
        raise ParseError(f"unknown parameter keys {sorted(unknown)}", path=source)
    return CalibrationParams(**kwargs)


def read_params(path: PathLike) -> CalibrationParams:
    return params_from_flat(loads_kv(Path(path).read_text(encoding="utf-8"), str(path)), str(path))


@dataclass
class RunManifest:
    """Provenance record of one CLI run; enough to replay it."""

    command: str
    version: str
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    params: Optional[CalibrationParams] = None
    seed: Optional[int] = None
    sample_times: List[int] = field(default_factory=list)
    frames: List[str] = field(default_factory=list)
    extra: Dict[str, object] = field(default_factory=dict)

    def to_flat(self) -> Dict[str, object]:
        data: Dict[str, object] = {"command": self.command, "version": self.version}
        if self.seed is not None:
            data["seed"] = self.seed
        if self.inputs:
            data["input"] = dict(self.inputs)
        if self.outputs:
            data["output"] = dict(self.outputs)
        if self.params is not None:
            data["params"] = dataclasses.asdict(self.params)
        if self.sample_times or self.frames:
            data["sample_times"] = list(self.sample_times)
            data["frames"] = list(self.frames)
        for k, v in self.extra.items():
            data[k] = v
        return data

    def dumps(self) -> str:
        return dumps_kv(self.to_flat())

    @classmethod
    def loads(cls, text: str, source: str = "<manifest>") -> "RunManifest":
        flat = loads_kv(text, source)

        def section(prefix):
            return {k[len(prefix) :]: v for k, v in flat.items() if k.startswith(prefix)}

        params = section("params.")
        known = ("command", "version", "seed", "input.", "output.", "params.", "sample_times.", "frames.")
        extra = {k: v for k, v in flat.items() if not k.startswith(known[3:]) and k not in known[:3]}
        return cls(
            command=flat.get("command", ""),
            version=flat.get("version", ""),
            inputs=section("input."),
            outputs=section("output."),
            params=params_from_flat(params, source) if params else None,
            seed=int(flat["seed"]) if "seed" in flat else None,
            sample_times=[int(v) for v in get_list(flat, "sample_times")],
            frames=get_list(flat, "frames"),
            extra=extra,
        )

    def write(self, path: PathLike) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def read(cls, path: PathLike) -> "RunManifest":
        return cls.loads(Path(path).read_text(encoding="utf-8"), str(path))
