"""Domain types shared by the simulators and estimators.

Everything here is an immutable value object. Randomness is funnelled through
:func:`make_rng` so that a ``(seed, stream_id)`` pair fully determines every
simulated pattern.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class InvalidInputError(ValueError):
    """Argument violates a documented precondition."""


class ModelInvalidError(InvalidInputError):
    """Parameters do not define a valid point process."""


class InsufficientDataError(InvalidInputError):
    """Too few points for the requested statistic or fit."""


_U64 = 2**64


def make_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Philox-backed generator for replicate ``stream_id`` of root ``seed``.

    Philox is a counter-based generator; distinct stream ids go through
    ``SeedSequence.spawn_key`` so replicate streams are independent and each
    one is reproducible on its own.
    """
    if not (0 <= seed < _U64 and 0 <= stream_id < _U64):
        raise InvalidInputError("seed and stream_id must be unsigned 64-bit integers")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Window:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.x_max, self.y_min, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("window bounds must be finite")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidInputError(f"degenerate window {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def area(self) -> float:
        return self.width * self.height

    def shorter_side(self) -> float:
        return min(self.width, self.height)

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return (
            (pts[:, 0] >= self.x_min)
            & (pts[:, 0] <= self.x_max)
            & (pts[:, 1] >= self.y_min)
            & (pts[:, 1] <= self.y_max)
        )

    def shifted(self, dx: float, dy: float) -> "Window":
        return Window(self.x_min + dx, self.x_max + dx, self.y_min + dy, self.y_max + dy)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min, "y_max": self.y_max}

    @classmethod
    def from_dict(cls, d: dict) -> "Window":
        return cls(float(d["x_min"]), float(d["x_max"]), float(d["y_min"]), float(d["y_max"]))

    @classmethod
    def parse(cls, text: str) -> "Window":
        """Parse ``"x_min,x_max,y_min,y_max"``."""
        parts = text.split(",")
        if len(parts) != 4:
            raise InvalidInputError(f"window needs 4 comma-separated numbers, got {text!r}")
        try:
            return cls(*(float(p) for p in parts))
        except ValueError as exc:
            raise InvalidInputError(f"bad window {text!r}") from exc

    @classmethod
    def bounding(cls, points, pad: float = 1e-12) -> "Window":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        # A single point (or collinear points) still needs a nondegenerate box.
        hi = np.where(hi > lo, hi, lo + np.maximum(pad, np.abs(lo) * 1e-9))
        return cls(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


UNIT_SQUARE = Window(0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True)
class PointPattern:
    """Finite planar point set observed in ``window``.

    ``points`` is stored as a read-only ``(n, 2)`` float array.
    """

    points: np.ndarray
    window: Window
    check_inside: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point coordinates must be finite")
        if self.check_inside and not np.all(self.window.contains(pts)):
            raise InvalidInputError("points fall outside the window")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def count(self) -> int:
        return len(self)

    def __eq__(self, other):
        if not isinstance(other, PointPattern):
            return NotImplemented
        return self.window == other.window and np.array_equal(self.points, other.points)

    __hash__ = None

    def shifted(self, dx: float, dy: float) -> "PointPattern":
        return PointPattern(self.points + np.array([dx, dy]), self.window.shifted(dx, dy))

    def intensity(self) -> float:
        return len(self) / self.window.area()


@dataclass(frozen=True)
class DppNoiseParams:
    """Gaussian DPP (``rho_xi``, ``alpha``) plus Poisson noise ``omega``."""

    rho_xi: float
    alpha: float
    omega: float = 0.0

    def __post_init__(self):
        if not (self.rho_xi >= 0 and self.omega >= 0):
            raise ModelInvalidError("intensities must be nonnegative")
        if not self.alpha > 0:
            raise ModelInvalidError("alpha must be positive")
        if not self.rho_xi < dpp_max_intensity(self.alpha):
            raise ModelInvalidError(
                f"Gaussian DPP needs rho_xi < 1/(pi alpha^2); got rho_xi={self.rho_xi}, alpha={self.alpha}"
            )

    @property
    def rho(self) -> float:
        return self.rho_xi + self.omega


def dpp_max_intensity(alpha: float) -> float:
    return 1.0 / (math.pi * alpha * alpha)


@dataclass(frozen=True)
class SncpParams:
    """Thomas-gamma shot-noise Cox process parameters."""

    tau: float
    c: float
    alpha: float
    sigma0: float

    def __post_init__(self):
        for name in ("tau", "c", "alpha", "sigma0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ModelInvalidError(f"{name} must be positive and finite, got {v}")

    def expected_count(self) -> float:
        return self.tau / self.c

    def to_dict(self) -> dict:
        return {"tau": self.tau, "c": self.c, "alpha": self.alpha, "sigma0": self.sigma0}


@dataclass(frozen=True)
class KCurve:
    r_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r = np.array(self.r_grid, dtype=float)
        v = np.array(self.values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape or r.size < 2:
            raise InvalidInputError("KCurve needs matching 1-d arrays of length >= 2")
        if r[0] < 0 or np.any(np.diff(r) <= 0):
            raise InvalidInputError("r_grid must be nonnegative and strictly increasing")
        r.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "r_grid", r)
        object.__setattr__(self, "values", v)

    def __call__(self, r):
        return np.interp(r, self.r_grid, self.values)

    def __eq__(self, other):
        if not isinstance(other, KCurve):
            return NotImplemented
        return np.array_equal(self.r_grid, other.r_grid) and np.array_equal(self.values, other.values)

    __hash__ = None


# ---------------------------------------------------------------------------
# Partitions


@dataclass(frozen=True)
class Partition:
    """Set partition of ``k`` items, stored as canonical labels ``1..|t|``."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(int(v) for v in self.labels)
        nxt = 1
        for v in labels:
            if v == nxt:
                nxt += 1
            elif not 1 <= v < nxt:
                raise InvalidInputError(f"labels {labels} are not in first-occurrence form")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_clusters(self) -> int:
        return max(self.labels, default=0)

    @property
    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(np.asarray(self.labels, dtype=int), minlength=self.n_clusters + 1)[1:]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=int)

    def blocks(self) -> list:
        """Zero-based member indices of each cluster, in label order."""
        out = [[] for _ in range(self.n_clusters)]
        for i, v in enumerate(self.labels):
            out[v - 1].append(i)
        return out


EMPTY_PARTITION = Partition(())


def canonicalize_partition(labels: Iterable[int]) -> Partition:
    """Relabel so that label ``j`` first appears after labels ``1..j-1``.

    >>> canonicalize_partition([2, 2, 1]).labels
    (1, 1, 2)
    """
    labels = list(labels)
    if not labels:
        raise InvalidInputError("cannot canonicalize an empty label vector")
    remap = {}
    out = []
    for v in labels:
        v = int(v)
        if v < 1:
            raise InvalidInputError("labels must be >= 1")
        if v not in remap:
            remap[v] = len(remap) + 1
        out.append(remap[v])
    return Partition(tuple(out))


MAX_ENUMERATION_K = 10


def enumerate_partitions(k: int) -> list[Partition]:
    """All set partitions of ``k`` items (restricted growth strings).

    Limited to ``k <= 10`` (115975 partitions); this is an oracle, not a
    production path.
    """
    if not 1 <= k <= MAX_ENUMERATION_K:
        raise InvalidInputError(f"enumeration supports 1 <= k <= {MAX_ENUMERATION_K}, got {k}")
    out: list[Partition] = []

    def rec(prefix: list[int], top: int):
        if len(prefix) == k:
            out.append(Partition(tuple(prefix)))
            return
        for v in range(1, top + 2):
            prefix.append(v)
            rec(prefix, max(top, v))
            prefix.pop()

    rec([1], 1)
    return out


# ---------------------------------------------------------------------------
# Serialization


def format_float(v: float) -> str:
    # 17 significant digits: exact round trip for IEEE doubles.
    return f"{float(v):.16e}"


def write_pattern_csv(pattern: PointPattern, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in pattern.points:
            w.writerow([format_float(x), format_float(y)])


def read_points_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["x", "y"]:
        raise InvalidInputError(f"{path}: expected header 'x,y'")
    try:
        pts = [(float(a), float(b)) for a, b in rows[1:] if (a, b) != ("", "")]
    except ValueError as exc:
        raise InvalidInputError(f"{path}: malformed coordinate row") from exc
    return np.array(pts, dtype=float).reshape(-1, 2)


def write_window_json(window: Window, path) -> None:
    Path(path).write_text(json.dumps(window.to_dict(), indent=2, sort_keys=True) + "\n")


def read_window_json(path) -> Window:
    d = json.loads(Path(path).read_text())
    if "window" in d:
        d = d["window"]
    return Window.from_dict(d)


def read_pattern(csv_path, window: Window | None = None, window_json=None) -> PointPattern:
    """Load a pattern; the window comes from ``window``, a sidecar, or the bounding box."""
    pts = read_points_csv(csv_path)
    if window is None and window_json is not None:
        window = read_window_json(window_json)
    if window is None:
        sidecar = Path(csv_path).with_suffix(".window.json")
        if sidecar.exists():
            window = read_window_json(sidecar)
    if window is None:
        if len(pts) == 0:
            raise InvalidInputError("empty pattern needs an explicit window")
        window = Window.bounding(pts)
    return PointPattern(pts, window)


def write_kcurve_csv(curve: KCurve, path, extra: dict[str, Sequence[float]] | None = None) -> None:
    """Write ``r,k`` columns (plus any ``extra`` columns) to a path or open file."""
    extra = extra or {}
    if hasattr(path, "write"):
        _write_kcurve_rows(path, curve, extra)
        return
    with Path(path).open("w", newline="") as fh:
        _write_kcurve_rows(fh, curve, extra)


def _write_kcurve_rows(fh, curve, extra):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["r", "k", *extra])
    for row in zip(curve.r_grid, curve.values, *extra.values()):
        w.writerow([format_float(v) for v in row])


def read_kcurve_csv(path) -> KCurve:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["r", "k"]:
        raise InvalidInputError(f"{path}: expected header starting 'r,k'")
    data = np.array([[float(v) for v in row[:2]] for row in rows[1:]])
    return KCurve(data[:, 0], data[:, 1])
