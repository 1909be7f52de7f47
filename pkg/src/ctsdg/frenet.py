"""Frenet-frame conversion of Cartesian vehicle tracks.

Both vehicles share one origin: the first crossing of their reference paths
along path A's arclength. Longitudinal position ``s`` is signed (negative
before the crossing), lateral deviation ``d`` is positive to the left of the
travel direction. Projection past a polyline end falls back to the end
segment's infinite extension so windows never hit a discontinuity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, GeometryError


@dataclass(frozen=True)
class Polyline:
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.points) < 2:
            raise GeometryError("polyline needs at least 2 points")
        for (x0, y0), (x1, y1) in zip(self.points, self.points[1:]):
            if x0 == x1 and y0 == y1:
                raise GeometryError("consecutive polyline points coincide")

    @property
    def arclengths(self) -> np.ndarray:
        pts = np.asarray(self.points)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])


@dataclass(frozen=True)
class FrenetState:
    s: float
    d: float


@dataclass
class SequenceSample:
    """One labeled two-vehicle window: columns (s_A, d_A, s_B, d_B) at 10 Hz."""

    sample_id: str
    domain_id: str
    y: int
    x: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2 or self.x.shape[1] != 4:
            raise DataError(f"sample {self.sample_id}: x must be T x 4, got {self.x.shape}")
        if not np.all(np.isfinite(self.x)):
            raise DataError(f"sample {self.sample_id}: non-finite feature values")
        if self.y not in (0, 1):
            raise DataError(f"sample {self.sample_id}: label must be 0 or 1, got {self.y}")


PASS, YIELD = 0, 1


@dataclass
class DomainDataset:
    domain_id: str
    samples: list[SequenceSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)


def _segment_intersection(p, q, r, s):
    """Intersection of segments p-q and r-s, or None; returns (t, point) with
    t the fraction along p-q."""
    p, q, r, s = (np.asarray(v, dtype=float) for v in (p, q, r, s))
    d1, d2 = q - p, s - r
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < 1e-14:
        return None
    rel = r - p
    t = (rel[0] * d2[1] - rel[1] * d2[0]) / denom
    u = (rel[0] * d1[1] - rel[1] * d1[0]) / denom
    if -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12:
        return float(np.clip(t, 0.0, 1.0)), p + np.clip(t, 0.0, 1.0) * d1
    return None


def path_conflict_point(path_a: Polyline, path_b: Polyline) -> tuple[float, float]:
    """First intersection of the two paths along path_a's arclength."""
    best = None
    arcs = path_a.arclengths
    for i, (a0, a1) in enumerate(zip(path_a.points, path_a.points[1:])):
        seg_hits = []
        for b0, b1 in zip(path_b.points, path_b.points[1:]):
            hit = _segment_intersection(a0, a1, b0, b1)
            if hit is not None:
                seg_hits.append(hit)
        if seg_hits:
            t, pt = min(seg_hits, key=lambda h: h[0])
            s_here = arcs[i] + t * (arcs[i + 1] - arcs[i])
            if best is None or s_here < best[0]:
                best = (s_here, pt)
        if best is not None:
            break
    if best is None:
        raise GeometryError("reference paths do not intersect; no conflict point")
    return float(best[1][0]), float(best[1][1])


def arclength_of_point(path: Polyline, p: tuple[float, float]) -> float:
    """Arclength of the closest point on the polyline (ends extended)."""
    return project_to_frenet(p, path, origin_s=0.0).s


def project_to_frenet(p: tuple[float, float], path: Polyline,
                      origin_s: float) -> FrenetState:
    pts = np.asarray(path.points)
    arcs = path.arclengths
    px = np.asarray(p, dtype=float)
    n_seg = len(pts) - 1
    best = None  # (dist, arclength, signed_d)
    for i in range(n_seg):
        a, b = pts[i], pts[i + 1]
        ab = b - a
        length = float(np.linalg.norm(ab))
        t = float(np.dot(px - a, ab) / (length * length))
        # End segments extend to infinity; interior ones are clamped.
        lo = -math.inf if i == 0 else 0.0
        hi = math.inf if i == n_seg - 1 else 1.0
        t = min(max(t, lo), hi)
        proj = a + t * ab
        delta = px - proj
        dist = float(np.linalg.norm(delta))
        cross = ab[0] * delta[1] - ab[1] * delta[0]
        d = math.copysign(dist, cross) if dist > 0 else 0.0
        s = arcs[i] + t * length
        if best is None or dist < best[0] - 1e-12 or (
                abs(dist - best[0]) <= 1e-12 and s < best[1]):
            best = (dist, s, d)
    return FrenetState(s=best[1] - origin_s, d=best[2])


def build_sequence(track_a, track_b, path_a: Polyline, path_b: Polyline,
                   window: int) -> np.ndarray:
    """Last ``window`` time-aligned steps as a window x 4 Frenet matrix."""
    if len(track_a) != len(track_b):
        raise DataError(f"tracks not time-aligned: {len(track_a)} vs {len(track_b)}")
    if len(track_a) < window:
        raise DataError(f"track length {len(track_a)} shorter than window {window}")
    cp = path_conflict_point(path_a, path_b)
    origin_a = arclength_of_point(path_a, cp)
    origin_b = arclength_of_point(path_b, cp)
    rows = []
    for pa, pb in zip(track_a[-window:], track_b[-window:]):
        fa = project_to_frenet(pa, path_a, origin_a)
        fb = project_to_frenet(pb, path_b, origin_b)
        rows.append([fa.s, fa.d, fb.s, fb.d])
    return np.asarray(rows, dtype=np.float64)


def save_jsonl(samples: list[SequenceSample], path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps({"sample_id": s.sample_id, "domain_id": s.domain_id,
                                 "y": s.y, "x": s.x.tolist()}) + "\n")


def load_jsonl(path, expect_window: int | None = None) -> list[SequenceSample]:
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e})") from e
            try:
                sample = SequenceSample(sample_id=obj["sample_id"],
                                        domain_id=obj["domain_id"],
                                        y=obj["y"], x=obj["x"])
            except KeyError as e:
                raise DataError(f"{path}:{lineno}: missing field {e}") from e
            if expect_window is not None and sample.x.shape[0] != expect_window:
                raise DataError(f"{path}:{lineno}: expected {expect_window} steps, "
                                f"got {sample.x.shape[0]}")
            samples.append(sample)
    return samples


def group_by_domain(samples: list[SequenceSample]) -> list[DomainDataset]:
    by_dom: dict[str, DomainDataset] = {}
    for s in samples:
        by_dom.setdefault(s.domain_id, DomainDataset(s.domain_id)).samples.append(s)
    return [by_dom[k] for k in sorted(by_dom)]
