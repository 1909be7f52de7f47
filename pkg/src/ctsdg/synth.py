"""Synthetic two-vehicle interaction generator.

Samples a domain (road geometry, speed limit, rule), two driver latents, and
an event latent; derives causal features from drivers + event only and styles
the trajectories with domain-dependent nuisance (intersect angle via lateral
wander, approach length via gap scale, negotiation onset via rule, and an
event-driven lane offset whose sign is a domain property). The emitted label
always equals the eventual first-crossing outcome of the simulated
trajectories: the yielding vehicle is held short of the conflict point until
the passing vehicle has crossed. The observation window ends a fixed lead
time before the first crossing, so the intention must be inferred from the
approach dynamics rather than read off a crossing event.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GenerationError
from .frenet import (PASS, YIELD, DomainDataset, Polyline, SequenceSample,
                     build_sequence)

DT = 0.1  # 10 Hz
WINDOW = 10
LEAD_STEPS = 10   # the window ends this many steps before the first crossing
MAX_GAP = 100.0   # fixed normalizer for the initial-advantage feature (m)
V_REF = 30.0      # fixed normalizer for the speed-differential feature (m/s)
DECEL_CAP = 4.0   # m/s^2
STOP_MARGIN = 3.0  # yielder holds this far short of the conflict point (m)
OBS_NOISE = 0.5   # position noise sigma (m)
LANE_TANH_SCALE = 10.0  # meters of gap difference per unit of lane-bias drive

RULE_ONSET_S = {"yield_sign": 0.2, "stop_sign": 0.4, "zipper": 0.6}


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    intersect_angle: float  # degrees
    approach_length: float  # meters
    speed_limit: float      # m/s
    rule: str
    # Signed gain of the domain's lane-position styling. The lane offset is
    # driven by the event's gap difference, so it correlates with the label
    # through the event — a domain-styled shortcut that does not transfer.
    lane_bias: float = 1.5

    def __post_init__(self):
        if not 0.0 < self.intersect_angle < 180.0:
            raise ConfigError(f"intersect_angle must be in (0, 180), got {self.intersect_angle}")
        if self.approach_length <= 0 or self.speed_limit <= 0:
            raise ConfigError("approach_length and speed_limit must be positive")
        if self.rule not in RULE_ONSET_S:
            raise ConfigError(f"unknown traffic rule {self.rule!r}")


MPH = 0.44704
SPEC_LIBRARY = {
    "ft1": DomainSpec("ft1", 45.0, 60.0, 25 * MPH, "yield_sign", lane_bias=2.0),
    "ft2": DomainSpec("ft2", 90.0, 60.0, 25 * MPH, "stop_sign", lane_bias=-2.0),
    "ft3": DomainSpec("ft3", 120.0, 40.0, 25 * MPH, "stop_sign", lane_bias=2.0),
    "zs": DomainSpec("zs", 10.0, 100.0, 50 * MPH, "zipper", lane_bias=-2.0),
}


@dataclass(frozen=True)
class DriverLatent:
    aggressiveness: float
    compliance: float

    def __post_init__(self):
        if not (0.0 <= self.aggressiveness <= 1.0 and 0.0 <= self.compliance <= 1.0):
            raise ConfigError("driver latents must lie in [0, 1]")


@dataclass(frozen=True)
class EventLatent:
    init_gap_a: float
    init_gap_b: float
    init_speed_a: float
    init_speed_b: float
    horizon: int


@dataclass(frozen=True)
class CausalRecord:
    x_c: tuple[float, float, float]  # aggr diff, initial advantage, speed diff
    x_nc: tuple[float, ...]  # angle, path-length scale, onset, lane offset


def sample_domain(spec_library: dict[str, DomainSpec], rng: np.random.Generator,
                  jitter: bool = False) -> DomainSpec:
    if not spec_library:
        raise ConfigError("empty domain spec library")
    names = sorted(spec_library)
    spec = spec_library[names[rng.integers(len(names))]]
    if jitter:
        angle = float(np.clip(spec.intersect_angle + rng.uniform(-5.0, 5.0), 1.0, 179.0))
        spec = DomainSpec(spec.domain_id, angle, spec.approach_length,
                          spec.speed_limit, spec.rule, spec.lane_bias)
    return spec


def sample_drivers(domain: DomainSpec, rng: np.random.Generator,
                   aggressiveness_offset: float = 0.0,
                   concentration: float = 4.0) -> tuple[DriverLatent, DriverLatent]:
    """Two independent drivers; the Beta mean shifts by the per-domain offset
    (the domain-driver correlation knob, 0 by default)."""
    mean = float(np.clip(0.5 + aggressiveness_offset, 0.02, 0.98))
    a, b = mean * concentration, (1.0 - mean) * concentration
    drivers = []
    for _ in range(2):
        aggr = float(rng.beta(a, b))
        comp = float(rng.beta(2.0, 2.0))
        drivers.append(DriverLatent(aggr, comp))
    return drivers[0], drivers[1]


def sample_event(domain: DomainSpec, rng: np.random.Generator,
                 horizon: int = 200) -> EventLatent:
    length = domain.approach_length
    return EventLatent(
        init_gap_a=float(rng.uniform(0.5, 0.9) * length),
        init_gap_b=float(rng.uniform(0.5, 0.9) * length),
        init_speed_a=float(rng.uniform(0.4, 1.0) * domain.speed_limit),
        init_speed_b=float(rng.uniform(0.4, 1.0) * domain.speed_limit),
        horizon=horizon,
    )


def causal_features(e: EventLatent, o_a: DriverLatent,
                    o_b: DriverLatent) -> tuple[float, float, float]:
    # Fixed normalizers keep these a function of (event, drivers) only.
    return (o_a.aggressiveness - o_b.aggressiveness,
            (e.init_gap_b - e.init_gap_a) / MAX_GAP,
            (e.init_speed_a - e.init_speed_b) / V_REF)


LABEL_WEIGHTS = (1.0, 1.0, 0.5)


def label_from_causal(x_c, weights=LABEL_WEIGHTS) -> int:
    score = sum(w * v for w, v in zip(weights, x_c))
    return PASS if score > 0.0 else YIELD


def label_intention(e: EventLatent, o_a: DriverLatent, o_b: DriverLatent,
                    weights=LABEL_WEIGHTS) -> int:
    return label_from_causal(causal_features(e, o_a, o_b), weights)


def _reference_paths(d: DomainSpec) -> tuple[Polyline, Polyline]:
    # Straight approach legs crossing at the origin (the conflict point).
    reach = d.approach_length + 20.0
    theta = math.radians(d.intersect_angle)
    ux, uy = math.cos(theta), math.sin(theta)
    path_a = Polyline((( -reach, 0.0), (40.0, 0.0)))
    path_b = Polyline(((-reach * ux, -reach * uy), (40.0 * ux, 40.0 * uy)))
    return path_a, path_b


def _lane_offset(d: DomainSpec, e: EventLatent) -> float:
    drive = math.tanh((e.init_gap_b - e.init_gap_a) / LANE_TANH_SCALE)
    return d.lane_bias * drive


def _nuisance(d: DomainSpec, e: EventLatent) -> tuple[float, float, float, float]:
    onset = RULE_ONSET_S[d.rule] + 0.01 * (e.init_gap_a + e.init_gap_b) / 2.0
    return (d.intersect_angle, d.approach_length / MAX_GAP, onset,
            _lane_offset(d, e))


def simulate_interaction(d: DomainSpec, e: EventLatent, o_a: DriverLatent,
                         o_b: DriverLatent, rng: np.random.Generator,
                         noise: float = OBS_NOISE, window: int = WINDOW,
                         lead: int = LEAD_STEPS) -> tuple[SequenceSample, CausalRecord]:
    x_c = causal_features(e, o_a, o_b)
    y = label_from_causal(x_c)
    x_nc = _nuisance(d, e)
    record = CausalRecord(x_c=x_c, x_nc=x_nc)

    passer_is_a = (y == PASS)
    onset_step = int(round(x_nc[2] / DT))

    # Longitudinal integration: s measured from the conflict point.
    s = [-e.init_gap_a, -e.init_gap_b]
    v = [e.init_speed_a, e.init_speed_b]
    pi = 0 if passer_is_a else 1  # passer index
    yi = 1 - pi
    v_des = min(max(v[pi], 0.5 * d.speed_limit), d.speed_limit)
    s_hist = [list(s)]
    passer_crossed = False
    cross_step = None
    for t in range(1, e.horizon + 1):
        # Passer holds or regains speed toward its desired speed.
        a_p = float(np.clip(1.5 * (v_des - v[pi]), -2.0, 2.0))
        v[pi] = max(v[pi] + a_p * DT, 0.0)
        s[pi] += v[pi] * DT
        # Yielder brakes after negotiation onset, harder when less aggressive,
        # and is clamped short of the conflict point until the passer crosses.
        aggr = (o_a if yi == 0 else o_b).aggressiveness
        if passer_crossed:
            v[yi] = min(v[yi] + 1.5 * DT, d.speed_limit)
        elif t >= onset_step:
            remaining = max(-s[yi] - STOP_MARGIN, 0.1)
            a_req = v[yi] ** 2 / (2.0 * remaining)
            brake = min(DECEL_CAP, max(a_req, 1.0 + 2.0 * (1.0 - aggr)))
            v[yi] = max(v[yi] - brake * DT, 0.0)
        s[yi] += v[yi] * DT
        if s[yi] > -STOP_MARGIN and not passer_crossed:
            s[yi] = -STOP_MARGIN
            v[yi] = 0.0
        s_hist.append(list(s))
        if not passer_crossed and s[pi] >= 0.0:
            passer_crossed = True
            cross_step = t
            break
    if cross_step is None:
        raise GenerationError("passing vehicle never reached the conflict point")
    if cross_step < lead + window - 1:
        raise GenerationError("conflict point reached before a full window elapsed")

    path_a, path_b = _reference_paths(d)
    theta = math.radians(d.intersect_angle)
    dirs = [(1.0, 0.0), (math.cos(theta), math.sin(theta))]
    amp = 0.15 + 0.45 * d.intersect_angle / 180.0  # domain-styled lateral wander
    lane = _lane_offset(d, e)
    steps = range(cross_step - lead - window + 1, cross_step - lead + 1)
    base_tracks = [[], []]
    for t in steps:
        for i in range(2):
            ux, uy = dirs[i]
            lat = lane + amp * math.sin(
                2.0 * math.pi * t / e.horizon + (0.0 if i == 0 else math.pi / 2))
            si = s_hist[t][i]
            nx, ny = -uy, ux  # left normal
            base_tracks[i].append((si * ux + lat * nx, si * uy + lat * ny))

    for attempt in range(100):
        tracks = []
        for tr in base_tracks:
            pts = np.asarray(tr)
            if noise > 0:
                pts = pts + rng.normal(0.0, noise, size=pts.shape)
            tracks.append([tuple(p) for p in pts])
        x = build_sequence(tracks[0], tracks[1], path_a, path_b, window)
        # The window ends before either vehicle crosses; any crossing that
        # noise does produce in-window must agree with the label.
        if first_crossing_label(x) in (None, y):
            sample = SequenceSample(sample_id="", domain_id=d.domain_id, y=y, x=x)
            return sample, record
    raise GenerationError("observation noise kept flipping the first-crossing label")


def first_crossing_label(x: np.ndarray) -> int | None:
    """Label implied by which vehicle's s first reaches 0 in the window."""
    cross_a = np.flatnonzero(x[:, 0] >= 0.0)
    cross_b = np.flatnonzero(x[:, 2] >= 0.0)
    ia = cross_a[0] if cross_a.size else None
    ib = cross_b[0] if cross_b.size else None
    if ia is None and ib is None:
        return None
    if ib is None or (ia is not None and ia <= ib):
        return PASS
    return YIELD


def gen_domain_dataset(d: DomainSpec, n_per_class: int, rng: np.random.Generator,
                       aggressiveness_offset: float = 0.0,
                       noise: float = OBS_NOISE,
                       max_attempts: int = 100_000,
                       ) -> tuple[DomainDataset, dict[str, CausalRecord]]:
    """Exactly n_per_class samples of each label, by rejection sampling."""
    if n_per_class < 1:
        raise ConfigError("n_per_class must be >= 1")
    want = {PASS: n_per_class, YIELD: n_per_class}
    got = {PASS: 0, YIELD: 0}
    dataset = DomainDataset(d.domain_id)
    records: dict[str, CausalRecord] = {}
    attempts = 0
    while got[PASS] < want[PASS] or got[YIELD] < want[YIELD]:
        attempts += 1
        if attempts > max_attempts:
            raise ConfigError(
                f"label rejection exceeded {max_attempts} attempts for domain "
                f"{d.domain_id}; scoring weights look degenerate")
        o_a, o_b = sample_drivers(d, rng, aggressiveness_offset)
        e = sample_event(d, rng)
        y = label_intention(e, o_a, o_b)
        if got[y] >= want[y]:
            continue
        try:
            sample, record = simulate_interaction(d, e, o_a, o_b, rng, noise=noise)
        except GenerationError:
            continue
        sample.sample_id = f"{d.domain_id}-{got[PASS] + got[YIELD]:05d}"
        got[y] += 1
        dataset.samples.append(sample)
        records[sample.sample_id] = record
    return dataset, records


def save_sidecar(records: dict[str, CausalRecord], path) -> None:
    with open(path, "w") as fh:
        for sid in sorted(records):
            r = records[sid]
            fh.write(json.dumps({"sample_id": sid, "x_c": list(r.x_c),
                                 "x_nc": list(r.x_nc)}) + "\n")


def load_sidecar(path) -> dict[str, CausalRecord]:
    records = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records[obj["sample_id"]] = CausalRecord(x_c=tuple(obj["x_c"]),
                                                     x_nc=tuple(obj["x_nc"]))
    return records
