"""Overlap- and distance-based tracking of predicted instances across frames.

Instances of frame ``t-1`` are visited in descending size order and each one
tries four matching stages against the still unmatched, same-class instances
of frame ``t``: a motion-compensated shift, a plain distance test, a plain
overlap test and a linear-regression prediction of the centre. The first
stage that succeeds claims the candidate. Tracks that vanished for a few
frames are offered the regression stage afterwards so that briefly missing
instances keep their identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Instance, Sequence
from .geometry import Center, EmptyShiftError, PixelMask, geometric_center, overlap, shift

__all__ = [
    "TrackingParams",
    "TrackedInstance",
    "Observation",
    "TrackHistory",
    "IdAllocator",
    "STAGES",
    "predict_center",
    "track_sequence",
]

STAGES = ("shift", "distance", "overlap", "regression")


@dataclass(frozen=True)
class TrackingParams:
    """Thresholds of the matching stages.

    c_o : overlap threshold, c_d : centre-distance threshold (pixels),
    c_l : distance threshold after linear-regression prediction (pixels),
    t_l : number of frames the regression looks back.
    """

    c_o: float = 0.35
    c_d: float = 100.0
    c_l: float = 50.0
    t_l: int = 5

    def __post_init__(self):
        if not 0.0 < self.c_o:
            raise ValueError("c_o must be positive")
        if self.c_d < 0 or self.c_l < 0:
            raise ValueError("c_d and c_l must be non-negative")
        if self.t_l < 3:
            raise ValueError("t_l must be at least 3")


@dataclass(frozen=True)
class TrackedInstance:
    instance: Instance
    track_id: int

    @property
    def local_id(self) -> int:
        return self.instance.local_id


@dataclass(frozen=True)
class Observation:
    mask: PixelMask
    center: Center
    size: int
    local_id: int


@dataclass
class TrackHistory:
    """Per-track observations keyed by frame index."""

    tracks: dict[int, dict[int, Observation]] = field(default_factory=dict)
    classes: dict[int, int] = field(default_factory=dict)

    def add(self, track_id: int, t: int, inst: Instance, center: Center | None = None) -> None:
        obs = self.tracks.setdefault(track_id, {})
        if obs and t <= max(obs):
            raise ValueError(f"track {track_id}: frame {t} not after {max(obs)}")
        if center is None:
            center = geometric_center(inst.mask)
        obs[t] = Observation(inst.mask, center, inst.mask.size, inst.local_id)
        self.classes.setdefault(track_id, inst.class_label)

    def get(self, track_id: int, t: int) -> Observation | None:
        return self.tracks.get(track_id, {}).get(t)

    def window(self, track_id: int, first: int, last: int) -> list[tuple[int, Observation]]:
        obs = self.tracks.get(track_id, {})
        return [(k, obs[k]) for k in range(first, last + 1) if k in obs]

    def last_seen(self, track_id: int) -> int:
        return max(self.tracks[track_id])


class IdAllocator:
    """Hands out distinct pseudo-random track ids.

    The ids are an affine permutation of a counter modulo ``2**31 - 1``, so
    they never repeat and are reproducible from the seed.
    """

    MODULUS = 2**31 - 1

    def __init__(self, seed: int | None = 0):
        rng = np.random.default_rng(seed)
        self._a = int(rng.integers(1, self.MODULUS))
        self._b = int(rng.integers(0, self.MODULUS))
        self._n = 0

    def __call__(self) -> int:
        # MODULUS is prime, so any a != 0 gives a bijection
        tid = (self._a * self._n + self._b) % self.MODULUS + 1
        self._n += 1
        return tid


def predict_center(centers, t: float) -> Center:
    """Least-squares line through ``(frame, Center)`` pairs evaluated at frame ``t``."""
    if len(centers) < 2:
        raise ValueError("linear prediction needs at least two observations")
    k = np.array([c[0] for c in centers], dtype=float)
    vh = np.array([[c[1].v, c[1].h] for c in centers], dtype=float)
    return Center(*_linear_extrapolate(k, vh, t))


def _linear_extrapolate(k: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
    km = k.mean()
    dk = k - km
    ym = y.mean(axis=0)
    denom = np.dot(dk, dk)
    if denom == 0:
        return ym
    slope = dk @ (y - ym) / denom
    return ym + slope * (t - km)


class _Candidates:
    """Unmatched instances of the current frame with cached centres."""

    def __init__(self, instances: list[Instance]):
        self.items = sorted(instances, key=lambda i: i.local_id)
        self.centers = {i.local_id: geometric_center(i.mask) for i in self.items}
        self.free = {i.local_id for i in self.items}

    def of_class(self, label: int) -> list[Instance]:
        return [j for j in self.items if j.local_id in self.free and j.class_label == label]

    def take(self, j: Instance) -> None:
        self.free.discard(j.local_id)


def _best_overlap(mask: PixelMask, cands: list[Instance]):
    best, best_o = None, -1.0
    for j in cands:  # ascending local_id, strict > keeps the smaller id on ties
        o = overlap(mask, j.mask)
        if o > best_o:
            best, best_o = j, o
    return best, best_o


def _best_distance(score, cands: list[Instance]):
    best, best_d = None, np.inf
    for j in cands:
        d = score(j)
        if d < best_d:
            best, best_d = j, d
    return best, best_d


class _Tracker:
    def __init__(self, params: TrackingParams, seed, stages):
        unknown = set(stages) - set(STAGES)
        if unknown:
            raise ValueError(f"unknown tracking stages {sorted(unknown)}")
        self.p = params
        self.stages = frozenset(stages)
        self.new_id = IdAllocator(seed)
        self.history = TrackHistory()

    def _match_active(self, tid: int, t: int, cands: _Candidates):
        """Stages 1-4 for a track observed at t-1."""
        p, h = self.p, self.history
        prev = h.get(tid, t - 1)
        pc = prev.center.as_array()
        pool = cands.of_class(h.classes[tid])
        if not pool:
            return None
        before = h.get(tid, t - 2)
        if "shift" in self.stages and t > 2 and before is not None:
            motion = pc - before.center.as_array()
            try:
                j, o = _best_overlap(shift(prev.mask, motion), pool)
            except EmptyShiftError:
                j, o = None, 0.0
            if j is not None and o >= p.c_o:
                return j

            def combined(j):
                step = cands.centers[j.local_id].as_array() - pc
                return float(np.linalg.norm(step) + np.linalg.norm(motion - step))

            j, d = _best_distance(combined, pool)
            if d <= p.c_d:
                return j
        if "distance" in self.stages and t > 1 and before is None:
            j, d = _best_distance(lambda j: cands.centers[j.local_id].distance(prev.center), pool)
            if d <= p.c_d:
                return j
        if "overlap" in self.stages and t > 1:
            j, o = _best_overlap(prev.mask, pool)
            if o >= p.c_o:
                return j
        return self._match_regression(tid, t, pool, cands)

    def _match_regression(self, tid: int, t: int, pool, cands: _Candidates):
        p = self.p
        if "regression" not in self.stages or t <= 3 or not pool:
            return None
        obs = self.history.window(tid, t - p.t_l, t - 1)
        if len(obs) < 2:
            return None
        pred = predict_center([(k, o.center) for k, o in obs], t)
        j, d = _best_distance(lambda j: cands.centers[j.local_id].distance(pred), pool)
        if d <= p.c_l:
            return j
        # largest observation wins, earliest frame on ties
        k_max, o_max = max(obs, key=lambda ko: (ko[1].size, -ko[0]))
        try:
            moved = shift(o_max.mask, pred - o_max.center)
        except EmptyShiftError:
            return None
        j, o = _best_overlap(moved, pool)
        if o >= p.c_o:
            return j
        return None

    def step(self, t: int, instances: list[Instance]) -> list[TrackedInstance]:
        h = self.history
        assigned: dict[int, int] = {}
        cands = _Candidates(instances)
        if t > 1:
            active = [tid for tid, obs in h.tracks.items() if (t - 1) in obs]
            # descending size, then ascending local id for a stable order
            active.sort(key=lambda tid: (-h.get(tid, t - 1).size, h.get(tid, t - 1).local_id))
            for tid in active:
                j = self._match_active(tid, t, cands)
                if j is not None:
                    cands.take(j)
                    assigned[j.local_id] = tid
            # tracks last seen 2..t_l-2 frames ago may be re-linked via regression
            lost = [
                tid
                for tid, obs in h.tracks.items()
                if 2 <= t - max(obs) <= self.p.t_l - 2
            ]
            lost.sort(key=lambda tid: (t - h.last_seen(tid), -h.get(tid, h.last_seen(tid)).size, tid))
            for tid in lost:
                pool = cands.of_class(h.classes[tid])
                j = self._match_regression(tid, t, pool, cands)
                if j is not None:
                    cands.take(j)
                    assigned[j.local_id] = tid
        out = []
        for inst in cands.items:
            tid = assigned.get(inst.local_id)
            if tid is None:
                tid = self.new_id()
            h.add(tid, t, inst, cands.centers[inst.local_id])
            out.append(TrackedInstance(inst, tid))
        ids = [o.track_id for o in out]
        assert len(ids) == len(set(ids)), f"duplicate track ids in frame {t}"
        return out


def track_sequence(
    seq: Sequence,
    params: TrackingParams | None = None,
    seed: int | None = 0,
    stages=STAGES,
    return_history: bool = False,
):
    """Assign persistent track ids to every instance of ``seq``.

    Parameters
    ----------
    seq : Sequence
        Predictions, already cleaned with :func:`filter_ignored`.
    params : TrackingParams, optional
        Matching thresholds; defaults to ``c_o=0.35, c_d=100, c_l=50, t_l=5``.
    seed : int
        Seed for the track-id generator.
    stages : iterable of str
        Subset of :data:`STAGES` to enable. Disabling stages is meant for
        ablations.
    return_history : bool
        Also return the :class:`TrackHistory` built along the way.

    Returns
    -------
    list of list of TrackedInstance
        One list per frame, ordered by local id.
    """
    tracker = _Tracker(params or TrackingParams(), seed, stages)
    frames = [tracker.step(fr.index, fr.instances) for fr in seq.frames]
    if return_history:
        return frames, tracker.history
    return frames
