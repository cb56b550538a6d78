"""Sample and trial containers for binocular recordings.

Series are stored column-wise (numpy arrays) so the cleaning cascade can run
vectorized over full trials; ``BinocularSample`` is the row view. Invalidated
samples keep their slot in the series so the temporal structure of the raw
recording is never lost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError
from .geometry import GazeRay, Vec3

__all__ = [
    "SampleStatus",
    "BinocularSample",
    "GazeSeries",
    "TrialRecord",
    "LANDOLT_DIRECTIONS",
]

LANDOLT_DIRECTIONS = ("left", "right", "top", "bottom")


class SampleStatus:
    """Tri-state sample validity, with invalidation reasons."""

    VALID = 0
    LOW_CONFIDENCE = 1
    VELOCITY_SPIKE = 2
    OUTLIER = 3
    MISSING = 4

    NAMES = {
        VALID: "valid",
        LOW_CONFIDENCE: "low_confidence",
        VELOCITY_SPIKE: "velocity_spike",
        OUTLIER: "outlier",
        MISSING: "missing",
    }
    REASONS = ("low_confidence", "velocity_spike", "outlier", "missing")


@dataclass(frozen=True)
class BinocularSample:
    """One timestamped eye-tracker sample: left/right rays plus confidences."""

    t_s: float
    left: GazeRay | None
    right: GazeRay | None
    left_conf: float
    right_conf: float
    status: str = "valid"


def _vergence_angles(l_dir: np.ndarray, r_dir: np.ndarray) -> np.ndarray:
    nl = np.linalg.norm(l_dir, axis=1)
    nr = np.linalg.norm(r_dir, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.einsum("ij,ij->i", l_dir, r_dir) / (nl * nr)
        cos = np.clip(cos, -1.0, 1.0)
        out = np.degrees(np.arccos(cos))
    out[(nl == 0.0) | (nr == 0.0)] = np.nan
    return out


class GazeSeries:
    """Column-oriented series of binocular samples.

    Vergence angles are computed once at construction; samples whose vectors
    are unusable (NaN or zero norm) are marked missing.
    """

    def __init__(
        self,
        t_s: np.ndarray,
        l_origin: np.ndarray,
        l_dir: np.ndarray,
        r_origin: np.ndarray,
        r_dir: np.ndarray,
        l_conf: np.ndarray,
        r_conf: np.ndarray,
        status: np.ndarray | None = None,
        gva_deg: np.ndarray | None = None,
    ):
        self.t_s = np.asarray(t_s, dtype=float)
        n = len(self.t_s)
        self.l_origin = np.asarray(l_origin, dtype=float).reshape(n, 3)
        self.l_dir = np.asarray(l_dir, dtype=float).reshape(n, 3)
        self.r_origin = np.asarray(r_origin, dtype=float).reshape(n, 3)
        self.r_dir = np.asarray(r_dir, dtype=float).reshape(n, 3)
        self.l_conf = np.asarray(l_conf, dtype=float)
        self.r_conf = np.asarray(r_conf, dtype=float)
        if n and np.any(np.diff(self.t_s) < 0):
            raise DomainError("sample timestamps must be non-decreasing")
        if status is None:
            status = np.zeros(n, dtype=np.int8)
        self.status = np.asarray(status, dtype=np.int8).copy()
        if gva_deg is None:
            gva_deg = _vergence_angles(self.l_dir, self.r_dir)
            self.status[np.isnan(gva_deg) & (self.status == SampleStatus.VALID)] = SampleStatus.MISSING
        self.gva_deg = np.asarray(gva_deg, dtype=float)

    def __len__(self) -> int:
        return len(self.t_s)

    def __getitem__(self, i: int) -> BinocularSample:
        missing = self.status[i] == SampleStatus.MISSING
        return BinocularSample(
            t_s=float(self.t_s[i]),
            left=None if missing else GazeRay(Vec3(*self.l_origin[i]), Vec3(*self.l_dir[i])),
            right=None if missing else GazeRay(Vec3(*self.r_origin[i]), Vec3(*self.r_dir[i])),
            left_conf=float(self.l_conf[i]),
            right_conf=float(self.r_conf[i]),
            status=SampleStatus.NAMES[int(self.status[i])],
        )

    @classmethod
    def from_samples(cls, samples: Iterable[BinocularSample]) -> "GazeSeries":
        rows = list(samples)
        n = len(rows)
        t = np.empty(n)
        lo = np.full((n, 3), np.nan)
        ld = np.full((n, 3), np.nan)
        ro = np.full((n, 3), np.nan)
        rd = np.full((n, 3), np.nan)
        lc = np.empty(n)
        rc = np.empty(n)
        for i, s in enumerate(rows):
            t[i] = s.t_s
            lc[i] = s.left_conf
            rc[i] = s.right_conf
            if s.left is not None:
                lo[i] = s.left.origin.as_tuple()
                ld[i] = s.left.direction.as_tuple()
            if s.right is not None:
                ro[i] = s.right.origin.as_tuple()
                rd[i] = s.right.direction.as_tuple()
        return cls(t, lo, ld, ro, rd, lc, rc)

    def copy(self) -> "GazeSeries":
        return GazeSeries(
            self.t_s,
            self.l_origin,
            self.l_dir,
            self.r_origin,
            self.r_dir,
            self.l_conf,
            self.r_conf,
            status=self.status,
            gva_deg=self.gva_deg,
        )

    @property
    def valid_mask(self) -> np.ndarray:
        return self.status == SampleStatus.VALID

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid_mask))

    def status_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in SampleStatus.NAMES.values()}
        values, tallies = np.unique(self.status, return_counts=True)
        for v, c in zip(values, tallies):
            counts[SampleStatus.NAMES[int(v)]] = int(c)
        return counts

    def cyclopean_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Azimuth and elevation (degrees) of the mean gaze direction per sample."""
        mean = 0.5 * (self.l_dir + self.r_dir)
        with np.errstate(invalid="ignore"):
            az = np.degrees(np.arctan2(mean[:, 0], mean[:, 2]))
            el = np.degrees(np.arctan2(mean[:, 1], np.hypot(mean[:, 0], mean[:, 2])))
        return az, el


@dataclass(frozen=True)
class TrialRecord:
    """One vergence eye-movement trial with its metadata and sample series."""

    participant_id: str
    environment: str
    trial_id: str
    start_depth_m: float
    end_depth_m: float
    stimulus_onset_s: float
    response_s: float | None
    samples: GazeSeries
    landolt_direction: str = "right"
    landolt_response: str = "right"
    fixation_onset_s: float | None = None

    def __post_init__(self):
        if not (self.start_depth_m > 0.0) or not (self.end_depth_m > 0.0):
            raise DomainError("trial depths must be positive")
        if self.start_depth_m == self.end_depth_m:
            raise DomainError("start and end depth must differ")
        if self.landolt_response not in LANDOLT_DIRECTIONS + ("timeout",):
            raise DomainError(f"bad landolt response {self.landolt_response!r}")
        if self.fixation_onset_s is not None:
            if self.fixation_onset_s < self.stimulus_onset_s:
                raise DomainError("fixation onset precedes stimulus onset")
            if self.response_s is not None and self.fixation_onset_s > self.response_s:
                raise DomainError("fixation onset follows the button response")

    @property
    def end_depth_d(self) -> float:
        return 1.0 / self.end_depth_m

    @property
    def start_depth_d(self) -> float:
        return 1.0 / self.start_depth_m

    @property
    def switch_depth_d(self) -> float:
        """Magnitude of the dioptric change from start to end depth."""
        return abs(self.start_depth_d - self.end_depth_d)

    @property
    def direction(self) -> str:
        return "converge" if self.end_depth_m < self.start_depth_m else "diverge"

    @property
    def landolt_correct(self) -> bool:
        return self.landolt_response == self.landolt_direction

    def with_samples(self, samples: GazeSeries) -> "TrialRecord":
        return replace(self, samples=samples)

    def with_fixation_onset(self, onset_s: float | None) -> "TrialRecord":
        return replace(self, fixation_onset_s=onset_s)


def depth_pair_label(start_depth_m: float, end_depth_m: float) -> str:
    return f"{start_depth_m:g}->{end_depth_m:g}"


def depths_in_set(trial: TrialRecord, depth_set: Sequence[float], tol: float = 1e-9) -> bool:
    """Whether both trial depths come from the declared depth set."""
    return any(math.isclose(trial.start_depth_m, d, abs_tol=tol) for d in depth_set) and any(
        math.isclose(trial.end_depth_m, d, abs_tol=tol) for d in depth_set
    )
