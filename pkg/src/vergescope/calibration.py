"""Per-participant linear calibration between vergence angle and diopters.

The calibration line ``gva = a + b * D`` is fitted per participant in diopter
space (pooled across environments unless asked otherwise); its inverse maps a
measured vergence angle back to metric depth. Normalization subtracts the
fitted intercept, leaving slopes, residuals, and R-squared untouched.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CalibrationRangeError,
    InvalidModelError,
    MissingLevelError,
    ParticipantMismatchError,
    RankDeficiencyError,
)
from .stats import ModelFormula, ols_fit

__all__ = [
    "ParticipantModel",
    "GvaObservation",
    "fit_participant",
    "fit_participants",
    "normalize_gva",
    "estimate_depth",
    "environment_offsets",
]


@dataclass(frozen=True)
class ParticipantModel:
    """Calibration line for one participant: intercept (deg), slope (deg/D)."""

    participant_id: str
    intercept_deg: float
    slope_deg_per_d: float
    residual_sd_deg: float
    n_points: int
    # Calibrated diopter range; None when the model came from serialized form.
    d_min: float | None = None
    d_max: float | None = None

    def to_dict(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "intercept_deg": self.intercept_deg,
            "slope_deg_per_diopter": self.slope_deg_per_d,
            "residual_sd_deg": self.residual_sd_deg,
            "n_points": self.n_points,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParticipantModel":
        return cls(
            participant_id=str(d["participant_id"]),
            intercept_deg=float(d["intercept_deg"]),
            slope_deg_per_d=float(d["slope_deg_per_diopter"]),
            residual_sd_deg=float(d["residual_sd_deg"]),
            n_points=int(d["n_points"]),
        )


@dataclass(frozen=True)
class GvaObservation:
    """One analyzed vergence value for a (participant, environment, end depth) cell."""

    participant_id: str
    environment: str
    end_depth_d: float
    gva_deg: float
    normalized_gva_deg: float | None = None


def fit_participant(points: Sequence[tuple[float, float]], participant_id: str = "") -> ParticipantModel:
    """Ordinary least-squares line through (diopters, degrees) points.

    Needs at least two points at distinct diopter values. The residual SD uses
    n - 2 degrees of freedom (zero when the fit is saturated).
    """
    if len(points) < 2:
        raise RankDeficiencyError(f"need >= 2 calibration points, got {len(points)}")
    d = np.asarray([p[0] for p in points], dtype=float)
    g = np.asarray([p[1] for p in points], dtype=float)
    if np.ptp(d) == 0.0:
        raise RankDeficiencyError("all calibration points share one diopter value")
    x = np.column_stack([np.ones_like(d), d])
    q, r = np.linalg.qr(x)
    a, b = np.linalg.solve(r, q.T @ g)
    resid = g - (a + b * d)
    df = len(points) - 2
    residual_sd = math.sqrt(float(resid @ resid) / df) if df > 0 else 0.0
    return ParticipantModel(
        participant_id=participant_id,
        intercept_deg=float(a),
        slope_deg_per_d=float(b),
        residual_sd_deg=residual_sd,
        n_points=len(points),
        d_min=float(d.min()),
        d_max=float(d.max()),
    )


def fit_participants(
    observations: Iterable[GvaObservation],
    by_environment: bool = False,
) -> dict:
    """Fit one model per participant (default) or per (participant, environment)."""
    groups: dict = defaultdict(list)
    for obs in observations:
        key = (obs.participant_id, obs.environment) if by_environment else obs.participant_id
        groups[key].append((obs.end_depth_d, obs.gva_deg))
    out = {}
    for key in sorted(groups):
        pid = key if isinstance(key, str) else key[0]
        out[key] = fit_participant(groups[key], participant_id=pid)
    return out


def normalize_gva(obs: GvaObservation, model: ParticipantModel) -> GvaObservation:
    """Subtract the participant's fitted intercept from the observation."""
    if obs.participant_id != model.participant_id:
        raise ParticipantMismatchError(
            f"observation for {obs.participant_id!r} paired with model for {model.participant_id!r}"
        )
    return replace(obs, normalized_gva_deg=obs.gva_deg - model.intercept_deg)


def estimate_depth(gva_deg: float, model: ParticipantModel) -> tuple[float, float]:
    """Invert the calibration line: returns (diopters, meters).

    Rejects non-positive slopes, non-positive diopter estimates, and (when the
    calibrated range is known) estimates outside [d_min/2, 2*d_max]; a 1/D map
    extrapolated toward zero diopters explodes, so out-of-range values are
    errors rather than clamped.
    """
    if model.slope_deg_per_d <= 0.0:
        raise InvalidModelError(
            f"model for {model.participant_id!r} has non-positive slope {model.slope_deg_per_d}"
        )
    d_hat = (gva_deg - model.intercept_deg) / model.slope_deg_per_d
    if d_hat <= 0.0:
        raise CalibrationRangeError(
            f"estimated {d_hat:.4f} D is at or below zero (gva {gva_deg:.3f} deg)"
        )
    if model.d_min is not None and model.d_max is not None:
        if d_hat > 2.0 * model.d_max or d_hat < model.d_min / 2.0:
            raise CalibrationRangeError(
                f"estimated {d_hat:.4f} D outside trusted range "
                f"[{model.d_min / 2.0:.4f}, {2.0 * model.d_max:.4f}] D"
            )
    return d_hat, 1.0 / d_hat


def environment_offsets(
    observations: Sequence[GvaObservation],
    environments: Sequence[str] = ("Real", "AR", "VR"),
    use_normalized: bool = True,
) -> dict:
    """Per-environment intercepts of the additive model on (normalized) values.

    Fits ``gva ~ end_depth_d + environment`` with the first environment as
    reference and reports each environment's intercept relative to the common
    one plus the pairwise differences against the reference. Raises
    MissingLevelError when any requested environment has no data.
    """
    present = {obs.environment for obs in observations}
    missing = [e for e in environments if e not in present]
    if missing:
        raise MissingLevelError(f"no observations for environment(s) {missing}")
    values = []
    for obs in observations:
        v = obs.normalized_gva_deg if use_normalized else obs.gva_deg
        if v is None:
            raise MissingLevelError(
                f"observation for {obs.participant_id!r} lacks a normalized value"
            )
        values.append(v)
    data = {
        "gva": values,
        "end_depth_d": [obs.end_depth_d for obs in observations],
        "environment": [obs.environment for obs in observations],
    }
    fit = ols_fit(
        data,
        ModelFormula.parse("gva ~ end_depth_d + environment"),
        levels={"environment": list(environments)},
    )
    reference = environments[0]
    offsets = {reference: 0.0}
    for env in environments[1:]:
        offsets[env] = fit.coefficients[f"environment[{env}]"]
    differences = {f"{env}-{reference}": offsets[env] for env in environments[1:]}
    return {
        "reference": reference,
        "intercept_deg": fit.coefficients["intercept"],
        "slope_deg_per_d": fit.coefficients["end_depth_d"],
        "offsets_deg": offsets,
        "differences_deg": differences,
        "r_squared": fit.r_squared,
    }
