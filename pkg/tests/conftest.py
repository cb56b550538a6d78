import numpy as np
import pytest

from vergescope.recording import GazeSeries, TrialRecord


def series_from_gva(
    gva_deg,
    rate_hz: float = 200.0,
    l_conf=None,
    r_conf=None,
    az_deg=None,
    t0: float = 0.0,
):
    """Build a sample series realizing an exact vergence-angle trace.

    Symmetric horizontal rays around the (optionally deflected) cyclopean
    azimuth reproduce the requested angle to machine precision.
    """
    gva = np.asarray(gva_deg, dtype=float)
    n = len(gva)
    t = t0 + np.arange(n) / rate_hz
    az = np.zeros(n) if az_deg is None else np.asarray(az_deg, dtype=float)
    half = np.radians(gva) / 2.0
    a_l = np.radians(az) + half
    a_r = np.radians(az) - half
    l_dir = np.column_stack([np.sin(a_l), np.zeros(n), np.cos(a_l)])
    r_dir = np.column_stack([np.sin(a_r), np.zeros(n), np.cos(a_r)])
    origin_l = np.tile([-0.032, 0.0, 0.0], (n, 1))
    origin_r = np.tile([0.032, 0.0, 0.0], (n, 1))
    lc = np.ones(n) if l_conf is None else np.asarray(l_conf, dtype=float)
    rc = np.ones(n) if r_conf is None else np.asarray(r_conf, dtype=float)
    return GazeSeries(t, origin_l, l_dir, origin_r, r_dir, lc, rc)


def trial_from_gva(gva_deg, rate_hz: float = 200.0, response_s=2.8, **kwargs) -> TrialRecord:
    series = series_from_gva(gva_deg, rate_hz=rate_hz, **kwargs)
    return TrialRecord(
        participant_id="p01",
        environment="Real",
        trial_id="t000",
        start_depth_m=4.0,
        end_depth_m=0.25,
        stimulus_onset_s=float(series.t_s[0]),
        response_s=response_s,
        samples=series,
    )


@pytest.fixture
def flat_trial():
    return trial_from_gva(np.full(700, 10.0))
