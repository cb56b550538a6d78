"""File formats: gaze CSV, trial manifests, subjective reports, tables, JSON.

The gaze CSV is the bulk format (one file per trial, strict fixed header);
everything structured travels as JSON. Report JSON floats are fixed at nine
significant digits so repeated runs are byte-identical; gaze CSV floats use
``repr`` so emit/parse round-trips are lossless.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .calibration import ParticipantModel
from .errors import GazeParseError
from .pipeline import ProcessedTrial
from .recording import GazeSeries, TrialRecord, depths_in_set
from .synth import SimulatedDataset, SubjectiveReport

__all__ = [
    "GAZE_CSV_HEADER",
    "write_gaze_csv",
    "parse_gaze_csv",
    "write_manifest",
    "load_manifest",
    "load_session_trials",
    "write_subjective_csv",
    "parse_subjective_csv",
    "write_gva_table_csv",
    "parse_gva_table_csv",
    "GvaTableRow",
    "write_models_json",
    "load_models_json",
    "canonical_json",
    "write_json",
    "write_dataset",
    "load_dataset_trials",
]

GAZE_CSV_HEADER = [
    "t_s",
    "l_conf",
    "r_conf",
    "l_ox",
    "l_oy",
    "l_oz",
    "l_dx",
    "l_dy",
    "l_dz",
    "r_ox",
    "r_oy",
    "r_oz",
    "r_dx",
    "r_dy",
    "r_dz",
]


def _round9(x: float) -> float:
    return float(f"{x:.9g}")


def _jsonable(obj, quantize: bool):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v, quantize) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v, quantize) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return _round9(x) if quantize else x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_json(obj, precise: bool = False) -> str:
    """Deterministic JSON text: sorted keys; floats at 9 significant digits.

    ``precise`` keeps full float precision, for data files (manifests, the
    ground-truth ledger) whose values must round-trip exactly.
    """
    return json.dumps(_jsonable(obj, not precise), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str, obj, precise: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(obj, precise))


def write_gaze_csv(path: str, series: GazeSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(GAZE_CSV_HEADER)
        for i in range(len(series)):
            row = [
                repr(float(series.t_s[i])),
                repr(float(series.l_conf[i])),
                repr(float(series.r_conf[i])),
            ]
            for block in (series.l_origin, series.l_dir, series.r_origin, series.r_dir):
                row.extend(repr(float(v)) for v in block[i])
            writer.writerow(row)


def _parse_float(text: str, field: str, path: str, line: int, allow_nan: bool) -> float:
    try:
        value = float(text)
    except ValueError:
        raise GazeParseError(f"unparseable {field} value {text!r}", path, line) from None
    if math.isnan(value) and not allow_nan:
        raise GazeParseError(f"NaN not allowed in {field}", path, line)
    if math.isinf(value):
        raise GazeParseError(f"non-finite {field} value", path, line)
    return value


def parse_gaze_csv(path: str) -> GazeSeries:
    """Strictly parse a gaze CSV into a series.

    The header must match the schema exactly; timestamps must be
    non-decreasing; confidences must lie in [0, 1]. NaN literals are accepted
    in the vector fields only and mark the sample as missing.
    """
    rows: list[list[float]] = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GazeParseError("empty file (missing header)", path, 1) from None
        if header != GAZE_CSV_HEADER:
            raise GazeParseError(
                f"bad header {header!r}, expected {GAZE_CSV_HEADER!r}", path, 1
            )
        prev_t = -math.inf
        for line_no, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(GAZE_CSV_HEADER):
                raise GazeParseError(
                    f"expected {len(GAZE_CSV_HEADER)} fields, got {len(raw)}", path, line_no
                )
            t = _parse_float(raw[0], "t_s", path, line_no, allow_nan=False)
            if t < prev_t:
                raise GazeParseError(f"non-monotone timestamp {t}", path, line_no)
            prev_t = t
            lc = _parse_float(raw[1], "l_conf", path, line_no, allow_nan=False)
            rc = _parse_float(raw[2], "r_conf", path, line_no, allow_nan=False)
            for name, v in (("l_conf", lc), ("r_conf", rc)):
                if not (0.0 <= v <= 1.0):
                    raise GazeParseError(f"{name} {v} outside [0, 1]", path, line_no)
            vec = [
                _parse_float(raw[i], GAZE_CSV_HEADER[i], path, line_no, allow_nan=True)
                for i in range(3, 15)
            ]
            rows.append([t, lc, rc] + vec)
    data = np.asarray(rows, dtype=float).reshape(len(rows), 15)
    return GazeSeries(
        t_s=data[:, 0],
        l_conf=data[:, 1],
        r_conf=data[:, 2],
        l_origin=data[:, 3:6],
        l_dir=data[:, 6:9],
        r_origin=data[:, 9:12],
        r_dir=data[:, 12:15],
    )


def write_manifest(path: str, trials: Sequence[TrialRecord], gaze_files: Sequence[str], depth_set_m: Sequence[float]) -> None:
    if len(trials) != len(gaze_files):
        raise ValueError("one gaze file per trial required")
    doc = {
        "participant_id": trials[0].participant_id,
        "environment": trials[0].environment,
        "depth_set_m": list(depth_set_m),
        "trials": [
            {
                "trial_id": t.trial_id,
                "start_depth_m": t.start_depth_m,
                "end_depth_m": t.end_depth_m,
                "stimulus_onset_s": t.stimulus_onset_s,
                "response_s": t.response_s,
                "landolt_direction": t.landolt_direction,
                "landolt_response": t.landolt_response,
                "gaze_file": gaze_files[i],
            }
            for i, t in enumerate(trials)
        ],
    }
    write_json(path, doc, precise=True)


def load_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GazeParseError(f"invalid manifest JSON: {exc}", path) from None
    for key in ("participant_id", "environment", "trials"):
        if key not in doc:
            raise GazeParseError(f"manifest missing {key!r}", path)
    return doc


def load_session_trials(manifest_path: str, validate_chaining: bool = False) -> list[TrialRecord]:
    """Materialize one session's trials, reading gaze files relative to the manifest.

    ``validate_chaining`` additionally checks that each trial starts at the
    previous trial's end depth.
    """
    doc = load_manifest(manifest_path)
    if validate_chaining:
        entries = doc["trials"]
        for i in range(1, len(entries)):
            if entries[i]["start_depth_m"] != entries[i - 1]["end_depth_m"]:
                raise GazeParseError(
                    f"trial {entries[i]['trial_id']} starts at {entries[i]['start_depth_m']} m "
                    f"but the previous trial ended at {entries[i - 1]['end_depth_m']} m",
                    manifest_path,
                )
    depth_set = [float(d) for d in doc.get("depth_set_m", [])]
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for entry in doc["trials"]:
        series = parse_gaze_csv(os.path.join(base, entry["gaze_file"]))
        trial = TrialRecord(
            participant_id=doc["participant_id"],
            environment=doc["environment"],
            trial_id=str(entry["trial_id"]),
            start_depth_m=float(entry["start_depth_m"]),
            end_depth_m=float(entry["end_depth_m"]),
            stimulus_onset_s=float(entry["stimulus_onset_s"]),
            response_s=None if entry.get("response_s") is None else float(entry["response_s"]),
            samples=series,
            landolt_direction=entry.get("landolt_direction", "right"),
            landolt_response=entry.get("landolt_response", "right"),
        )
        if depth_set and not depths_in_set(trial, depth_set):
            raise GazeParseError(
                f"trial {trial.trial_id} depths ({trial.start_depth_m}, {trial.end_depth_m}) "
                f"not in the declared depth set {depth_set}",
                manifest_path,
            )
        out.append(trial)
    return out


def write_subjective_csv(path: str, reports: Iterable[SubjectiveReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["participant_id", "environment", "depth_m", "report_value", "unit", "repetition"])
        for r in reports:
            writer.writerow(
                [r.participant_id, r.environment, repr(r.depth_m), repr(r.report_value), r.unit, r.repetition]
            )


def parse_subjective_csv(path: str) -> list[SubjectiveReport]:
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for line_no, row in enumerate(reader, start=2):
            try:
                value = float(row["report_value"])
                depth = float(row["depth_m"])
                rep = int(row["repetition"])
            except (KeyError, ValueError) as exc:
                raise GazeParseError(f"bad subjective row: {exc}", path, line_no) from None
            if value <= 0.0:
                raise GazeParseError(f"report_value must be positive, got {value}", path, line_no)
            out.append(
                SubjectiveReport(row["participant_id"], row["environment"], depth, value, row["unit"], rep)
            )
    return out


@dataclass(frozen=True)
class GvaTableRow:
    """One preprocessed trial as it appears in the analysis table."""

    participant_id: str
    environment: str
    trial_id: str
    start_depth_m: float
    end_depth_m: float
    status: str
    gva_mean_deg: float | None
    valid_fraction: float
    valid: bool
    landolt_correct: bool

    @property
    def end_depth_d(self) -> float:
        return 1.0 / self.end_depth_m

    @property
    def start_depth_d(self) -> float:
        return 1.0 / self.start_depth_m

    @property
    def switch_depth_d(self) -> float:
        return abs(self.start_depth_d - self.end_depth_d)

    @classmethod
    def from_processed(cls, p: ProcessedTrial) -> "GvaTableRow":
        return cls(
            p.participant_id,
            p.environment,
            p.trial_id,
            p.start_depth_m,
            p.end_depth_m,
            p.status,
            p.gva_mean_deg,
            p.valid_fraction,
            p.valid,
            p.landolt_correct,
        )


_GVA_TABLE_HEADER = [
    "participant_id",
    "environment",
    "trial_id",
    "start_depth_m",
    "end_depth_m",
    "status",
    "gva_mean_deg",
    "valid_fraction",
    "valid",
    "landolt_correct",
]


def write_gva_table_csv(path: str, rows: Iterable[GvaTableRow | ProcessedTrial]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_GVA_TABLE_HEADER)
        for r in rows:
            if isinstance(r, ProcessedTrial):
                r = GvaTableRow.from_processed(r)
            writer.writerow(
                [
                    r.participant_id,
                    r.environment,
                    r.trial_id,
                    repr(r.start_depth_m),
                    repr(r.end_depth_m),
                    r.status,
                    "" if r.gva_mean_deg is None else repr(r.gva_mean_deg),
                    repr(r.valid_fraction),
                    "true" if r.valid else "false",
                    "true" if r.landolt_correct else "false",
                ]
            )


def parse_gva_table_csv(path: str) -> list[GvaTableRow]:
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _GVA_TABLE_HEADER:
            raise GazeParseError(f"bad gva table header {reader.fieldnames!r}", path, 1)
        for line_no, row in enumerate(reader, start=2):
            try:
                out.append(
                    GvaTableRow(
                        participant_id=row["participant_id"],
                        environment=row["environment"],
                        trial_id=row["trial_id"],
                        start_depth_m=float(row["start_depth_m"]),
                        end_depth_m=float(row["end_depth_m"]),
                        status=row["status"],
                        gva_mean_deg=float(row["gva_mean_deg"]) if row["gva_mean_deg"] else None,
                        valid_fraction=float(row["valid_fraction"]),
                        valid=row["valid"] == "true",
                        landolt_correct=row["landolt_correct"] == "true",
                    )
                )
            except ValueError as exc:
                raise GazeParseError(f"bad gva table row: {exc}", path, line_no) from None
    return out


def write_models_json(path: str, models: Mapping) -> None:
    entries = []
    for key in sorted(models, key=str):
        model: ParticipantModel = models[key]
        entry = model.to_dict()
        if isinstance(key, tuple):
            entry["environment"] = key[1]
        entries.append(entry)
    write_json(path, {"models": entries})


def load_models_json(path: str) -> dict[str, ParticipantModel]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    out: dict[str, ParticipantModel] = {}
    for entry in doc.get("models", []):
        model = ParticipantModel.from_dict(entry)
        key = model.participant_id
        if "environment" in entry:
            key = f"{key}:{entry['environment']}"
        out[key] = model
    return out


def write_dataset(outdir: str, dataset: SimulatedDataset) -> None:
    """Emit a simulated cohort: config echo, ledger, subjective CSV, manifests, gaze files."""
    os.makedirs(outdir, exist_ok=True)
    os.makedirs(os.path.join(outdir, "manifests"), exist_ok=True)
    write_json(
        os.path.join(outdir, "config.json"),
        {"design": dataset.design.to_dict(), "seed": dataset.seed},
    )
    write_json(os.path.join(outdir, "ledger.json"), dataset.ledger_dict(), precise=True)
    write_subjective_csv(os.path.join(outdir, "subjective.csv"), dataset.subjective)
    sessions: dict[tuple[str, str], list[TrialRecord]] = {}
    for t in dataset.trials:
        sessions.setdefault((t.participant_id, t.environment), []).append(t)
    for (pid, env), trials in sorted(sessions.items()):
        gaze_dir = os.path.join(outdir, "gaze", f"{pid}_{env}")
        os.makedirs(gaze_dir, exist_ok=True)
        rel_files = []
        for t in trials:
            rel = os.path.join("..", "gaze", f"{pid}_{env}", f"{t.trial_id}.csv")
            write_gaze_csv(os.path.join(gaze_dir, f"{t.trial_id}.csv"), t.samples)
            rel_files.append(rel)
        write_manifest(
            os.path.join(outdir, "manifests", f"{pid}_{env}.json"),
            trials,
            rel_files,
            dataset.design.depths_m,
        )


def load_dataset_trials(datadir: str) -> list[TrialRecord]:
    """Load every session manifest under ``datadir/manifests``."""
    mandir = os.path.join(datadir, "manifests")
    if not os.path.isdir(mandir):
        raise GazeParseError(f"no manifests directory under {datadir!r}", datadir)
    trials: list[TrialRecord] = []
    for name in sorted(os.listdir(mandir)):
        if name.endswith(".json"):
            trials.extend(load_session_trials(os.path.join(mandir, name)))
    return trials
