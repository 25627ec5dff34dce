"""Line-delimited JSON scenario and prediction files.

Scenario line schema::

    {"id": str, "history_len": int, "horizon": int,
     "tracks": [{"agent_id": str, "positions": [[x, y], ...], "headings": [...],
                 "valid": [bool, ...], "length": float, "width": float,
                 "is_predictable": bool}, ...],
     "map": [{"polyline_id": str, "kind": str, "points": [[x, y], ...]}, ...]}

Prediction line schema::

    {"scenario_id": str, "agents": [id_a, id_b],
     "pairs": [{"traj_a": [[x, y], ...], "traj_b": [[x, y], ...], "score": float}, ...]}

Pairs are written in descending score order.  Python's ``json`` writes floats
with ``repr`` so float64 values survive a round trip unchanged.
"""
from __future__ import annotations

import json
from typing import Iterable

import numpy as np

from .scene import AgentTrack, MapPolyline, PairPrediction, Scenario, ScenarioValidationError


class ScenarioParseError(ValueError):
    pass


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "id": s.id,
        "history_len": s.history_len,
        "horizon": s.horizon,
        "tracks": [
            {
                "agent_id": t.agent_id,
                "positions": t.positions.tolist(),
                "headings": t.headings.tolist(),
                "valid": t.valid.tolist(),
                "length": t.length,
                "width": t.width,
                "is_predictable": t.is_predictable,
            }
            for t in s.tracks
        ],
        "map": [{"polyline_id": p.polyline_id, "kind": p.kind, "points": p.points.tolist()}
                for p in s.map],
    }


def scenario_from_dict(d: dict) -> Scenario:
    tracks = [
        AgentTrack(
            agent_id=t["agent_id"],
            positions=np.asarray(t["positions"], dtype=np.float64).reshape(-1, 2),
            headings=t["headings"],
            valid=t["valid"],
            length=t["length"],
            width=t["width"],
            is_predictable=t.get("is_predictable", False),
        )
        for t in d["tracks"]
    ]
    polylines = [MapPolyline(p["polyline_id"], np.asarray(p["points"], dtype=np.float64).reshape(-1, 2),
                             p.get("kind", "lane_centerline")) for p in d.get("map", [])]
    return Scenario(id=d["id"], tracks=tracks, map=polylines,
                    history_len=int(d["history_len"]), horizon=int(d["horizon"]))


def _read_json_lines(path) -> list[tuple[int, dict]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScenarioParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ScenarioParseError(f"{path}:{lineno}: expected a JSON object")
            rows.append((lineno, obj))
    if not rows:
        raise ScenarioParseError(f"{path}: no records")
    return rows


def read_scenarios(path) -> list[Scenario]:
    out = []
    for lineno, obj in _read_json_lines(path):
        try:
            out.append(scenario_from_dict(obj))
        except (KeyError, TypeError) as exc:
            raise ScenarioParseError(f"{path}:{lineno}: malformed scenario record ({exc!r})") from None
        except ScenarioValidationError as exc:
            raise ScenarioValidationError(f"{path}:{lineno}: {exc}") from None
    return out


def read_scenario(path) -> Scenario:
    """Read a file holding exactly one scenario."""
    scenarios = read_scenarios(path)
    if len(scenarios) != 1:
        raise ScenarioParseError(f"{path}: expected one scenario, found {len(scenarios)}")
    return scenarios[0]


def write_scenarios(path, scenarios: Iterable[Scenario]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenarios:
            fh.write(json.dumps(scenario_to_dict(s)) + "\n")


def prediction_record(scenario_id: str, pairs: list[PairPrediction], agents=None) -> dict:
    ordered = sorted(pairs, key=lambda p: -p.score)
    return {
        "scenario_id": scenario_id,
        "agents": list(agents) if agents is not None else None,
        "pairs": [{"traj_a": p.traj_a.tolist(), "traj_b": p.traj_b.tolist(), "score": p.score}
                  for p in ordered],
    }


def write_predictions(path, scenario_id: str, pairs: list[PairPrediction], agents=None,
                      append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        fh.write(json.dumps(prediction_record(scenario_id, pairs, agents)) + "\n")


def write_prediction_file(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_predictions(path) -> dict[str, dict]:
    """scenario id -> {"agents": [...], "pairs": [PairPrediction, ...]}"""
    out = {}
    for lineno, obj in _read_json_lines(path):
        try:
            pairs = [PairPrediction(p["traj_a"], p["traj_b"], p["score"]) for p in obj["pairs"]]
            out[obj["scenario_id"]] = {"agents": obj.get("agents"), "pairs": pairs}
        except (KeyError, TypeError) as exc:
            raise ScenarioParseError(f"{path}:{lineno}: malformed prediction record ({exc!r})") from None
    return out
