"""App-observed bag records and their line-delimited file format.

One JSON object per line with fixed key order::

    {"user_id": 7, "label": 1, "events": [[tau, attenuation, level, visible], ...]}

Floats are written with Python's shortest round-trip ``repr``, so a
write/read cycle reproduces every value exactly.
"""

from __future__ import annotations

import json
from typing import NamedTuple

import numpy as np

from .errors import DatasetParseError
from .poolsim import observed_attenuation


class BagRecord(NamedTuple):
    user_id: int
    label: int
    events: list  # of (tau, attenuation, level, visible)


def bag_records(bags, params, lut) -> list:
    """Observed-feature records for bags, censored events included with visible=0."""
    out = []
    for bag in bags:
        ev = bag.events
        if len(ev):
            atten = observed_attenuation(ev.d, params)
            levels = np.atleast_1d(lut(ev.sigma))
            events = [
                (float(t), float(a), int(c), int(v))
                for t, a, c, v in zip(ev.tau, atten, levels, bag.visible)
            ]
        else:
            events = []
        out.append(BagRecord(int(bag.user_id), int(bag.label), events))
    return out


def format_record(rec: BagRecord) -> str:
    events = ",".join(
        f"[{float(t)!r},{float(a)!r},{int(c)},{int(v)}]" for t, a, c, v in rec.events
    )
    return f'{{"user_id":{int(rec.user_id)},"label":{int(rec.label)},"events":[{events}]}}'


def parse_record(line: str, lineno=None) -> BagRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(obj, dict) or list(obj) != ["user_id", "label", "events"]:
        raise DatasetParseError("expected keys user_id, label, events in that order", lineno)
    uid, label, events = obj["user_id"], obj["label"], obj["events"]
    if not isinstance(uid, int) or label not in (0, 1) or isinstance(label, bool):
        raise DatasetParseError("user_id must be an integer and label 0 or 1", lineno)
    if not isinstance(events, list):
        raise DatasetParseError("events must be a list", lineno)
    parsed = []
    for e in events:
        if not (isinstance(e, list) and len(e) == 4):
            raise DatasetParseError("each event must be [tau, attenuation, level, visible]", lineno)
        tau, atten, level, visible = e
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in (tau, atten)):
            raise DatasetParseError("tau and attenuation must be numbers", lineno)
        if level not in (1, 2, 3) or visible not in (0, 1):
            raise DatasetParseError("level must be 1..3 and visible 0 or 1", lineno)
        if tau < 0 or not 0 < atten <= 100:
            raise DatasetParseError("tau must be >= 0 and attenuation in (0, 100]", lineno)
        parsed.append((float(tau), float(atten), int(level), int(visible)))
    return BagRecord(uid, label, parsed)


def write_dataset(records, path) -> None:
    with open(path, "w", newline="\n") as fh:
        for rec in records:
            fh.write(format_record(rec) + "\n")


def read_dataset(path) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                out.append(parse_record(line, lineno))
    return out
