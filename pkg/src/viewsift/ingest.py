"""Parse broadcast/view logs, join them, and derive fractional view features.

Input files are comma-separated with a header row and integer epoch-second
timestamps:

    views:      view_id,client_ip,broadcast_id,start_ts,end_ts
    broadcasts: broadcast_id,channel_id,start_ts,end_ts

Malformed rows, orphan views and zero-information views are counted and
skipped, never fatal -- batch pipelines must survive dirty logs.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

from .model import bin_feature

log = logging.getLogger(__name__)

VIEW_FIELDS = ("view_id", "client_ip", "broadcast_id", "start_ts", "end_ts")
BROADCAST_FIELDS = ("broadcast_id", "channel_id", "start_ts", "end_ts")


class EmptyInputError(ValueError):
    """Raised when a source yields zero accepted broadcasts."""


class UndefinedFeatureError(ValueError):
    """Raised when features are requested against a zero-duration broadcast."""


@dataclass(frozen=True)
class BroadcastRecord:
    broadcast_id: str
    channel_id: str
    start_ts: int
    end_ts: int

    @property
    def duration_s(self) -> int:
        return self.end_ts - self.start_ts


@dataclass(frozen=True)
class ViewRecord:
    view_id: str
    client_ip: str
    broadcast_id: str
    start_ts: int
    end_ts: int


@dataclass(frozen=True)
class ViewFeature:
    view_id: str
    start_frac: float
    stay_frac: float
    bin: tuple[int, int]


@dataclass
class Workload:
    """Joined view/broadcast logs; immutable by convention after parsing."""

    broadcasts: dict  # broadcast_id -> BroadcastRecord
    views_by_broadcast: dict  # broadcast_id -> list[ViewRecord], clamped
    rejected: int = 0

    @property
    def n_views(self) -> int:
        return sum(len(v) for v in self.views_by_broadcast.values())


@dataclass
class BracketIndex:
    """Duration brackets: bracket id = floor(duration_minutes / T)."""

    bracket_width_min: float
    bracket_of: dict = field(default_factory=dict)  # broadcast_id -> bracket id
    members: dict = field(default_factory=dict)  # bracket id -> set of broadcast_id


def _parse_broadcast_row(row) -> BroadcastRecord | None:
    try:
        rec = BroadcastRecord(
            broadcast_id=row["broadcast_id"],
            channel_id=row["channel_id"],
            start_ts=int(row["start_ts"]),
            end_ts=int(row["end_ts"]),
        )
    except (KeyError, TypeError, ValueError):
        return None
    if not rec.broadcast_id or rec.end_ts <= rec.start_ts:
        return None
    return rec


def parse_workload(view_source, broadcast_source) -> Workload:
    """Join view rows to broadcast rows, clamping views into their broadcast.

    `view_source` and `broadcast_source` are open text streams (or any line
    iterables) in the CSV formats above.  Views are clamped to
    [broadcast start, broadcast end]; views left with non-positive duration or
    starting exactly at the broadcast end carry no information and are
    rejected, as are malformed rows and views referencing unknown broadcasts.
    """
    rejected = 0
    broadcasts: dict[str, BroadcastRecord] = {}
    for row in csv.DictReader(broadcast_source):
        rec = _parse_broadcast_row(row)
        if rec is None or rec.broadcast_id in broadcasts:
            rejected += 1
            continue
        broadcasts[rec.broadcast_id] = rec
    if not broadcasts:
        raise EmptyInputError("no accepted broadcast rows")

    views_by_broadcast: dict[str, list[ViewRecord]] = {b: [] for b in broadcasts}
    for row in csv.DictReader(view_source):
        try:
            bid = row["broadcast_id"]
            start = int(row["start_ts"])
            end = int(row["end_ts"])
            vid = row["view_id"]
            ip = row["client_ip"]
        except (KeyError, TypeError, ValueError):
            rejected += 1
            continue
        b = broadcasts.get(bid)
        if b is None or not vid:
            rejected += 1
            continue
        start = max(start, b.start_ts)
        end = min(end, b.end_ts)
        if end <= start or start >= b.end_ts:
            rejected += 1
            continue
        views_by_broadcast[bid].append(ViewRecord(vid, ip, bid, start, end))

    if rejected:
        log.info("parse_workload: rejected %d rows", rejected)
    return Workload(broadcasts, views_by_broadcast, rejected)


def compute_view_features(v: ViewRecord, b: BroadcastRecord, H: int) -> ViewFeature:
    """Fractional start/stay of a (pre-clamped) view within its broadcast."""
    dur = b.duration_s
    if dur <= 0:
        raise UndefinedFeatureError(f"broadcast {b.broadcast_id} has no duration")
    start_frac = (v.start_ts - b.start_ts) / dur
    stay_frac = (v.end_ts - v.start_ts) / dur
    return ViewFeature(v.view_id, start_frac, stay_frac, bin_feature(start_frac, stay_frac, H))


def broadcast_features(b: BroadcastRecord, views, H: int) -> list[ViewFeature]:
    return [compute_view_features(v, b, H) for v in views]


def build_bracket_index(broadcasts, T: float) -> BracketIndex:
    """Assign every broadcast to its duration bracket of width T minutes."""
    if T <= 0:
        raise ValueError(f"bracket width must be positive, got {T}")
    if isinstance(broadcasts, dict):
        broadcasts = broadcasts.values()
    index = BracketIndex(bracket_width_min=T)
    for b in broadcasts:
        bracket = math.floor((b.duration_s / 60.0) / T)
        index.bracket_of[b.broadcast_id] = bracket
        index.members.setdefault(bracket, set()).add(b.broadcast_id)
    return index
