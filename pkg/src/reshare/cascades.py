"""In-memory cascades, CSV round-tripping and raw tweet ingestion.

A cascade stores event times relative to its first event (which sits at
exactly 0), one magnitude per event (follower count for tweets, 1.0 when
unmarked) and the horizon ``observation_time`` up to which it was watched.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyInputError, FormatError, ValidationError

UNKNOWN_INITIATOR = "__unknown__"

CSV_COLUMNS = ("cascade_id", "time", "magnitude")
OPTIONAL_COLUMNS = ("user_id", "observation_time", "orphan", "simulated")

DEFAULT_FIELD_MAP = {
    "id": "id_str",
    "created_at": "created_at",
    "user_id": "user.id_str",
    "followers": "user.followers_count",
    "retweeted_id": "retweeted_status.id_str",
}

_TWITTER_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"


@dataclass(frozen=True)
class MarkedEvent:
    time: float
    magnitude: float = 1.0
    user_id: str | None = None


def _frozen(values, dtype=float):
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Cascade:
    """A (possibly marked) reshare cascade observed on ``[0, observation_time]``.

    ``times`` must already be relative: sorted, first entry exactly 0.
    ``observation_time`` defaults to the last event time.
    """

    times: np.ndarray
    magnitudes: np.ndarray | None = None
    observation_time: float | None = None
    cascade_id: str = ""
    initiator_user_id: str | None = None
    user_ids: tuple | None = None
    simulated: np.ndarray | None = None
    orphan: bool = False
    truncated: bool = False

    def __post_init__(self):
        times = _frozen(self.times)
        if times.size == 0:
            raise ValidationError("a cascade needs at least one event")
        if not np.all(np.isfinite(times)):
            raise ValidationError("event times must be finite")
        if times[0] != 0.0:
            raise ValidationError(f"first event must be at time 0, got {times[0]!r}")
        if np.any(np.diff(times) < 0):
            raise ValidationError("event times must be sorted non-decreasing")
        if self.magnitudes is None:
            mags = _frozen(np.ones(times.size))
        else:
            mags = _frozen(self.magnitudes)
            if mags.size != times.size:
                raise ValidationError("magnitudes and times differ in length")
            if np.any(~np.isfinite(mags)) or np.any(mags < 0):
                raise ValidationError("magnitudes must be finite and non-negative")
        T = float(times[-1]) if self.observation_time is None else float(self.observation_time)
        if not math.isfinite(T) or T < times[-1]:
            raise ValidationError(
                f"observation_time {T!r} precedes the last event at {times[-1]!r}"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "magnitudes", mags)
        object.__setattr__(self, "observation_time", T)
        object.__setattr__(self, "cascade_id", str(self.cascade_id))
        if self.user_ids is not None:
            uids = tuple(None if u is None else str(u) for u in self.user_ids)
            if len(uids) != times.size:
                raise ValidationError("user_ids and times differ in length")
            object.__setattr__(self, "user_ids", uids)
        if self.simulated is not None:
            sim = _frozen(self.simulated, dtype=bool)
            if sim.size != times.size:
                raise ValidationError("simulated flags and times differ in length")
            object.__setattr__(self, "simulated", sim)

    def __len__(self):
        return int(self.times.size)

    @property
    def size(self) -> int:
        return int(self.times.size)

    @property
    def events(self) -> tuple[MarkedEvent, ...]:
        uids = self.user_ids or (None,) * self.size
        return tuple(
            MarkedEvent(float(t), float(m), u)
            for t, m, u in zip(self.times, self.magnitudes, uids)
        )

    @classmethod
    def from_events(cls, events: Sequence[MarkedEvent], observation_time=None, **kwargs):
        """Build a cascade from already-relative events (stable-sorted by time)."""
        order = sorted(range(len(events)), key=lambda i: events[i].time)
        evs = [events[i] for i in order]
        uids = None
        if any(e.user_id is not None for e in evs):
            uids = tuple(e.user_id for e in evs)
        return cls(
            times=[e.time for e in evs],
            magnitudes=[e.magnitude for e in evs],
            observation_time=observation_time,
            user_ids=uids,
            **kwargs,
        )

    def observed_until(self, T: float) -> "Cascade":
        """Prefix of the cascade containing events with time <= T, horizon T."""
        if T < 0:
            raise ValidationError("observation time must be non-negative")
        k = int(np.searchsorted(self.times, T, side="right"))
        return Cascade(
            times=self.times[:k],
            magnitudes=self.magnitudes[:k],
            observation_time=T,
            cascade_id=self.cascade_id,
            initiator_user_id=self.initiator_user_id,
            user_ids=None if self.user_ids is None else self.user_ids[:k],
            simulated=None if self.simulated is None else self.simulated[:k],
            orphan=self.orphan,
        )

    def with_observation_time(self, T: float) -> "Cascade":
        return Cascade(
            times=self.times,
            magnitudes=self.magnitudes,
            observation_time=T,
            cascade_id=self.cascade_id,
            initiator_user_id=self.initiator_user_id,
            user_ids=self.user_ids,
            simulated=self.simulated,
            orphan=self.orphan,
            truncated=self.truncated,
        )

    def __eq__(self, other):
        if not isinstance(other, Cascade):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)

        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.magnitudes, other.magnitudes)
            and self.observation_time == other.observation_time
            and self.cascade_id == other.cascade_id
            and self.initiator_user_id == other.initiator_user_id
            and self.user_ids == other.user_ids
            and same(self.simulated, other.simulated)
            and self.orphan == other.orphan
            and self.truncated == other.truncated
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"Cascade(id={self.cascade_id!r}, size={self.size}, "
            f"T={self.observation_time!r})"
        )


@dataclass(frozen=True)
class CascadeGroup:
    """Cascades sharing one model, typically all posts of one user."""

    cascades: tuple
    group_key: str = ""

    def __post_init__(self):
        cascades = tuple(self.cascades)
        if not cascades:
            raise ValidationError("a cascade group must be non-empty")
        ids = [c.cascade_id for c in cascades]
        dupes = [k for k, v in Counter(ids).items() if v > 1]
        if dupes:
            raise ValidationError(f"duplicate cascade ids in group: {dupes[:5]}")
        object.__setattr__(self, "cascades", cascades)

    def __len__(self):
        return len(self.cascades)

    def __iter__(self):
        return iter(self.cascades)


def as_cascade_list(data) -> list[Cascade]:
    """Normalise a Cascade, CascadeGroup or iterable of cascades to a list."""
    if isinstance(data, Cascade):
        return [data]
    if isinstance(data, CascadeGroup):
        return list(data.cascades)
    out = list(data)
    if not all(isinstance(c, Cascade) for c in out):
        raise ValidationError("expected Cascade objects")
    return out


def group_by_initiator(cascades: Iterable[Cascade]) -> list[CascadeGroup]:
    """Group cascades by initiating user, in order of first appearance.

    Cascades without an initiator go to a final group keyed
    ``UNKNOWN_INITIATOR``.
    """
    buckets: dict[str, list[Cascade]] = {}
    unknown: list[Cascade] = []
    for c in cascades:
        if c.initiator_user_id is None:
            unknown.append(c)
        else:
            buckets.setdefault(c.initiator_user_id, []).append(c)
    groups = [CascadeGroup(tuple(v), k) for k, v in buckets.items()]
    if unknown:
        groups.append(CascadeGroup(tuple(unknown), UNKNOWN_INITIATOR))
    return groups


# --------------------------------------------------------------------------
# CSV

def _parse_decimal(text: str, line: int, column: str) -> Decimal:
    try:
        value = Decimal(text.strip())
    except InvalidOperation:
        raise ValidationError(f"row {line}: {column} {text!r} is not a number") from None
    if not value.is_finite():
        raise ValidationError(f"row {line}: {column} must be finite")
    return value


def _parse_flag(text: str | None) -> bool:
    return (text or "").strip().lower() in ("1", "true", "yes")


def load_cascades_csv(path, has_marks: bool = True) -> list[Cascade]:
    """Read cascades from a ``cascade_id,time,magnitude[,user_id]`` CSV.

    Times may be absolute; each cascade is shifted to start at 0 using exact
    decimal arithmetic, so adding a constant to every input time produces
    identical cascades. With ``has_marks=False`` magnitudes are set to 1.0
    and the magnitude column is not required. An optional
    ``observation_time`` column (relative to each cascade's first event)
    overrides the default horizon of the last event time.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyInputError(f"{path}: empty file")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        required = ["cascade_id", "time"] + (["magnitude"] if has_marks else [])
        for col in required:
            if col not in header:
                raise FormatError(f"{path}: missing required column '{col}'")
        has_user = "user_id" in header

        rows: dict[str, list] = {}
        horizons: dict[str, Decimal] = {}
        flags: dict[str, dict] = defaultdict(dict)
        for line, rec in enumerate(reader, start=2):
            cid = (rec.get("cascade_id") or "").strip()
            if not cid:
                raise ValidationError(f"row {line}: empty cascade_id")
            t = _parse_decimal(rec.get("time") or "", line, "time")
            if t < 0:
                raise ValidationError(f"row {line}: negative time {rec['time']!r}")
            mag = Decimal(1)
            if has_marks and (rec.get("magnitude") or "").strip():
                mag = _parse_decimal(rec["magnitude"], line, "magnitude")
                if mag < 0:
                    raise ValidationError(
                        f"row {line}: negative magnitude {rec['magnitude']!r}"
                    )
            uid = None
            if has_user:
                uid = (rec.get("user_id") or "").strip() or None
            sim = _parse_flag(rec.get("simulated"))
            rows.setdefault(cid, []).append((t, mag, uid, sim))
            obs = (rec.get("observation_time") or "").strip()
            if obs and cid not in horizons:
                horizons[cid] = _parse_decimal(obs, line, "observation_time")
            if _parse_flag(rec.get("orphan")):
                flags[cid]["orphan"] = True
            if "simulated" in header:
                flags[cid]["has_sim"] = True

    if not rows:
        raise EmptyInputError(f"{path}: no data rows")

    cascades = []
    for cid, recs in rows.items():
        recs.sort(key=lambda r: r[0])
        t0 = recs[0][0]
        times = [float(r[0] - t0) for r in recs]
        mags = [float(r[1]) for r in recs]
        uids = tuple(r[2] for r in recs) if has_user else None
        orphan = flags[cid].get("orphan", False)
        initiator = None
        if uids is not None and not orphan:
            initiator = uids[0]
        T = float(horizons[cid]) if cid in horizons else None
        sim = [r[3] for r in recs] if flags[cid].get("has_sim") else None
        cascades.append(
            Cascade(
                times=times,
                magnitudes=mags,
                observation_time=T,
                cascade_id=cid,
                initiator_user_id=initiator,
                user_ids=uids,
                simulated=sim,
                orphan=orphan,
            )
        )
    return cascades


def _fmt(x: float) -> str:
    return repr(float(x))


def write_cascades_csv(cascades: Iterable[Cascade], path, simulated_column: bool | None = None):
    """Write cascades in the CSV layout read by :func:`load_cascades_csv`.

    Floats use shortest round-trip formatting so a reload is bit-exact.
    """
    cascades = list(cascades)
    header = list(CSV_COLUMNS)
    with_user = any(c.user_ids is not None for c in cascades)
    with_T = any(c.observation_time != c.times[-1] for c in cascades)
    with_orphan = any(c.orphan for c in cascades)
    if simulated_column is None:
        simulated_column = any(c.simulated is not None for c in cascades)
    if with_user:
        header.append("user_id")
    if with_T:
        header.append("observation_time")
    if with_orphan:
        header.append("orphan")
    if simulated_column:
        header.append("simulated")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for c in cascades:
            uids = c.user_ids or ("",) * c.size
            sim = c.simulated if c.simulated is not None else np.zeros(c.size, bool)
            for i in range(c.size):
                row = [c.cascade_id, _fmt(c.times[i]), _fmt(c.magnitudes[i])]
                if with_user:
                    row.append(uids[i] or "")
                if with_T:
                    row.append(_fmt(c.observation_time))
                if with_orphan:
                    row.append("true" if c.orphan else "false")
                if simulated_column:
                    row.append("true" if sim[i] else "false")
                w.writerow(row)


# --------------------------------------------------------------------------
# raw tweets

@dataclass(frozen=True)
class UserRecord:
    user_id: str
    followers_count: float
    cascades_initiated: int
    tweets: int


@dataclass
class ParseSummary:
    lines: int = 0
    malformed: int = 0
    duplicates: int = 0
    tweets: int = 0
    retweets: int = 0
    users: int = 0
    cascades: int = 0
    orphan_cascades: int = 0
    dropped_orphans: int = 0
    clamped_times: int = 0
    malformed_examples: list = field(default_factory=list)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("malformed_examples")
        return d


class ParseResult(NamedTuple):
    cascades: list
    users: list
    summary: ParseSummary


def load_field_map(path) -> dict:
    """Read a JSON object overriding entries of ``DEFAULT_FIELD_MAP``."""
    with Path(path).open(encoding="utf-8") as fh:
        overrides = json.load(fh)
    unknown = set(overrides) - set(DEFAULT_FIELD_MAP)
    if unknown:
        raise FormatError(f"unknown field-map keys: {sorted(unknown)}")
    return {**DEFAULT_FIELD_MAP, **overrides}


def _dig(record: dict, dotted: str):
    cur = record
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def parse_timestamp(value) -> float:
    """Seconds since the epoch from a Twitter, ISO-8601 or numeric timestamp."""
    if isinstance(value, bool) or value is None:
        raise ValueError(f"bad timestamp {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    try:
        return float(text)
    except ValueError:
        pass
    try:
        dt = datetime.strptime(text, _TWITTER_TIME_FORMAT)
    except ValueError:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


class _Tweet(NamedTuple):
    id: str
    time: float
    user_id: str
    followers: float
    source_id: str | None


def _read_tweet(record, fmap) -> _Tweet:
    if not isinstance(record, dict):
        raise ValueError("record is not an object")
    tid = _dig(record, fmap["id"])
    uid = _dig(record, fmap["user_id"])
    if tid is None or uid is None:
        raise ValueError("missing id or user id")
    followers = _dig(record, fmap["followers"])
    if followers is None or isinstance(followers, bool):
        raise ValueError("missing follower count")
    followers = float(followers)
    if not math.isfinite(followers) or followers < 0:
        raise ValueError("invalid follower count")
    src = _dig(record, fmap["retweeted_id"])
    return _Tweet(
        str(tid),
        parse_timestamp(_dig(record, fmap["created_at"])),
        str(uid),
        followers,
        None if src is None else str(src),
    )


def parse_raw_tweets(
    path,
    field_map: dict | None = None,
    drop_orphans: bool = False,
    include_singletons: bool = False,
) -> ParseResult:
    """Turn a newline-delimited JSON tweet dump into retweet cascades.

    Retweets are grouped under their source tweet id. A group whose source
    is present starts at the source's timestamp, with magnitudes taken from
    author follower counts. A group whose source is missing is anchored at
    its earliest retweet and flagged ``orphan``. Malformed lines are skipped
    and counted. The result does not depend on line order.
    """
    fmap = {**DEFAULT_FIELD_MAP, **(field_map or {})}
    summary = ParseSummary()
    tweets: dict[str, _Tweet] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            summary.lines += 1
            try:
                tw = _read_tweet(json.loads(line), fmap)
            except (ValueError, TypeError, OverflowError) as exc:
                summary.malformed += 1
                if len(summary.malformed_examples) < 10:
                    summary.malformed_examples.append((lineno, str(exc)))
                continue
            prev = tweets.get(tw.id)
            if prev is not None:
                summary.duplicates += 1
                # keep a canonical copy so the outcome is order-insensitive
                tw = min(prev, tw, key=lambda r: (r.time, r.followers, r.user_id, r.source_id or ""))
            tweets[tw.id] = tw
    if not tweets:
        raise EmptyInputError("no parseable records")

    summary.tweets = len(tweets)
    by_source: dict[str, list[_Tweet]] = defaultdict(list)
    for tw in tweets.values():
        if tw.source_id is not None:
            by_source[tw.source_id].append(tw)
    summary.retweets = sum(len(v) for v in by_source.values())

    anchors = []
    for sid, rts in by_source.items():
        rts.sort(key=lambda r: (r.time, r.id))
        src = tweets.get(sid)
        if src is not None and src.source_id is None:
            anchors.append((src.time, sid, src, rts))
        else:
            anchors.append((rts[0].time, sid, None, rts))
    if include_singletons:
        for tw in tweets.values():
            if tw.source_id is None and tw.id not in by_source:
                anchors.append((tw.time, tw.id, tw, []))
    anchors.sort(key=lambda a: (a[0], a[1]))

    cascades = []
    initiated: Counter = Counter()
    for t0, sid, src, rts in anchors:
        orphan = src is None
        if orphan and drop_orphans:
            summary.dropped_orphans += 1
            continue
        members = ([src] if src is not None else []) + list(rts)
        times = []
        for k, r in enumerate(members):
            dt = r.time - t0
            if dt < 0:
                summary.clamped_times += 1
                dt = 0.0
            times.append(0.0 if k == 0 else dt)
        order = sorted(range(len(times)), key=lambda i: (times[i], i))
        initiator = None if orphan else src.user_id
        if initiator is not None:
            initiated[initiator] += 1
        summary.orphan_cascades += int(orphan)
        cascades.append(
            Cascade(
                times=[times[i] for i in order],
                magnitudes=[members[i].followers for i in order],
                cascade_id=sid,
                initiator_user_id=initiator,
                user_ids=tuple(members[i].user_id for i in order),
                orphan=orphan,
            )
        )

    latest: dict[str, _Tweet] = {}
    counts: Counter = Counter()
    for tw in tweets.values():
        counts[tw.user_id] += 1
        cur = latest.get(tw.user_id)
        if cur is None or (tw.time, tw.id) > (cur.time, cur.id):
            latest[tw.user_id] = tw
    users = [
        UserRecord(uid, latest[uid].followers, initiated.get(uid, 0), counts[uid])
        for uid in sorted(latest)
    ]
    summary.users = len(users)
    summary.cascades = len(cascades)
    return ParseResult(cascades, users, summary)


def write_users_csv(users: Iterable[UserRecord], path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "followers_count", "cascades_initiated", "tweets"])
        for u in users:
            w.writerow([u.user_id, _fmt(u.followers_count), u.cascades_initiated, u.tweets])
