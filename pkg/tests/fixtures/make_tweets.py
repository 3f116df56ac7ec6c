"""Regenerate tweets.jsonl, the bundled end-to-end fixture.

Eight users each start five cascades simulated from a marked exponential
model; retweeters get log-uniform follower counts. The dump also carries
two malformed lines, one duplicated record, an orphan cascade whose source
is missing and two originals nobody retweeted.

    python3 tests/fixtures/make_tweets.py
"""

from __future__ import annotations

import json
import math
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from reshare.cascades import MarkedEvent
from reshare.kernels import KernelParams, ModelType
from reshare.simulation import MarkSource, SimConfig, generate_series

OUT = Path(__file__).with_name("tweets.jsonl")
BASE = datetime(2020, 3, 1, tzinfo=timezone.utc)
FMT = "%a %b %d %H:%M:%S +0000 %Y"


def tweet(tid, when, uid, followers, source=None):
    rec = {
        "id_str": str(tid),
        "created_at": when.strftime(FMT),
        "user": {"id_str": uid, "followers_count": int(followers)},
        "text": "...",
    }
    if source is not None:
        rec["retweeted_status"] = {"id_str": str(source)}
    return rec


def main():
    rng = np.random.default_rng(2020)
    marks = np.exp(rng.uniform(math.log(10), math.log(5000), 500)).round()
    src = MarkSource.empirical(marks)
    params = KernelParams(kappa=0.08, theta=1 / 300, beta=0.3)
    records = []
    next_id = 1000
    retweeter = 0
    for u in range(8):
        uid = f"u{u:02d}"
        followers = float(np.round(np.exp(rng.uniform(math.log(2e5), math.log(2e6)))))
        for k in range(5):
            start = BASE + timedelta(hours=int(rng.integers(0, 24 * 20)))
            c = generate_series(
                (ModelType.mEXP, params),
                SimConfig(seed=100 * u + k, mark_source=src, max_events=400),
                initial=MarkedEvent(0.0, followers),
            )
            sid = next_id
            next_id += 1
            records.append(tweet(sid, start, uid, followers))
            for t, m in zip(c.times[1:], c.magnitudes[1:]):
                retweeter += 1
                # whole seconds, never in the same second as the source
                when = start + timedelta(seconds=max(1, math.ceil(t)))
                records.append(tweet(next_id, when, f"r{retweeter:05d}", m, source=sid))
                next_id += 1
    # an orphan: retweets of a source that is not in the dump
    for j, dt in enumerate((30, 95, 400)):
        records.append(tweet(next_id, BASE + timedelta(days=3, seconds=dt), f"o{j}", 40 + j, source=999))
        next_id += 1
    # originals without retweets
    for j in range(2):
        records.append(tweet(next_id, BASE + timedelta(days=5 + j), "u00", 1000))
        next_id += 1
    records.append(dict(records[5]))
    order = rng.permutation(len(records))
    lines = [json.dumps(records[i], sort_keys=True) for i in order]
    lines.insert(7, "{not json")
    lines.insert(19, json.dumps({"id_str": "1", "created_at": "yesterday", "user": {"id_str": "x", "followers_count": 1}}))
    OUT.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} lines to {OUT}")


if __name__ == "__main__":
    main()
