"""
Check-in ingestion: parsing, filtering, chronological splits and the
primitive spatial / temporal POI features.

Raw input is the Gowalla-style tab-separated layout::

    user_id <TAB> 2010-10-19T23:55:27Z <TAB> latitude <TAB> longitude <TAB> poi_id
"""

import gzip
import io
import json
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from .errors import EmptyAfterFilter, FormatError, MalformedRecord, SequenceTooShort

DATASET_FORMAT = "bigsl-dataset"
DATASET_VERSION = 1


@dataclass(frozen=True)
class CheckIn:
    user_id: str
    poi_id: str
    latitude: float
    longitude: float
    timestamp: datetime

    def to_line(self):
        return "\t".join([
            self.user_id,
            format_timestamp(self.timestamp),
            repr(self.latitude),
            repr(self.longitude),
            self.poi_id,
        ])


@dataclass(frozen=True)
class CheckInSequence:
    user_id: str
    visits: tuple

    def __len__(self):
        return len(self.visits)


@dataclass
class FeatureView:
    view_id: str
    X: np.ndarray

    @property
    def d1(self):
        return self.X.shape[1]


@dataclass
class Dataset:
    """Filtered check-in corpus with canonical integer indices.

    ``users[m]`` and ``pois[i]`` are the raw identifiers of user ``m`` and
    POI ``i``; ``sequences[m]`` is user ``m``'s chronological trajectory.
    ``n_train[m]`` is the length of the training prefix once a split has
    been applied.
    """

    users: list
    pois: list
    poi_coords: np.ndarray
    sequences: list
    n_train: Optional[list] = None
    meta: dict = field(default_factory=dict)

    @property
    def M(self):
        return len(self.users)

    @property
    def N(self):
        return len(self.pois)

    @property
    def num_checkins(self):
        return sum(len(s) for s in self.sequences)

    @property
    def density(self):
        return self.num_checkins / (self.M * self.N)

    def poi_index(self):
        return {p: i for i, p in enumerate(self.pois)}

    def index_sequences(self):
        """Per-user arrays of canonical POI indices."""
        lookup = self.poi_index()
        return [np.array([lookup[c.poi_id] for c in s.visits], dtype=np.int64)
                for s in self.sequences]

    def train_visits(self):
        """Yield ``(user_index, CheckIn)`` over training visits only."""
        for m, seq in enumerate(self.sequences):
            cut = len(seq) if self.n_train is None else self.n_train[m]
            for c in seq.visits[:cut]:
                yield m, c

    def summary(self):
        return {"users": self.M, "pois": self.N, "checkins": self.num_checkins,
                "density": self.density}


# --- parsing --------------------------------------------------------------

def parse_timestamp(text):
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(ts):
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _coordinate(text, lo, hi):
    value = float(text)
    if not math.isfinite(value) or not lo <= value <= hi:
        raise ValueError(f"coordinate {text!r} outside [{lo}, {hi}]")
    return value


def parse_checkins(lines):
    """Parse tab-separated check-in lines into :class:`CheckIn` records.

    Blank lines are ignored. Any other line that does not hold exactly five
    well-formed fields raises :class:`MalformedRecord` with its 1-based
    line number; nothing is skipped.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()
    out = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise MalformedRecord(lineno, f"expected 5 fields, got {len(fields)}")
        user, ts, lat, lon, poi = fields
        try:
            timestamp = parse_timestamp(ts)
        except ValueError as exc:
            raise MalformedRecord(lineno, f"bad timestamp {ts!r}") from exc
        try:
            latitude = _coordinate(lat, -90.0, 90.0)
            longitude = _coordinate(lon, -180.0, 180.0)
        except ValueError as exc:
            raise MalformedRecord(lineno, str(exc)) from exc
        if not user or not poi:
            raise MalformedRecord(lineno, "empty identifier")
        out.append(CheckIn(user, poi, latitude, longitude, timestamp))
    return out


def serialize_checkins(checkins):
    return "".join(c.to_line() + "\n" for c in checkins)


def _open_text(path):
    path = os.fspath(path)
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def read_checkins(path):
    with _open_text(path) as fh:
        return parse_checkins(fh)


# --- dataset construction ---------------------------------------------------

def _sort_key(ident):
    # numeric ids sort numerically, everything else lexicographically after them
    return (0, int(ident), "") if ident.isdigit() else (1, 0, ident)


def build_dataset(checkins, meta=None):
    """Group check-ins into chronological per-user sequences.

    Users and POIs receive canonical indices in sorted identifier order.
    Ties in timestamp keep input order.
    """
    by_user = defaultdict(list)
    coords = {}
    for c in checkins:
        by_user[c.user_id].append(c)
        coords.setdefault(c.poi_id, (c.latitude, c.longitude))
    users = sorted(by_user, key=_sort_key)
    pois = sorted(coords, key=_sort_key)
    sequences = [
        CheckInSequence(u, tuple(sorted(by_user[u], key=lambda c: c.timestamp)))
        for u in users
    ]
    poi_coords = np.array([coords[p] for p in pois], dtype=np.float64).reshape(-1, 2)
    return Dataset(users, pois, poi_coords, sequences, None, dict(meta or {}))


def _filter_once(checkins, min_user, max_user, min_poi_users):
    poi_users = defaultdict(set)
    for c in checkins:
        poi_users[c.poi_id].add(c.user_id)
    kept = [c for c in checkins if len(poi_users[c.poi_id]) >= min_poi_users]
    counts = Counter(c.user_id for c in kept)
    return [c for c in kept if min_user <= counts[c.user_id] <= max_user]


def filter_dataset(checkins, min_user=20, max_user=50, min_poi_users=10, iterative=True):
    """Apply the POI-popularity and user-activity thresholds.

    Each pass first drops POIs visited by fewer than ``min_poi_users``
    distinct users, then drops users whose remaining check-in count lies
    outside ``[min_user, max_user]``. With ``iterative=True`` passes repeat
    until nothing changes, so both thresholds hold on the output; with
    ``iterative=False`` exactly one pass runs.
    """
    if not checkins:
        raise EmptyAfterFilter("no check-ins to filter")
    current = list(checkins)
    while True:
        nxt = _filter_once(current, min_user, max_user, min_poi_users)
        if not iterative or len(nxt) == len(current):
            current = nxt
            break
        current = nxt
    if not current:
        raise EmptyAfterFilter(
            f"no user survives thresholds users=[{min_user}, {max_user}], "
            f"poi_users>={min_poi_users}")
    meta = {"min_user": min_user, "max_user": max_user,
            "min_poi_users": min_poi_users, "iterative": iterative}
    return build_dataset(current, meta={"filter": meta})


def split_train_test(dataset, ratio=0.8):
    """Per user, the first ``floor(ratio * len)`` visits train, the rest test."""
    if not 0.0 < ratio < 1.0:
        raise SequenceTooShort(f"ratio {ratio} leaves an empty train or test part")
    n_train = []
    for seq in dataset.sequences:
        n = len(seq)
        cut = math.floor(ratio * n + 1e-9)
        if cut < 1 or cut >= n:
            raise SequenceTooShort(
                f"user {seq.user_id}: length {n} cannot be split at ratio {ratio}")
        n_train.append(cut)
    meta = dict(dataset.meta, split_ratio=ratio)
    return replace(dataset, n_train=n_train, meta=meta)


# --- features ---------------------------------------------------------------

def _training_pois(dataset):
    seen = np.zeros(dataset.N, dtype=bool)
    lookup = dataset.poi_index()
    for _, c in dataset.train_visits():
        seen[lookup[c.poi_id]] = True
    return seen


def minmax_columns(X, reference_rows=None):
    """Min-max scale each column to [0, 1]; constant columns map to 0."""
    X = np.asarray(X, dtype=np.float64)
    ref = X if reference_rows is None else X[reference_rows]
    lo = ref.min(axis=0)
    span = ref.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (X - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def build_spatial_features(dataset):
    seen = _training_pois(dataset)
    if not seen.any():
        seen[:] = True
    return FeatureView("spatial", minmax_columns(dataset.poi_coords, seen))


def time_slot(ts, slots=56):
    """Slot index of a UTC instant: ``weekday * slots_per_day + hour bucket``."""
    per_day = slots // 7
    ts = ts.astimezone(timezone.utc)
    return ts.weekday() * per_day + (ts.hour * per_day) // 24


def build_temporal_features(dataset, slots=56):
    """L1-normalised weekly time-slot histogram per POI, training visits only.

    A POI with no training visit keeps an all-zero row.
    """
    if slots % 7:
        raise ValueError("slot count must be a multiple of 7")
    lookup = dataset.poi_index()
    H = np.zeros((dataset.N, slots))
    for _, c in dataset.train_visits():
        H[lookup[c.poi_id], time_slot(c.timestamp, slots)] += 1.0
    totals = H.sum(axis=1, keepdims=True)
    return FeatureView("temporal", np.divide(H, totals, out=np.zeros_like(H), where=totals > 0))


def build_views(dataset, slots=56, views=("spatial", "temporal")):
    builders = {
        "spatial": lambda: build_spatial_features(dataset),
        "temporal": lambda: build_temporal_features(dataset, slots),
    }
    return [builders[v]() for v in views]


# --- dataset file -----------------------------------------------------------

def dumps_dataset(dataset):
    """Serialise to the versioned text format (first line is a JSON header)."""
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "users": dataset.M,
        "pois": dataset.N,
        "checkins": dataset.num_checkins,
        "slots": dataset.meta.get("slots", 56),
        "split_ratio": dataset.meta.get("split_ratio"),
        "filter": dataset.meta.get("filter"),
    }
    buf = [json.dumps(header, sort_keys=True) + "\n"]
    lookup = dataset.poi_index()
    for i, (p, (lat, lon)) in enumerate(zip(dataset.pois, dataset.poi_coords.tolist())):
        buf.append(f"P\t{i}\t{p}\t{lat!r}\t{lon!r}\n")
    for m, seq in enumerate(dataset.sequences):
        cut = -1 if dataset.n_train is None else dataset.n_train[m]
        buf.append(f"U\t{m}\t{seq.user_id}\t{len(seq)}\t{cut}\n")
    for m, seq in enumerate(dataset.sequences):
        for c in seq.visits:
            buf.append(f"C\t{m}\t{lookup[c.poi_id]}\t{format_timestamp(c.timestamp)}"
                       f"\t{c.latitude!r}\t{c.longitude!r}\n")
    return "".join(buf)


def loads_dataset(text):
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError("dataset header is not JSON") from exc
    if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
        raise FormatError(f"unsupported dataset format {header.get('format')!r} "
                          f"v{header.get('version')!r}")
    pois, coords, users, n_train = [], [], [], []
    visits = defaultdict(list)
    for line in lines[1:]:
        kind, *f = line.split("\t")
        if kind == "P":
            pois.append(f[1])
            coords.append((float(f[2]), float(f[3])))
        elif kind == "U":
            users.append(f[1])
            n_train.append(int(f[3]))
        elif kind == "C":
            m, i = int(f[0]), int(f[1])
            visits[m].append(CheckIn(users[m], pois[i], float(f[3]), float(f[4]),
                                     parse_timestamp(f[2])))
        else:
            raise FormatError(f"unknown record kind {kind!r}")
    if len(users) != header["users"] or len(pois) != header["pois"]:
        raise FormatError("header counts disagree with records")
    sequences = [CheckInSequence(u, tuple(visits[m])) for m, u in enumerate(users)]
    meta = {"slots": header["slots"], "filter": header.get("filter")}
    split = None
    if header.get("split_ratio") is not None:
        meta["split_ratio"] = header["split_ratio"]
        split = n_train
    return Dataset(users, pois, np.array(coords, dtype=np.float64).reshape(-1, 2),
                   sequences, split, meta)


def save_dataset(dataset, path):
    from .storage import atomic_write_bytes
    atomic_write_bytes(path, dumps_dataset(dataset).encode("utf-8"))


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        return loads_dataset(fh.read())
