"""Readers and writers for the on-disk formats.

``pings.csv``
    ``agent_id,timestamp_utc,lat,lon[,accuracy_m]``
``pois.csv``
    ``poi_id,lat,lon,category[,p1..p15]``
``reference.stats``
    sectioned text file with ``[TZ_OFFSET_MIN]``, ``[SHARES]``, ``[START]`` and
    ``[DURATION]`` blocks; matrix rows are ``<code> v0 .. v95``.
``staypoints.csv`` / ``labeled_staypoints.csv``
    ``agent_id,lat,lon,t_start,t_end,duration_s[,activity_code,confidence]``
"""
from __future__ import annotations

import csv
import io
import logging
import math
from importlib import resources
from itertools import groupby
from pathlib import Path
from typing import Iterator, Mapping, Optional

import numpy as np

from .core import N_ACTIVITIES, N_SLOTS, ReferenceStats, normalize, valid_latlon
from .errors import CorruptInput, DegenerateDistribution, SchemaError
from .tables import PingTable, PoiTable, StaypointTable

log = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.10
PING_COLUMNS = ["agent_id", "timestamp_utc", "lat", "lon"]
POI_COLUMNS = ["poi_id", "lat", "lon", "category"]
STAYPOINT_COLUMNS = ["agent_id", "lat", "lon", "t_start", "t_end", "duration_s"]
LABELED_COLUMNS = STAYPOINT_COLUMNS + ["activity_code", "confidence"]


def fmt_float(x: float) -> str:
    """Decimal text with at least 9 significant digits that parses back exactly."""
    x = float(x)
    if not math.isfinite(x):
        return repr(x)
    s = format(x, "#.9g")
    if float(s) == x:
        return s
    return repr(x)


def _parse_int(s: str) -> int:
    v = float(s)
    if not math.isfinite(v) or v != int(v):
        raise ValueError(f"not an integer instant: {s!r}")
    return int(v) if "." in s or "e" in s.lower() else int(s)


# ---------------------------------------------------------------------------
# pings

def _read_ping_rows(path):
    with open(path, newline="") as fh:
        text = fh.read()
    if not text.strip():
        return None, []
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader)]
    if header[:4] != PING_COLUMNS:
        raise SchemaError(f"{path}: expected header starting with {PING_COLUMNS}, got {header}")
    return header, list(reader)


def _parse_ping_rows(rows, has_acc: bool, origin) -> tuple[PingTable, int]:
    ids, ts, lats, lons, accs = [], [], [], [], []
    seen = set()
    skipped = 0
    for row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        try:
            agent = row[0].strip()
            t = _parse_int(row[1].strip())
            lat = float(row[2])
            lon = float(row[3])
            acc = float(row[4]) if has_acc and len(row) > 4 and row[4].strip() else np.nan
            if not agent or not valid_latlon(lat, lon):
                raise ValueError("bad row")
        except (ValueError, IndexError):
            skipped += 1
            continue
        if (agent, t) in seen:
            skipped += 1
            continue
        seen.add((agent, t))
        ids.append(agent)
        ts.append(t)
        lats.append(lat)
        lons.append(lon)
        accs.append(acc)
    total = len(ids) + skipped
    if total and skipped / total > MAX_MALFORMED_FRACTION:
        raise CorruptInput(f"{origin}: {skipped} of {total} rows malformed")
    if skipped:
        log.warning("%s: skipped %d malformed ping rows", origin, skipped)
    return PingTable.from_arrays(ids, ts, lats, lons, accs if has_acc else None), skipped


def _has_accuracy(header) -> bool:
    return len(header) > 4 and header[4] == "accuracy_m"


def load_pings(path) -> tuple[PingTable, int]:
    """Load pings, returning the time-sorted table and the skipped-row count.

    Rows that do not parse, have out-of-range coordinates, or repeat an
    (agent, timestamp) pair are skipped. More than 10% skipped rows raises
    :class:`CorruptInput`.
    """
    header, rows = _read_ping_rows(path)
    if header is None:
        return PingTable.empty(), 0
    return _parse_ping_rows(rows, _has_accuracy(header), path)


def write_pings(pings: PingTable, path) -> None:
    has_acc = pings.accuracy is not None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PING_COLUMNS + (["accuracy_m"] if has_acc else []))
        agent = pings.agent_index
        for r in range(len(pings)):
            row = [pings.agent_ids[agent[r]], int(pings.t[r]), fmt_float(pings.lat[r]), fmt_float(pings.lon[r])]
            if has_acc:
                a = pings.accuracy[r]
                row.append(fmt_float(a) if np.isfinite(a) else "")
            w.writerow(row)


def iter_agent_pings(path) -> Iterator[PingTable]:
    """Stream an agent-sorted ping file one agent at a time.

    Rows of one agent must be contiguous; an agent reappearing later raises
    :class:`SchemaError` (bucket the file by agent first).
    """
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.strip():
            return
        header = [h.strip() for h in next(csv.reader([first]))]
        if header[:4] != PING_COLUMNS:
            raise SchemaError(f"{path}: expected header starting with {PING_COLUMNS}, got {header}")
        has_acc = _has_accuracy(header)
        done = set()
        for agent, group in groupby((r for r in csv.reader(fh) if r), key=lambda r: r[0].strip()):
            if agent in done:
                raise SchemaError(f"{path}: agent {agent!r} is not contiguous; bucket input by agent")
            done.add(agent)
            table, _ = _parse_ping_rows(list(group), has_acc, path)
            if table.n_agents:
                yield table


# ---------------------------------------------------------------------------
# POIs and enrichment

def load_enrichment(path=None) -> dict:
    """Category -> normalized 15-vector table (defaults to the bundled table)."""
    if path is None:
        text = resources.files("trippurpose.data").joinpath("enrichment.csv").read_text()
    else:
        text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if len(header) != 1 + N_ACTIVITIES:
        raise SchemaError("enrichment table needs category + 15 probability columns")
    table = {}
    for row in reader:
        if not row:
            continue
        table[row[0].strip()] = normalize([float(x) for x in row[1:]])
    return table


def load_pois(path, enrichment_table: Optional[Mapping[str, np.ndarray]] = None) -> tuple[PoiTable, int]:
    """Load POIs; returns the table and the number of unmapped rows skipped.

    Rows carrying ``p1..p15`` use that (normalized) distribution; otherwise
    the category is looked up in ``enrichment_table``.
    """
    if enrichment_table is None:
        enrichment_table = load_enrichment()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            return PoiTable([], np.zeros(0), np.zeros(0), np.zeros((0, N_ACTIVITIES))), 0
        if header[:4] != POI_COLUMNS:
            raise SchemaError(f"{path}: expected header starting with {POI_COLUMNS}, got {header}")
        pcols = [header.index(f"p{k}") for k in range(1, N_ACTIVITIES + 1)] if "p1" in header else None
        ids, lats, lons, dists, cats = [], [], [], [], []
        unmapped = 0
        for row in reader:
            if not row:
                continue
            lat, lon = float(row[1]), float(row[2])
            if not valid_latlon(lat, lon):
                raise SchemaError(f"{path}: invalid POI location in row {row}")
            cat = row[3].strip()
            vec = None
            if pcols is not None and all(i < len(row) and row[i].strip() for i in pcols):
                try:
                    vec = normalize([float(row[i]) for i in pcols])
                except DegenerateDistribution as exc:
                    raise SchemaError(f"{path}: POI {row[0]} has a degenerate distribution") from exc
            elif cat in enrichment_table:
                vec = np.asarray(enrichment_table[cat], dtype=float)
            if vec is None:
                unmapped += 1
                continue
            ids.append(row[0].strip())
            lats.append(lat)
            lons.append(lon)
            dists.append(vec)
            cats.append(cat)
    if unmapped:
        log.warning("%s: skipped %d POIs with unmapped category", path, unmapped)
    dist = np.array(dists, dtype=float).reshape(len(ids), N_ACTIVITIES)
    return PoiTable(ids, np.array(lats), np.array(lons), dist, cats), unmapped


def write_pois(pois: PoiTable, path, with_distribution: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POI_COLUMNS + ([f"p{k}" for k in range(1, N_ACTIVITIES + 1)] if with_distribution else []))
        for i in range(len(pois)):
            row = [pois.poi_ids[i], fmt_float(pois.lat[i]), fmt_float(pois.lon[i]), pois.category[i]]
            if with_distribution:
                row += [fmt_float(v) for v in pois.dist[i]]
            w.writerow(row)


# ---------------------------------------------------------------------------
# reference statistics

_SECTIONS = ("TZ_OFFSET_MIN", "SHARES", "START", "DURATION")


def load_reference(path) -> ReferenceStats:
    """Parse a ``reference.stats`` file; rows are renormalized on load."""
    sections: dict[str, list[str]] = {}
    current = None
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().upper()
            if current in sections:
                raise SchemaError(f"{path}: duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise SchemaError(f"{path}: data outside a section: {line!r}")
        sections[current].append(line)
    missing = [s for s in _SECTIONS if s not in sections]
    if missing:
        raise SchemaError(f"{path}: missing sections {missing}")
    tz_lines = sections["TZ_OFFSET_MIN"]
    if len(tz_lines) != 1:
        raise SchemaError(f"{path}: TZ_OFFSET_MIN must hold one value")
    tz = int(tz_lines[0])

    def keyed(name, width):
        rows = {}
        for line in sections[name]:
            parts = line.split()
            try:
                code = int(parts[0])
                vals = [float(x) for x in parts[1:]]
            except ValueError as exc:
                raise SchemaError(f"{path}: bad row in [{name}]: {line!r}") from exc
            if not 1 <= code <= N_ACTIVITIES:
                raise SchemaError(f"{path}: activity code {code} out of range in [{name}]")
            if len(vals) != width:
                raise SchemaError(f"{path}: [{name}] row {code} has {len(vals)} values, expected {width}")
            if code in rows:
                raise SchemaError(f"{path}: duplicate activity {code} in [{name}]")
            rows[code] = vals
        absent = [k for k in range(1, N_ACTIVITIES + 1) if k not in rows]
        if absent:
            raise SchemaError(f"{path}: [{name}] missing activity rows {absent}")
        return np.array([rows[k] for k in range(1, N_ACTIVITIES + 1)], dtype=float)

    shares = keyed("SHARES", 1)[:, 0]
    ref = ReferenceStats(shares, keyed("START", N_SLOTS), keyed("DURATION", N_SLOTS), tz)
    if ref.empty_activities:
        log.warning("%s: activities without survey mass: %s", path, [int(a) for a in ref.empty_activities])
    return ref


def write_reference(ref: ReferenceStats, path) -> None:
    lines = ["# survey reference statistics", "[TZ_OFFSET_MIN]", str(ref.tz_offset_min), "[SHARES]"]
    lines += [f"{k + 1} {fmt_float(v)}" for k, v in enumerate(ref.activity_shares)]
    for name, m in (("START", ref.start_prior), ("DURATION", ref.duration_prior)):
        lines.append(f"[{name}]")
        lines += [f"{k + 1} " + " ".join(fmt_float(v) for v in m[k]) for k in range(N_ACTIVITIES)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# staypoints

def staypoint_rows(sp: StaypointTable, labeled: bool = False) -> Iterator[list]:
    """CSV rows (without header) of a staypoint table."""
    for i in range(len(sp)):
        row = [
            sp.agent_ids[sp.agent[i]],
            fmt_float(sp.lat[i]),
            fmt_float(sp.lon[i]),
            int(sp.t_start[i]),
            int(sp.t_end[i]),
            int(sp.t_end[i] - sp.t_start[i]),
        ]
        if labeled:
            lab = int(sp.label[i])
            row += [lab, fmt_float(sp.confidence[i]) if lab else ""]
        yield row


def write_staypoints(sp: StaypointTable, path, labeled: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABELED_COLUMNS if labeled else STAYPOINT_COLUMNS)
        w.writerows(staypoint_rows(sp, labeled))


def load_staypoints(path) -> StaypointTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            return StaypointTable.empty()
        if header[: len(STAYPOINT_COLUMNS)] != STAYPOINT_COLUMNS:
            raise SchemaError(f"{path}: expected header {STAYPOINT_COLUMNS}, got {header}")
        labeled = header[: len(LABELED_COLUMNS)] == LABELED_COLUMNS
        rows = [r for r in reader if r]
    ids = sorted({r[0] for r in rows})
    pos = {a: i for i, a in enumerate(ids)}
    label = confidence = None
    if labeled:
        label = [int(r[6]) if r[6] else 0 for r in rows]
        confidence = [float(r[7]) if r[7] else np.nan for r in rows]
    return StaypointTable.from_arrays(
        ids,
        [pos[r[0]] for r in rows],
        [float(r[1]) for r in rows],
        [float(r[2]) for r in rows],
        [int(r[3]) for r in rows],
        [int(r[4]) for r in rows],
        label,
        confidence,
    )
