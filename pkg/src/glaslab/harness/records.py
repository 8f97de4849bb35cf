"""Result records and their CSV / JSON / plot-data serialization."""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__

SCHEMA_VERSION = 1

# (column, parser); the order is the CSV column order
PARAM_COLUMNS = [
    ("d", int), ("beta", float), ("h", float), ("u", float), ("r", float),
    ("alpha", str), ("p_max", int), ("cn_exponent", float), ("cn_prefactor", float),
    ("xi_law", str), ("pert_mode", str),
]
COLUMNS = (["kind"] + [c for c, _ in PARAM_COLUMNS]
           + ["n", "observable", "value", "stderr", "R", "seed", "version"])


@dataclass(frozen=True)
class ResultRecord:
    kind: str
    params: dict = field(hash=False)
    n: int
    observable: str
    value: float
    stderr: float
    ensemble_size: int
    seed: int
    version: str = __version__

    def key(self) -> tuple:
        return (self.kind, tuple(self.params[c] for c, _ in PARAM_COLUMNS), self.n,
                self.observable, self.seed)

    def row(self) -> dict:
        out = {"kind": self.kind}
        out.update({c: self.params[c] for c, _ in PARAM_COLUMNS})
        out.update(n=self.n, observable=self.observable, value=self.value,
                   stderr=self.stderr, R=self.ensemble_size, seed=self.seed,
                   version=self.version)
        return out

    @classmethod
    def from_row(cls, row: dict) -> "ResultRecord":
        params = {c: parse(row[c]) for c, parse in PARAM_COLUMNS}
        return cls(kind=row["kind"], params=params, n=int(row["n"]),
                   observable=row["observable"], value=float(row["value"]),
                   stderr=float(row["stderr"]), ensemble_size=int(row["R"]),
                   seed=int(row["seed"]), version=str(row["version"]))

    def __eq__(self, other):
        if not isinstance(other, ResultRecord):
            return NotImplemented
        return self.row() == other.row() or _nan_equal(self.row(), other.row())

    def __hash__(self):
        return hash(self.key())


def _nan_equal(a, b):
    if a.keys() != b.keys():
        return False
    for k in a:
        x, y = a[k], b[k]
        if x != y and not (isinstance(x, float) and isinstance(y, float) and x != x and y != y):
            return False
    return True


def alpha_text(alpha) -> str:
    return ",".join(f"{p}={a!r}" for p, a in sorted(dict(alpha).items()))


def check_unique(records):
    seen = set()
    for r in records:
        k = r.key()
        if k in seen:
            raise ValueError(f"duplicate record key {k}")
        seen.add(k)


def atomic_write(path, data, mode="w"):
    """Write via a temporary file in the target directory, then ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in records:
        row = r.row()
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def records_from_csv(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is not None and list(reader.fieldnames) != COLUMNS:
        raise ValueError(f"unexpected CSV columns {reader.fieldnames}")
    return [ResultRecord.from_row(row) for row in reader]


def records_to_json(records) -> str:
    rows = [dict(r.row(), schema_version=SCHEMA_VERSION) for r in records]
    return json.dumps(rows, indent=1)


def records_from_json(text: str) -> list:
    rows = json.loads(text)
    out = []
    for row in rows:
        if row.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported record schema {row.get('schema_version')}")
        out.append(ResultRecord.from_row(row))
    return out


def read_records(path) -> list:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".csv":
        return records_from_csv(text)
    return records_from_json(text)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._=-]+", "_", text).strip("_")


def plot_series(records) -> dict:
    """Group records into (x = |V_n|, y, yerr) series keyed by (kind, observable, params).

    Only observables measured at two or more sizes form a series.
    """
    groups = defaultdict(list)
    for r in records:
        if r.n <= 0:
            continue
        groups[(r.kind, r.observable, r.key()[1])].append(r)
    out = {}
    for key, recs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], str(kv[0][2]))):
        if len(recs) < 2:
            continue
        recs.sort(key=lambda r: r.n)
        d = int(recs[0].params["d"])
        out[key] = [(float(r.n**d), r.value, r.stderr) for r in recs]
    return out


def emit_report(records, out_dir, figures=True) -> dict:
    """Write ``records.csv``, ``records.json``, plot-data files and figures.

    Returns a dict of written paths.
    """
    records = list(records)
    check_unique(records)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = {"csv": out / "records.csv", "json": out / "records.json", "plot_data": [],
             "figures": []}
    atomic_write(paths["csv"], records_to_csv(records))
    atomic_write(paths["json"], records_to_json(records))

    series = plot_series(records)
    names = defaultdict(int)
    data_dir = out / "plot-data"
    written = {}
    for (kind, obs, _), pts in series.items():
        base = _slug(f"{kind}__{obs}")
        names[base] += 1
        if names[base] > 1:
            base = f"{base}__{names[base]}"
        lines = [f"# {kind} {obs}", "# x=|V_n| y yerr"]
        lines += [f"{x!r} {y!r} {e!r}" for x, y, e in pts]
        path = data_dir / f"{base}.dat"
        atomic_write(path, "\n".join(lines) + "\n")
        paths["plot_data"].append(path)
        written[(kind, obs, base)] = pts
    if figures and records:
        from . import plotting

        paths["figures"] = plotting.render_figures(records, written, out / "figures")
    return paths
