"""CSV writing with a schema header and byte-stable number formatting."""
import csv
import math
import numbers
from pathlib import Path

SCHEMA_PREFIX = "# schema: "


def fmt(value):
    """Shortest round-trip text for a number; ``nan`` for undefined values."""
    if value is None:
        return "nan"
    if isinstance(value, (bool, str)):
        return str(value)
    if isinstance(value, numbers.Integral):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)


def write_csv(path, schema, header, rows):
    """Write ``rows`` under ``header``; the first line declares ``schema`` (e.g. ``srel_series/1``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"{SCHEMA_PREFIX}{schema}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    """Return ``(schema, header, rows)`` where rows are lists of strings."""
    schema = None
    with Path(path).open(newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith(SCHEMA_PREFIX):
            schema = line[len(SCHEMA_PREFIX):].strip()
        elif line.startswith("#"):
            continue
        else:
            body.append(line)
    reader = list(csv.reader(body))
    if not reader:
        return schema, [], []
    return schema, reader[0], reader[1:]
