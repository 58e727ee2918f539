"""Delimited-text survival datasets.

Input files have a header row and one subject per line.  The delimiter is
detected among comma, tab and semicolon unless given.  Values are parsed
row by row and every problem is reported with its line number (the header
is line 1).

Output files written by :func:`write_sample` use ``repr`` for floats so a
written dataset reads back bit-identically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .simgen import Registry, ScenarioConfig, make_dataset
from .survival import SurvivalSample

DELIMITERS = ",\t;"
MAX_DIAGNOSTICS = 20
# days per month, used to put the bundled ovarian data on a month scale
DAYS_PER_MONTH = 365.25 / 12.0


@dataclass(frozen=True)
class LoadedData:
    """A parsed dataset plus how the group column was coded."""

    sample: SurvivalSample
    group_levels: tuple
    source: str


def sniff_delimiter(text: str) -> str:
    head = "\n".join(text.splitlines()[:20])
    try:
        return csv.Sniffer().sniff(head, delimiters=DELIMITERS).delimiter
    except csv.Error:
        return ","


def read_rows(text: str, delimiter: Optional[str] = None) -> tuple:
    """Header and ``(line_number, fields)`` pairs; blank lines are skipped."""
    delimiter = delimiter or sniff_delimiter(text)
    reader = csv.reader(text.splitlines(), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ValidationError("invalid input: empty file") from None
    rows = [(i, [f.strip() for f in fields]) for i, fields in enumerate(reader, start=2)
            if any(f.strip() for f in fields)]
    return header, rows


def _column(header, name):
    try:
        return header.index(name)
    except ValueError:
        raise ValidationError(f"invalid input: missing column {name!r} "
                              f"(available: {', '.join(header)})") from None


def _number(text):
    value = float(text)
    if not np.isfinite(value):
        raise ValueError(text)
    return value


def parse_sample(text: str, time: str = "time", status: str = "status", group: str = "group",
                 covariates: Sequence[str] = (), delimiter: Optional[str] = None,
                 time_scale: float = 1.0, source: str = "<text>") -> LoadedData:
    """Parse delimited text into a :class:`SurvivalSample`.

    ``time_scale`` divides every time (e.g. 30.4375 turns days into months).
    The group column must have exactly two distinct values.  Values 0 and 1
    are kept; any other pair is coded 0 for the smaller and 1 for the larger.
    """
    if not time_scale > 0:
        raise ValidationError("time scale must be positive")
    header, rows = read_rows(text, delimiter)
    cols = [_column(header, c) for c in (time, status, group, *covariates)]
    problems = []
    t, s, g, x = [], [], [], []
    for line, fields in rows:
        if len(fields) != len(header):
            problems.append(f"row {line}: expected {len(header)} fields, found {len(fields)}")
            continue
        try:
            tv = _number(fields[cols[0]])
            if tv < 0:
                raise ValueError
        except ValueError:
            problems.append(f"row {line}: time {fields[cols[0]]!r} is not a nonnegative number")
            continue
        if fields[cols[1]] not in ("0", "1"):
            problems.append(f"row {line}: status {fields[cols[1]]!r} is not 0 or 1")
            continue
        try:
            xv = [_number(fields[c]) for c in cols[3:]]
        except ValueError:
            problems.append(f"row {line}: covariate value is not a number")
            continue
        t.append(tv / time_scale)
        s.append(int(fields[cols[1]]))
        g.append(fields[cols[2]])
        x.append(xv)
    levels = sorted(set(g), key=_level_key)
    if len(levels) != 2 and not problems:
        problems.append(f"group column {group!r} must have exactly two levels, found {len(levels)}")
    if problems:
        more = len(problems) - MAX_DIAGNOSTICS
        shown = problems[:MAX_DIAGNOSTICS] + ([f"... and {more} more"] if more > 0 else [])
        raise ValidationError("invalid input:\n  " + "\n  ".join(shown))
    if set(levels) == {"0", "1"}:
        levels = ["0", "1"]
    code = {levels[0]: 0, levels[1]: 1}
    x = np.array(x, dtype=float).reshape(len(t), len(covariates))
    sample = SurvivalSample(np.array(t), np.array(s), np.array([code[v] for v in g]), x,
                            tuple(covariates))
    return LoadedData(sample, tuple(levels), source)


def _level_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


def load_sample(path, delimiter: Optional[str] = None, **kwargs) -> LoadedData:
    text = Path(path).read_text()
    return parse_sample(text, delimiter=delimiter, source=str(path), **kwargs)


def load_ovarian() -> SurvivalSample:
    """The bundled ovarian cancer trial (26 patients), times in months.

    Groups: ``rx`` 1 becomes 0 and ``rx`` 2 becomes 1.  Covariates: ``age``
    and ``ecog_ps``.
    """
    return ovarian_data().sample


def ovarian_data() -> LoadedData:
    text = resources.files("rmstpo.data").joinpath("ovarian.csv").read_text()
    return parse_sample(text, time="futime", status="fustat", group="rx",
                        covariates=("age", "ecog_ps"), delimiter=",",
                        time_scale=DAYS_PER_MONTH, source="<bundled ovarian>")


def format_sample(sample: SurvivalSample, delimiter: str = ",") -> str:
    lines = [delimiter.join(("time", "status", "group", *sample.covariate_names))]
    for i in range(sample.n):
        fields = [repr(float(sample.time[i])), str(int(sample.status[i])), str(int(sample.group[i]))]
        fields += [repr(float(v)) for v in sample.covariates[i]]
        lines.append(delimiter.join(fields))
    return "\n".join(lines) + "\n"


def write_sample(sample: SurvivalSample, path, delimiter: str = ",") -> None:
    Path(path).write_text(format_sample(sample, delimiter))


def export_replicate(config: ScenarioConfig, replicate_index: int, path,
                     registry: Optional[Registry] = None) -> SurvivalSample:
    """Write replicate ``replicate_index`` of a simulation cell to ``path``."""
    sample = make_dataset(config, replicate_index, registry).sample
    write_sample(sample, path)
    return sample
