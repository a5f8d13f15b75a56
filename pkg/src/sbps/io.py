"""Trajectory CSV, discrete-chain CSV and key-value config files."""

from __future__ import annotations

import csv
import dataclasses
import typing
from typing import Optional, Union, get_args, get_origin

import numpy as np

from .core import EVENT_CODES, EVENTS_BY_CODE, Event, Trajectory

FLOAT_FMT = "%.17g"


class FileFormatError(ValueError):
    """A file that does not parse; ``line`` is 1-based and counts the header."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}: line {line}: {message}")
        self.path = str(path)
        self.line = line


def _fmt(x: float) -> str:
    return FLOAT_FMT % x


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


def trajectory_header(dim: int) -> list[str]:
    return (["segment_index", "t_start", "duration", "event"]
            + [f"w_{j}" for j in range(dim)] + [f"v_{j}" for j in range(dim)] + ["minibatch_evals"])


def write_trajectory(traj: Trajectory, path) -> None:
    """Write one row per segment; doubles keep 17 significant digits so reading back is exact."""
    D = traj.dim
    t0 = traj.t_start
    W, V, dur, codes, ev = traj.w_start, traj.v, traj.duration, traj.event_codes, traj.minibatch_evals
    with open(path, "w", newline="") as fh:
        fh.write(",".join(trajectory_header(D)) + "\n")
        for i in range(len(traj)):
            row = [str(i), _fmt(t0[i]), _fmt(dur[i]), EVENTS_BY_CODE[codes[i]].value]
            row += [_fmt(x) for x in W[i]] + [_fmt(x) for x in V[i]] + [str(int(ev[i]))]
            fh.write(",".join(row) + "\n")


def read_trajectory(path) -> Trajectory:
    """Parse a trajectory CSV; any malformed row raises :class:`FileFormatError` naming it."""
    events = {e.value: e for e in Event}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise FileFormatError(path, 1, "missing header row")
        if header[:4] != ["segment_index", "t_start", "duration", "event"] or header[-1] != "minibatch_evals":
            raise FileFormatError(path, 1, "not a trajectory header")
        n_w = len(header) - 5
        if n_w <= 0 or n_w % 2:
            raise FileFormatError(path, 1, "header must list matching w_ and v_ columns")
        D = n_w // 2
        if header != trajectory_header(D):
            raise FileFormatError(path, 1, "unexpected column names")
        W, V, dur, codes, evals = [], [], [], [], []
        t_prev = -np.inf
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FileFormatError(path, line, f"expected {len(header)} fields, got {len(row)}")
            try:
                idx = int(row[0])
                t0 = float(row[1])
                d = float(row[2])
                w = [float(x) for x in row[4:4 + D]]
                v = [float(x) for x in row[4 + D:4 + 2 * D]]
                m = int(row[-1])
            except ValueError as err:
                raise FileFormatError(path, line, str(err)) from None
            if row[3] not in events:
                raise FileFormatError(path, line, f"unknown event {row[3]!r}")
            if idx != len(dur):
                raise FileFormatError(path, line, f"segment_index {idx} out of order")
            if not d >= 0 or t0 < t_prev:
                raise FileFormatError(path, line, "negative duration or decreasing t_start")
            t_prev = t0
            W.append(w)
            V.append(v)
            dur.append(d)
            codes.append(EVENT_CODES[events[row[3]]])
            evals.append(m)
    if not dur:
        return Trajectory(D)
    return Trajectory.from_arrays(np.array(W), np.array(V), np.array(dur),
                                  [EVENTS_BY_CODE[c] for c in codes], np.array(evals))


def write_samples(samples, epochs, path) -> None:
    """Discrete chain output: ``step, epoch, w_0 ..``."""
    S = np.asarray(samples, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["step", "epoch"] + [f"w_{j}" for j in range(S.shape[1])]) + "\n")
        for i, (w, e) in enumerate(zip(S, epochs)):
            fh.write(",".join([str(i), _fmt(e)] + [_fmt(x) for x in w]) + "\n")


def read_samples(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["step", "epoch"]:
            raise FileFormatError(path, 1, "not a samples header")
        rows, ep = [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FileFormatError(path, line, f"expected {len(header)} fields, got {len(row)}")
            try:
                ep.append(float(row[1]))
                rows.append([float(x) for x in row[2:]])
            except ValueError as err:
                raise FileFormatError(path, line, str(err)) from None
    return np.array(rows).reshape(len(rows), len(header) - 2), np.array(ep)


def file_kind(path) -> str:
    """``"trajectory"`` or ``"samples"``, from the header."""
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("segment_index,"):
        return "trajectory"
    if first.startswith("step,"):
        return "samples"
    raise FileFormatError(path, 1, "unrecognised header")


# ---------------------------------------------------------------------------
# Key-value configs
# ---------------------------------------------------------------------------


def _base_type(tp):
    """Strip ``Optional`` and report whether ``None`` is allowed."""
    if get_origin(tp) is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        return args[0], True
    return tp, False


def parse_value(text: str, tp):
    text = text.strip()
    base, nullable = _base_type(tp)
    if nullable and text.lower() in ("none", "null", ""):
        return None
    if base is bool:
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if base is int:
        return int(text)
    if base is float:
        return float(text)
    if get_origin(base) in (list, tuple) or base in (list, tuple):
        return [float(x) for x in text.split(",") if x.strip()]
    return text


def format_value(x) -> str:
    if x is None:
        return "none"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (list, tuple)):
        return ",".join(repr(float(v)) for v in x)
    return str(x)


def config_field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def parse_config_text(text: str, cls, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment.  Unknown keys are an error."""
    types = config_field_types(cls)
    out = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FileFormatError(source, line_no, "expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise FileFormatError(source, line_no, f"unknown key {key!r}")
        try:
            out[key] = parse_value(value, types[key])
        except ValueError as err:
            raise FileFormatError(source, line_no, f"{key}: {err}") from None
    return out


def format_config(cfg) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in dataclasses.asdict(cfg).items())


def read_config(path, cls) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read(), cls, str(path))


def parse_overrides(pairs: Optional[list], cls) -> dict:
    """``["k=3", "n=50"]`` from repeated ``--set`` flags."""
    return parse_config_text("\n".join(pairs or []), cls, "--set")
