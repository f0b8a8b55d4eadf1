"""Reading and writing recruitment data, posterior draws and run manifests."""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import dataclass

import numpy as np

from .engine import ObservedSequence, PosteriorDraws
from .exceptions import DataFormatError

__all__ = [
    "DATA_COLUMNS",
    "RecruitmentRecord",
    "load_csv",
    "load_records",
    "read_draws",
    "write_csv",
    "write_draws",
    "write_json",
]

DATA_COLUMNS = ("respondent_id", "recruiter_id", "degree", "order", "trait")
REQUIRED_COLUMNS = DATA_COLUMNS[:4]
DRAW_COLUMNS = ("iteration", "chain", "N", "mu", "sigma")


@dataclass(frozen=True)
class RecruitmentRecord:
    respondent_id: str
    recruiter_id: str
    degree: int
    order: int
    trait: int | None = None

    @property
    def is_seed(self) -> bool:
        return self.recruiter_id == ""


def _parse_int(text: str, column: str, line: int) -> int:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"{column} {text!r} is not a number", line) from None
    if not value.is_integer():
        raise DataFormatError(f"{column} {text!r} is not an integer", line)
    return int(value)


def load_records(path) -> list[RecruitmentRecord]:
    """Parse and validate a recruitment CSV; rows come back sorted by order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("file is empty", 1) from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataFormatError(f"missing columns: {', '.join(missing)}", 1)
        col = {name: header.index(name) for name in DATA_COLUMNS if name in header}
        has_trait = "trait" in col
        records, seen_order, seen_id = [], {}, {}
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise DataFormatError(f"expected {len(header)} fields, found {len(row)}", line)
            rid = row[col["respondent_id"]].strip()
            rec = row[col["recruiter_id"]].strip()
            if not rid:
                raise DataFormatError("respondent_id is empty", line)
            if rid in seen_id:
                raise DataFormatError(f"respondent_id {rid!r} repeats line {seen_id[rid]}", line)
            if rec == rid:
                raise DataFormatError(f"respondent {rid!r} lists itself as recruiter", line)
            degree = _parse_int(row[col["degree"]].strip(), "degree", line)
            if degree < 1:
                raise DataFormatError(f"degree must be >= 1, got {degree}", line)
            order = _parse_int(row[col["order"]].strip(), "order", line)
            if order < 1:
                raise DataFormatError(f"order must be >= 1, got {order}", line)
            if order in seen_order:
                raise DataFormatError(f"order {order} duplicates line {seen_order[order]}", line)
            trait = None
            if has_trait:
                text = row[col["trait"]].strip()
                if text not in ("0", "1"):
                    raise DataFormatError(f"trait must be 0 or 1, got {text!r}", line)
                trait = int(text)
            seen_order[order] = line
            seen_id[rid] = line
            records.append(RecruitmentRecord(rid, rec, degree, order, trait))
    if not records:
        raise DataFormatError("no data rows")
    records.sort(key=lambda r: r.order)
    gaps = [r.order for k, r in enumerate(records, start=1) if r.order != k]
    if gaps:
        raise DataFormatError(f"order values must be 1..{len(records)}; found {gaps[0]} out of place")
    return records


def load_csv(path) -> ObservedSequence:
    """Observed unit sizes in recruitment order, with the trait if present."""
    records = load_records(path)
    trait = None if records[0].trait is None else [r.trait for r in records]
    return ObservedSequence(np.array([r.degree for r in records]), trait)


def write_csv(path, data: ObservedSequence, respondent_ids=None, recruiter_ids=None) -> None:
    n = data.n
    ids = [str(k + 1) for k in range(n)] if respondent_ids is None else [str(i) for i in respondent_ids]
    recs = [""] * n if recruiter_ids is None else ["" if r is None else str(r) for r in recruiter_ids]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATA_COLUMNS if data.trait is not None else REQUIRED_COLUMNS)
        for k in range(n):
            row = [ids[k], recs[k], int(data.u_obs[k]), k + 1]
            if data.trait is not None:
                row.append(int(data.trait[k]))
            w.writerow(row)


def write_draws(path, draws: PosteriorDraws) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DRAW_COLUMNS)
        for it, ch, N, mu, sd in zip(
            draws.iteration.tolist(), draws.chain.tolist(), draws.N.tolist(), draws.mu.tolist(), draws.sigma.tolist()
        ):
            w.writerow([it, ch, N, repr(mu), repr(sd)])


def read_draws(path, n: int = 0) -> PosteriorDraws:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in DRAW_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataFormatError(f"draws file lacks columns: {', '.join(missing)}", 1)
        rows = list(reader)
    if not rows:
        raise DataFormatError("draws file has no rows")
    try:
        cols = {c: [r[c] for r in rows] for c in DRAW_COLUMNS}
        N = np.array(cols["N"], dtype=np.int64)
        mu = np.array(cols["mu"], dtype=float)
        sigma = np.array(cols["sigma"], dtype=float)
        iteration = np.array(cols["iteration"], dtype=np.int64)
        chain = np.array(cols["chain"], dtype=np.int64)
    except ValueError as exc:
        raise DataFormatError(f"unparseable value in draws file: {exc}") from None
    return PosteriorDraws(
        N=N, mu=mu, sigma=sigma, mean_size=np.full(N.size, np.nan), iteration=iteration, chain=chain, n=n
    )


def environment_info() -> dict:
    import scipy

    from . import __version__

    return {
        "sspsize": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
