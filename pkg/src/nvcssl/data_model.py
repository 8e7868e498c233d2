"""Longitudinal dataset container, CSV ingestion, centering, and holdout splits.

Data live in long format: one row per (subject, time) observation with the
response and p covariate columns. Subjects keep first-appearance order;
within a subject the rows are sorted by time and ties are rejected.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError

__all__ = [
    "LongitudinalDataset",
    "load_long_csv",
    "write_long_csv",
    "center_response",
    "split_new_subjects",
]


@dataclass(frozen=True)
class LongitudinalDataset:
    """Immutable container for subjects with irregular observation times.

    times and responses are per-subject arrays; covariates is the N x p
    matrix in observation order (subject-major, time-sorted within subject).
    response_offset records any grand mean removed by center_response.
    """

    subject_ids: tuple
    times: tuple          # tuple of 1-d float arrays, strictly increasing
    responses: tuple      # tuple of 1-d float arrays, same lengths as times
    covariates: np.ndarray
    variable_names: tuple
    response_offset: float = 0.0

    def __post_init__(self):
        if len(self.subject_ids) == 0:
            raise ValidationError("dataset has no subjects")
        if len(self.times) != len(self.subject_ids) or len(self.responses) != len(self.subject_ids):
            raise ValidationError("times/responses must have one entry per subject")
        object.__setattr__(self, "times", tuple(np.asarray(t, dtype=float) for t in self.times))
        object.__setattr__(self, "responses", tuple(np.asarray(y, dtype=float) for y in self.responses))
        object.__setattr__(self, "covariates", np.asarray(self.covariates, dtype=float))
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "variable_names", tuple(self.variable_names))
        n_rows = 0
        for sid, t, y in zip(self.subject_ids, self.times, self.responses):
            if t.ndim != 1 or t.size < 1:
                raise ValidationError(f"subject {sid!r} has no observations")
            if t.size != y.size:
                raise ValidationError(f"subject {sid!r}: times and responses disagree in length")
            if not np.all(np.isfinite(t)) or not np.all(np.isfinite(y)):
                raise ValidationError(f"subject {sid!r}: non-finite time or response")
            if np.any(np.diff(t) < 0):
                raise ValidationError(f"subject {sid!r}: times not sorted")
            if np.any(np.diff(t) == 0):
                raise ValidationError(f"subject {sid!r}: duplicate observation times")
            n_rows += t.size
        if self.covariates.ndim != 2 or self.covariates.shape[0] != n_rows:
            raise ValidationError(
                f"covariate matrix has {self.covariates.shape[0]} rows, expected {n_rows}"
            )
        if self.covariates.shape[1] < 1:
            raise ValidationError("need at least one covariate column")
        if self.covariates.shape[1] != len(self.variable_names):
            raise ValidationError("variable_names length must match covariate columns")
        if not np.all(np.isfinite(self.covariates)):
            raise ValidationError("non-finite covariate value")
        for arr in (*self.times, *self.responses, self.covariates):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.subject_ids)

    @property
    def n_obs(self) -> tuple:
        return tuple(t.size for t in self.times)

    @property
    def total_obs(self) -> int:
        return int(self.covariates.shape[0])

    @property
    def p(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def stacked_times(self) -> np.ndarray:
        return np.concatenate(self.times)

    @property
    def stacked_responses(self) -> np.ndarray:
        return np.concatenate(self.responses)

    def subject_slices(self):
        """Row ranges of each subject's block in observation order."""
        out = []
        start = 0
        for t in self.times:
            out.append(slice(start, start + t.size))
            start += t.size
        return out


def load_long_csv(path) -> LongitudinalDataset:
    """Read a long-format CSV `subject,time,y,<name1>,...,<namep>`.

    Rows are grouped by subject in first-appearance order and sorted by time
    within each subject. Duplicate (subject, time) pairs and empty bodies are
    rejected.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 4 or header[0] != "subject" or header[1] != "time" or header[2] != "y":
            raise ParseError(f"{path}: header must start with subject,time,y and carry >=1 covariate")
        names = tuple(header[3:])

        order: list = []
        rows: dict = {}
        for idx, row in enumerate(reader, start=2):  # 1-based, header is row 1
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {idx}: expected {len(header)} cells, got {len(row)}")
            sid = row[0].strip()
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}: row {idx}: {exc}") from None
            if sid not in rows:
                rows[sid] = []
                order.append(sid)
            rows[sid].append(vals)

    if not order:
        raise ValidationError(f"{path}: no data rows")

    times, responses, blocks = [], [], []
    for sid in order:
        block = np.asarray(rows[sid], dtype=float)
        sort = np.argsort(block[:, 0], kind="stable")
        block = block[sort]
        t = block[:, 0]
        if np.any(np.diff(t) == 0):
            dup = t[np.nonzero(np.diff(t) == 0)[0][0]]
            raise ValidationError(f"{path}: duplicate time {dup!r} for subject {sid!r}")
        times.append(t)
        responses.append(block[:, 1])
        blocks.append(block[:, 2:])
    return LongitudinalDataset(
        subject_ids=tuple(order),
        times=tuple(times),
        responses=tuple(responses),
        covariates=np.vstack(blocks),
        variable_names=names,
    )


def write_long_csv(ds: LongitudinalDataset, path) -> None:
    """Inverse of load_long_csv up to float round-trip (uses repr precision)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "time", "y", *ds.variable_names])
        row0 = 0
        for sid, t, y in zip(ds.subject_ids, ds.times, ds.responses):
            for j in range(t.size):
                x = ds.covariates[row0 + j]
                writer.writerow([sid, f"{t[j]:.17g}", f"{y[j]:.17g}", *(f"{v:.17g}" for v in x)])
            row0 += t.size


def center_response(ds: LongitudinalDataset) -> LongitudinalDataset:
    """Remove the grand mean of the responses, accumulating it in response_offset."""
    mean = float(np.mean(np.concatenate(ds.responses)))
    return LongitudinalDataset(
        subject_ids=ds.subject_ids,
        times=ds.times,
        responses=tuple(y - mean for y in ds.responses),
        covariates=ds.covariates,
        variable_names=ds.variable_names,
        response_offset=ds.response_offset + mean,
    )


def split_new_subjects(ds: LongitudinalDataset, n_new: int, seed: int):
    """Deterministic subject-level holdout: returns (train, test) with n_new test subjects."""
    if not 1 <= n_new < ds.n:
        raise ValidationError(f"n_new must be in [1, {ds.n - 1}], got {n_new}")
    rng = np.random.default_rng(seed)
    test_idx = set(rng.choice(ds.n, size=n_new, replace=False).tolist())

    def take(indices):
        slices = ds.subject_slices()
        rows = np.concatenate([np.arange(s.start, s.stop) for i, s in enumerate(slices) if i in indices])
        keep = sorted(indices)
        return LongitudinalDataset(
            subject_ids=tuple(ds.subject_ids[i] for i in keep),
            times=tuple(ds.times[i] for i in keep),
            responses=tuple(ds.responses[i] for i in keep),
            covariates=ds.covariates[rows],
            variable_names=ds.variable_names,
            response_offset=ds.response_offset,
        )

    train_idx = set(range(ds.n)) - test_idx
    return take(train_idx), take(test_idx)
