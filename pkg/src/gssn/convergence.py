"""Per-iteration convergence records with CSV export."""

from __future__ import annotations

import csv
import io
import math
from typing import NamedTuple

import numpy as np

__all__ = ["LogRecord", "ConvergenceLog", "CSV_HEADER"]

CSV_HEADER = ("k", "phi_fb", "phi_z", "step_norm", "lambda", "tau", "rho", "xi", "cg_iters", "time_s")


class LogRecord(NamedTuple):
    k: int
    phi_fb: float
    phi_z: float
    step_norm: float
    lam: float
    tau: float
    rho: float
    xi: float
    cg_iters: int
    time_s: float

    @property
    def eta(self) -> float:
        return self.step_norm ** 2 / (2.0 * self.lam)


class ConvergenceLog:
    """Ordered iteration log.

    ``k`` must strictly increase and ``phi_fb`` must not increase beyond a
    relative rounding allowance ``rtol``.
    """

    def __init__(self, rtol: float = 1e-9):
        self.records: list[LogRecord] = []
        self.rtol = rtol

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def append(self, k, phi_fb, phi_z, step_norm, lam, tau, rho, xi, cg_iters, time_s) -> LogRecord:
        rec = LogRecord(int(k), float(phi_fb), float(phi_z), float(step_norm), float(lam),
                        float(tau), float(rho), float(xi), int(cg_iters), float(time_s))
        if self.records:
            last = self.records[-1]
            if rec.k <= last.k:
                raise ValueError(f"iteration counter must increase ({last.k} -> {rec.k})")
            if rec.phi_fb > last.phi_fb + self.rtol * (1.0 + abs(last.phi_fb)):
                raise ValueError(f"envelope value increased at k={rec.k}")
        self.records.append(rec)
        return rec

    def column(self, name: str) -> np.ndarray:
        attr = "lam" if name == "lambda" else name
        return np.array([getattr(r, attr) for r in self.records], dtype=float)

    def rows(self, with_time: bool = True):
        for r in self.records:
            row = list(r)
            if not with_time:
                row = row[:-1]
            yield row

    def write_csv(self, target, with_time: bool = True) -> None:
        """Write to a path or an open text stream."""
        if hasattr(target, "write"):
            self._write(target, with_time)
        else:
            with open(target, "w", newline="") as fh:
                self._write(fh, with_time)

    def to_csv(self, with_time: bool = True) -> str:
        buf = io.StringIO()
        self._write(buf, with_time)
        return buf.getvalue()

    def _write(self, fh, with_time):
        w = csv.writer(fh, lineterminator="\n")
        header = CSV_HEADER if with_time else CSV_HEADER[:-1]
        w.writerow(header)
        for row in self.rows(with_time):
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(v)
    if math.isnan(v):
        return "nan"
    return repr(float(v))
