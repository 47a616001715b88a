"""BIC-based post-pruning of a greedy model path.

The greedy path is grown to its full length first; pruning then picks
the split count minimising ``BIC = -2 * log_lik + log(n) * dof`` where
the degrees of freedom come from a pluggable source.  Charging the
true search cost (rather than the raw coefficient count) is what keeps
the criterion honest about adaptively chosen splits.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .dof import DofSpec
from .errors import DegenerateFitError, ValidationError
from .tree import ModelPath


def bic(log_lik: float, dof: float, n) -> float:
    """Bayesian information criterion, ``-2 * log_lik + log(n) * dof``."""
    if not math.isfinite(log_lik):
        raise DegenerateFitError("BIC needs a finite log-likelihood")
    if dof <= 0:
        raise ValidationError(f"dof must be positive, got {dof}")
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    return -2.0 * log_lik + math.log(n) * dof


@dataclass(frozen=True)
class PruneEntry:
    s: int
    dof: float
    log_lik: float
    bic: float
    selected: bool


@dataclass(frozen=True)
class PruneReport:
    """BIC table over a model path and the selected split count."""

    dof_name: str
    entries: tuple[PruneEntry, ...]
    selected_s: int

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["s", "dof", "log_lik", "bic", "selected"])
        for e in self.entries:
            writer.writerow([e.s, repr(e.dof), repr(e.log_lik), repr(e.bic),
                             int(e.selected)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as handle:
                handle.write(text)
        return text

    @classmethod
    def from_csv_text(cls, text: str, dof_name: str = "") -> "PruneReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["s", "dof", "log_lik", "bic", "selected"]:
            raise ValidationError("expected header s,dof,log_lik,bic,selected")
        entries = []
        for line in reader:
            if not line:
                continue
            entries.append(
                PruneEntry(s=int(line[0]), dof=float(line[1]),
                           log_lik=float(line[2]), bic=float(line[3]),
                           selected=bool(int(line[4])))
            )
        selected = [e.s for e in entries if e.selected]
        if len(selected) != 1:
            raise ValidationError("report must mark exactly one selected row")
        return cls(dof_name=dof_name, entries=tuple(entries), selected_s=selected[0])


def prune_path(path: ModelPath, dof_spec: DofSpec) -> PruneReport:
    """Select the split count with minimal BIC along the path.

    Ties go to the smallest split count.  Every DoF source charges the
    split-free model exactly p + 1, so sources only differ in how they
    price the searched splits.

    Raises
    ------
    MissingDofError
        If the DoF source cannot price some split count on the path.
    DegenerateFitError
        If a path model is saturated (infinite log-likelihood).
    """
    if not path.models:
        raise ValidationError("empty model path")
    first = path.models[0]
    p, n = first.p, first.n
    rows = []
    best_s = None
    best_bic = math.inf
    for model in path.models:
        if model.fit is None:
            raise ValidationError("path models must carry their fits")
        dof = dof_spec.dof_for(model.s, p, n)
        value = bic(model.fit.log_lik, dof, n)
        rows.append((model.s, dof, model.fit.log_lik, value))
        if value < best_bic:
            best_bic = value
            best_s = model.s
    entries = tuple(
        PruneEntry(s=s, dof=dof, log_lik=ll, bic=b, selected=(s == best_s))
        for s, dof, ll, b in rows
    )
    return PruneReport(dof_name=dof_spec.name, entries=entries, selected_s=best_s)
