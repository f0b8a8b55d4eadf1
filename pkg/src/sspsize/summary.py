"""Posterior summaries for integer-valued draws of the population size."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError

__all__ = [
    "DensityTable",
    "DiscreteSummary",
    "density_table",
    "hpd_set",
    "split_chain_discrepancy",
    "summarize",
]

MIN_DRAWS = 100
SPLIT_CHAIN_THRESHOLD = 0.5


@dataclass(frozen=True)
class DiscreteSummary:
    mean: float
    median: int
    mode: int
    hpd_level: float
    hpd_set: tuple
    hpd_interval_hull: tuple
    mass_captured: float
    n_draws: int

    @property
    def hpd_is_interval(self) -> bool:
        lo, hi = self.hpd_interval_hull
        return len(self.hpd_set) == hi - lo + 1

    def covers(self, value: int) -> bool:
        lo, hi = self.hpd_interval_hull
        return lo <= value <= hi

    def to_dict(self) -> dict:
        lo, hi = self.hpd_interval_hull
        return {
            "mean": self.mean,
            "median": self.median,
            "mode": self.mode,
            "hpd_level": self.hpd_level,
            "hpd_lower": lo,
            "hpd_upper": hi,
            "hpd_is_interval": self.hpd_is_interval,
            "mass_captured": self.mass_captured,
            "n_draws": self.n_draws,
        }


def _as_draws(draws) -> np.ndarray:
    values = getattr(draws, "N", draws)
    values = np.asarray(values)
    if values.size == 0:
        raise ValidationError("no draws to summarize")
    if not np.all(np.equal(np.mod(values, 1), 0)):
        raise ValidationError("draws must be integers")
    return values.astype(np.int64).ravel()


def hpd_set(values: np.ndarray, counts: np.ndarray, level: float) -> tuple[np.ndarray, int]:
    """Greedy highest-mass set: the values reaching ``level`` when taken by
    descending count, ties toward smaller values.  Returns the sorted set and
    the number of draws it holds."""
    total = int(counts.sum())
    order = np.lexsort((values, -counts))
    need = math.ceil(level * total - 1e-9 * total)
    held = np.cumsum(counts[order])
    k = int(np.searchsorted(held, need)) + 1
    return np.sort(values[order[:k]]), int(held[k - 1])


def summarize(draws, level: float = 0.95, warn: bool = True) -> DiscreteSummary:
    """Mean, lower median, smallest mode and HPD region of integer draws.

    ``draws`` is an array of N values or a :class:`PosteriorDraws`; in the
    latter case a warning is raised when chain halves disagree.
    """
    if not 0 < level < 1:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    x = _as_draws(draws)
    if x.size < MIN_DRAWS:
        raise ValidationError(f"need at least {MIN_DRAWS} draws, got {x.size}")
    if warn and hasattr(draws, "chain"):
        gap = split_chain_discrepancy(x, np.asarray(draws.chain))
        if gap > SPLIT_CHAIN_THRESHOLD:
            warnings.warn(
                f"chain halves disagree by {gap:.2f} posterior sd; run longer chains", RuntimeWarning, stacklevel=2
            )
    values, counts = np.unique(x, return_counts=True)
    chosen, held = hpd_set(values, counts, level)
    ordered = np.sort(x)
    return DiscreteSummary(
        mean=float(x.mean()),
        median=int(ordered[(x.size - 1) // 2]),
        mode=int(values[np.argmax(counts)]),
        hpd_level=float(level),
        hpd_set=tuple(int(v) for v in chosen),
        hpd_interval_hull=(int(chosen[0]), int(chosen[-1])),
        mass_captured=held / x.size,
        n_draws=int(x.size),
    )


def split_chain_discrepancy(x, chain=None) -> float:
    """Largest gap between first-half and second-half means of any chain,
    in units of the pooled posterior sd."""
    x = np.asarray(x, dtype=float)
    chain = np.zeros(x.size, dtype=np.int64) if chain is None else np.asarray(chain)
    sd = x.std()
    if sd == 0:
        return 0.0
    worst = 0.0
    for c in np.unique(chain):
        xc = x[chain == c]
        half = xc.size // 2
        if half < 2:
            continue
        worst = max(worst, abs(xc[:half].mean() - xc[half : 2 * half].mean()) / sd)
    return worst


@dataclass(frozen=True)
class DensityTable:
    N: np.ndarray
    prior_mass: np.ndarray
    posterior_mass: np.ndarray
    step: int

    def rows(self):
        return list(zip(self.N.tolist(), self.prior_mass.tolist(), self.posterior_mass.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "prior_mass", "posterior_mass"])
            for N, p, q in self.rows():
                w.writerow([N, repr(p), repr(q)])


def density_table(prior, draws, step: int = 1, upper: int | None = None) -> DensityTable:
    """Binned prior and posterior masses on a common grid for overlay plots.

    Bins are ``[N, N + step)`` starting at the sample size.  The grid runs to
    ``upper`` (default: the larger of the top draw and the prior's 99%
    quantile); both columns are renormalized over the emitted grid.
    """
    if step < 1:
        raise ValidationError("step must be a positive integer")
    x = _as_draws(draws)
    lo = int(prior.n)
    if x.min() < lo:
        raise ValidationError(f"draw {x.min()} lies below the prior's sample size {lo}")
    if upper is None:
        upper = max(int(x.max()), int(prior.quantile(0.99)))
    upper = min(int(upper), int(prior.N_max))
    n_bins = (upper - lo) // step + 1
    hi = lo + n_bins * step - 1
    edges = lo + step * np.arange(n_bins)
    prior_masses = prior.masses(lo, min(hi, int(prior.N_max)))
    prior_binned = np.add.reduceat(prior_masses, edges - lo)
    inside = x[x <= hi]
    post = np.bincount((inside - lo) // step, minlength=n_bins).astype(float)
    if post.sum() == 0 or prior_binned.sum() == 0:
        raise ValidationError("no posterior or prior mass falls on the emitted grid")
    return DensityTable(
        N=edges,
        prior_mass=prior_binned / prior_binned.sum(),
        posterior_mass=post / post.sum(),
        step=int(step),
    )
