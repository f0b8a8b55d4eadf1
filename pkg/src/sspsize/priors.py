"""Priors for the population size N and for the unit-size model parameters.

Population-size priors live on the integer grid ``{n, ..., N_max}``:

* ``flat``  -- constant mass.
* ``fjj``   -- ``(N - l)! / N!``; ``l = 1`` gives the ``1/N`` reference prior.
* ``beta``  -- a Beta(alpha, beta) prior on the sample proportion ``n/N``,
  carried over to N by change of variables and evaluated at the integers.

``N_max`` may be very large (the beta prior has polynomial tails), so sums
over the grid are computed exactly on a cached head segment and by
Euler-Maclaurin beyond it; nothing here materializes the full grid.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .exceptions import ElicitationError, ValidationError
from .sizedist import UnitSizeModel

__all__ = [
    "DiscreteEtaPrior",
    "EtaPrior",
    "SizePrior",
    "TabulatedSizePrior",
    "beta_from_elicitation",
    "log_prior_N",
    "log_prior_eta",
]

PRIOR_KINDS = ("flat", "fjj", "beta")
TAIL_MASS = 1e-6
MIN_GRID_FACTOR = 20
HARD_N_MAX = 10**12
_HEAD = 2_000_000


def _as_array(N):
    arr = np.asarray(N)
    return arr.astype(float), arr.ndim == 0


@dataclass(frozen=True)
class SizePrior:
    """Prior over the population size on ``{n, ..., N_max}``.

    Use :meth:`flat`, :meth:`factorial` or :meth:`beta_proportion` to build
    one with the default ``N_max`` rule (prior tail below ``1e-6`` and at
    least ``20 n``).
    """

    kind: str
    n: int
    N_max: int
    l: int = 1
    alpha: float = 1.0
    beta: float = 1.0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValidationError(f"unknown prior kind {self.kind!r}; expected one of {PRIOR_KINDS}")
        if self.n < 1:
            raise ValidationError(f"sample size must be positive, got {self.n}")
        if self.N_max <= self.n:
            raise ValidationError(f"N_max ({self.N_max}) must exceed the sample size ({self.n})")
        if self.kind == "fjj" and not 1 <= self.l <= self.n:
            raise ValidationError(f"fjj prior needs 1 <= l <= n, got l={self.l}")
        if self.kind == "beta" and not (self.alpha > 0 and self.beta > 0):
            raise ValidationError(f"beta prior needs alpha, beta > 0, got ({self.alpha}, {self.beta})")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "N_max", int(self.N_max))

    # ------------------------------------------------------------------ #
    # constructors
    # ------------------------------------------------------------------ #

    @classmethod
    def flat(cls, n: int, N_max: int | None = None) -> "SizePrior":
        return cls("flat", n, N_max or MIN_GRID_FACTOR * n)

    @classmethod
    def factorial(cls, n: int, l: int = 1, N_max: int | None = None) -> "SizePrior":
        if N_max is None:
            N_max = MIN_GRID_FACTOR * n
            if l >= 2:
                # tail sum of (N-l)!/N! from M on is T(M) = (M-l)!/((l-1)(M-1)!)
                def log_t(m):
                    return special.gammaln(m - l + 1) - special.gammaln(m) - math.log(l - 1)

                target = log_t(n) + math.log(TAIL_MASS)
                lo, hi = n, n
                while log_t(hi) > target and hi < HARD_N_MAX:
                    lo, hi = hi, min(hi * 2, HARD_N_MAX)
                while hi - lo > 1:
                    mid = (lo + hi) // 2
                    lo, hi = (mid, hi) if log_t(mid) > target else (lo, mid)
                N_max = max(N_max, hi)
        return cls("fjj", n, N_max, l=l)

    @classmethod
    def beta_proportion(cls, n: int, alpha: float = 1.0, beta: float = 1.0, N_max: int | None = None) -> "SizePrior":
        if N_max is None:
            x_tail = special.betaincinv(alpha, beta, TAIL_MASS)
            bound = HARD_N_MAX if x_tail <= 0 else min(math.ceil(n / x_tail), HARD_N_MAX)
            N_max = max(MIN_GRID_FACTOR * n, bound)
        return cls("beta", n, N_max, alpha=float(alpha), beta=float(beta))

    # ------------------------------------------------------------------ #
    # densities
    # ------------------------------------------------------------------ #

    def log_prior_N(self, N):
        """Unnormalized log prior mass; ``-inf`` off the grid."""
        x, scalar = _as_array(N)
        out = np.full(x.shape, -np.inf)
        on = (x >= self.n) & (x <= self.N_max)
        xs = x[on]
        if self.kind == "flat":
            vals = np.zeros_like(xs)
        elif self.kind == "fjj":
            vals = special.gammaln(xs - self.l + 1) - special.gammaln(xs + 1)
        else:
            vals = self._beta_log_density(xs)
        out[on] = vals
        return float(out) if scalar else out

    def _beta_log_density(self, xs):
        a, b, n = self.alpha, self.beta, self.n
        const = a * math.log(n) - special.betaln(a, b)
        interior = xs > n
        vals = np.empty_like(xs)
        xi = xs[interior]
        vals[interior] = const + (b - 1) * np.log(xi - n) - (a + b) * np.log(xi)
        if b > 1:
            vals[~interior] = -np.inf
        elif b == 1:
            vals[~interior] = const - (a + 1) * math.log(n)
        else:
            # density diverges at N = n: use the mass of [n, n+1) instead
            vals[~interior] = math.log(special.betainc(b, a, 1.0 / (n + 1)))
        return vals

    def log_increment_bound(self, N: float) -> float:
        """Upper bound on ``log p(M+1) - log p(M)`` valid for all ``M >= N > n``."""
        if self.kind == "beta" and self.beta > 1:
            return (self.beta - 1) / (N - self.n)
        return 0.0

    # ------------------------------------------------------------------ #
    # grid sums
    # ------------------------------------------------------------------ #

    def _head(self):
        head = self._cache.get("head")
        if head is None:
            hi = min(self.N_max, self.n + _HEAD - 1)
            grid = np.arange(self.n, hi + 1)
            lp = self.log_prior_N(grid)
            shift = float(np.max(lp))
            cum = np.cumsum(np.exp(lp - shift))
            head = (hi, shift, cum)
            self._cache["head"] = head
        return head

    def _tail_sum(self, a: int, b: int, shift: float) -> float:
        """``sum_{N=a}^{b} exp(log_prior_N(N) - shift)`` for a beyond the head."""
        if self.kind == "flat":
            return (b - a + 1) * math.exp(-shift)
        if self.kind == "fjj":
            if self.l == 1:
                total = special.digamma(b + 1) - special.digamma(a)
            else:
                def t(m):
                    return math.exp(special.gammaln(m - self.l + 1) - special.gammaln(m) - math.log(self.l - 1))

                total = t(a) - t(b + 1)
            return total * math.exp(-shift)
        n, al, be = self.n, self.alpha, self.beta

        def f(m):
            return math.exp(self.log_prior_N(m) - shift)

        def fprime(m):
            return f(m) * ((be - 1) / (m - n) - (al + be) / m)

        integral = special.betainc(al, be, n / a) - special.betainc(al, be, n / b)
        return integral * math.exp(-shift) + 0.5 * (f(a) + f(b)) + (fprime(b) - fprime(a)) / 12.0

    def _partial_unnorm(self, lo: int, hi: int) -> float:
        lo, hi = max(int(lo), self.n), min(int(hi), self.N_max)
        if hi < lo:
            return 0.0
        head_hi, shift, cum = self._head()
        total = 0.0
        if lo <= head_hi:
            top = min(hi, head_hi)
            total += cum[top - self.n] - (cum[lo - self.n - 1] if lo > self.n else 0.0)
        if hi > head_hi:
            total += self._tail_sum(max(lo, head_hi + 1), hi, shift)
        return float(total)

    @functools.cached_property
    def _log_norm(self) -> float:
        return math.log(self._partial_unnorm(self.n, self.N_max)) + self._head()[1]

    def log_mass(self, N):
        """Log prior mass normalized over the grid."""
        return self.log_prior_N(N) - self._log_norm

    def masses(self, lo: int | None = None, hi: int | None = None) -> np.ndarray:
        """Normalized masses on ``lo..hi`` (defaults to the whole grid)."""
        lo = self.n if lo is None else lo
        hi = self.N_max if hi is None else hi
        if hi - lo > 5 * 10**7:
            raise ValidationError(f"refusing to materialize {hi - lo + 1} grid points")
        return np.exp(self.log_mass(np.arange(lo, hi + 1)))

    def partial_mass(self, lo: int, hi: int) -> float:
        """Normalized mass of ``lo..hi``."""
        return self._partial_unnorm(lo, hi) / math.exp(self._log_norm - self._head()[1])

    def cdf(self, k: int) -> float:
        return self.partial_mass(self.n, k)

    def quantile(self, q: float) -> int:
        """Smallest grid value with cumulative mass at least ``q``."""
        if not 0 < q <= 1:
            raise ValidationError(f"quantile level must be in (0, 1], got {q}")
        head_hi, _, cum = self._head()
        z = self._partial_unnorm(self.n, self.N_max)
        target = q * z
        if cum[-1] >= target:
            return self.n + int(np.searchsorted(cum, target, side="left"))
        lo, hi = head_hi, self.N_max
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self._partial_unnorm(self.n, mid) >= target:
                hi = mid
            else:
                lo = mid
        return hi

    @property
    def median(self) -> int:
        return self.quantile(0.5)

    @property
    def mode(self) -> int:
        head_hi = self._head()[0]
        lp = self.log_prior_N(np.arange(self.n, head_hi + 1))
        return self.n + int(np.argmax(lp))

    def describe(self) -> dict:
        out = {"kind": self.kind, "n": self.n, "N_max": self.N_max}
        if self.kind == "fjj":
            out["l"] = self.l
        if self.kind == "beta":
            out.update(alpha=self.alpha, beta=self.beta)
        return out


class TabulatedSizePrior:
    """Arbitrary prior given as log masses on ``{n, ..., N_max}``."""

    kind = "tabulated"

    def __init__(self, n: int, log_masses):
        lm = np.asarray(log_masses, dtype=float)
        if lm.ndim != 1 or lm.size < 1:
            raise ValidationError("log_masses must be a non-empty 1-D array")
        if not np.isfinite(lm).any():
            raise ValidationError("tabulated prior has no mass")
        self.n = int(n)
        self.N_max = self.n + lm.size - 1
        top = lm.max()
        self._log_masses = lm - (top + math.log(np.exp(lm - top).sum()))

    @classmethod
    def point_mass(cls, n: int, at: int) -> "TabulatedSizePrior":
        if at < n:
            raise ValidationError(f"point mass at {at} lies below the sample size {n}")
        lm = np.full(at - n + 1, -np.inf)
        lm[-1] = 0.0
        return cls(n, lm)

    def log_prior_N(self, N):
        x, scalar = _as_array(N)
        out = np.full(x.shape, -np.inf)
        on = (x >= self.n) & (x <= self.N_max)
        out[on] = self._log_masses[x[on].astype(np.int64) - self.n]
        return float(out) if scalar else out

    log_mass = log_prior_N

    def log_increment_bound(self, N: float) -> float:
        return math.inf

    def masses(self, lo=None, hi=None):
        lo = self.n if lo is None else lo
        hi = self.N_max if hi is None else hi
        return np.exp(self.log_prior_N(np.arange(lo, hi + 1)))

    def partial_mass(self, lo, hi):
        return float(self.masses(max(lo, self.n), min(hi, self.N_max)).sum()) if hi >= lo else 0.0

    def cdf(self, k):
        return self.partial_mass(self.n, k)

    def quantile(self, q):
        cum = np.cumsum(np.exp(self._log_masses))
        return self.n + int(np.searchsorted(cum, q * cum[-1], side="left"))

    @property
    def median(self):
        return self.quantile(0.5)

    @property
    def mode(self):
        return self.n + int(np.argmax(self._log_masses))

    def describe(self):
        return {"kind": self.kind, "n": self.n, "N_max": self.N_max}


def log_prior_N(prior, N):
    return prior.log_prior_N(N)


# ---------------------------------------------------------------------- #
# elicitation
# ---------------------------------------------------------------------- #


def beta_from_elicitation(
    n: int,
    *,
    mode: float | None = None,
    median: float | None = None,
    mean: float | None = None,
    lower_quartile: float | None = None,
    alpha: float = 1.0,
) -> tuple[float, float]:
    """Shape parameters of the sample-proportion Beta prior from a target.

    Supported targets: ``mode`` or ``median`` with ``alpha = 1`` (closed
    forms), or ``mean`` together with ``lower_quartile`` (both shapes solved
    numerically on the continuous prior).
    """
    if mean is not None or lower_quartile is not None:
        if mean is None or lower_quartile is None:
            raise ElicitationError("mean and lower_quartile must be given together")
        return _beta_from_mean_quartile(n, mean, lower_quartile)
    if alpha != 1.0:
        raise ElicitationError("mode/median closed forms require alpha = 1")
    if mode is not None:
        if mode < n:
            raise ElicitationError(f"prior mode {mode} lies below the sample size {n}")
        return 1.0, 2.0 * mode / n - 1.0
    if median is not None:
        if median <= n:
            raise ElicitationError(f"prior median {median} must exceed the sample size {n}")
        return 1.0, math.log(0.5) / math.log1p(-n / median)
    raise ElicitationError("no elicitation target given")


def _beta_from_mean_quartile(n, mean, lower_quartile):
    if not n < lower_quartile < mean:
        raise ElicitationError(
            f"need n < lower_quartile < mean, got n={n}, lower_quartile={lower_quartile}, mean={mean}"
        )
    # continuous mean of N is n (a + b - 1) / (a - 1) for a > 1
    ratio = mean / n - 1.0
    x_q = n / lower_quartile

    def gap(a):
        return special.betainc(a, ratio * (a - 1.0), x_q) - 0.75

    lo, hi = 1.0 + 1e-9, 2.0
    while gap(hi) * gap(lo) > 0 and hi < 1e6:
        hi *= 2.0
    if gap(hi) * gap(lo) > 0:
        raise ElicitationError(f"no Beta prior has mean {mean} and lower quartile {lower_quartile}")
    a = optimize.brentq(gap, lo, hi, xtol=1e-12, rtol=1e-14)
    return float(a), float(ratio * (a - 1.0))


# ---------------------------------------------------------------------- #
# unit-size parameter priors
# ---------------------------------------------------------------------- #


@dataclass(frozen=True)
class EtaPrior:
    """Normal / scaled-inverse-chi prior on the unit-size mean and sd.

    ``mu | sigma ~ Normal(mu0, sigma**2 / df_mean)`` and
    ``sigma**2 ~ Scaled-Inv-Chi2(df_sigma, sigma0**2)``, expressed as a density
    over ``(mu, sigma)``.
    """

    mu0: float = 7.0
    df_mean: float = 1.0
    sigma0: float = 3.0
    df_sigma: float = 5.0

    def __post_init__(self):
        if min(self.mu0, self.df_mean, self.sigma0, self.df_sigma) <= 0:
            raise ValidationError(f"eta prior hyperparameters must be positive: {self}")

    def log_density(self, mu: float, sigma: float) -> float:
        if not sigma > 0:
            return -math.inf
        sd_mu = sigma / math.sqrt(self.df_mean)
        log_mu = -0.5 * ((mu - self.mu0) / sd_mu) ** 2 - math.log(sd_mu) - 0.5 * math.log(2 * math.pi)
        nu, s2 = self.df_sigma, self.sigma0**2
        var = sigma * sigma
        log_var = (
            0.5 * nu * math.log(0.5 * nu * s2)
            - math.lgamma(0.5 * nu)
            - (0.5 * nu + 1) * math.log(var)
            - 0.5 * nu * s2 / var
        )
        return log_mu + log_var + math.log(2 * sigma)

    def log_density_mean(self, mu: float) -> float:
        """Prior on the mean alone, for one-parameter families (sigma at sigma0)."""
        sd_mu = self.sigma0 / math.sqrt(self.df_mean)
        return -0.5 * ((mu - self.mu0) / sd_mu) ** 2 - math.log(sd_mu) - 0.5 * math.log(2 * math.pi)


def log_prior_eta(prior: EtaPrior, mu: float, sigma: float) -> float:
    return prior.log_density(mu, sigma)


class DiscreteEtaPrior:
    """Prior supported on a finite list of unit-size models."""

    def __init__(self, models, weights=None):
        self.models = tuple(models)
        if not self.models:
            raise ValidationError("DiscreteEtaPrior needs at least one model")
        caps = {m.support_cap for m in self.models}
        if len(caps) != 1:
            raise ValidationError("all models in a DiscreteEtaPrior must share a support cap")
        w = np.ones(len(self.models)) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (len(self.models),) or np.any(w < 0) or w.sum() <= 0:
            raise ValidationError("weights must be nonnegative, one per model, not all zero")
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(w / w.sum())

    @property
    def support_cap(self) -> int:
        return self.models[0].support_cap

    def start_index(self) -> int:
        return int(np.argmax(self.log_weights))


def is_discrete(prior) -> bool:
    return isinstance(prior, DiscreteEtaPrior)

