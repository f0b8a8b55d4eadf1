"""Zero-truncated parametric models for unit sizes (personal network degrees).

Three families are supported, all renormalized over ``{1, ..., support_cap}``:

``"cmp"``
    Conway-Maxwell-Poisson, natural parameters ``(lam, nu)`` with
    unnormalized mass ``lam**j / (j!)**nu``.
``"ztp"``
    Zero-truncated Poisson, natural parameter ``(lam,)``.
``"ztnb"``
    Zero-truncated negative binomial, natural parameters ``(r, p)`` in the
    scipy convention (untruncated mean ``r * (1 - p) / p``).

Every family can be built from its mean and standard deviation, which are
always the moments of the *truncated* mass function actually used.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .exceptions import InfeasibleMomentsError, TiltedSamplingError, ValidationError

__all__ = [
    "FAMILIES",
    "UnitSizeModel",
    "default_support_cap",
    "gamma_tilt",
    "pmf",
    "sample",
    "solve_natural_params",
    "tilted_sample",
]

FAMILIES = ("cmp", "ztp", "ztnb")
N_PARAMS = {"cmp": 2, "ztp": 1, "ztnb": 2}

CAP_TAIL = 1e-10
MAX_TILT_ATTEMPTS = 10**6
NU_BOUNDS = (1e-4, 100.0)
R_BOUNDS = (1e-6, 1e8)
_MAX_SUPPORT = 2**22


@functools.lru_cache(maxsize=128)
def _support(cap: int) -> tuple[np.ndarray, np.ndarray]:
    j = np.arange(1, cap + 1, dtype=float)
    log_fact = gammaln(j + 1.0)
    j.flags.writeable = False
    log_fact.flags.writeable = False
    return j, log_fact


@functools.lru_cache(maxsize=128)
def _basis(cap: int) -> np.ndarray:
    j, log_fact = _support(cap)
    basis = np.vstack([j, j * j, log_fact])
    basis.flags.writeable = False
    return basis


def _lse(x: np.ndarray) -> float:
    top = x.max()
    return float(top + math.log(np.exp(x - top).sum()))


def _log_terms(family: str, params, j: np.ndarray, log_fact: np.ndarray) -> np.ndarray:
    if family == "cmp":
        lam, nu = params
        return j * math.log(lam) - nu * log_fact
    if family == "ztp":
        (lam,) = params
        return j * math.log(lam) - log_fact
    r, p = params
    return gammaln(j + r) - gammaln(r) - log_fact + j * math.log1p(-p)


def _check_params(family: str, params) -> tuple[float, ...]:
    if family not in FAMILIES:
        raise ValidationError(f"unknown size family {family!r}; expected one of {FAMILIES}")
    params = tuple(float(x) for x in params)
    if len(params) != N_PARAMS[family]:
        raise ValidationError(f"{family} takes {N_PARAMS[family]} parameter(s), got {len(params)}")
    if not all(math.isfinite(x) for x in params):
        raise ValidationError(f"non-finite parameters {params} for {family}")
    if family == "ztnb":
        r, p = params
        if r <= 0 or not 0 < p < 1:
            raise ValidationError(f"ztnb needs r > 0 and 0 < p < 1, got {params}")
    elif any(x <= 0 for x in params):
        raise ValidationError(f"{family} parameters must be positive, got {params}")
    return params


def default_support_cap(family: str, params, min_cap: int = 1, tail: float = CAP_TAIL) -> int:
    """Smallest ``j`` whose cumulative mass reaches ``1 - tail``, at least ``min_cap``."""
    params = _check_params(family, params)
    size = max(64, int(min_cap))
    while size <= _MAX_SUPPORT:
        j, log_fact = _support(size)
        terms = _log_terms(family, params, j, log_fact)
        log_z = _lse(terms)
        step = terms[-1] - terms[-2]
        if family == "ztnb":
            step = max(step, math.log1p(-params[1]))
        if step < 0:
            # geometric bound on the mass beyond the evaluated range
            log_tail = terms[-1] - log_z - math.log(-math.expm1(step))
            if log_tail < math.log(tail) - 7:
                cdf = np.cumsum(np.exp(terms - log_z))
                cap = int(np.searchsorted(cdf, 1.0 - tail)) + 1
                return max(min(cap, size), int(min_cap))
        size *= 2
    raise ValidationError(f"{family}{params} has too heavy a tail for a finite support cap")


@dataclass(frozen=True)
class UnitSizeModel:
    """A zero-truncated PMF ``f(j)`` on ``{1, ..., support_cap}``.

    Instances are immutable; the log-PMF, CDF and realized moments are computed
    once at construction.
    """

    family: str
    params: tuple[float, ...]
    support_cap: int
    log_pmf: np.ndarray = field(init=False, repr=False, compare=False)
    mean: float = field(init=False, compare=False)
    sd: float = field(init=False, compare=False)
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        params = _check_params(self.family, self.params)
        cap = int(self.support_cap)
        if cap < 1:
            raise ValidationError(f"support_cap must be >= 1, got {self.support_cap}")
        j, log_fact = _support(cap)
        terms = _log_terms(self.family, params, j, log_fact)
        log_pmf = terms - _lse(terms)
        p = np.exp(log_pmf)
        mean = float(p @ j)
        var = max(float(p @ (j - mean) ** 2), 0.0)
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        log_pmf.flags.writeable = False
        cdf.flags.writeable = False
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "support_cap", cap)
        object.__setattr__(self, "log_pmf", log_pmf)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", math.sqrt(var))
        object.__setattr__(self, "_cdf", cdf)

    # ------------------------------------------------------------------ #
    # constructors
    # ------------------------------------------------------------------ #

    @classmethod
    def from_params(cls, family: str, params, support_cap: int | None = None, min_cap: int = 1):
        if support_cap is None:
            support_cap = default_support_cap(family, params, min_cap=min_cap)
        return cls(family, tuple(params), int(support_cap))

    @classmethod
    def from_moments(
        cls,
        family: str,
        mean: float,
        sd: float | None = None,
        support_cap: int | None = None,
        min_cap: int = 1,
        init=None,
    ) -> "UnitSizeModel":
        """Model whose realized (truncated) moments equal ``mean`` and ``sd``.

        With ``support_cap=None`` the cap follows :func:`default_support_cap`
        applied to the solved parameters, and the parameters are re-solved on
        that cap so the round trip is exact.
        """
        if support_cap is not None:
            params = solve_natural_params(family, mean, sd, support_cap, init=init)
            return cls(family, params, int(support_cap))
        scale = sd if sd is not None else math.sqrt(mean)
        provisional = max(int(min_cap), int(mean + 40 * scale + 30))
        params = solve_natural_params(family, mean, sd, provisional, init=init)
        cap = default_support_cap(family, params, min_cap=min_cap)
        if cap != provisional:
            params = solve_natural_params(family, mean, sd, cap, init=params)
        return cls(family, params, cap)

    # ------------------------------------------------------------------ #
    # evaluation
    # ------------------------------------------------------------------ #

    @property
    def pmf_values(self) -> np.ndarray:
        """Masses at ``1..support_cap``."""
        return np.exp(self.log_pmf)

    def pmf(self, j):
        """Mass at ``j`` (scalar or array); zero beyond the support cap."""
        j_arr = np.asarray(j)
        if np.any(j_arr < 1):
            raise ValidationError(f"unit sizes start at 1, got {j!r}")
        idx = j_arr.astype(np.int64)
        inside = idx <= self.support_cap
        out = np.zeros(idx.shape, dtype=float)
        out[inside] = np.exp(self.log_pmf[idx[inside] - 1])
        return float(out) if out.ndim == 0 else out

    def loglik_counts(self, counts: np.ndarray) -> float:
        """Sum of log f over units tabulated as ``counts[size]`` (index 0 unused)."""
        cap = self.support_cap
        if counts.shape[0] > cap + 1 and counts[cap + 1 :].any():
            return -math.inf
        m = min(counts.shape[0] - 1, cap)
        return float(counts[1 : m + 1] @ self.log_pmf[:m])

    def log_gamma_tilt(self, tilt: float) -> float:
        if tilt < 0:
            raise ValidationError(f"tilt must be nonnegative, got {tilt}")
        if tilt == 0:
            return 0.0
        j, _ = _support(self.support_cap)
        return float(_lse(self.log_pmf - tilt * j))

    def gamma_tilt(self, tilt: float) -> float:
        """``sum_j exp(-tilt * j) f(j)``; equals 1 at ``tilt = 0``."""
        return math.exp(self.log_gamma_tilt(tilt))

    # ------------------------------------------------------------------ #
    # sampling
    # ------------------------------------------------------------------ #

    def sample(self, rng: np.random.Generator, size: int | None = None):
        u = rng.random(1 if size is None else size)
        draws = np.searchsorted(self._cdf, u, side="right") + 1
        return int(draws[0]) if size is None else draws.astype(np.int64)

    def tilted_sample(
        self,
        tilt: float,
        rng: np.random.Generator,
        size: int | None = None,
        max_attempts: int = MAX_TILT_ATTEMPTS,
    ):
        """Draws from ``exp(-tilt * j) f(j)`` by rejection.

        Proposals come from ``f`` and are accepted with probability
        ``exp(-tilt * j)``.  Proposals are generated in batches sized from the
        known acceptance rate; a run of ``max_attempts`` consecutive rejections
        raises :class:`TiltedSamplingError`.
        """
        if tilt < 0:
            raise ValidationError(f"tilt must be nonnegative, got {tilt}")
        m = 1 if size is None else int(size)
        out = np.empty(m, dtype=np.int64)
        if tilt == 0:
            out[:] = self.sample(rng, m)
        else:
            accept_rate = self.gamma_tilt(tilt)
            filled = 0
            dry = 0
            while filled < m:
                need = m - filled
                batch = int(min(need / max(accept_rate, 1e-300) * 1.1 + 16, 2**20))
                proposals = self.sample(rng, batch)
                keep = proposals[rng.random(batch) < np.exp(-tilt * proposals)]
                if keep.size == 0:
                    dry += batch
                    if dry >= max_attempts:
                        raise TiltedSamplingError(
                            f"no acceptance in {dry} proposals at tilt {tilt:.4g} "
                            f"(acceptance rate {accept_rate:.3g})"
                        )
                    continue
                dry = 0
                take = keep[:need]
                out[filled : filled + take.size] = take
                filled += take.size
        return int(out[0]) if size is None else out


# ---------------------------------------------------------------------- #
# moment inversion
# ---------------------------------------------------------------------- #


def _moments_and_grad_cmp(x, j, log_fact):
    """Mean, variance and their Jacobian w.r.t. (log lam, log nu)."""
    nu = math.exp(x[1])
    terms = j * x[0] - nu * log_fact
    w = np.exp(terms - terms.max())
    p = w / w.sum()
    basis = _basis(j.shape[0])
    first = basis @ p
    cov = (basis * p) @ basis.T - first[:, None] * first[None, :]
    m1 = first[0]
    var = cov[0, 0]
    jac = np.array(
        [
            [var, -nu * cov[0, 2]],
            [cov[1, 0] - 2 * m1 * var, -nu * (cov[1, 2] - 2 * m1 * cov[0, 2])],
        ]
    )
    return m1, var, jac


def _solve_small(a, b):
    if a.shape == (1, 1):
        return np.array([b[0] / a[0, 0]]) if a[0, 0] != 0 else None
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if det == 0 or not math.isfinite(det):
        return None
    return np.array([a[1, 1] * b[0] - a[0, 1] * b[1], a[0, 0] * b[1] - a[1, 0] * b[0]]) / det


def _moments_generic(family, x, j, log_fact):
    if family == "ztp":
        params = (math.exp(x[0]),)
    else:
        params = (math.exp(x[0]), 1.0 / (1.0 + math.exp(-x[1])))
    terms = _log_terms(family, params, j, log_fact)
    p = np.exp(terms - _lse(terms))
    m1 = p @ j
    return m1, p @ (j - m1) ** 2


def _to_x(family, params):
    if family == "cmp":
        return np.array([math.log(params[0]), math.log(params[1])])
    if family == "ztp":
        return np.array([math.log(params[0])])
    r, p = params
    return np.array([math.log(r), math.log(p / (1 - p))])


def _from_x(family, x):
    if family == "cmp":
        return (math.exp(x[0]), math.exp(x[1]))
    if family == "ztp":
        return (math.exp(x[0]),)
    return (math.exp(x[0]), 1.0 / (1.0 + math.exp(-x[1])))


def _initial_x(family, mean, sd):
    if family == "ztp":
        return np.array([math.log(mean)])
    var = sd * sd
    if family == "cmp":
        nu = min(max(mean / var, 0.05), 20.0)
        base = max(mean + (nu - 1) / (2 * nu), 0.5)
        return np.array([nu * math.log(base), math.log(nu)])
    p = min(max(mean / var, 1e-3), 1 - 1e-3)
    r = max(mean * p / (1 - p), 1e-3)
    return np.array([math.log(r), math.log(p / (1 - p))])


def _clamp_x(family, x):
    if family == "cmp":
        x[1] = min(max(x[1], math.log(NU_BOUNDS[0])), math.log(NU_BOUNDS[1]))
    elif family == "ztnb":
        x[0] = min(max(x[0], math.log(R_BOUNDS[0])), math.log(R_BOUNDS[1]))
        x[1] = min(max(x[1], -40.0), 40.0)
    else:
        x[0] = min(max(x[0], -700.0), 700.0)
    return x


def _check_feasible(family, mean, sd, cap):
    if not mean > 1:
        raise InfeasibleMomentsError(f"mean must exceed 1 on the zero-truncated support, got {mean}")
    if mean >= cap:
        raise InfeasibleMomentsError(f"mean {mean} must lie below the support cap {cap}")
    if family == "ztp":
        return
    if family == "ztnb" and sd is not None and sd > 0:
        ztp_sd = UnitSizeModel("ztp", solve_natural_params("ztp", mean, None, cap), cap).sd
        if sd <= ztp_sd:
            raise InfeasibleMomentsError(
                f"ztnb requires overdispersion: sd {sd} must exceed the ztp sd {ztp_sd:.4g} at mean {mean}"
            )
    if sd is None or not sd > 0:
        raise InfeasibleMomentsError(f"{family} needs sd > 0, got {sd}")
    var = sd * sd
    frac = mean - math.floor(mean)
    lattice_min = frac * (1 - frac)
    if var <= lattice_min:
        raise InfeasibleMomentsError(
            f"sd {sd} is at or below the integer-lattice minimum {math.sqrt(lattice_min):.4g} for mean {mean}"
        )
    if var >= (mean - 1) * (cap - mean):
        raise InfeasibleMomentsError(f"sd {sd} exceeds the maximum attainable on support 1..{cap}")
    if family == "cmp" and var >= mean * (mean - 1):
        raise InfeasibleMomentsError(
            f"sd {sd} exceeds the geometric limit sqrt(mean*(mean-1)) = {math.sqrt(mean * (mean - 1)):.4g} for cmp"
        )


def solve_natural_params(
    family: str,
    mean: float,
    sd: float | None = None,
    support_cap: int = 200,
    init=None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> tuple[float, ...]:
    """Invert (mean, sd) to natural parameters on ``{1..support_cap}``.

    Damped Newton iteration in log-parameter space.  The Jacobian is analytic
    for ``cmp`` (exponential-family covariances) and finite-difference
    otherwise.  For ``ztp`` the sd is implied by the mean; if given it must
    agree with the implied value.

    Raises
    ------
    InfeasibleMomentsError
        If the pair violates a family bound or the iteration cannot reach it.
    """
    if family not in FAMILIES:
        raise ValidationError(f"unknown size family {family!r}; expected one of {FAMILIES}")
    mean = float(mean)
    sd = None if sd is None else float(sd)
    cap = int(support_cap)
    _check_feasible(family, mean, sd, cap)
    j, log_fact = _support(cap)

    x = _to_x(family, _check_params(family, init)) if init is not None else _initial_x(family, mean, sd)
    x = _clamp_x(family, x.astype(float))
    target_var = None if family == "ztp" else sd * sd

    def evaluate(x):
        if family == "cmp":
            m1, var, jac = _moments_and_grad_cmp(x, j, log_fact)
        else:
            m1, var = _moments_generic(family, x, j, log_fact)
            jac = None
        if family == "ztp":
            res = np.array([m1 - mean])
        else:
            res = np.array([m1 - mean, var - target_var])
        return res, m1, var, jac

    def scaled_norm(res):
        if family == "ztp":
            return abs(res[0]) / mean
        return max(abs(res[0]) / mean, abs(res[1]) / target_var)

    res, m1, var, jac = evaluate(x)
    for _ in range(max_iter):
        done = abs(m1 - mean) <= tol * mean
        if family != "ztp":
            done = done and abs(math.sqrt(max(var, 0.0)) - sd) <= tol * sd
        if done:
            break
        if family == "ztp":
            jac = np.array([[var]])
        elif jac is None:
            h = 1e-6
            jac = np.empty((2, 2))
            for k in range(2):
                xh = x.copy()
                xh[k] += h
                mh, vh = _moments_generic(family, xh, j, log_fact)
                jac[:, k] = (np.array([mh - mean, vh - target_var]) - res) / h
        step = _solve_small(jac, -res)
        if step is None:
            break
        if not np.all(np.isfinite(step)):
            break
        big = np.max(np.abs(step))
        if big > 2.0:
            step *= 2.0 / big
        norm0 = scaled_norm(res)
        t = 1.0
        for _ in range(40):
            x_new = _clamp_x(family, x + t * step)
            res_new, m1_new, var_new, jac_new = evaluate(x_new)
            if scaled_norm(res_new) < norm0:
                break
            t *= 0.5
        else:
            break
        x, res, m1, var, jac = x_new, res_new, m1_new, var_new, jac_new

    ok = abs(m1 - mean) <= 1e-8 * mean
    if family != "ztp":
        ok = ok and abs(math.sqrt(max(var, 0.0)) - sd) <= 1e-8 * sd
    if not ok:
        if family == "cmp" and x[1] >= math.log(NU_BOUNDS[1]) - 1e-9:
            raise InfeasibleMomentsError(
                f"sd {sd} is below the attainable minimum for cmp at mean {mean} (nu would exceed {NU_BOUNDS[1]})"
            )
        if family == "cmp" and x[1] <= math.log(NU_BOUNDS[0]) + 1e-9:
            raise InfeasibleMomentsError(f"sd {sd} is above the attainable maximum for cmp at mean {mean}")
        if family == "ztnb" and x[0] >= math.log(R_BOUNDS[1]) - 1e-9:
            raise InfeasibleMomentsError(
                f"sd {sd} is too small for ztnb at mean {mean}; ztnb requires overdispersion relative to ztp"
            )
        raise InfeasibleMomentsError(
            f"could not match mean={mean}, sd={sd} with {family} on 1..{cap} "
            f"(realized mean={m1:.6g}, sd={math.sqrt(max(var, 0.0)):.6g})"
        )
    params = _from_x(family, x)
    if family == "ztp" and sd is not None:
        implied = math.sqrt(var)
        if abs(implied - sd) > 1e-6 * implied:
            raise InfeasibleMomentsError(
                f"ztp with mean {mean} has sd {implied:.6g}; requested sd {sd} is not attainable"
            )
    return params


# ---------------------------------------------------------------------- #
# functional wrappers
# ---------------------------------------------------------------------- #


def pmf(model: UnitSizeModel, j):
    return model.pmf(j)


def sample(model: UnitSizeModel, rng: np.random.Generator, size: int | None = None):
    return model.sample(rng, size)


def tilted_sample(model: UnitSizeModel, tilt: float, rng: np.random.Generator, size: int | None = None, **kwargs):
    return model.tilted_sample(tilt, rng, size, **kwargs)


def gamma_tilt(tilt: float, model: UnitSizeModel) -> float:
    return model.gamma_tilt(tilt)
