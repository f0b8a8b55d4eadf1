"""Gibbs samplers for the successive-sampling population-size model.

The observed data are unit sizes in the order they were sampled.  Given the
population size ``N``, the unobserved sizes are augmented into the state
together with one exponential latent variable ``psi_k`` per sampled unit,
which turns the ``1/r_k`` factors of the sequence probability into
exponential tilts.  Each sweep updates, in order:

1. the unit-size parameters (random-walk Metropolis-Hastings),
2. the exponential latents ``psi``,
3. ``N`` (exact draw, unobserved sizes summed out) and then the unobserved
   sizes, i.i.d. from ``exp(-u * sum(psi)) f(u)``.

With ``N`` known step 3 reduces to redrawing the unobserved sizes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from .exceptions import ChainFailure, InfeasibleMomentsError, ValidationError
from .priors import DiscreteEtaPrior, EtaPrior
from .sizedist import FAMILIES, MAX_TILT_ATTEMPTS, N_PARAMS, UnitSizeModel

__all__ = [
    "ChainState",
    "McmcConfig",
    "ObservedSequence",
    "PosteriorDraws",
    "r_sequence",
    "run_known_N",
    "run_unknown_N",
    "sample_N",
    "sample_eta_mh",
    "sample_psi",
    "sample_unobs",
]

STEP_NAMES = ("eta", "psi", "unobs")
_N_STOP_GAP = 50.0
_MAX_N_GRID = 5 * 10**7


@dataclass(frozen=True)
class ObservedSequence:
    """Unit sizes in recruitment order, with an optional binary trait."""

    u_obs: np.ndarray
    trait: np.ndarray | None = None

    def __post_init__(self):
        u = np.asarray(self.u_obs)
        if u.ndim != 1 or u.size < 1:
            raise ValidationError("u_obs must be a non-empty 1-D sequence")
        if not np.all(np.equal(np.mod(u, 1), 0)):
            raise ValidationError("unit sizes must be integers")
        u = u.astype(np.int64)
        if np.any(u < 1):
            bad = int(np.argmax(u < 1))
            raise ValidationError(f"unit sizes must be >= 1 (position {bad} has {u[bad]})")
        u.flags.writeable = False
        object.__setattr__(self, "u_obs", u)
        if self.trait is not None:
            t = np.asarray(self.trait).astype(bool)
            if t.shape != u.shape:
                raise ValidationError(f"trait has length {t.size}, expected {u.size}")
            t.flags.writeable = False
            object.__setattr__(self, "trait", t)

    @property
    def n(self) -> int:
        return int(self.u_obs.size)

    def __len__(self):
        return self.n


@dataclass
class McmcConfig:
    burn_in: int = 1000
    thin: int = 10
    n_draws: int = 2000
    seed: int = 0
    mu_scale: float | None = None  # defaults to 0.1 * sigma0
    log_sigma_scale: float = 0.2
    N_max: int | None = None
    parallel_chains: int = 1
    n_jobs: int = 1
    keep_unobs: bool = False
    support_cap: int | None = None
    max_tilt_attempts: int = MAX_TILT_ATTEMPTS
    step_order: tuple = STEP_NAMES

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValidationError("burn_in must be nonnegative")
        for name in ("thin", "n_draws", "parallel_chains", "n_jobs", "max_tilt_attempts"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.mu_scale is not None and self.mu_scale < 0 or self.log_sigma_scale < 0:
            raise ValidationError("proposal scales must be nonnegative")
        self.step_order = tuple(self.step_order)
        if sorted(self.step_order) != sorted(STEP_NAMES):
            raise ValidationError(f"step_order must be a permutation of {STEP_NAMES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["step_order"] = list(self.step_order)
        return d


@dataclass
class ChainState:
    N: int
    model: UnitSizeModel
    u_unobs: np.ndarray
    psi: np.ndarray
    eta_index: int = 0

    @property
    def mu(self) -> float:
        return self.model.mean

    @property
    def sigma(self) -> float:
        return self.model.sd


# ---------------------------------------------------------------------- #
# single-step updates
# ---------------------------------------------------------------------- #


def r_sequence(u_obs, u_unobs) -> np.ndarray:
    """Total size remaining before each draw: ``r_k = sum(all) - sum(u_obs[:k-1])``."""
    u_obs = np.asarray(u_obs, dtype=np.int64)
    total = int(u_obs.sum()) + int(np.asarray(u_unobs, dtype=np.int64).sum())
    removed = np.concatenate(([0], np.cumsum(u_obs)[:-1]))
    return (total - removed).astype(float)


def sample_psi(data: ObservedSequence, state: ChainState, rng: np.random.Generator) -> np.ndarray:
    """Exponential latents with rates ``r_k``."""
    return rng.standard_exponential(data.n) / r_sequence(data.u_obs, state.u_unobs)


def sample_unobs(state: ChainState, n: int, rng: np.random.Generator, max_attempts: int = MAX_TILT_ATTEMPTS):
    """Unobserved sizes, i.i.d. from ``exp(-u * sum(psi)) f(u)``."""
    count = state.N - n
    if count == 0:
        return np.empty(0, dtype=np.int64)
    return state.model.tilted_sample(float(state.psi.sum()), rng, size=count, max_attempts=max_attempts)


def _size_counts(data: ObservedSequence, u_unobs: np.ndarray, cap: int) -> np.ndarray:
    top = max(cap, int(data.u_obs.max()), int(u_unobs.max()) if u_unobs.size else 0)
    return np.bincount(data.u_obs, minlength=top + 1) + np.bincount(u_unobs, minlength=top + 1)


def _log_prior(eta_prior, model: UnitSizeModel, index: int) -> float:
    if isinstance(eta_prior, DiscreteEtaPrior):
        return float(eta_prior.log_weights[index])
    if N_PARAMS[model.family] == 1:
        return eta_prior.log_density_mean(model.mean)
    return eta_prior.log_density(model.mean, model.sd)


def sample_eta_mh(
    data: ObservedSequence,
    state: ChainState,
    eta_prior,
    rng: np.random.Generator,
    mu_scale: float,
    log_sigma_scale: float,
):
    """One Metropolis-Hastings update of the unit-size parameters.

    Targets ``prior(eta) * prod_{all N units} f(u | eta)``.  The mean moves by
    a Gaussian random walk and the sd by a log-scale Gaussian random walk
    (Hastings factor ``sigma'/sigma``).  Infeasible proposals are rejected.
    For a :class:`DiscreteEtaPrior` the proposal is uniform over the other
    support points.

    Returns ``(model, eta_index, accepted)``.
    """
    model = state.model
    counts = _size_counts(data, state.u_unobs, model.support_cap)
    log_cur = _log_prior(eta_prior, model, state.eta_index) + model.loglik_counts(counts)
    if not math.isfinite(log_cur):
        raise ChainFailure(f"non-finite log posterior at the current state (mu={model.mean:.4g}, sd={model.sd:.4g})")

    if isinstance(eta_prior, DiscreteEtaPrior):
        k = len(eta_prior.models)
        u = rng.random()
        if k == 1:
            return model, state.eta_index, True
        index = (state.eta_index + 1 + int(rng.integers(k - 1))) % k
        proposal = eta_prior.models[index]
        log_new = float(eta_prior.log_weights[index]) + proposal.loglik_counts(counts)
        accept = u < math.exp(min(0.0, log_new - log_cur))
        return (proposal, index, True) if accept else (model, state.eta_index, False)

    two_param = N_PARAMS[model.family] == 2
    z = rng.standard_normal(2)
    u = rng.random()
    mu_new = model.mean + mu_scale * z[0]
    sd_new = model.sd * math.exp(log_sigma_scale * z[1]) if two_param else None
    if mu_scale * z[0] == 0 and (not two_param or log_sigma_scale * z[1] == 0):
        proposal = model
    else:
        try:
            proposal = UnitSizeModel.from_moments(model.family, mu_new, sd_new, model.support_cap, init=model.params)
        except InfeasibleMomentsError:
            return model, 0, False
    log_new = _log_prior(eta_prior, proposal, 0) + proposal.loglik_counts(counts)
    log_ratio = log_new - log_cur
    if two_param and proposal is not model:
        log_ratio += math.log(proposal.sd) - math.log(model.sd)
    accept = u < math.exp(min(0.0, log_ratio))
    return (proposal, 0, True) if accept else (model, 0, False)


class _NGrid:
    """Lazily extended ``log N!/(N-n)! + log prior(N)`` on ``n..limit``."""

    def __init__(self, n: int, size_prior, limit: int):
        self.n = n
        self.prior = size_prior
        self.limit = int(limit)
        self.base = np.empty(0)
        self.offsets = np.empty(0)

    def upto(self, hi: int) -> tuple[np.ndarray, np.ndarray]:
        have = self.n + self.base.size - 1
        if hi > have:
            new_hi = min(self.limit, max(hi, self.n + 2 * self.base.size))
            N = np.arange(have + 1, new_hi + 1, dtype=float)
            block = gammaln(N + 1) - gammaln(N - self.n + 1) + self.prior.log_prior_N(N)
            self.base = np.concatenate([self.base, block])
            self.offsets = np.arange(self.base.size, dtype=float)
        m = hi - self.n + 1
        return self.base[:m], self.offsets[:m]


def sample_N(
    n: int,
    sum_psi: float,
    model: UnitSizeModel,
    size_prior,
    rng: np.random.Generator,
    grid: _NGrid | None = None,
    N_limit: int | None = None,
) -> int:
    """Exact draw of N from ``N!/(N-n)! * prior(N) * gamma(sum_psi)**(N-n)``.

    Weights are evaluated on a growing prefix of ``n..N_max``; evaluation
    stops once the log weight is ``50`` below its maximum and is provably
    decreasing from there on, so the neglected mass is below ``e**-50``
    relative.
    """
    limit = size_prior.N_max if N_limit is None else min(size_prior.N_max, N_limit)
    if grid is None:
        grid = _NGrid(n, size_prior, limit)
    log_gamma = model.log_gamma_tilt(sum_psi)
    hi = min(limit, n + 1023)
    while True:
        base, offsets = grid.upto(hi)
        logw = base + offsets * log_gamma
        top = logw.max()
        if hi >= limit:
            break
        slope = n / (hi + 1 - n) + size_prior.log_increment_bound(hi) + log_gamma
        if slope < 0 and logw[-1] < top - _N_STOP_GAP:
            break
        hi = min(limit, n + 2 * (hi - n + 1))
        if hi - n > _MAX_N_GRID:
            raise ChainFailure(f"N full conditional does not decay below {hi}; set a finite N_max")
    if not math.isfinite(top):
        raise ChainFailure("all N weights are zero (degenerate state)")
    cum = np.cumsum(np.exp(logw - top))
    return n + int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))


# ---------------------------------------------------------------------- #
# chains
# ---------------------------------------------------------------------- #


@dataclass
class PosteriorDraws:
    """Post burn-in, thinned draws from one or more chains."""

    N: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    mean_size: np.ndarray
    iteration: np.ndarray
    chain: np.ndarray
    acceptance: dict = field(default_factory=dict)
    unobs: list | None = None
    n: int = 0
    family: str = "cmp"

    def __len__(self):
        return int(self.N.size)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(list(self.acceptance.values()))) if self.acceptance else float("nan")

    @classmethod
    def merge(cls, parts) -> "PosteriorDraws":
        parts = sorted(parts, key=lambda p: int(p.chain[0]) if len(p) else -1)
        unobs = None
        if all(p.unobs is not None for p in parts):
            unobs = [u for p in parts for u in p.unobs]
        acceptance = {}
        for p in parts:
            acceptance.update(p.acceptance)
        return cls(
            N=np.concatenate([p.N for p in parts]),
            mu=np.concatenate([p.mu for p in parts]),
            sigma=np.concatenate([p.sigma for p in parts]),
            mean_size=np.concatenate([p.mean_size for p in parts]),
            iteration=np.concatenate([p.iteration for p in parts]),
            chain=np.concatenate([p.chain for p in parts]),
            acceptance=acceptance,
            unobs=unobs,
            n=parts[0].n,
            family=parts[0].family,
        )

    def summary(self, level: float = 0.95):
        from .summary import summarize

        return summarize(self.N, level)


def _initial_model(data, eta_prior, family, config) -> tuple[UnitSizeModel, int]:
    if isinstance(eta_prior, DiscreteEtaPrior):
        if data.u_obs.max() > eta_prior.support_cap:
            raise ValidationError(
                f"observed size {data.u_obs.max()} exceeds the discrete prior's support cap {eta_prior.support_cap}"
            )
        index = eta_prior.start_index()
        return eta_prior.models[index], index
    if family not in FAMILIES:
        raise ValidationError(f"unknown size family {family!r}")
    min_cap = 3 * int(data.u_obs.max())
    sd0 = eta_prior.sigma0 if N_PARAMS[family] == 2 else None
    try:
        model = UnitSizeModel.from_moments(family, eta_prior.mu0, sd0, config.support_cap, min_cap=min_cap)
    except InfeasibleMomentsError as exc:
        raise ValidationError(f"prior centre (mu0, sigma0) is not a valid {family} model: {exc}") from exc
    if config.support_cap is not None and data.u_obs.max() > config.support_cap:
        raise ValidationError(f"observed size {data.u_obs.max()} exceeds support_cap {config.support_cap}")
    return model, 0


def _run_chain(data, eta_prior, config, family, chain, size_prior=None, N_fixed=None) -> PosteriorDraws:
    rng = np.random.default_rng([config.seed, chain])
    n = data.n
    model, eta_index = _initial_model(data, eta_prior, family, config)
    if isinstance(eta_prior, EtaPrior):
        mu_scale = 0.1 * eta_prior.sigma0 if config.mu_scale is None else config.mu_scale
    else:
        mu_scale = 0.0

    grid = None
    if size_prior is not None:
        limit = size_prior.N_max if config.N_max is None else min(size_prior.N_max, config.N_max)
        if limit < n:
            raise ValidationError(f"N_max {limit} is below the sample size {n}")
        N = int(min(max(size_prior.median, n), limit))
        grid = _NGrid(n, size_prior, limit)
    else:
        N = int(N_fixed)
        limit = N
    state = ChainState(N=N, model=model, u_unobs=model.sample(rng, N - n), psi=np.zeros(n), eta_index=eta_index)

    total = config.burn_in + config.thin * config.n_draws
    out_N = np.empty(config.n_draws, dtype=np.int64)
    out_mu = np.empty(config.n_draws)
    out_sd = np.empty(config.n_draws)
    out_mean = np.empty(config.n_draws)
    out_iter = np.empty(config.n_draws, dtype=np.int64)
    snapshots = [] if config.keep_unobs else None
    sum_obs = int(data.u_obs.sum())
    accepted = 0
    k = 0
    for it in range(total):
        for step in config.step_order:
            if step == "eta":
                state.model, state.eta_index, ok = sample_eta_mh(
                    data, state, eta_prior, rng, mu_scale, config.log_sigma_scale
                )
                accepted += ok
            elif step == "psi":
                state.psi = sample_psi(data, state, rng)
            else:
                if grid is not None:
                    state.N = sample_N(n, float(state.psi.sum()), state.model, size_prior, rng, grid, limit)
                state.u_unobs = sample_unobs(state, n, rng, config.max_tilt_attempts)
        if it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0:
            out_N[k] = state.N
            out_mu[k] = state.model.mean
            out_sd[k] = state.model.sd
            out_mean[k] = (sum_obs + int(state.u_unobs.sum())) / state.N
            out_iter[k] = it + 1
            if snapshots is not None:
                snapshots.append(state.u_unobs.copy())
            k += 1
    return PosteriorDraws(
        N=out_N,
        mu=out_mu,
        sigma=out_sd,
        mean_size=out_mean,
        iteration=out_iter,
        chain=np.full(config.n_draws, chain, dtype=np.int64),
        acceptance={chain: accepted / total},
        unobs=snapshots,
        n=n,
        family=model.family,
    )


def _run_chains(data, eta_prior, config, family, size_prior=None, N_fixed=None) -> PosteriorDraws:
    chains = range(config.parallel_chains)
    if config.n_jobs > 1 and config.parallel_chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.n_jobs, config.parallel_chains)) as pool:
            futures = [
                pool.submit(_run_chain, data, eta_prior, config, family, c, size_prior, N_fixed) for c in chains
            ]
            parts = [f.result() for f in futures]
    else:
        parts = [_run_chain(data, eta_prior, config, family, c, size_prior, N_fixed) for c in chains]
    return PosteriorDraws.merge(parts)


def run_known_N(
    data: ObservedSequence,
    N: int,
    eta_prior=None,
    config: McmcConfig | None = None,
    family: str = "cmp",
) -> PosteriorDraws:
    """Three-block sampler (parameters, latents, unobserved sizes) with N fixed."""
    if N < data.n:
        raise ValidationError(f"N = {N} is below the sample size {data.n}")
    return _run_chains(data, eta_prior or EtaPrior(), config or McmcConfig(), family, N_fixed=int(N))


def run_unknown_N(
    data: ObservedSequence,
    size_prior,
    eta_prior=None,
    config: McmcConfig | None = None,
    family: str = "cmp",
) -> PosteriorDraws:
    """Four-block sampler adding an exact update of N."""
    if size_prior.n != data.n:
        raise ValidationError(f"size prior built for n={size_prior.n} but the data have n={data.n}")
    return _run_chains(data, eta_prior or EtaPrior(), config or McmcConfig(), family, size_prior=size_prior)
