"""Simulation studies: two-group networks, RDS recruitment and replication.

Networks are dyad-independent two-block random graphs (infected /
uninfected).  The block tie probabilities are set so that the expected
mean degree, differential activity ``omega`` (infected mean degree over
uninfected mean degree) and homophily ``alpha_h`` (cross-group ties absent
homophily over expected cross-group ties) hit their targets exactly.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, sparse

from .engine import McmcConfig, ObservedSequence, run_unknown_N
from .exceptions import ChainFailure, InfeasibleDesignError, SspsizeError, ValidationError
from .priors import EtaPrior, SizePrior, beta_from_elicitation
from .sizedist import UnitSizeModel
from .ssproc import ss_prevalence

__all__ = [
    "Network",
    "RDSSample",
    "StudyDesign",
    "StudyReport",
    "block_probabilities",
    "generate_network",
    "ppswor_sample",
    "run_replication_study",
    "simulate_rds",
]

ARMS = ("rds", "ppswor")
_ARM_CODE = {"rds": 1, "ppswor": 2}


# ---------------------------------------------------------------------- #
# network model
# ---------------------------------------------------------------------- #


def block_probabilities(N: int, p: float, mean_degree: float, omega: float, alpha_h: float):
    """Tie probabilities ``(p_II, p_IU, p_UU)`` for the two-block model.

    Group mean degrees follow from the overall mean and ``omega``.  Absent
    homophily the tie probability factorizes as ``b_x * b_y``; the cross-group
    expected count is that baseline divided by ``alpha_h``, and within-group
    counts absorb the difference so group mean degrees are preserved.
    """
    N_I = int(round(p * N))
    N_U = N - N_I
    if not (0 < p < 1) or N_I < 2 or N_U < 2:
        raise InfeasibleDesignError(f"need at least two nodes per group (N={N}, p={p})")
    if omega <= 0 or mean_degree <= 0 or alpha_h <= 0:
        raise InfeasibleDesignError("mean degree, omega and alpha_h must be positive")
    q = N_I / N
    d_U = mean_degree / (q * omega + 1 - q)
    d_I = omega * d_U

    # with T = N_I b_I + N_U b_U each b_x is the small root of b^2 - T b + d_x = 0
    def b_of(T, d):
        return 2.0 * d / (T + math.sqrt(T * T - 4.0 * d))

    def gap(T):
        return N_I * b_of(T, d_I) + N_U * b_of(T, d_U) - T

    T_lo = 2.0 * math.sqrt(max(d_I, d_U))
    T_hi = max(T_lo, 1.0) * 2.0
    while gap(T_hi) > 0:
        T_hi *= 2.0
    if gap(T_lo) <= 0:
        raise InfeasibleDesignError("mean degree too large for the group sizes")
    T = optimize.brentq(gap, T_lo, T_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    bI, bU = b_of(T, d_I), b_of(T, d_U)
    m_IU = N_I * N_U * bI * bU / alpha_h
    m_II = (N_I * d_I - m_IU) / 2.0
    m_UU = (N_U * d_U - m_IU) / 2.0
    probs = {
        "II": m_II / (N_I * (N_I - 1) / 2.0),
        "IU": m_IU / (N_I * N_U),
        "UU": m_UU / (N_U * (N_U - 1) / 2.0),
    }
    bad = [f"p_{k}={v:.4g}" for k, v in probs.items() if not 0 < v < 1]
    if bad:
        raise InfeasibleDesignError(f"block probabilities outside (0, 1): {', '.join(bad)}")
    return probs["II"], probs["IU"], probs["UU"]


@dataclass(frozen=True)
class Network:
    adjacency: sparse.csr_matrix
    infected: np.ndarray

    @property
    def N(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.int64)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i] : a.indptr[i + 1]]

    def mixing_counts(self) -> dict:
        upper = sparse.triu(self.adjacency, k=1).tocoo()
        a, b = self.infected[upper.row], self.infected[upper.col]
        return {
            "II": int(np.sum(a & b)),
            "IU": int(np.sum(a ^ b)),
            "UU": int(np.sum(~a & ~b)),
        }

    @classmethod
    def from_edges(cls, N: int, rows, cols, infected=None) -> "Network":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        data = np.ones(2 * rows.size, dtype=np.int8)
        adj = sparse.csr_matrix(
            (data, (np.concatenate([rows, cols]), np.concatenate([cols, rows]))), shape=(N, N)
        )
        adj.sort_indices()
        infected = np.zeros(N, dtype=bool) if infected is None else np.asarray(infected, dtype=bool)
        return cls(adj, infected)


def _sample_pairs(rng, n_pairs: int, prob: float) -> np.ndarray:
    k = rng.binomial(n_pairs, prob)
    return np.sort(rng.choice(n_pairs, size=k, replace=False))


def _triu_pairs(idx: np.ndarray, m: int):
    # row-major index into the strict upper triangle of an m x m matrix
    i = (m - 2 - np.floor(np.sqrt(-8.0 * idx + 4.0 * m * (m - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    j = idx + i + 1 - m * (m - 1) // 2 + (m - i) * ((m - i) - 1) // 2
    return i, j


def generate_network(design: "StudyDesign", rng: np.random.Generator) -> Network:
    """Bernoulli block graph; the first ``round(p N)`` nodes are infected."""
    N = design.N
    p_II, p_IU, p_UU = block_probabilities(N, design.prevalence, design.mean_degree, design.omega, design.homophily)
    N_I = int(round(design.prevalence * N))
    N_U = N - N_I
    r1, c1 = _triu_pairs(_sample_pairs(rng, N_I * (N_I - 1) // 2, p_II), N_I)
    cross = _sample_pairs(rng, N_I * N_U, p_IU)
    r2, c2 = cross // N_U, N_I + cross % N_U
    r3, c3 = _triu_pairs(_sample_pairs(rng, N_U * (N_U - 1) // 2, p_UU), N_U)
    infected = np.zeros(N, dtype=bool)
    infected[:N_I] = True
    return Network.from_edges(
        N, np.concatenate([r1, r2, r3 + N_I]), np.concatenate([c1, c2, c3 + N_I]), infected
    )


# ---------------------------------------------------------------------- #
# sampling
# ---------------------------------------------------------------------- #


@dataclass(frozen=True)
class RDSSample:
    """An RDS sample: node ids in recruitment order, plus its observed data."""

    nodes: np.ndarray
    recruiter: np.ndarray  # -1 for seeds
    wave: np.ndarray
    data: ObservedSequence
    truncated: bool

    @property
    def n(self) -> int:
        return int(self.nodes.size)

    @property
    def max_wave(self) -> int:
        return int(self.wave.max())


def _pps_order(rng, sizes: np.ndarray, k: int) -> np.ndarray:
    """``k`` indices drawn successively with probability proportional to size."""
    with np.errstate(divide="ignore"):
        clocks = rng.standard_exponential(sizes.size) / sizes
    order = np.argsort(clocks, kind="stable")[:k]
    return order[np.isfinite(clocks[order])]


def simulate_rds(network: Network, design: "StudyDesign", rng: np.random.Generator) -> RDSSample:
    """Seeds drawn successively proportional to degree, then wave-by-wave
    recruitment of up to ``coupons`` unsampled alters chosen uniformly at
    random, stopping at ``n``.  If recruitment dies out first the shorter
    sample is returned with ``truncated=True``."""
    n = min(design.n, network.N)
    deg = network.degrees
    seeds = _pps_order(rng, deg.astype(float), min(design.seeds, n))
    sampled = np.zeros(network.N, dtype=bool)
    nodes, recruiter, wave = [], [], []
    for s in seeds.tolist():
        sampled[s] = True
        nodes.append(s)
        recruiter.append(-1)
        wave.append(0)
    frontier, w = list(nodes), 0
    while len(nodes) < n and frontier:
        w += 1
        next_frontier = []
        for r in frontier:
            if len(nodes) >= n:
                break
            alters = network.neighbors(r)
            free = alters[~sampled[alters]]
            if free.size == 0:
                continue
            take = rng.choice(free, size=min(design.coupons, free.size, n - len(nodes)), replace=False)
            for a in take.tolist():
                sampled[a] = True
                nodes.append(a)
                recruiter.append(r)
                wave.append(w)
                next_frontier.append(a)
        frontier = next_frontier
    nodes = np.array(nodes, dtype=np.int64)
    return RDSSample(
        nodes=nodes,
        recruiter=np.array(recruiter, dtype=np.int64),
        wave=np.array(wave, dtype=np.int64),
        data=ObservedSequence(deg[nodes], network.infected[nodes]),
        truncated=nodes.size < design.n,
    )


def ppswor_sample(sizes, n: int, rng: np.random.Generator, trait=None) -> RDSSample:
    """Successive sample of ``n`` units; zero-size units are never drawn."""
    sizes = np.asarray(sizes, dtype=np.int64)
    nodes = _pps_order(rng, sizes.astype(float), n)
    t = None if trait is None else np.asarray(trait, dtype=bool)[nodes]
    return RDSSample(
        nodes=nodes,
        recruiter=np.full(nodes.size, -1, dtype=np.int64),
        wave=np.zeros(nodes.size, dtype=np.int64),
        data=ObservedSequence(sizes[nodes], t),
        truncated=nodes.size < n,
    )


# ---------------------------------------------------------------------- #
# replication studies
# ---------------------------------------------------------------------- #


@dataclass
class StudyDesign:
    """One simulation condition.

    ``population`` is ``"network"`` (two-block graph, sizes are degrees) or
    ``"superpopulation"`` (sizes i.i.d. from ``size_family`` with mean
    ``mean_degree`` and sd ``size_sd``).  ``arms`` lists the sampling designs
    fitted on each replicate population.  The N prior is a Beta prior with
    ``prior_alpha`` whose ``prior_target`` (mode or median) sits at
    ``prior_ratio`` times the true N, or a flat prior.
    """

    N: int = 300
    n: int = 150
    prevalence: float = 0.2
    mean_degree: float = 7.0
    omega: float = 1.0
    homophily: float = 1.0
    seeds: int = 10
    coupons: int = 2
    replicates: int = 200
    population: str = "network"
    arms: tuple = ("rds",)
    size_family: str = "cmp"
    size_sd: float = 3.0
    prior_kind: str = "beta"
    prior_target: str = "mode"
    prior_ratio: float = 1.0
    prior_alpha: float = 1.0
    prior_N_max: int | None = None
    eta_prior: dict = field(default_factory=lambda: asdict(EtaPrior()))
    family: str = "cmp"
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    hpd_level: float = 0.95
    seed: int = 0
    prevalence_estimates: bool = False
    prevalence_sims: int = 1000
    prevalence_spectra: int = 10
    n_jobs: int = 1

    def __post_init__(self):
        if isinstance(self.mcmc, dict):
            self.mcmc = McmcConfig(**self.mcmc)
        self.arms = tuple(self.arms)
        if not 0 < self.prevalence < 1:
            raise ValidationError("prevalence must lie in (0, 1)")
        if self.omega <= 0:
            raise ValidationError("omega must be positive")
        if self.homophily <= 0:
            raise ValidationError("homophily must be positive")
        if self.homophily < 1:
            warnings.warn("homophily below 1 means heterophily; supported but unusual", stacklevel=2)
        if not 1 <= self.n <= self.N:
            raise ValidationError(f"need 1 <= n <= N, got n={self.n}, N={self.N}")
        if not 1 <= self.seeds <= self.n:
            raise ValidationError("seed count must lie in 1..n")
        if self.coupons < 1 or self.replicates < 1:
            raise ValidationError("coupons and replicates must be positive")
        if self.population not in ("network", "superpopulation"):
            raise ValidationError(f"unknown population type {self.population!r}")
        if not self.arms or any(a not in ARMS for a in self.arms):
            raise ValidationError(f"arms must be drawn from {ARMS}")
        if self.population == "superpopulation" and "rds" in self.arms:
            raise ValidationError("the rds arm needs a network population")
        if self.prior_kind not in ("beta", "flat"):
            raise ValidationError(f"unsupported study prior {self.prior_kind!r}")
        if self.prior_target not in ("mode", "median"):
            raise ValidationError("prior_target must be 'mode' or 'median'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arms"] = list(self.arms)
        d["mcmc"] = self.mcmc.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StudyDesign":
        return cls(**d)

    @property
    def prior_reference(self) -> float:
        """The population size the prior is centred on."""
        return self.prior_ratio * self.N

    def size_prior(self, n: int) -> SizePrior:
        if self.prior_kind == "flat":
            return SizePrior.flat(n, self.prior_N_max)
        target = max(self.prior_reference, n + 1)
        alpha, beta = beta_from_elicitation(n, alpha=self.prior_alpha, **{self.prior_target: target})
        return SizePrior.beta_proportion(n, alpha, beta, self.prior_N_max)


def _replicate_seed(design: StudyDesign, index: int, arm: str) -> int:
    return int(np.random.SeedSequence([design.seed, index, _ARM_CODE[arm]]).generate_state(1)[0])


def _population(design: StudyDesign, rng):
    if design.population == "network":
        net = generate_network(design, rng)
        return net, net.degrees, net.infected
    model = UnitSizeModel.from_moments(design.size_family, design.mean_degree, design.size_sd)
    sizes = model.sample(rng, design.N)
    infected = np.zeros(design.N, dtype=bool)
    infected[: int(round(design.prevalence * design.N))] = True
    return None, sizes, infected


def _fit(design: StudyDesign, sample: RDSSample, arm: str, index: int) -> dict:
    row = {
        "replicate": index,
        "arm": arm,
        "N_true": design.N,
        "n": sample.n,
        "truncated": bool(sample.truncated),
        "max_wave": sample.max_wave,
        "failed": False,
        "error": "",
    }
    try:
        prior = design.size_prior(sample.n)
        config = McmcConfig(**{**design.mcmc.to_dict(), "seed": _replicate_seed(design, index, arm)})
        if design.prevalence_estimates:
            config.keep_unobs = True
        draws = run_unknown_N(sample.data, prior, EtaPrior(**design.eta_prior), config, design.family)
        s = draws.summary(design.hpd_level)
        lo, hi = s.hpd_interval_hull
        row.update(
            post_mean=s.mean,
            post_median=s.median,
            hpd_lower=lo,
            hpd_upper=hi,
            covered=bool(lo <= design.N <= hi),
            acceptance=draws.acceptance_rate,
        )
        if design.prevalence_estimates:
            row.update(_prevalence_row(design, sample, draws, s.mean, index, arm))
    except (ChainFailure, SspsizeError) as exc:
        row.update(failed=True, error=f"{type(exc).__name__}: {exc}")
    return row


def _prevalence_row(design, sample, draws, post_mean, index, arm) -> dict:
    data = sample.data
    rng = np.random.default_rng([design.seed, index, _ARM_CODE[arm], 7])
    config = McmcConfig(burn_in=300, thin=10, n_draws=design.prevalence_spectra, seed=_replicate_seed(design, index, arm))
    kw = dict(n_sims=design.prevalence_sims, n_spectra=design.prevalence_spectra, eta_prior=EtaPrior(**design.eta_prior))
    plug_post = max(data.n, int(round(post_mean)))
    plug_prior = max(data.n, int(round(design.prior_reference)))
    return {
        "prev_sample": float(data.trait.mean()),
        "prev_posterior_mean_N": ss_prevalence(data, plug_post, rng=rng, config=config, family=design.family, **kw),
        "prev_prior_mean_N": ss_prevalence(data, plug_prior, rng=rng, config=config, family=design.family, **kw),
        "prev_true_N": ss_prevalence(data, design.N, rng=rng, config=config, family=design.family, **kw),
    }


def _run_replicate(design: StudyDesign, index: int) -> list[dict]:
    rng = np.random.default_rng([design.seed, index, 0])
    net, sizes, infected = _population(design, rng)
    rows = []
    for arm in design.arms:
        arm_rng = np.random.default_rng([design.seed, index, _ARM_CODE[arm]])
        if arm == "rds":
            sample = simulate_rds(net, design, arm_rng)
        else:
            sample = ppswor_sample(sizes, design.n, arm_rng, infected)
        row = _fit(design, sample, arm, index)
        row["prev_true"] = float(infected.mean())
        rows.append(row)
    return rows


@dataclass
class StudyReport:
    design: StudyDesign
    rows: list

    def arm_rows(self, arm: str, include_truncated: bool = True) -> list:
        return [
            r
            for r in self.rows
            if r["arm"] == arm and not r["failed"] and (include_truncated or not r["truncated"])
        ]

    def metrics(self, arm: str) -> dict:
        ok = self.arm_rows(arm)
        full = self.arm_rows(arm, include_truncated=False)
        N = self.design.N

        def cover(rows):
            return float(np.mean([r["covered"] for r in rows])) if rows else float("nan")

        return {
            "replicates": sum(r["arm"] == arm for r in self.rows),
            "failures": sum(r["arm"] == arm and r["failed"] for r in self.rows),
            "truncated": sum(r["arm"] == arm and r["truncated"] for r in self.rows),
            "mean_ratio": float(np.mean([r["post_mean"] / N for r in ok])) if ok else float("nan"),
            "coverage": cover(ok),
            "coverage_excluding_truncated": cover(full),
            "median_upper_ratio": float(np.median([r["hpd_upper"] / N for r in ok])) if ok else float("nan"),
            "mean_acceptance": float(np.mean([r["acceptance"] for r in ok])) if ok else float("nan"),
        }

    def summary(self) -> dict:
        return {arm: self.metrics(arm) for arm in self.design.arms}

    def to_json(self, path=None) -> str:
        text = json.dumps(
            {"design": self.design.to_dict(), "summary": self.summary(), "replicates": self.rows},
            indent=2,
            sort_keys=True,
        )
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path) -> None:
        keys = sorted({k for r in self.rows for k in r})
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in keys})


def run_replication_study(design: StudyDesign, progress=None) -> StudyReport:
    """Replicate {population, sample, fit, summarize}.  Chain failures are
    recorded per replicate.  Results depend only on the design (including
    its seed), not on ``n_jobs``."""
    indices = range(design.replicates)
    if design.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=design.n_jobs) as pool:
            chunks = list(pool.map(_run_replicate, [design] * design.replicates, indices))
    else:
        chunks = []
        for i in indices:
            chunks.append(_run_replicate(design, i))
            if progress is not None:
                progress(i + 1, design.replicates)
    return StudyReport(design, [r for chunk in chunks for r in chunk])


def mixing_count_check(net: Network, design: StudyDesign) -> dict:
    """Expected vs realized mixing counts, with binomial standard errors."""
    p = block_probabilities(design.N, design.prevalence, design.mean_degree, design.omega, design.homophily)
    N_I = int(net.infected.sum())
    N_U = net.N - N_I
    dyads = {"II": N_I * (N_I - 1) / 2, "IU": N_I * N_U, "UU": N_U * (N_U - 1) / 2}
    got = net.mixing_counts()
    out = {}
    for key, prob in zip(("II", "IU", "UU"), p):
        mean = dyads[key] * prob
        out[key] = (got[key], mean, math.sqrt(mean * (1 - prob)))
    return out
