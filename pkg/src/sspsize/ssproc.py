"""Successive sampling: simulation, sequence probabilities and the
successive-sampling prevalence estimator.

A successive sample draws units one at a time with probability proportional
to size among the units not yet drawn.  Giving unit ``i`` an exponential
clock ``E_i / u_i`` and reading units in order of their clocks yields the
same law, which makes inclusion probabilities cheap to simulate in bulk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError

__all__ = [
    "SizedPopulation",
    "log_ordered_sequence_prob",
    "ppswor_draw",
    "ss_inclusion_probs",
    "ss_prevalence",
    "ss_weights",
]

_BATCH_CELLS = 2_000_000


@dataclass(frozen=True)
class SizedPopulation:
    sizes: np.ndarray
    trait: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.sizes)
        if s.ndim != 1 or s.size < 1:
            raise ValidationError("a population needs at least one unit")
        if not np.all(np.equal(np.mod(s, 1), 0)) or np.any(s < 1):
            raise ValidationError("unit sizes must be integers >= 1")
        s = s.astype(np.int64)
        s.flags.writeable = False
        object.__setattr__(self, "sizes", s)
        if self.trait is not None:
            t = np.asarray(self.trait).astype(bool)
            if t.shape != s.shape:
                raise ValidationError(f"trait has length {t.size}, expected {s.size}")
            object.__setattr__(self, "trait", t)

    @property
    def N(self) -> int:
        return int(self.sizes.size)

    def spectrum(self) -> dict:
        values, counts = np.unique(self.sizes, return_counts=True)
        return dict(zip(values.tolist(), counts.tolist()))


def ppswor_draw(pop: SizedPopulation, n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``n`` units drawn in order, each with probability
    proportional to size among those remaining."""
    if not 1 <= n <= pop.N:
        raise ValidationError(f"sample size {n} must lie in 1..{pop.N}")
    weights = pop.sizes.astype(float)
    drawn = np.empty(n, dtype=np.int64)
    for k in range(n):
        cum = np.cumsum(weights)
        i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        drawn[k] = i
        weights[i] = 0.0
    return drawn


def log_ordered_sequence_prob(pop: SizedPopulation, g) -> float:
    """Log probability that successive sampling yields exactly the ordered
    indices ``g``: ``sum_k log(u_{g_k} / r_k)``."""
    g = np.asarray(g, dtype=np.int64)
    if g.ndim != 1 or g.size == 0:
        raise ValidationError("g must be a non-empty sequence of indices")
    if np.any((g < 0) | (g >= pop.N)):
        raise ValidationError(f"indices must lie in 0..{pop.N - 1}")
    if np.unique(g).size != g.size:
        raise ValidationError("g contains a repeated index")
    u = pop.sizes[g].astype(float)
    r = float(pop.sizes.sum()) - np.concatenate(([0.0], np.cumsum(u)[:-1]))
    return float(np.sum(np.log(u) - np.log(r)))


def _pava(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted isotonic (non-decreasing) regression."""
    blocks = []  # [mean, weight, length]
    for v, w in zip(values.tolist(), weights.tolist()):
        blocks.append([v, w, 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            v2, w2, n2 = blocks.pop()
            v1, w1, n1 = blocks.pop()
            blocks.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, n1 + n2])
    return np.concatenate([np.full(k, v) for v, _, k in blocks])


def ss_inclusion_probs(spectrum: dict, n: int, n_sims: int, rng: np.random.Generator) -> dict:
    """Monte-Carlo inclusion probability of a unit of each size under
    successive sampling of ``n`` units from a population with the given
    size spectrum (``size -> count``).

    The raw frequencies are made non-decreasing in size by weighted isotonic
    regression, which removes Monte-Carlo wiggles without moving the mean.
    """
    if n_sims < 1000:
        raise ValidationError("n_sims must be at least 1000")
    sizes = np.array(sorted(spectrum), dtype=np.int64)
    counts = np.array([spectrum[s] for s in sizes.tolist()], dtype=np.int64)
    if np.any(sizes < 1) or np.any(counts < 0):
        raise ValidationError("spectrum needs sizes >= 1 and nonnegative counts")
    keep = counts > 0
    sizes, counts = sizes[keep], counts[keep]
    N = int(counts.sum())
    if N < n:
        raise ValidationError(f"spectrum holds {N} units, fewer than the sample size {n}")
    if n < 1:
        raise ValidationError("sample size must be positive")
    if n == N:
        return {int(s): 1.0 for s in sizes}
    unit_size = np.repeat(sizes, counts).astype(float)
    unit_class = np.repeat(np.arange(sizes.size), counts)
    hits = np.zeros(sizes.size, dtype=np.int64)
    batch = max(1, _BATCH_CELLS // N)
    done = 0
    while done < n_sims:
        b = min(batch, n_sims - done)
        clocks = rng.standard_exponential((b, N)) / unit_size
        chosen = np.argpartition(clocks, n - 1, axis=1)[:, :n]
        hits += np.bincount(unit_class[chosen.ravel()], minlength=sizes.size)
        done += b
    raw = hits / (counts * float(n_sims))
    smooth = _pava(raw, counts.astype(float))
    return {int(s): float(min(p, 1.0)) for s, p in zip(sizes, smooth)}


def ss_weights(u_obs, probs: dict) -> np.ndarray:
    """Inverse inclusion-probability weights scaled so the largest is 1."""
    u_obs = np.asarray(u_obs, dtype=np.int64)
    pi = np.empty(u_obs.size)
    for s in np.unique(u_obs).tolist():
        p = probs.get(int(s), 0.0)
        if not p > 0:
            raise ValidationError(f"estimated inclusion probability is 0 for size class {s}")
        pi[u_obs == s] = p
    return pi.min() / pi


def _spectra(data, source, n_spectra, eta_prior, config, family):
    from .engine import McmcConfig, PosteriorDraws, run_known_N

    if isinstance(source, PosteriorDraws):
        if source.unobs is None:
            raise ValidationError("posterior draws carry no unobserved-size snapshots (fit with keep_unobs=True)")
        snaps = source.unobs
    else:
        N = int(source)
        if N < data.n:
            raise ValidationError(f"plug-in N = {N} is below the sample size {data.n}")
        if N == data.n:
            return [data.u_obs]
        if config is None:
            config = McmcConfig(burn_in=500, thin=10, n_draws=n_spectra)
        config = McmcConfig(**{**config.to_dict(), "keep_unobs": True})
        snaps = run_known_N(data, N, eta_prior, config, family).unobs
    pick = np.unique(np.linspace(0, len(snaps) - 1, min(n_spectra, len(snaps))).round().astype(int))
    return [np.concatenate([data.u_obs, snaps[i]]) for i in pick]


def ss_prevalence(
    data,
    source,
    n_sims: int = 2000,
    rng: np.random.Generator | None = None,
    *,
    n_spectra: int = 20,
    eta_prior=None,
    config=None,
    family: str = "cmp",
) -> float:
    """Successive-sampling estimate of the trait prevalence.

    ``source`` is either a :class:`PosteriorDraws` holding unobserved-size
    snapshots (inclusion probabilities are averaged over its spectra) or a
    plug-in population size, in which case unobserved sizes are drawn from
    the known-N posterior predictive.  Returns the Horvitz-Thompson ratio
    ``sum(t_i / pi_i) / sum(1 / pi_i)``.
    """
    if data.trait is None:
        raise ValidationError("the data carry no trait column")
    rng = np.random.default_rng() if rng is None else rng
    spectra = _spectra(data, source, n_spectra, eta_prior, config, family)
    classes = np.unique(data.u_obs)
    pi = np.zeros(classes.size)
    for sizes in spectra:
        values, counts = np.unique(sizes, return_counts=True)
        probs = ss_inclusion_probs(dict(zip(values.tolist(), counts.tolist())), data.n, n_sims, rng)
        pi += [probs[int(s)] for s in classes]
    w = ss_weights(data.u_obs, dict(zip(classes.tolist(), (pi / len(spectra)).tolist())))
    t = data.trait.astype(float)
    return float(min(1.0, max(0.0, np.sum(w * t) / np.sum(w))))
