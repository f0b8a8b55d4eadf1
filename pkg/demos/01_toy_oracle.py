"""Check the unknown-N Gibbs sampler against an exactly enumerated posterior.

The population has unit sizes in {1, 2}, three units were observed in the
order (2, 2, 1), N is flat on 3..8 and the size model is one of two
zero-truncated Poisson laws.  With so few unknowns the posterior of N can be
computed by summing over every assignment of the unobserved sizes.
"""

import itertools
import math

import numpy as np

from sspsize import DiscreteEtaPrior, McmcConfig, ObservedSequence, SizePrior, UnitSizeModel, run_unknown_N

U_OBS = (2, 2, 1)
N_VALUES = range(3, 9)


def exact_posterior(models):
    post = np.zeros(len(N_VALUES))
    for a, N in enumerate(N_VALUES):
        falling = math.factorial(N) / math.factorial(N - len(U_OBS))
        for model in models:
            f = model.pmf_values
            for unobs in itertools.product((1, 2), repeat=N - len(U_OBS)):
                remaining = sum(U_OBS) + sum(unobs)
                like = 1.0
                for u in U_OBS:
                    like *= u / remaining * f[u - 1]
                    remaining -= u
                for u in unobs:
                    like *= f[u - 1]
                post[a] += 0.5 * falling * like
    return post / post.sum()


def main():
    models = [UnitSizeModel.from_params("ztp", (lam,), support_cap=2) for lam in (0.5, 2.0)]
    exact = exact_posterior(models)
    draws = run_unknown_N(
        ObservedSequence(np.array(U_OBS)),
        SizePrior.flat(3, N_max=8),
        DiscreteEtaPrior(models),
        McmcConfig(burn_in=1000, thin=1, n_draws=50_000, seed=1),
    )
    freq = np.bincount(draws.N - 3, minlength=6)[:6] / len(draws)
    print(" N   exact    gibbs")
    for N, p, q in zip(N_VALUES, exact, freq):
        print(f"{N:2d}  {p:.4f}   {q:.4f}")
    print(f"total variation distance: {0.5 * np.abs(freq - exact).sum():.4f}")


if __name__ == "__main__":
    main()
