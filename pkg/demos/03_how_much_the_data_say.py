"""How far does a half-population successive sample move the prior?

Three hundred units with CMP(mean 7, sd 3) sizes; 150 are drawn
successively.  The prior on N is the alpha = 1 Beta prior with its mode at
the truth.  That prior has a median near 2.4 N and no finite mean, so the
posterior mean is a sensitive summary: the information about N sits in the
downward drift of sizes along the sampling order, and at this scale the
drift is faint.
"""

import numpy as np
from scipy import stats

from sspsize import McmcConfig, StudyDesign, run_unknown_N
from sspsize.sizedist import UnitSizeModel
from sspsize.studylab import ppswor_sample


def main():
    design = StudyDesign(population="superpopulation", arms=("ppswor",))
    prior = design.size_prior(150)
    print(f"prior: beta={prior.beta:.2f}, mode={prior.mode}, median={prior.median}, "
          f"99% quantile={prior.quantile(0.99)}")
    model = UnitSizeModel.from_moments("cmp", 7.0, 3.0)
    print(f"{'seed':>4s} {'rank corr':>9s} {'post mean':>9s} {'post median':>11s}  95% HPD")
    for seed in range(5):
        rng = np.random.default_rng(seed)
        sample = ppswor_sample(model.sample(rng, 300), 150, rng)
        u = sample.data.u_obs
        rho = stats.spearmanr(np.arange(u.size), u).statistic
        draws = run_unknown_N(sample.data, prior, config=McmcConfig(burn_in=500, thin=3, n_draws=1000, seed=seed))
        s = draws.summary()
        print(f"{seed:4d} {rho:9.3f} {s.mean:9.0f} {s.median:11d}  [{s.hpd_interval_hull[0]}, {s.hpd_interval_hull[1]}]")


if __name__ == "__main__":
    main()
