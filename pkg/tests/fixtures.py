"""Shared simulation fixtures built from the package's own generators."""

import numpy as np

from sspsize.sizedist import UnitSizeModel
from sspsize.studylab import ppswor_sample

DESK_N = 300
DESK_n = 150


def desk_sample(seed, N=DESK_N, n=DESK_n, mean=7.0, sd=3.0):
    """A PPSWOR sample from an i.i.d. CMP population of size N."""
    rng = np.random.default_rng(seed)
    sizes = UnitSizeModel.from_moments("cmp", mean, sd).sample(rng, N)
    return ppswor_sample(sizes, n, rng)
