"""Rayleigh goodness of fit of simulated speckle as scatterer density grows.

At low density the envelope is pre-Rayleigh; the KS p-value climbs toward
uniform once many scatterers share a resolution cell.

    python scripts/speckle_ks.py --densities 1 3 10 100 --seeds 4
"""
import argparse
import math

import numpy as np
from scipy import stats

from qusseg.phantom import PhantomSpec, pulse, simulate
from qusseg.rf import envelope


def ks_pvalue(density, seed, margin=50):
    amp = envelope(simulate(PhantomSpec(scatterer_density_bg=density, rng_seed=seed)).rf).amplitude
    s = amp[:, margin:-margin:2 * len(pulse(40e6, 9e6))].ravel()
    sigma = math.sqrt(np.mean(s ** 2) / 2)
    return stats.kstest(s, "rayleigh", args=(0, sigma)).pvalue


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--densities", type=float, nargs="+", default=[1, 3, 10, 100])
    p.add_argument("--seeds", type=int, default=4)
    a = p.parse_args()
    print("density  " + "  ".join(f"seed {s:<3d}" for s in range(a.seeds)))
    for d in a.densities:
        print(f"{d:<8g} " + "  ".join(f"{ks_pvalue(d, s):8.4f}" for s in range(a.seeds)))


if __name__ == "__main__":
    main()
