"""What would it cost a botter to evade detection?

A lockstep attack holding n concurrent fake viewers needs ceil(n/k) IPs under
a k-views-per-IP rate limit. To look organic instead, the bots would have to
mimic the bracket's behavior model — arriving and leaving like real viewers —
which means many more sessions (and IPs) to sustain the same average
concurrency. This script prints that relative IP overhead for a range of
bracket shapes.
"""

import numpy as np

from viewsift.model import TriDistribution, cell_index, n_cells
from viewsift.synth import OverheadSpec, default_bracket_prior, estimate_ip_overhead

H = 20


def point_mass(cell):
    mass = np.zeros(n_cells(H))
    mass[cell_index(H)[cell]] = 1.0
    return TriDistribution(H, mass)


def main():
    models = {
        "full-duration stays (lockstep-like)": point_mass((1, H)),
        "half-duration stays": point_mass((1, H // 2)),
        "short stays (1/10 duration)": point_mass((1, 2)),
        "organic prior (geometric decay)": default_bracket_prior(H),
    }
    n, k = 1000, 5
    print(f"target concurrency n={n}, rate limit k={k} views/IP, "
          f"lockstep baseline {n // k} IPs\n")
    for label, model in models.items():
        spec = OverheadSpec(rate_limit_k=k, target_bots_n=n,
                            bracket_frequencies={0: 1.0}, trials=20, seed=1)
        overhead = estimate_ip_overhead(spec, {0: model})
        print(f"{label:<38} +{overhead:6.1%} IPs")
    print("\nthe shorter real viewers stay, the more expensive it is "
          "to imitate them.")


if __name__ == "__main__":
    main()
