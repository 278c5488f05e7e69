"""Score a handful of hand-made proposals on a synthetic scene.

Builds a few variations of the scene's expert plan (slower, drifting off
the road, braking hard) and prints the sub-metrics of each.

    python demos/score_proposals.py [seed]
"""
import sys

import numpy as np

from proposal_scorer import gen_synthetic, score_proposals


def variants(expert):
    t = np.arange(1, len(expert) + 1) / len(expert)
    normal = np.stack([-np.sin(expert[:, 2]), np.cos(expert[:, 2])], 1)

    slow = expert.copy()
    slow[:, :2] = expert[0, :2] + (expert[:, :2] - expert[0, :2]) * 0.6

    drift = expert.copy()
    drift[:, :2] += 25.0 * t[:, None] ** 2 * normal

    # stop dead after the first step
    brake = np.repeat(expert[:1], len(expert), axis=0)
    return {"expert": expert, "slow": slow, "drift": drift, "brake": brake}


def main(seed=7):
    scene = gen_synthetic(seed)
    plans = variants(np.asarray(scene.expert, dtype=float))
    cards = score_proposals(np.stack(list(plans.values())), scene)

    print(f"scene seed {seed}: {len(scene.agents)} agents, ego speed {scene.ego_velocity:.1f} m/s")
    print(f"{'plan':8s} {'NC':>4s} {'DAC':>4s} {'TTC':>4s} {'Comf':>5s} {'EP':>6s} {'PDMS':>6s}")
    for name, c in zip(plans, cards):
        s = c.sub
        print(f"{name:8s} {s.nc:4.1f} {s.dac:4.1f} {s.ttc:4.1f} {s.comfort:5.1f} {s.ep:6.3f} {c.pdms:6.3f}")
    best = max(range(len(cards)), key=lambda i: (cards[i].pdms, -i))
    print("best plan:", list(plans)[best])


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 7)
