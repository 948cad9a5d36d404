"""Survey of the averaged contraction coefficient at a mid-band energy.

Uses the boundary Green function on the real axis as the reference point
and samples gamma spheres of radius in [R, 10R] around it.
"""

import argparse
import json
from dataclasses import asdict, dataclass

from conetree.green import solve_boundary
from conetree.operators import build_adjacency
from conetree.random_sim import build_two_sphere_context, kappa_survey
from conetree.tree import SubstitutionMatrix


@dataclass
class KappaConfig:
    matrix: tuple = ((1, 2), (1, 1))
    energy: float = 1.5
    lam: float = 0.0
    radius: float = 0.1
    samples: int = 10_000
    p_exp: float = 2.0
    seed: int = 0


def run(cfg: KappaConfig) -> dict:
    m = SubstitutionMatrix.from_array(cfg.matrix)
    p = build_adjacency(m)
    h = solve_boundary(p, cfg.energy, eta_min=0.0).values
    ctx = build_two_sphere_context(p, m, "1", cfg.energy, h=h)
    survey = kappa_survey(ctx, cfg.energy, cfg.lam, cfg.radius, cfg.samples, cfg.p_exp,
                          seed=cfg.seed)
    return {"config": asdict(cfg), **survey.to_dict()}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lam", type=float, nargs="*", default=[0.0, 0.02, 0.05])
    ap.add_argument("--radius", type=float, default=KappaConfig.radius)
    ap.add_argument("--samples", type=int, default=KappaConfig.samples)
    args = ap.parse_args()
    reports = [run(KappaConfig(lam=lam, radius=args.radius, samples=args.samples))
               for lam in args.lam]
    print(json.dumps(reports, indent=2))


if __name__ == "__main__":
    main()
