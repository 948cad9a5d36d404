"""Band scan of a two-label adjacency operator with three spectral bands.

Writes the band report as JSON and the per-energy values as CSV.
"""

import argparse
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from conetree.green import scan_bands
from conetree.operators import build_adjacency
from conetree.tree import SubstitutionMatrix


@dataclass
class ScanConfig:
    matrix: tuple = ((1, 42), (1, 1))
    emin: float = -15.0
    emax: float = 15.0
    points: int = 3001
    eta_min: float = 1e-7
    tau: float = 1e-4
    out_dir: str = "results/band_scan"


def run(cfg: ScanConfig) -> dict:
    m = SubstitutionMatrix.from_array(np.array(cfg.matrix))
    p = build_adjacency(m)
    grid = np.linspace(cfg.emin, cfg.emax, cfg.points)
    scan = scan_bands(p, grid, eta_min=cfg.eta_min, tau=cfg.tau)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"config": asdict(cfg), **scan.to_dict()}
    (out / "bands.json").write_text(json.dumps(report, indent=2))
    table = np.column_stack([grid, scan.im_gamma, scan.im_gamma[:, 0] / np.pi])
    np.savetxt(out / "im_gamma.csv", table, delimiter=",", fmt="%.16e",
               header="E," + ",".join(f"im_gamma_{lab}" for lab in m.labels) + ",density",
               comments="")
    return report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=ScanConfig.points)
    ap.add_argument("--out-dir", default=ScanConfig.out_dir)
    args = ap.parse_args()
    report = run(ScanConfig(points=args.points, out_dir=args.out_dir))
    for a, b in report["intervals"]:
        print(f"band [{a:+.6f}, {b:+.6f}]")


if __name__ == "__main__":
    main()
