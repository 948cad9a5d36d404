"""Compare the recursion with a direct resolvent solve on truncated trees.

For each depth the root row of (H - z)^{-1} is computed by LU and compared
with the truncated-tree recursion and its off-diagonal extension.
"""

import argparse
from dataclasses import dataclass

from conetree.green import extend_to_full_green, solve_fixed_point, truncated_gamma_table
from conetree.operators import build_adjacency, realize_on_tree
from conetree.oracle import Resolvent, assemble_matrix
from conetree.tree import SubstitutionMatrix, build_truncated_tree


@dataclass
class OracleConfig:
    matrix: tuple = ((2,),)
    z: complex = 0.3 + 0.5j
    depths: tuple = (4, 6, 8, 10, 12)


def run(cfg: OracleConfig):
    m = SubstitutionMatrix.from_array(cfg.matrix)
    p = build_adjacency(m)
    infinite = solve_fixed_point(p, cfg.z).values[0]
    rows = []
    for depth in cfg.depths:
        tree = build_truncated_tree(m, "1", depth)
        col = Resolvent(assemble_matrix(realize_on_tree(p, tree)), cfg.z).column(0)
        table = truncated_gamma_table(p, depth, cfg.z)
        full = extend_to_full_green(p, tree, table, cfg.z)
        leaves = tree.sphere(depth)
        off = max(abs(col[y] - full.offdiag(0, y)) for y in leaves)
        rows.append((depth, tree.n_vertices, abs(col[0] - table[0, 0]), off,
                     abs(col[0] - infinite)))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--z", type=complex, default=OracleConfig.z)
    args = ap.parse_args()
    print("depth,vertices,root_diff,offdiag_diff,truncation_bias")
    for depth, n, root, off, bias in run(OracleConfig(z=args.z)):
        print(f"{depth},{n},{root:.3e},{off:.3e},{bias:.3e}")


if __name__ == "__main__":
    main()
