#!/usr/bin/env python3
"""Max |Q - Q*| of tabular Q-learning on the 10x10 fixed-mailbox grid.

Compares visit-count step sizes (1 + n) ** -omega; omega=1 is the plain
1/n schedule.
"""

import argparse

from qintrospect.oracle import build_grid_mdp, max_error, q_learning_on_mdp, value_iteration


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma", type=float, default=0.99)
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--omegas", default="1.0,0.85,0.7,0.55")
    args = ap.parse_args()

    mdp = build_grid_mdp(10)
    q_star, sweeps = value_iteration(mdp, args.gamma)
    print(f"value iteration: {sweeps} sweeps, {len(mdp.states)} states")
    for omega in (float(w) for w in args.omegas.split(",")):
        table, visits = q_learning_on_mdp(mdp, args.steps, args.gamma, omega=omega)
        print(f"omega={omega:<5} max |Q - Q*| = {max_error(table, mdp, q_star, visits):.4f}")


if __name__ == "__main__":
    main()
