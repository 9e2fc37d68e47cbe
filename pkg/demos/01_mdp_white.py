"""
Relative value iteration on a two-state MDP
============================================

State 0 offers a cheap action that mixes evenly and an expensive one that
mostly stays put. State 1 is free. White's iteration pins the last state to
zero and reads the average cost off the anchor.
"""
import numpy as np

from ergodic_rvi import (
    build_e1, build_two_cycle, exact_ergodic, random_mdp, solve_bertsekas, solve_white,
)

mdp = build_e1()
report = solve_white(mdp, tol=1e-12)
print(f"white:     status={report.status} steps={report.steps}")
print(f"           lambda={report.terminal_beta:.12f} h={report.terminal_value.values}")

# Enumerating both stationary policies gives the exact answer
oracle = exact_ergodic(mdp)
print(f"oracle:    beta={oracle.beta:.12f} V*={oracle.value.values} policy={oracle.policy}")

# Bertsekas' variant moves lambda with a stepsize instead of resetting it
report = solve_bertsekas(mdp, tol=1e-12, gamma=0.5)
print(f"bertsekas: steps={report.steps} lambda={report.terminal_beta:.12f}")

# A deterministic 2-cycle is periodic, so undamped iteration oscillates
cycle = build_two_cycle()
plain = solve_white(cycle, max_iters=50)
damped = solve_white(cycle, damping=0.5)
tail = [round(r.beta_estimate, 3) for r in plain.records[-4:]]
print(f"2-cycle:   alpha=1 -> {plain.status}, last estimates {tail}")
print(f"           alpha=0.5 -> {damped.status}, beta={damped.terminal_beta:.6f}")

# On a larger random model the change per step shrinks geometrically
big = random_mdp(np.random.default_rng(1), 6, 4)
changes = np.array([r.sup_change for r in solve_white(big, tol=1e-14).records[1:9]])
print("random 6x4 MDP, sup change per step:", np.array2string(changes, precision=1))
