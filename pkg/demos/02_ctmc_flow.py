"""
RVI as an ODE for a controlled Markov chain
============================================

In continuous time the relative value iteration becomes a flow. Its anchor
reading tends to the optimal average cost and the field tends to V* + beta.
"""
import numpy as np

from ergodic_rvi import build_c1, exact_ctmc, random_ctmc, solve_ctmc
from ergodic_rvi.ctmc_rvi import euler_dt_limit, rvi_vi_offsets

model = build_c1()
oracle = exact_ctmc(model)
print(f"C1 oracle: beta={oracle.beta:.12f} V*={oracle.value.values}")

trace, report = solve_ctmc(model, dt=0.01, T=50.0, method="rk4", record_every=500)
for t, h in zip(trace.times[::2], trace.values[::2]):
    print(f"  t={t:5.1f}  h={np.array2string(h, precision=8)}")
print(f"terminal anchor reading {report.terminal_beta:.12f}")

# RVI and VI differ only by a scalar offset that obeys its own recursion
rng = np.random.default_rng(5)
model = random_ctmc(rng, 4, 3)
beta = exact_ctmc(model).beta
dt = 0.5 * euler_dt_limit(model)
h0 = rng.normal(size=4)
rvi, _ = solve_ctmc(model, "rvi", h0=h0, dt=dt, T=400 * dt, method="euler", record_every=1)
vi, _ = solve_ctmc(model, "vi", beta=beta, h0=h0, dt=dt, T=400 * dt, method="euler",
                   record_every=1)
c = rvi_vi_offsets(vi.beta, beta, dt)
gap = np.max(np.abs(rvi.values - vi.values - c[:, None]))
print(f"random model: beta={beta:.6f}, RVI - VI - offset = {gap:.1e} over {len(rvi) - 1} steps")
