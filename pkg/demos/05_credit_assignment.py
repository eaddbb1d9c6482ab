"""Why the naive SAC + counterfactual-baseline combination cannot learn,
and what the adjusted baselines do about it.

Numbers only, no training: the degeneracy and its fixes are pure algebra.
"""

import numpy as np

from amodlab import ScheduleSpec, ScheduleState, actor_loss, advantage, schedule_value

rng = np.random.default_rng(0)
n = 5
p = rng.uniform(0.05, 0.95, size=(n, 1))
pi = np.hstack([p, 1 - p])
tgt_p = rng.uniform(0.05, 0.95, size=(n, 1))
pi_tgt = np.hstack([tgt_p, 1 - tgt_p])
q = rng.normal(size=(n, 2)) * 3
alpha = 0.7

print("policy-weighted baseline makes the loss collapse to entropy:")
naive = actor_loss("naive_coma", pi, pi_tgt, None, q, alpha=alpha)
entropy = (pi * (alpha * np.log(pi))).sum(axis=1).mean()
print(f"  naive loss    = {float(naive):+.12f}")
print(f"  entropy term  = {entropy:+.12f}")
print(f"  difference    = {float(naive) - entropy:+.2e}   (Q dropped out entirely)")

print("\nthe same Q-values through the usable baselines:")
for name in ("coma", "equ", "tgt"):
    a = advantage(name, pi, pi_tgt, q)
    weighted = (pi * a).sum(axis=1)
    print(f"  {name:>4}: policy-weighted advantage per agent = "
          + ", ".join(f"{w:+.3f}" for w in weighted))
print("  (coma is centered by construction - that is exactly the degeneracy;")
print("   equ and tgt keep a usable learning signal)")

print("\nthe adjusted baseline blends equ -> tgt as beta rises:")
for beta in (0.0, 0.25, 0.5, 0.75, 1.0):
    a = advantage("adj", pi, pi_tgt, q, beta=beta)
    print(f"  beta {beta:4.2f}: advantage of agent 0 = ({a[0, 0]:+.3f}, {a[0, 1]:+.3f})")

print("\nschedules that drive beta and kappa over a 400k-step run:")
sched = ScheduleState(
    step=0,
    total_steps=400_000,
    beta_schedule=ScheduleSpec("linear"),
    kappa_schedule=ScheduleSpec("power", 0.25),
)
print(f"  {'step':>8}  {'beta (linear)':>14}  {'kappa (power 0.25)':>19}")
for step in (0, 25_000, 100_000, 200_000, 400_000):
    sched.step = step
    print(f"  {step:>8}  {schedule_value('beta', sched):>14.3f}  "
          f"{schedule_value('kappa', sched):>19.3f}")

sched.kappa_schedule = ScheduleSpec("jump", 0.25)
sched.step = 99_999
before = schedule_value("kappa", sched)
sched.step = 100_000
after = schedule_value("kappa", sched)
print(f"\n  jump(0.25) over 400k steps: kappa = {before:.0f} until step 99,999, "
      f"{after:.0f} from step 100,000")
