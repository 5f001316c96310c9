"""Why the naive regression fails and what fixes it.

Draws 200 synthetic panels with supply feedback (sigma = 3, omega = 0.5)
and compares the plain double-demeaned slope, the joint supply/equilibrium
estimator and the quantity-based IV benchmark.

    python3 demos/endogeneity.py
"""

from armington.simulator import DgpConfig, run_monte_carlo

cfg = DgpConfig(sigma=3.0, omega=0.5, N=20, T=60)
mc = run_monte_carlo(cfg, methods=("naive", "sur", "ivfe"), reps=200)

print(f"true sigma = {cfg.sigma}, implied reduced-form slope kappa = {mc.kappa:g}")
print(f"{'method':8s} {'mean':>8s} {'bias':>8s} {'MC SE':>8s} {'coverage':>9s}")
for name, s in mc.methods.items():
    print(f"{name:8s} {s.mean:8.4f} {s.bias:8.4f} {s.mc_se:8.4f} {s.coverage:9.3f}")

naive_sigma = 1 - mc["naive"].mean
print(f"\nreading the naive slope as 1 - sigma gives {naive_sigma:.3f}, not {cfg.sigma}:")
print("the exchange rate moves shares, shares move supply prices, and the")
print("regression cannot separate the two. Pinning prices at one period lets the")
print("supply slope be estimated and the elasticity recovered from both slopes.")
print(f"({mc.elapsed:.1f} s)")
