"""From two regression slopes to an elasticity, a pass-through and a correction.

    python3 demos/recovery_arithmetic.py
"""

import numpy as np

from armington.pipelines import (
    apply_benchmark_correction,
    compute_erpt,
    recover_eta,
    recover_sigma,
)

pairs = {"coffee": (-0.672, 0.554), "beef": (-0.729, -0.654), "rocks": (0.033, -1.756)}

print(f"{'good':8s} {'kappa':>7s} {'omega':>7s} {'sigma':>8s} {'phi':>7s} {'corrected':>10s}")
for good, (kappa, omega) in pairs.items():
    sigma = recover_sigma(kappa, omega)
    phi, _ = compute_erpt(kappa, omega)
    corrected, se = apply_benchmark_correction(sigma)
    print(f"{good:8s} {kappa:7.3f} {omega:7.3f} {sigma:8.4f} {phi:7.4f} {corrected:7.3f} ({se:.3f})")

# slopes reported to three decimals only pin sigma down to a band
k, w = pairs["coffee"]
corners = [recover_sigma(k + dk, w + dw) for dk in (-5e-4, 5e-4) for dw in (-5e-4, 5e-4)]
print(f"\ncoffee sigma over the rounding box of its inputs: [{min(corners):.4f}, {max(corners):.4f}]")

print("\nwith a restrictiveness index in the demand equation:")
mu, kappa, omega = -0.714, -0.139, 0.436
print(f"  sigma = {recover_sigma(kappa, omega):.4f}, eta = {recover_eta(mu, kappa, omega):.4f}")

sigmas = np.linspace(0.5, 3.0, 6)
print("\ncorrection line a + b*sigma:", ", ".join(f"{s:.1f}->{apply_benchmark_correction(s)[0]:.2f}" for s in sigmas))
