"""
Calibrating one GNSS antenna from hilly motion
==============================================

A vehicle drives a wavy path over a hilly surface. The IMU reports its own
motion between epochs, the GNSS receiver reports how the antenna moved, and
we want the antenna position in the IMU frame.
"""

import numpy as np

from leverarm import SimConfig, assess_motion, calibrate, simulate

# Ground truth we will try to recover, in meters.
arm = (0.45, -0.20, 0.85)
data = simulate(SimConfig(steps=500, lever_arms=[arm], seed=1))
print(f"{len(data)} motion steps, surface {data.metadata['surface']}")

# Before solving, check that the rotations excite every direction.
report = assess_motion(data.batch)
print(report.summary())

# Without noise the estimate should be exact and come with a certificate.
result = calibrate(data.batch)
print("estimate:", np.round(result.lever_arms[0], 9))
print("certificate:", result.certificate.value, " gap:", f"{result.duality_gap:.2e}")

# With 10% noise the estimate degrades gracefully but stays globally optimal.
noisy = simulate(SimConfig(steps=500, lever_arms=[arm], noise=0.1, seed=1))
result = calibrate(noisy.batch)
err = np.linalg.norm(np.subtract(result.lever_arms[0], arm))
print(f"noisy estimate: {np.round(result.lever_arms[0], 4)}  error {err * 100:.2f} cm")
print("certificate:", result.certificate.value)
