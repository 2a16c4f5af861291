"""
Why planar motion needs prior knowledge
=======================================

On a flat floor every rotation is about the vertical axis, so the height of
the antenna above the IMU never shows up in the data. The solver refuses to
guess; a known arm length (or height) closes the gap.
"""

import numpy as np

from leverarm import ArmLength, ComponentMagnitude, Flat, MotionError, SignPolicy, SimConfig, SolverOptions
from leverarm import assess_motion, calibrate, simulate

arm = np.array([0.30, 0.10, 0.75])
data = simulate(SimConfig(steps=400, lever_arms=[arm], surface=Flat(), seed=3))
print("verdict:", assess_motion(data.batch).verdict.value)

try:
    calibrate(data.batch)
except MotionError as exc:
    print("without priors:", exc)

# A tape-measured arm length makes the problem well posed up to a mirror
# image below the IMU; the mounting assumption picks the upper one.
length = float(np.linalg.norm(arm))
opts = SolverOptions(sign_policy=SignPolicy.ABOVE_IMU)
result = calibrate(data.batch, [ArmLength(0, length)], opts)
print("with arm length:", np.round(result.lever_arms[0], 6), result.certificate.value)
for antenna, mirrored, cost in result.alternatives:
    print(f"  mirrored alternative for antenna {antenna}: {np.round(mirrored, 6)} (cost {cost:.2e})")

# Knowing the height as well adds nothing new here but removes the ambiguity
# for noisy data.
priors = [ArmLength(0, length), ComponentMagnitude(0, "z", float(arm[2]))]
result = calibrate(data.batch, priors, opts)
print("with length and height:", np.round(result.lever_arms[0], 6))
