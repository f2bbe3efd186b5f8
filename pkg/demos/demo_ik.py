"""Arm-chain IK in isolation: reach targets, out-of-reach pointing, and the
per-frame clip refinement that drives a hand onto a commanded point.
"""

import numpy as np

from roomagent.ik import ArmChain, apply_to_clip, place_hand, solve
from roomagent.motion.frames import JOINTS, Pose2, stance_clip, world_joints


def main():
    chain = ArmChain.from_points(
        shoulder=(0.0, 0.0, 1.35), elbow=(0.25, 0.0, 1.1), wrist=(0.45, 0.0, 0.95),
    )
    print(f"chain: upper {chain.upper_len:.3f} m, fore {chain.fore_len:.3f} m, "
          f"reach {chain.upper_len + chain.fore_len:.3f} m")

    print("== reachable targets")
    rng = np.random.default_rng(0)
    for _ in range(4):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        target = chain.shoulder + rng.uniform(0.2, 0.5) * direction
        solved = solve(chain, target)
        err = np.linalg.norm(solved.wrist - target)
        hand = place_hand(solved)
        print(f"   target {np.round(target, 2)} wrist err {err:.2e} "
              f"hand {np.round(hand, 2)}")

    print("== out of reach: chain extends toward the target")
    far = chain.shoulder + np.array([2.0, 0.0, 0.0])
    solved = solve(chain, far)
    print(f"   wrist at {np.round(solved.wrist, 3)} "
          f"(= shoulder + reach toward the target)")

    print("== refining a whole clip")
    clip = stance_clip(40)
    target = (0.35, 0.1, 1.2)
    refined = apply_to_clip(clip, {"right_hand": target})
    hand = world_joints(refined, Pose2())[-1, JOINTS.index("right_hand")]
    print(f"   command {target} -> final hand {np.round(hand, 4)} "
          f"(error {np.linalg.norm(hand - target):.2e} m)")


if __name__ == "__main__":
    main()
