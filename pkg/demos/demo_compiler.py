"""The three-stage instruction compiler, narrated.

Runs attribute analysis, pose reasoning, and joint-target generation for
"turn on lamp1" in the living-room fixture, using the offline rule-based
answerer in place of a live VLM, and prints every stage's outcome.
"""

from pathlib import Path

from roomagent.compiler import AgentView, InstructionCompiler
from roomagent.motion.frames import Pose2
from roomagent.scene import load_scene
from roomagent.scripted import RuleAnswerer

REPO = Path(__file__).resolve().parent.parent


def main():
    scene = load_scene(REPO / "scenes" / "living_room.scene")
    compiler = InstructionCompiler(scene, RuleAnswerer(scene))
    view = AgentView(pose=Pose2(1.5, 3.0, 0.0),
                     holding={"left_hand": None, "right_hand": None})

    print("== stage 1: attribute analysis (5-instance vote)")
    attrs = compiler.analyze_attributes("Touching lamp1.", view)
    print(f"   target={attrs.target_id} anchor={attrs.anchor_id} "
          f"kind={attrs.kind} joints={attrs.key_joints} ik={attrs.use_ik}")

    print("== stage 2: pose reasoning (direction / distance / facing labels)")
    location, facing = compiler.reason_pose(attrs, view)
    print(f"   stand at ({location[0]:.2f}, {location[1]:.2f}), "
          f"facing {facing:+.2f} rad")

    print("== stage 3: key joint targets (8x8 surface grid)")
    targets, force = compiler.generate_joint_targets(attrs, (location, facing))
    for joint, tgt in targets.items():
        tag = " (force: press toward the center)" if joint in force else ""
        print(f"   {joint} -> ({tgt[0]:.2f}, {tgt[1]:.2f}, {tgt[2]:.2f}){tag}")

    print("== emitted VQA trace")
    for rec in compiler.trace:
        payload = (rec["payload"] or "").replace("\n", " | ")[:70]
        print(f"   [{rec['stage']:12s}] digest {rec['digest']} -> {payload}")

    print("\n== same pipeline via plan_step (decision + full compile)")
    compiler2 = InstructionCompiler(scene, RuleAnswerer(scene, plan=[[("touch", "lamp1")]]))
    compiler2.begin("turn on lamp1")
    decision, action = compiler2.plan_step(view, [])
    print(f"   decision: {decision.verb}({decision.caption!r})")
    print(f"   command: caption={action.command.caption!r} "
          f"location={action.command.location} facing={action.command.facing:.2f}")


if __name__ == "__main__":
    main()
