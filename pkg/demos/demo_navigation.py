"""Repulsion-aware path planning, step by step.

Builds the obstacle map for the living-room fixture, plans the same route at
several repulsion ratios, and shows how lowering alpha pushes the path away
from furniture. Writes weights.pgm and (when matplotlib is present) a
navigation.png overlay.
"""

from pathlib import Path

import numpy as np

from roomagent.navigation import RepulsionParams, build_map, dump_weights_pgm, plan_world
from roomagent.scene import load_scene

REPO = Path(__file__).resolve().parent.parent


def main():
    scene = load_scene(REPO / "scenes" / "living_room.scene")
    omap = build_map(scene, resolution=256)
    print(f"map {omap.shape[1]}x{omap.shape[0]} px, "
          f"{omap.meters_per_pixel:.4f} m/px, "
          f"{(~omap.obstacle).mean():.0%} navigable")

    start, goal = (1.0, 1.0), (4.0, 5.0)
    paths = {}
    for alpha in (1.0, 0.7, 0.4):
        params = RepulsionParams(alpha=alpha, beta=0.5)
        result = plan_world(omap, params, start, goal)
        paths[alpha] = result
        clearances = [
            omap.distance[rc] * omap.meters_per_pixel for rc in result.dense
        ]
        print(f"alpha={alpha}: cost {result.cost:7.2f}, "
              f"{len(result.dense):4d} cells, {len(result.waypoints)} waypoints, "
              f"min clearance {min(clearances):.2f} m")

    out = Path(__file__).parent / "weights.pgm"
    out.write_bytes(dump_weights_pgm(omap, RepulsionParams(alpha=0.4, beta=0.5)))
    print(f"weight grid -> {out}")

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed; skipping the overlay plot")
        return
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(omap.obstacle, origin="lower", cmap="gray_r",
              extent=[omap.origin[0], omap.origin[0] + omap.shape[1] * omap.meters_per_pixel,
                      omap.origin[1], omap.origin[1] + omap.shape[0] * omap.meters_per_pixel])
    for alpha, result in paths.items():
        pts = np.array([omap.pixel_to_world(rc) for rc in result.dense])
        ax.plot(pts[:, 0], pts[:, 1], label=f"alpha={alpha}")
        wps = np.array(result.waypoints)
        ax.plot(wps[:, 0], wps[:, 1], "o", markersize=3)
    ax.legend()
    ax.set_title("lower alpha = stronger wall repulsion")
    fig.savefig(Path(__file__).parent / "navigation.png", dpi=120)
    print(f"overlay -> {Path(__file__).parent / 'navigation.png'}")


if __name__ == "__main__":
    main()
