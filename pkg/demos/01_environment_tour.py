"""Tour of the driving environment: spawning, meta-actions, determinism.

Run:  python3 demos/01_environment_tour.py
"""

from highwaylab import EgoAction, HighwayEnv, RoadConfig


def show_state(env, label):
    ego = env.ego
    print(
        f"  {label}: ego x={ego.x:7.1f} y={ego.y:4.1f} v={ego.v:5.2f} "
        f"lane_target={ego.lane_target} crashed={ego.crashed}"
    )


def main():
    print("== merge scenario, seeded reset ==")
    env = HighwayEnv(road=RoadConfig(scenario="merge"))
    obs = env.reset(seed=7)
    print(f"observation is a flat vector of {obs.size} floats in [-1, 1]")
    show_state(env, "spawn")
    print(f"  traffic ahead: {[round(v.x) for v in env.traffic]} (m)")

    print("\n== the ego starts on the ramp; merge left, then speed up ==")
    script = [EgoAction.LANE_LEFT, EgoAction.LANE_LEFT, EgoAction.FASTER, EgoAction.FASTER]
    for action in script:
        outcome = env.step(action)
        show_state(env, action.name.lower())
        r = outcome.reward
        print(
            f"      reward: safety={r.safety:+.3f} comfort={r.comfort:+.3f} "
            f"efficiency={r.efficiency:+.3f} total={r.total:+.3f}"
        )

    print("\n== cruising until the episode ends ==")
    while env.episode_active:
        outcome = env.step(EgoAction.IDLE)
    print(
        f"  episode over after {outcome.info['sim_time']:.0f} s: "
        f"terminated={outcome.terminated} truncated={outcome.truncated} "
        f"crashed={outcome.info['crashed']}"
    )

    print("\n== determinism: same seed, same action script, same trajectory ==")
    def trajectory(seed):
        e = HighwayEnv(road=RoadConfig(scenario="merge"))
        e.reset(seed)
        xs = []
        for action in script:
            e.step(action)
            xs.append(e.ego.x)
        return xs

    a, b = trajectory(7), trajectory(7)
    print(f"  run 1: {[f'{x:.6f}' for x in a]}")
    print(f"  run 2: {[f'{x:.6f}' for x in b]}")
    print(f"  identical bit for bit: {a == b}")

    print("\n== ramp end: staying on the ramp forces a full brake ==")
    env = HighwayEnv(road=RoadConfig(scenario="merge"), n_traffic=0)
    env.reset(seed=0)
    while env.episode_active and env.ego.v > 0.5:
        env.step(EgoAction.IDLE)
    print(f"  ego stopped at x={env.ego.x:.0f} m (ramp ends at 300 m)")


if __name__ == "__main__":
    main()
