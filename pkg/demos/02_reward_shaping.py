"""How the three reward terms shape driving behavior.

Run:  python3 demos/02_reward_shaping.py
"""

import numpy as np

from highwaylab import RewardParams, RewardWeights, comfort_term, efficiency_term, safety_term

P = RewardParams()
W = RewardWeights()


def main():
    print(f"weights: safety={W.safety} comfort={W.comfort} efficiency={W.efficiency}")

    print("\nsafety vs gap to the leader (ego at 25 m/s, safe headway 1.5 s):")
    for gap in (60, 45, 37.5, 30, 20, 10, 5):
        value = safety_term(False, float(gap), 25.0, P)
        bar = "#" * int(round(-value * 40))
        print(f"  gap {gap:5.1f} m  headway {gap/25.0:4.2f} s  {value:+.3f} {bar}")
    print(f"  crash {'':14}{safety_term(True, None, 25.0, P):+.3f} " + "#" * 40)

    print("\ncomfort vs mean |acceleration| over the decision period:")
    for accel in np.linspace(0.0, 5.0, 6):
        value = comfort_term(float(accel), False, P)
        print(f"  {accel:3.1f} m/s^2 -> {value:+.3f}")
    print(f"  plus a flat {-P.kappa_lane_change:+.2f} per initiated lane change")

    print("\nefficiency vs speed (band 20..30 m/s):")
    for v in (15, 20, 22.5, 25, 27.5, 30, 35):
        print(f"  {v:5.1f} m/s -> {efficiency_term(float(v), P):+.3f}")

    print("\nweighted totals for a few driving situations:")
    rows = [
        ("cruise 30 m/s, open road", safety_term(False, None, 30, P), comfort_term(0.3, False, P), efficiency_term(30, P)),
        ("tailgating at 28 m/s", safety_term(False, 20.0, 28, P), comfort_term(0.5, False, P), efficiency_term(28, P)),
        ("smooth lane change at 25", safety_term(False, None, 25, P), comfort_term(1.0, True, P), efficiency_term(25, P)),
        ("hard braking from 30", safety_term(False, 12.0, 24, P), comfort_term(4.0, False, P), efficiency_term(24, P)),
        ("crash", safety_term(True, None, 0, P), comfort_term(2.5, False, P), efficiency_term(0, P)),
    ]
    for label, s, c, e in rows:
        total = W.safety * s + W.comfort * c + W.efficiency * e
        print(f"  {label:28s} s={s:+.3f} c={c:+.3f} e={e:+.3f} -> total {total:+.3f}")


if __name__ == "__main__":
    main()
