"""The rule-based baseline against the random policy, highway and merge.

The finite-state baseline follows, prepares, and executes lane changes from
threshold rules. On the open highway it overtakes cleanly; on the merge it
never leaves the ramp (no leader ever triggers its lane-change rule), which
is exactly the kind of unanticipated scenario rule sets struggle with.

Run:  python3 demos/06_rules_vs_random.py
"""

from highwaylab import parse_config
from highwaylab.harness import RandomPolicy, RulePolicy, evaluate_policy

TEMPLATE = """
[experiment]
agent = rules
scenario = {scenario}
seeds = 1, 2, 3
eval_episodes = 30
"""


def main():
    for scenario in ("highway", "merge"):
        cfg = parse_config(TEMPLATE.format(scenario=scenario))
        rules, _ = evaluate_policy(cfg, RulePolicy(cfg), cfg.eval_episodes)
        random_, _ = evaluate_policy(cfg, RandomPolicy(), cfg.eval_episodes)
        print(f"== {scenario} (30 episodes, identical seeds) ==")
        for name, s in (("rules", rules), ("random", random_)):
            print(
                f"  {name:6s} mean return {s['mean_return']:7.3f}  "
                f"std {s['std_return']:6.3f}  collisions {s['collision_rate']:.2f}  "
                f"mean speed {s['mean_speed']:5.2f} m/s"
            )
        print()


if __name__ == "__main__":
    main()
