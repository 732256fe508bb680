"""A small end-to-end training run on the merge scenario.

Trains DQN for 8000 steps (about 15 seconds), then evaluates the result
against the random policy on identical seeds. Outputs land in demo_out/.

Run:  python3 demos/05_train_merge_small.py
"""

from pathlib import Path

from highwaylab import parse_config, run_eval, run_train
from highwaylab.harness import RandomPolicy, evaluate_policy

CONFIG = """
[experiment]
agent = dqn
scenario = merge
seeds = 7
total_env_steps = 8000
eval_every = 2000
eval_episodes = 10

[dqn]
learn_start = 500
epsilon_decay_steps = 4000
"""


def main():
    cfg = parse_config(CONFIG)
    out = Path("demo_out")
    run_dirs = run_train(cfg, out / "train")
    run_dir = run_dirs[7]

    print("\ntraining eval curve (eval.csv):")
    for line in (run_dir / "eval.csv").read_text().splitlines():
        print("  " + line)

    summary = run_eval(cfg, run_dir / "checkpoint_final.bin", out / "eval")
    baseline, _ = evaluate_policy(cfg, RandomPolicy(), cfg.eval_episodes)
    print("\ntrained DQN vs random on identical evaluation seeds:")
    print(f"  dqn    mean return {summary['mean_return']:7.3f}  collisions {summary['collision_rate']:.2f}")
    print(f"  random mean return {baseline['mean_return']:7.3f}  collisions {baseline['collision_rate']:.2f}")
    print(f"\nper-episode logs and checkpoints: {run_dir}")


if __name__ == "__main__":
    main()
