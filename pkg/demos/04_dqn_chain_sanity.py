"""DQN sanity check on a 5-state chain against exact value iteration.

States sit on a line; RIGHT moves toward the terminal state (reward 1 on
arrival), LEFT moves away. With one-hot observations and a purely linear
Q network the learner must recover the value-iteration optimum.

Run:  python3 demos/04_dqn_chain_sanity.py
"""

import numpy as np

from highwaylab import DqnConfig, DqnLearner, Transition

N_STATES = 5
TERMINAL = N_STATES - 1
LEFT, RIGHT = 0, 1
GAMMA = 0.9


def chain_step(state, action):
    nxt = min(state + 1, TERMINAL) if action == RIGHT else max(state - 1, 0)
    reward = 1.0 if nxt == TERMINAL else 0.0
    return nxt, reward, nxt == TERMINAL


def one_hot(state):
    v = np.zeros(N_STATES)
    v[state] = 1.0
    return v


def value_iteration():
    q = np.zeros((N_STATES, 2))
    for _ in range(200):
        new = np.zeros_like(q)
        for s in range(TERMINAL):
            for a in (LEFT, RIGHT):
                nxt, r, done = chain_step(s, a)
                new[s, a] = r + (0.0 if done else GAMMA * q[nxt].max())
        q = new
    return q


def main():
    q_star = value_iteration()
    print("value-iteration optimum (non-terminal states):")
    for s in range(TERMINAL):
        print(f"  state {s}: Q*(left)={q_star[s, LEFT]:.4f} Q*(right)={q_star[s, RIGHT]:.4f}")

    config = DqnConfig(
        gamma=GAMMA,
        learning_rate=0.02,
        batch_size=32,
        buffer_capacity=5_000,
        learn_start=64,
        target_sync_every=200,
        epsilon_decay_steps=2_000,
        hidden_sizes=(),  # single linear layer: the tabular case
    )
    learner = DqnLearner(obs_dim=N_STATES, n_actions=2, config=config, seed=0)
    rng = np.random.default_rng(0)

    for episode in range(200):
        state = int(rng.integers(TERMINAL))
        for _ in range(30):
            obs = one_hot(state)
            action = learner.act(obs)
            nxt, reward, done = chain_step(state, action)
            learner.observe(Transition(obs, action, reward, one_hot(nxt), done))
            learner.train_step()
            state = nxt
            if done:
                break

    q = np.stack([learner.q_values(one_hot(s)) for s in range(N_STATES)])
    gap = np.max(np.abs(q[:TERMINAL] - q_star[:TERMINAL]))
    print("\nlearned Q (non-terminal states):")
    for s in range(TERMINAL):
        print(f"  state {s}: Q(left)={q[s, LEFT]:.4f} Q(right)={q[s, RIGHT]:.4f}")
    print(f"\nmax |Q - Q*| = {gap:.5f}")
    greedy = [int(np.argmax(q[s])) for s in range(TERMINAL)]
    print(f"greedy policy: {['RIGHT' if a == RIGHT else 'LEFT' for a in greedy]}")
    print("matches the optimum" if all(a == RIGHT for a in greedy) else "MISMATCH")


if __name__ == "__main__":
    main()
