"""Smoke test for the mnl_bandit Python extension.

Build and install first:  pip install --no-build-isolation -e crates/python
"""

import json
import math
import random
import tempfile

import mnl_bandit as mb


def check_model():
    # One item with utility log 2 against the outside option: 2/3 vs 1/3.
    probs = mb.choice_probabilities([[math.log(2.0)]], [1.0], [0])
    assert abs(probs[0] - 2 / 3) < 1e-12 and abs(probs[1] - 1 / 3) < 1e-12, probs
    rev = mb.expected_revenue([[0.0], [0.0]], [1.0], [0, 1], revenues=[1.0, 0.5])
    assert abs(rev - 0.5) < 1e-12, rev


def check_optimizer():
    rng = random.Random(3)
    for _ in range(50):
        n = rng.randint(2, 8)
        u = [rng.uniform(-2, 2) for _ in range(n)]
        r = [rng.uniform(-0.2, 1) for _ in range(n)]
        k = rng.randint(1, min(3, n))
        assert mb.argmax_assortment(u, r, k) == mb.enumerate_oracle(u, r, k)
    assert mb.argmax_assortment([0.1, 0.9, 0.5], [1, 1, 1], 2) == [1, 2]


def check_mle():
    # d = 1 logistic reduction: chosen in 2 of 3 rounds -> theta = log 2.
    theta, grad, _, ok = mb.mle_fit([[[1.0]]] * 3, [0, 0, None])
    assert ok and grad <= 1e-10 and abs(theta[0] - math.log(2.0)) < 1e-8, theta


def check_policy():
    rng = random.Random(5)
    n, d, k = 10, 3, 2
    theta_star = [rng.random() for _ in range(d)]
    for tag in ["UCB_MNL", "UCB_MNL_ONS", "DBL_MNL", "SUPCB_MNL"]:
        policy = mb.Policy(tag, n, d, horizon=100, capacity=k, seed=1)
        for _ in range(100):
            xs = []
            for _ in range(n):
                v = [rng.gauss(0, 1) for _ in range(d)]
                norm = max(1.0, math.sqrt(sum(a * a for a in v)))
                xs.append([a / norm for a in v])
            offer = policy.select(xs)
            assert len(offer) == k
            probs = mb.choice_probabilities(xs, theta_star, offer)
            u, acc, chosen = rng.random(), 0.0, None
            for item, p in zip(offer, probs):
                acc += p
                if u < acc:
                    chosen = item
                    break
            policy.update(chosen)
        assert policy.parameter_updates >= 1, tag
        print(f"{tag}: {policy.parameter_updates} parameter updates")


def check_experiment():
    config = {"N": 10, "K": 2, "d": 3, "T": 150, "algorithms": ["UCB_MNL", "DBL_MNL"], "seed": 11, "replications": 2}
    spec = json.loads(mb.resolve_config(json.dumps(config)))
    assert spec["replications"] == 2
    with tempfile.TemporaryDirectory() as out:
        rows = mb.run_experiment(json.dumps(config), out)
    assert [r["algorithm"] for r in rows] == ["UCB_MNL", "DBL_MNL"]
    for r in rows:
        assert r["T"] == 150 and r["mean_final_regret"] > 0
        print(r)
    try:
        mb.resolve_config(json.dumps({**config, "K": 20}))
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("K > N accepted")


if __name__ == "__main__":
    print("mnl_bandit", mb.__version__)
    check_model()
    check_optimizer()
    check_mle()
    check_policy()
    check_experiment()
    print("smoke test passed")
