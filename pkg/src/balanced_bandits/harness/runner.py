"""Seeded select/observe/update loops over an environment."""

from __future__ import annotations

import numpy as np
from sklearn.base import clone

from ..environments import ClassificationEnv, Environment
from ..features import ContextFeatures
from ..policies.base import ContextualBandit, OraclePolicy
from .trace import RegretTrace, context_hash

MSE_TEST_SIZE = 500


def replication_streams(seed_base: int, seed: int):
    """Independent streams for environment, selection, policy internals and the warm start.

    The environment stream depends only on ``(seed_base, seed)`` so every
    policy faces the same contexts and noise for a given seed.
    """
    env_ss, sel_ss, pol_ss, warm_ss, test_ss = np.random.SeedSequence([seed_base, seed]).spawn(5)
    return {
        "env": np.random.default_rng(env_ss),
        "select": np.random.default_rng(sel_ss),
        "policy_seed": int(pol_ss.generate_state(1)[0]),
        "warm": np.random.default_rng(warm_ss),
        "test": np.random.default_rng(test_ss),
    }


def run_replication(policy: ContextualBandit, env: Environment, horizon: int, seed: int,
                    features: ContextFeatures | None = None, seed_base: int = 0,
                    target_coef: np.ndarray | None = None, name: str | None = None,
                    use_warm_start: bool = True, track_mse: bool = False) -> RegretTrace:
    """Run one policy on one environment for ``horizon`` steps.

    ``target_coef`` (arms x features) replaces the true optimal arm as the
    assignment target with ``argmax(target_coef @ phi(x))``, which is how a
    constrained optimum for a mis-specified feature map is expressed.
    """
    features = features if features is not None else ContextFeatures("identity")
    features.fit()
    streams = replication_streams(seed_base, seed)
    policy = clone(policy)
    if "random_state" in policy.get_params():
        policy.set_params(random_state=streams["policy_seed"])
    env.reset(streams["env"])
    if isinstance(env, ClassificationEnv):
        horizon = min(horizon, len(env)) if horizon is not None else len(env)
    n_out = features.n_output_features(env.n_features)
    policy.start(env.n_arms, n_out)

    if use_warm_start:
        Xw, aw, rw = env.warm_start(streams["warm"])
        if len(aw):
            policy.warm_start(features.transform(Xw), aw, rw, np.full(len(aw), 1.0 / env.n_arms))

    T = int(horizon)
    arms = np.empty(T, dtype=int)
    rewards = np.empty(T)
    best = np.empty(T)
    regret = np.empty(T)
    opt = np.empty(T, dtype=int)
    target = np.empty(T, dtype=int)
    hashes = []
    is_oracle = isinstance(policy, OraclePolicy)
    sel = streams["select"]
    for t in range(T):
        x, means, realized = env.draw(streams["env"])
        phi = features.transform_one(x)
        if is_oracle:
            policy.observe_means(means)
        a = policy.select_arm(phi, sel)
        policy.update(phi, a, realized[a])
        arms[t] = a
        rewards[t] = realized[a]
        best[t] = means.max()
        regret[t] = means.max() - means[a]
        opt[t] = int(np.argmax(means))
        target[t] = opt[t] if target_coef is None else int(np.argmax(target_coef @ phi))
        hashes.append(context_hash(x))

    trace = RegretTrace(
        policy=name or type(policy).__name__, seed=seed, t=np.arange(T), context_hash=hashes,
        arm=arms, reward=rewards, optimal_reward=best, regret=regret,
        optimal_arm=opt, target_arm=target,
    )
    if track_mse and hasattr(policy, "predict_means") and not isinstance(env, ClassificationEnv):
        X_test = env.sample_contexts(MSE_TEST_SIZE, streams["test"])
        truth = np.array([env.mean_rewards(x) for x in X_test])
        pred = policy.predict_means(features.transform(X_test))
        trace.mse = {int(a): float(np.mean((pred[:, a] - truth[:, a]) ** 2)) for a in range(env.n_arms)}
    return trace
