import numpy as np, time, sys
sys.path.insert(0, 'tests')
from conftest import fill_buffer_random
from preflab.envs import make_env
from preflab.agent import guided_goal_episode
from preflab.annotators import generate_trap_pairs, oracle_label
from preflab.experience import PreferenceDataset, QueryTriple
from preflab.rewardnet import init_ensemble
from preflab.semisup import SSLConfig, self_training_session, ensemble_mean_prob

H = 20

def build_world(seed):
    env = make_env("grid-hazard", seed)
    buffer = fill_buffer_random(env, 3000, seed=seed)
    g = np.random.default_rng(seed + 500)
    for _ in range(40):
        guided_goal_episode(env, buffer, wander_steps=int(g.integers(22, 40)), rng=g)
    return env, buffer

def accuracy(ens, eval_set):
    return float(np.mean([float((ensemble_mean_prob(ens, t.first, t.second)[0] >= 0.5)
                          == (t.label.p_first == 1.0)) for t in eval_set]))

def run_arm(seed, alpha, steps=400, members=3):
    env, buffer = build_world(seed)
    rng = np.random.default_rng(seed + 1)
    traps = generate_trap_pairs(env, buffer, H, 60, rng)
    d_l = PreferenceDataset("labeled")
    for _ in range(80):
        a, b = buffer.sample_segment_pair(H, rng)
        d_l.append(QueryTriple(a, b, oracle_label(a, b, env.gt), "oracle"))
    for i in range(20):
        base, _ = traps[int(rng.integers(len(traps)))]
        d_l.append(QueryTriple(base.first, base.second,
                               oracle_label(base.first, base.second, env.gt), "oracle"))
    trap_instances = [(t.first, t.second) for pair in traps for t in pair]
    eval_traps = generate_trap_pairs(env, buffer, H, 25, np.random.default_rng(seed + 77))
    eval_unif = []
    er = np.random.default_rng(seed + 88)
    while len(eval_unif) < 100:
        a, b = buffer.sample_segment_pair(H, er)
        if env.gt.segment_return(a) == env.gt.segment_return(b): continue
        eval_unif.append(QueryTriple(a, b, oracle_label(a, b, env.gt), "oracle"))
    eval_trap_items = [t for pair in eval_traps for t in pair]
    full_eval = eval_unif + eval_trap_items

    k = 0
    def pair_source(r):
        nonlocal k
        k += 1
        if k % 4 == 0:
            return trap_instances[int(r.integers(len(trap_instances)))]
        return buffer.sample_segment_pair(H, r)

    ens = init_ensemble(env.state_dim + env.action_dim, (32, 32), members, 5e-3,
                        np.random.default_rng(seed + 1000))
    d_u = PreferenceDataset("pseudo")
    srng = np.random.default_rng(seed + 2000)
    for ratio in (5, 5, 0):
        cfg = SSLConfig(method="STRAPPER", peer_weight=alpha, unlabeled_ratio=ratio,
                        train_steps=steps, batch_size=48)
        ens, d_u, stats = self_training_session(ens, d_l, d_u, buffer, cfg, srng,
                                                labels_added=100, pair_source=pair_source)
    return accuracy(ens, full_eval), accuracy(ens, eval_trap_items), accuracy(ens, eval_unif)

if __name__ == "__main__":
    t0 = time.time()
    margins = []
    n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
    for seed in range(n_seeds):
        s_all, s_trap, s_unif = run_arm(seed, 1.0)
        c_all, c_trap, c_unif = run_arm(seed, 0.0)
        margins.append(s_all - c_all)
        print(f"seed {seed}: STRAPPER {s_all:.3f} (trap {s_trap:.3f} unif {s_unif:.3f}) | "
              f"CR {c_all:.3f} (trap {c_trap:.3f} unif {c_unif:.3f}) | margin {s_all-c_all:+.3f}",
              flush=True)
    print(f"mean margin {np.mean(margins):+.4f}, time {time.time()-t0:.1f}s")
