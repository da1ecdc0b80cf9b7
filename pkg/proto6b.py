import numpy as np, time, sys
sys.path.insert(0, 'tests')
from conftest import fill_buffer_random
from preflab.envs import make_env
from preflab.agent import guided_goal_episode
from preflab.annotators import generate_trap_pairs, oracle_label
from preflab.experience import PreferenceDataset, QueryTriple
from preflab.rewardnet import init_ensemble
from preflab.sampler import disagreement_score
from preflab.semisup import SSLConfig, self_training_session, ensemble_mean_prob

H = 20

def accuracy(ens, eval_set):
    return float(np.mean([float((ensemble_mean_prob(ens, t.first, t.second)[0] >= 0.5)
                          == (t.label.p_first == 1.0)) for t in eval_set]))

def setup(seed):
    env = make_env("grid-hazard", seed)
    buffer = fill_buffer_random(env, 3000, seed=seed)
    g = np.random.default_rng(seed + 500)
    for _ in range(40):
        guided_goal_episode(env, buffer, wander_steps=int(g.integers(22, 40)), rng=g)
    rng = np.random.default_rng(seed + 1)
    traps = generate_trap_pairs(env, buffer, H, 60, rng)
    trap_instances = [(t.first, t.second) for pair in traps for t in pair]
    eval_traps = generate_trap_pairs(env, buffer, H, 25, np.random.default_rng(seed + 77))
    eval_unif = []
    er = np.random.default_rng(seed + 88)
    while len(eval_unif) < 100:
        a, b = buffer.sample_segment_pair(H, er)
        if env.gt.segment_return(a) == env.gt.segment_return(b): continue
        eval_unif.append(QueryTriple(a, b, oracle_label(a, b, env.gt), "oracle"))
    eval_trap_items = [t for pair in eval_traps for t in pair]
    return env, buffer, trap_instances, eval_unif, eval_trap_items

def run(seed, alpha, trap_every=3, l2=1.0, steps=500, lr=5e-3):
    env, buffer, trap_instances, eval_unif, eval_trap_items = setup(seed)
    k = 0
    def pair_source(r):
        nonlocal k
        k += 1
        if k % trap_every == 0:
            return trap_instances[int(r.integers(len(trap_instances)))]
        return buffer.sample_segment_pair(H, r)

    ens = init_ensemble(env.state_dim + env.action_dim, (32, 32), 3, lr,
                        np.random.default_rng(seed + 1000))
    srng = np.random.default_rng(seed + 2000)
    qrng = np.random.default_rng(seed + 3000)
    d_l = PreferenceDataset("labeled")
    d_u = PreferenceDataset("pseudo")
    for session in range(5):
        # acquire 20 oracle labels: uniform first, then by ensemble disagreement
        if session == 0:
            picked = [pair_source(qrng) for _ in range(20)]
        else:
            candidates = [pair_source(qrng) for _ in range(120)]
            scores = np.array([disagreement_score(ens, a, b) for a, b in candidates])
            order = np.argsort(-scores, kind="stable")[:20]
            picked = [candidates[i] for i in order]
        for a, b in picked:
            d_l.append(QueryTriple(a, b, oracle_label(a, b, env.gt), "oracle"))
        cfg = SSLConfig(method="STRAPPER", peer_weight=alpha, unlabeled_ratio=10,
                        train_steps=steps, batch_size=48, reward_l2=l2, lr_decay=0.05)
        ens, d_u, _ = self_training_session(ens, d_l, d_u, buffer, cfg, srng,
                                            labels_added=20, pair_source=pair_source)
    full = eval_unif + eval_trap_items
    return accuracy(ens, full), accuracy(ens, eval_trap_items), accuracy(ens, eval_unif)

if __name__ == "__main__":
    t0 = time.time()
    alphas = [float(a) for a in (sys.argv[1] if len(sys.argv) > 1 else "0,1").split(",")]
    seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 3
    results = {a: [] for a in alphas}
    for seed in range(seeds):
        line = f"seed {seed}:"
        for a in alphas:
            f, tr, un = run(seed, a)
            results[a].append(f)
            line += f"  a={a}: full {f:.3f} trap {tr:.2f} unif {un:.2f} |"
        print(line, flush=True)
    for a in alphas:
        print(f"alpha {a}: mean {np.mean(results[a]):.4f}")
    print(f"time {time.time()-t0:.1f}s")
