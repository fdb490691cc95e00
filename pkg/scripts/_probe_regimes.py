"""Dev probe: sweep generator regimes and bench configs for ordering behavior."""

import sys
from statistics import mean

import cfstream.ingest as ing
from cfstream.baselines import ALGORITHMS
from cfstream.domain import Item, UtilityConfig
from cfstream.evaluation import transport_cost, violation_count
from cfstream.similarity import SimilarityMeasure


def make_query(gen, qmode, sigma):
    means = ing._cluster_means(gen)
    dims = gen.dims
    L = gen.label_count
    if qmode == "cluster":
        import random

        rq = random.Random(f"{gen.seed}:q")
        return Item(-1, 1, tuple(min(1, max(0, rq.gauss(means[0][d], sigma))) for d in range(dims)), ())
    center = [sum(ms[d] for ms in means) / L for d in range(dims)]
    vals = tuple(
        min(1.0, max(0.0, means[0][d] + (0.45 if means[0][d] >= center[d] else -0.45)))
        for d in range(dims)
    )
    return Item(-1, 1, vals, ())


def run(regime, qmode, cfg_kind, swap_lambda, k, seeds=8, n=2000, L=4, dims=4):
    lo, hi, sigma = regime
    ing._CLUSTER_LO, ing._CLUSTER_HI, ing._CLUSTER_SIGMA = lo, hi, sigma
    res = {}
    for seed in range(seeds):
        for ldist, tag in (("skewed", "v"), ("normal", "c")):
            gen = ing.SynthConfig(n=n, label_count=L, dims=dims, label_dist=ldist, seed=seed)
            schema = ing.synth_schema(gen)
            items = list(ing.synth_stream(gen))
            q = make_query(gen, qmode, sigma)
            spec = ing.synth_bounds(gen, k)
            lam = {"l1": 0.5, "l3": 0.5} if cfg_kind == "div" else {"l1": 0.0, "l3": 0.0}
            cfg = UtilityConfig(
                lambda1=lam["l1"], lambda2=0.0, lambda3=lam["l3"],
                swap_threshold=swap_lambda, seed=seed,
            )
            m = SimilarityMeasure(schema)
            for name in ("ours", "relaxed", "random", "sieve"):
                expl, stats = ALGORITHMS[name](items, q, spec, cfg, schema, seed=seed, collect_trace=True)
                su, ft = violation_count(stats, expl, spec)
                cost = transport_cost(expl, q, m) if expl.members else 9e9
                res.setdefault((tag, name), []).append((su + ft, cost, stats.swapped))
    vo = sum(
        1
        for i in range(seeds)
        if res[("v", "relaxed")][i][0] < res[("v", "random")][i][0] <= res[("v", "sieve")][i][0]
    )
    cr = sum(1 for i in range(seeds) if res[("c", "ours")][i][1] <= res[("c", "random")][i][1])
    cs = sum(1 for i in range(seeds) if res[("c", "ours")][i][1] <= res[("c", "sieve")][i][1])
    sw = mean(r[2] for r in res[("c", "ours")])
    print(
        f"  k={k:2d} {cfg_kind:4s} lam={swap_lambda} vo={vo}/{seeds} "
        f"cost<=rand {cr}/{seeds} cost<=sieve {cs}/{seeds} swaps={sw:5.0f} "
        f"costs ours={mean(r[1] for r in res[('c','ours')]):.3f} "
        f"rand={mean(r[1] for r in res[('c','random')]):.3f} "
        f"sieve={mean(r[1] for r in res[('c','sieve')]):.3f} "
        f"viol rel={mean(r[0] for r in res[('v','relaxed')]):.0f} "
        f"rand={mean(r[0] for r in res[('v','random')]):.0f} "
        f"sieve={mean(r[0] for r in res[('v','sieve')]):.0f}"
    )


REGIMES = {
    "A-overlap": ((0.35, 0.65, 0.15), "cluster"),
    "B-spread": ((0.10, 0.90, 0.10), "edge"),
    "D-mild": ((0.25, 0.75, 0.12), "edge"),
}

which = sys.argv[1:] or list(REGIMES)
for name in which:
    regime, qmode = REGIMES[name]
    print(name, qmode)
    for cfg_kind in ("mod", "div"):
        for lam in (0.717, 1.0):
            run(regime, qmode, cfg_kind, lam, k=10)
