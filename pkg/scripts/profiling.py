"""Trait recovery versus history length on the default synthetic population.

    python scripts/profiling.py --users 300 --events 25 50 100 200
"""

import argparse

from netprofile.profiler import nb_predict, nb_train, replay
from netprofile.synth import default_population, gen_users, population_traits


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=300)
    ap.add_argument("--events", type=int, nargs="+", default=[25, 50, 100, 200])
    ap.add_argument("--train-fraction", type=float, default=2 / 3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    pop = default_population(args.users)
    traits = population_traits(pop)
    for n in args.events:
        events, truth = gen_users(pop, n, args.seed)
        records = replay(events)
        users = sorted(truth)
        cut = int(len(users) * args.train_fraction)
        models = nb_train([(records[u], truth[u]) for u in users[:cut]], traits)
        test = users[cut:]
        acc = {}
        for t, m in models.items():
            hits = 0
            for u in test:
                post = nb_predict(m, records[u])
                hits += max(post, key=post.get) == truth[u][t]
            acc[t] = round(hits / len(test), 3)
        print(f"{n:>5} events/user  " + "  ".join(f"{t} {a:.3f}" for t, a in acc.items()))


if __name__ == "__main__":
    main()
