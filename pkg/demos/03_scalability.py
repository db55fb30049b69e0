"""Time community detection and PageRank on random G(n, p) graphs.

Pass sizes on the command line, e.g. ``python demos/03_scalability.py 1000 10000 100000``.
The default stays small so the script finishes in a couple of seconds.
"""

# %%
import sys

from threatnet.graph import RandomGraphSpec, gen_random
from threatnet.pipeline import bench, bench_csv
from threatnet.ranking import pagerank

sizes = [int(a) for a in sys.argv[1:]] or [1_000, 5_000, 20_000]
specs = [RandomGraphSpec.with_mean_degree(n, 5, seed=0) for n in sizes]
rows = bench(specs)
print(bench_csv(rows))

# %% [markdown]
# Power iteration converges in a handful of steps on these graphs.

# %%
rv = pagerank(gen_random(specs[-1]))
print(f"n={specs[-1].n}: {rv.iterations} iterations, converged={rv.converged}, sum={rv.pr.sum():.12f}")
