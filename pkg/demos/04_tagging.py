"""Tag a small network against threat feeds and read the summaries."""

# %%
import json
from importlib import resources
from pathlib import Path

import numpy as np

from threatnet.community import Partition
from threatnet.graph import Flavor, NodeId, NodeKind, ThreatNetwork
from threatnet.tagging import family_hit_table, load_feeds, tag

fixture = Path(str(resources.files("threatnet") / "data" / "three_sample"))
feeds = load_feeds(fixture / "pc_malware.jsonl", fixture / "spam.jsonl",
                   fixture / "phishing.jsonl", fixture / "probing.jsonl")
print("feed sizes:", {k: len(getattr(feeds, k)) for k in ("pc_malware", "spam", "phishing", "probing")})

# %% [markdown]
# Every feed indicator becomes a node here, plus two clean ones, split into
# two arbitrary communities.

# %%
keys = sorted(set(feeds.pc_malware) | feeds.spam | feeds.phishing | feeds.probing) + ["clean.example", "8.8.4.4"]
nodes = [NodeId(NodeKind.IP if k.replace(".", "").isdigit() else NodeKind.DOMAIN, k) for k in keys]
tn = ThreatNetwork(Flavor.COMBINED, nodes, [], [], [])
rep = tag(tn, Partition(np.arange(tn.n) % 2, 0.0), feeds)

for cid, s in sorted(rep.communities.items()):
    print(f"community {cid}: {s.tagged_nodes} tagged nodes, shares {s.shares()}")
print("overall:", rep.overall.shares())
print("families:", family_hit_table(rep, 5))

# %%
print(json.dumps(rep.to_json(3)["overall"], indent=1)[:400])
