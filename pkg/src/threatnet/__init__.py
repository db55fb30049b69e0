"""Threat-network mapping from malware analysis reports.

Indicators (IPv4 addresses and domains) are extracted from per-sample
analysis reports, whitelisted, optionally enriched through passive DNS,
assembled into a sample/indicator graph and projected onto indicator-only
threat networks. Those are split into communities (Louvain), ranked
(PageRank) and tagged against external threat feeds.
"""

__version__ = "0.1.0"

from .errors import CapacityError, ConfigError, EmptyGraph, StageError, ThreatNetError  # noqa: E402
from .indicators import (  # noqa: E402
    AnalysisReport, ExtractionResult, Kind, NetworkIndicator, Source,
    extract_from_structured, extract_from_text, is_routable,
)
from .whitelist import DomainWhitelist, IpWhitelist, filter_result, is_whitelisted, load_domain_list, load_ip_list  # noqa: E402
from .pdns import PdnsRecord, PdnsStore, enrich, get_domain, get_ip  # noqa: E402
from .graph import (  # noqa: E402
    Flavor, HeteroGraph, NodeId, NodeKind, RandomGraphSpec, ThreatNetwork,
    build_hetero, gen_planted_partition, gen_random, project, prune_weak,
)
from .community import LouvainParams, Partition, detect, modularity, split  # noqa: E402
from .ranking import PageRankParams, PriorityList, RankVector, pagerank, priority_list  # noqa: E402
from .tagging import FeedStore, TagReport, family_hit_table, load_feeds, tag  # noqa: E402
