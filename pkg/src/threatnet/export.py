"""Serialization of threat networks: JSON (round-trippable), DOT and GraphML."""

from __future__ import annotations

import io
import json

import networkx as nx

from .graph import Flavor, NodeId, NodeKind, ThreatNetwork

KIND_COLORS = {NodeKind.IP: "#1f77b4", NodeKind.DOMAIN: "#ff7f0e", NodeKind.SAMPLE: "#7f7f7f"}
FAMILY_PALETTE = (
    "#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628",
    "#f781bf", "#999999", "#66c2a5", "#fc8d62", "#8da0cb", "#e78ac3",
)


def _num(w):
    w = float(w)
    return int(w) if w.is_integer() else w


def dumps(obj) -> str:
    """Canonical JSON text used for every persisted artifact."""
    return json.dumps(obj, indent=1, sort_keys=False, ensure_ascii=True) + "\n"


def network_to_json(tn: ThreatNetwork) -> dict:
    nodes = []
    for i, (node, info) in enumerate(zip(tn.nodes, tn.node_info)):
        d = {"id": i, "kind": node.kind.value, "key": node.key}
        if info.get("family"):
            d["family"] = info["family"]
        if info.get("families"):
            d["families"] = list(info["families"])
        if info.get("sources"):
            d["sources"] = list(info["sources"])
        nodes.append(d)
    edges = []
    for e, (a, b, w) in enumerate(tn.edges()):
        samples, links = tn.witnesses(e)
        edges.append({
            "a": a, "b": b, "w": _num(w),
            "kind": "resolution" if links and not samples else "cooccurrence",
            "witnesses": list(samples) + [f"pdns:{x}" for x in links],
        })
    return {"flavor": tn.flavor.value, "nodes": nodes, "edges": edges}


def network_from_json(obj: dict) -> ThreatNetwork:
    nodes, info = [], []
    for i, d in enumerate(obj["nodes"]):
        if d["id"] != i:
            raise ValueError("node ids must be dense and ordered")
        nodes.append(NodeId(NodeKind(d["kind"]), d["key"]))
        meta = {}
        if "sources" in d:
            meta["sources"] = tuple(d["sources"])
        if "families" in d:
            meta["families"] = tuple(d["families"])
        if "family" in d:
            meta["family"] = d["family"]
        info.append(meta)
    src, dst, w, samples, links = [], [], [], [], []
    for e in obj["edges"]:
        src.append(e["a"])
        dst.append(e["b"])
        w.append(e["w"])
        wit = e.get("witnesses", [])
        samples.append(tuple(x for x in wit if not x.startswith("pdns:")))
        links.append(tuple(x[5:] for x in wit if x.startswith("pdns:")))
    return ThreatNetwork(Flavor(obj["flavor"]), nodes, src, dst, w, samples, links, info)


def _family_colors(tn: ThreatNetwork) -> dict:
    fams = sorted({info["family"] for info in tn.node_info if info.get("family")})
    return {f: FAMILY_PALETTE[i % len(FAMILY_PALETTE)] for i, f in enumerate(fams)}


def to_dot(tn: ThreatNetwork, name: str = "threat_network") -> str:
    """Graphviz DOT; nodes are coloured by family when known, else by kind."""
    fam_colors = _family_colors(tn)
    buf = io.StringIO()
    buf.write(f"graph {json.dumps(name)} {{\n")
    buf.write("  node [style=filled, fontsize=10];\n")
    for i, (node, info) in enumerate(zip(tn.nodes, tn.node_info)):
        fam = info.get("family")
        color = fam_colors[fam] if fam else KIND_COLORS[node.kind]
        shape = "box" if node.kind is NodeKind.DOMAIN else "ellipse"
        attrs = [f"label={json.dumps(node.key)}", f"kind={node.kind.value}",
                 f"shape={shape}", f'fillcolor="{color}"']
        if fam:
            attrs.append(f"family={json.dumps(fam)}")
        buf.write(f"  n{i} [{', '.join(attrs)}];\n")
    for a, b, w in tn.edges():
        buf.write(f"  n{a} -- n{b} [weight={_num(w)}];\n")
    buf.write("}\n")
    return buf.getvalue()


def to_networkx(tn: ThreatNetwork) -> nx.Graph:
    g = nx.Graph(flavor=tn.flavor.value)
    for i, (node, info) in enumerate(zip(tn.nodes, tn.node_info)):
        attrs = {"kind": node.kind.value, "key": node.key}
        if info.get("family"):
            attrs["family"] = info["family"]
        g.add_node(i, **attrs)
    for e, (a, b, w) in enumerate(tn.edges()):
        samples, links = tn.witnesses(e)
        g.add_edge(a, b, weight=float(w),
                   witnesses=" ".join(list(samples) + [f"pdns:{x}" for x in links]))
    return g


def to_graphml(tn: ThreatNetwork) -> str:
    return "\n".join(nx.generate_graphml(to_networkx(tn))) + "\n"
