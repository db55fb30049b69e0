import json
import shutil
from importlib import resources
from pathlib import Path

import pytest

from threatnet import cli
from threatnet.errors import ConfigError, StageError
from threatnet.graph import RandomGraphSpec, gen_random
from threatnet.pipeline import STAGES, PipelineConfig, bench, bench_csv, run, run_stage

FIXTURE = Path(str(resources.files("threatnet") / "data" / "three_sample"))
CONFIG = FIXTURE / "config.json"
GOLDEN = Path(__file__).parent / "golden"


def tree(root: Path) -> dict[str, bytes]:
    """Every artifact under ``root`` except the manifest, which carries timings."""
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())
            if p.is_file() and p.name != "manifest.json"}


def run_fixture(out: Path, **overrides) -> Path:
    cfg = PipelineConfig.load(CONFIG, {k.replace("__", "."): v for k, v in overrides.items()})
    cfg.set("output.dir", str(out))
    run(cfg)
    return cfg.out_dir()


def test_golden_run(tmp_path):
    got = tree(run_fixture(tmp_path))
    want = tree(GOLDEN / "three_sample_pdns_on")
    assert sorted(got) == sorted(want)
    for name in want:
        assert got[name] == want[name], name


def test_repeated_runs_and_worker_counts_identical(tmp_path, monkeypatch):
    a = tree(run_fixture(tmp_path / "a", workers=1))
    b = tree(run_fixture(tmp_path / "b", workers=1))
    c = tree(run_fixture(tmp_path / "c", workers=8))
    monkeypatch.setenv("THREATNET_WORKERS", "8")
    d = tree(run_fixture(tmp_path / "d", workers=1))
    assert a == b == c == d


def test_pdns_disabled_matches_skipped_enrichment(tmp_path):
    off = tree(run_fixture(tmp_path / "off", pdns__enabled=False))
    assert off == tree(GOLDEN / "three_sample_pdns_off")
    cfg = PipelineConfig.load(CONFIG)
    cfg.set("output.dir", str(tmp_path / "skip"))
    run(cfg, [s for s in STAGES if s != "enrich"])
    skipped = tree(cfg.out_dir())
    assert "enriched.json" not in skipped
    off.pop("enriched.json")
    assert skipped == off


def test_pdns_changes_networks(tmp_path):
    on = tree(GOLDEN / "three_sample_pdns_on")
    off = tree(GOLDEN / "three_sample_pdns_off")
    assert on["filtered.jsonl"] == off["filtered.jsonl"]
    assert on["network_combined.json"] != off["network_combined.json"]


@pytest.mark.parametrize("stage", STAGES[1:])
def test_stage_rerun_isolation(tmp_path, stage):
    full = run_fixture(tmp_path / "full")
    want = tree(full)
    part = tmp_path / "part" / "fixture"
    shutil.copytree(full, part)
    downstream = STAGES[STAGES.index(stage):]
    produced = {
        "filter": ["filtered.jsonl"], "enrich": ["enriched.json"], "build": ["hetero.json", "network_"],
        "analyze": ["partition_"], "rank": ["priority_"], "tag": ["tags_", "families_"],
    }
    for s in downstream:
        for prefix in produced[s]:
            for p in part.glob(prefix + "*"):
                p.unlink()
    cfg = PipelineConfig.load(CONFIG)
    cfg.set("output.dir", str(tmp_path / "part"))
    run(cfg, downstream)
    assert tree(part) == want


def test_stage_needs_previous_output(tmp_path):
    cfg = PipelineConfig.load(CONFIG)
    cfg.set("output.dir", str(tmp_path))
    with pytest.raises(ConfigError):
        run_stage(cfg, "analyze")


def test_failed_stage_keeps_partial_outputs(tmp_path, monkeypatch):
    out = run_fixture(tmp_path)
    before = (out / "hetero.json").read_bytes()
    cfg = PipelineConfig.load(CONFIG)
    cfg.set("output.dir", str(tmp_path))

    def boom(*a, **k):
        raise RuntimeError("pruning exploded")

    monkeypatch.setattr("threatnet.pipeline.prune_weak", boom)
    with pytest.raises(StageError) as info:
        run_stage(cfg, "build")
    assert info.value.stage == "build" and "pruning exploded" in str(info.value)
    assert (out / "hetero.json.partial").exists()
    assert (out / "hetero.json").read_bytes() == before
    assert cli.main(["build", "--config", str(CONFIG), "--out", str(tmp_path)]) == 3


def test_manifest(tmp_path):
    out = run_fixture(tmp_path)
    m = json.loads((out / "manifest.json").read_text())
    assert m["epoch"] == "fixture"
    assert list(m["timings"]) == list(STAGES)
    assert m["counts"]["extract"] == {"reports": 6, "samples": 3, "indicators": 15, "dropped": 3}
    assert m["counts"]["filter"] == {"indicators": 13, "whitelisted": 2}
    assert m["counts"]["enrich"]["added"] == 4
    assert m["config"]["rank"] == {"damping": 0.85, "epsilon": 0.001, "max_iters": 100}


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "missing.json")
    cfg = PipelineConfig.load(CONFIG, {"flavor": "sideways"})
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = PipelineConfig.load(CONFIG, {"pdns.path": "nope.jsonl"})
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = PipelineConfig.load(None)
    with pytest.raises(ConfigError):
        cfg.validate()
    assert PipelineConfig.load(CONFIG, {"rank.damping": "0.9"}).get("rank.damping") == 0.9


# ------------------------------------------------------------------------ CLI


def test_cli_run_and_override(tmp_path, capsys):
    assert cli.main(["run", "--config", str(CONFIG), "--out", str(tmp_path), "--epoch", "e1"]) == 0
    assert cli.main(["run", "--config", str(CONFIG), "--out", str(tmp_path), "--epoch", "e2",
                     "--rank.damping", "0.5"]) == 0
    a, b = tmp_path / "e1", tmp_path / "e2"
    assert (a / "priority_ip.csv").read_bytes() != (b / "priority_ip.csv").read_bytes()
    assert (a / "partition_ip.json").read_bytes() == (b / "partition_ip.json").read_bytes()
    assert json.loads((b / "manifest.json").read_text())["config"]["rank"]["damping"] == 0.5


def test_cli_single_stage(tmp_path):
    assert cli.main(["extract", "--config", str(CONFIG), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "fixture" / "extracted.jsonl").exists()
    assert not (tmp_path / "fixture" / "filtered.jsonl").exists()


def test_cli_empty_input_exits_2(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code = cli.main(["run", "--config", str(CONFIG), "--out", str(tmp_path),
                     "--input.reports", str(empty)])
    assert code == 2


def test_cli_usage_errors(tmp_path):
    assert cli.main([]) == 1
    assert cli.main(["run", "--config", str(tmp_path / "none.json")]) == 1
    assert cli.main(["run", "--config", str(CONFIG), "--bogus"]) == 1
    assert cli.main(["run", "--config", str(CONFIG), "--flavor", "x", "--out", str(tmp_path)]) == 1
    assert cli.main(["run", "--config", str(CONFIG), "--out", str(tmp_path), "--rank.damping", "2"]) == 1


def test_cli_flavor_selection(tmp_path):
    assert cli.main(["run", "--config", str(CONFIG), "--flavor", "ip", "--out", str(tmp_path)]) == 0
    names = {p.name for p in (tmp_path / "fixture").iterdir()}
    assert "network_ip.json" in names and "network_domain.json" not in names


def test_cli_stage_failure_exits_3(tmp_path):
    assert cli.main(["run", "--config", str(CONFIG), "--out", str(tmp_path)]) == 0
    (tmp_path / "fixture" / "network_ip.json").write_text("[]")
    assert cli.main(["analyze", "--config", str(CONFIG), "--out", str(tmp_path)]) == 3


def test_cli_gen(tmp_path):
    out = tmp_path / "g.json"
    assert cli.main(["gen", "--n", "50", "--mean-degree", "4", "--seed", "3", "-o", str(out)]) == 0
    obj = json.loads(out.read_text())
    assert len(obj["nodes"]) == 50
    assert len(obj["edges"]) == gen_random(RandomGraphSpec.with_mean_degree(50, 4, 3)).m
    assert cli.main(["gen", "--n", "1000000", "--p", "0.5"]) == 2


def test_cli_bench(tmp_path):
    out = tmp_path / "b.csv"
    assert cli.main(["bench", "--n", "100", "200", "--algorithm", "pagerank", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "n,p,seed,algorithm,seconds"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["100", "200"]


def test_bench_rows():
    assert bench([]) == []
    specs = [RandomGraphSpec.with_mean_degree(n, 5, seed=1) for n in (100, 100)]
    rows = bench(specs)
    assert [(r["n"], r["algorithm"]) for r in rows] == [(100, "detect"), (100, "pagerank")] * 2
    strip = [{k: v for k, v in r.items() if k != "seconds"} for r in rows]
    assert strip[:2] == strip[2:]
    assert bench_csv(rows).count("\n") == 5
    with pytest.raises(ValueError):
        bench(specs, ["sort"])
