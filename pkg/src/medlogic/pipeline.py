"""Pipeline orchestration: config file, command runners, run manifest.

Every command recomputes its upstream state in memory from the configured
inputs and writes only its own artifacts under output_dir. Artifacts carry
no timestamps and sort deterministically, so re-running a command over
unchanged inputs reproduces every output byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import __version__
from .datasets import (
    QaSample,
    assign_splits,
    build_lu_input,
    emit_aqa_record,
    emit_lu_record,
    load_bioasq,
    load_mashqa,
    parse_lu_output,
    render_rules_block,
    read_id_text_jsonl,
    write_id_text_jsonl,
    write_records_jsonl,
)
from .engine import count_is_a_derivations, infuse, write_logic_file
from .gateway import GatewayError, GenRequest, generate_batch
from .kg import KnowledgeGraph, write_graph_file
from .matcher import Lexicon, RelationTable, build_context_kg, load_lexicon, load_relation_table
from .metrics import WordVectors, evaluate_corpus, write_report_json, write_report_tsv
from .rules import Rule, load_rules

__all__ = [
    "ConfigError",
    "LlmSettings",
    "MetricSettings",
    "PipelineConfig",
    "load_config",
    "COMMANDS",
    "run_command",
]

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

# Fixed data policies, recorded in the manifest for auditability.
_POLICIES = {
    "snippet_join": "single_space",
    "reference_answer": "first_ideal",
    "train_fraction": 0.8,
}


class ConfigError(ValueError):
    """Unusable configuration: bad JSON, missing keys, absent input files."""


@dataclass(frozen=True, slots=True)
class LlmSettings:
    endpoint: str = "mock:"
    model_name: str = "default"
    max_new_tokens: int = 256
    temperature: float = 0.0
    max_in_flight: int = 4
    timeout_s: float = 30.0
    auth_token: str | None = None


@dataclass(frozen=True, slots=True)
class MetricSettings:
    vectors_path: Path = Path("vectors.txt")
    bleu_n: int = 4


@dataclass(frozen=True, slots=True)
class PipelineConfig:
    corpus_path: Path
    corpus_kind: str
    lexicon_path: Path
    relation_table_path: Path
    rules_path: Path
    split_seed: int
    output_dir: Path
    llm: LlmSettings
    metrics: MetricSettings
    jobs: int = 1


_TOP_KEYS = {
    "corpus_path", "corpus_kind", "lexicon_path", "relation_table_path",
    "rules_path", "split_seed", "output_dir", "llm", "metrics",
}
_LLM_KEYS = {
    "endpoint", "model_name", "max_new_tokens", "temperature",
    "max_in_flight", "timeout_s", "auth_token",
}
_METRIC_KEYS = {"vectors_path", "bleu_n"}


def _require_str(obj: Mapping, key: str, where: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{where}: {key!r} must be a non-empty string")
    return value


def load_config(
    path: Path | str,
    *,
    seed_override: int | None = None,
    jobs: int = 1,
    env: Mapping[str, str] | None = None,
) -> PipelineConfig:
    """Read and validate the JSON config.

    Relative paths resolve against the config file's directory. Environment
    variables MEDLOGIC_LLM_URL and MEDLOGIC_LLM_TOKEN override the endpoint
    and auth token; nothing else is env-configurable.
    """
    if env is None:
        env = os.environ
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {config_path}")
    try:
        obj = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{config_path}: invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{config_path}: expected a JSON object")

    unknown = set(obj) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{config_path}: unknown keys: {', '.join(sorted(unknown))}")
    base = config_path.parent

    def resolve(key: str) -> Path:
        return (base / _require_str(obj, key, str(config_path))).resolve()

    corpus_kind = _require_str(obj, "corpus_kind", str(config_path))
    if corpus_kind not in ("bioasq", "mashqa"):
        raise ConfigError(
            f"{config_path}: corpus_kind must be 'bioasq' or 'mashqa', got {corpus_kind!r}"
        )
    seed = obj.get("split_seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"{config_path}: 'split_seed' must be an integer")
    if seed_override is not None:
        seed = seed_override

    llm_obj = obj.get("llm", {})
    if not isinstance(llm_obj, dict):
        raise ConfigError(f"{config_path}: 'llm' must be an object")
    unknown = set(llm_obj) - _LLM_KEYS
    if unknown:
        raise ConfigError(f"{config_path}: unknown llm keys: {', '.join(sorted(unknown))}")
    metrics_obj = obj.get("metrics", {})
    if not isinstance(metrics_obj, dict):
        raise ConfigError(f"{config_path}: 'metrics' must be an object")
    unknown = set(metrics_obj) - _METRIC_KEYS
    if unknown:
        raise ConfigError(
            f"{config_path}: unknown metrics keys: {', '.join(sorted(unknown))}"
        )
    if "vectors_path" not in metrics_obj:
        raise ConfigError(f"{config_path}: metrics.vectors_path is required")
    bleu_n = metrics_obj.get("bleu_n", 4)
    if not isinstance(bleu_n, int) or isinstance(bleu_n, bool) or not 1 <= bleu_n <= 9:
        raise ConfigError(f"{config_path}: metrics.bleu_n must be an integer in 1..9")

    endpoint = env.get("MEDLOGIC_LLM_URL") or llm_obj.get("endpoint", "mock:")
    auth_token = env.get("MEDLOGIC_LLM_TOKEN") or llm_obj.get("auth_token")
    max_in_flight = llm_obj.get("max_in_flight", 4)
    if not isinstance(max_in_flight, int) or max_in_flight < 1:
        raise ConfigError(f"{config_path}: llm.max_in_flight must be a positive integer")
    if jobs < 1:
        raise ConfigError(f"--jobs must be a positive integer, got {jobs}")

    cfg = PipelineConfig(
        corpus_path=resolve("corpus_path"),
        corpus_kind=corpus_kind,
        lexicon_path=resolve("lexicon_path"),
        relation_table_path=resolve("relation_table_path"),
        rules_path=resolve("rules_path"),
        split_seed=seed,
        output_dir=(base / _require_str(obj, "output_dir", str(config_path))).resolve(),
        llm=LlmSettings(
            endpoint=str(endpoint),
            model_name=str(llm_obj.get("model_name", "default")),
            max_new_tokens=int(llm_obj.get("max_new_tokens", 256)),
            temperature=float(llm_obj.get("temperature", 0.0)),
            max_in_flight=max_in_flight,
            timeout_s=float(llm_obj.get("timeout_s", 30.0)),
            auth_token=auth_token if auth_token else None,
        ),
        metrics=MetricSettings(
            vectors_path=(base / str(metrics_obj["vectors_path"])).resolve(),
            bleu_n=bleu_n,
        ),
        jobs=jobs,
    )
    for name, p in (
        ("corpus_path", cfg.corpus_path),
        ("lexicon_path", cfg.lexicon_path),
        ("relation_table_path", cfg.relation_table_path),
        ("rules_path", cfg.rules_path),
        ("metrics.vectors_path", cfg.metrics.vectors_path),
    ):
        if not p.is_file():
            raise ConfigError(f"{config_path}: {name} does not exist: {p}")
    return cfg


# ---------------------------------------------------------------------------
# Shared state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _State:
    samples: tuple[QaSample, ...]
    rules: tuple[Rule, ...]
    rules_block: str
    lexicon: Lexicon
    table: RelationTable

    def train(self) -> tuple[QaSample, ...]:
        return tuple(s for s in self.samples if s.split == "train")

    def test(self) -> tuple[QaSample, ...]:
        return tuple(s for s in self.samples if s.split == "test")


def _prepare(cfg: PipelineConfig) -> _State:
    loader = load_bioasq if cfg.corpus_kind == "bioasq" else load_mashqa
    samples = assign_splits(loader(cfg.corpus_path), seed=cfg.split_seed,
                            train_fraction=_POLICIES["train_fraction"])
    rules = load_rules(cfg.rules_path)
    return _State(
        samples=samples,
        rules=rules,
        rules_block=render_rules_block(rules),
        lexicon=load_lexicon(cfg.lexicon_path),
        table=load_relation_table(cfg.relation_table_path),
    )


def _safe_name(sample_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", sample_id)


def _sample_graphs(cfg: PipelineConfig, st: _State) -> list[tuple[QaSample, KnowledgeGraph]]:
    def one(sample: QaSample) -> tuple[QaSample, KnowledgeGraph]:
        graph = build_context_kg(
            sample.question, sample.context, st.lexicon, st.table, tag=sample.id
        )
        return sample, graph

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(one, st.samples))
    return [one(s) for s in st.samples]


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

_STEP_ORDER = ("build-kg", "infuse", "prep-lu", "prep-aqa", "generate", "parse-lu", "evaluate")


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _update_manifest(
    cfg: PipelineConfig,
    step: str,
    artifacts: Mapping[str, Path],
    extra: Mapping[str, object] | None = None,
) -> None:
    """Record a step's artifact hashes and rebuild the manifest hash chain.

    Each step's chain value digests the previous chain plus the step body,
    anchored at a digest of the input files, so any upstream change is
    visible in every later chain entry.
    """
    manifest_path = cfg.output_dir / MANIFEST_NAME
    steps: dict[str, dict] = {}
    if manifest_path.is_file():
        try:
            old = json.loads(manifest_path.read_text(encoding="utf-8"))
            if isinstance(old, dict) and isinstance(old.get("steps"), dict):
                steps = {
                    k: dict(v) for k, v in old["steps"].items() if isinstance(v, dict)
                }
        except json.JSONDecodeError:
            logger.warning("existing manifest is not valid JSON; rebuilding")

    inputs = {
        "corpus": cfg.corpus_path,
        "lexicon": cfg.lexicon_path,
        "relation_table": cfg.relation_table_path,
        "rules": cfg.rules_path,
        "vectors": cfg.metrics.vectors_path,
    }
    inputs_block = {
        name: {"file": p.name, "sha256": _sha256_file(p)} for name, p in inputs.items()
    }

    body: dict[str, object] = {
        "artifacts": {
            rel: _sha256_file(p) for rel, p in sorted(artifacts.items())
        }
    }
    if extra:
        body.update(extra)
    steps[step] = body

    anchor = _sha256_text(
        json.dumps(
            {"inputs": inputs_block, "seed": cfg.split_seed, "tool_version": __version__},
            sort_keys=True,
        )
    )
    chain = anchor
    ordered: dict[str, dict] = {}
    for name in _STEP_ORDER:
        if name not in steps:
            continue
        entry = {k: v for k, v in steps[name].items() if k != "chain"}
        chain = _sha256_text(chain + json.dumps({name: entry}, sort_keys=True))
        entry["chain"] = chain
        ordered[name] = entry

    manifest = {
        "tool_version": __version__,
        "corpus_kind": cfg.corpus_kind,
        "seed": cfg.split_seed,
        "policies": _POLICIES,
        "inputs": inputs_block,
        "steps": ordered,
    }
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
        newline="\n",
    )


# ---------------------------------------------------------------------------
# Command runners
# ---------------------------------------------------------------------------


def run_build_kg(cfg: PipelineConfig) -> None:
    st = _prepare(cfg)
    kg_dir = cfg.output_dir / "kg"
    kg_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, Path] = {}
    for sample, graph in _sample_graphs(cfg, st):
        path = kg_dir / f"{_safe_name(sample.id)}.tsv"
        write_graph_file(graph, path)
        artifacts[f"kg/{path.name}"] = path
    _update_manifest(cfg, "build-kg", artifacts, {"samples": len(st.samples)})


def run_infuse(cfg: PipelineConfig) -> None:
    st = _prepare(cfg)
    logic_dir = cfg.output_dir / "logic"
    logic_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, Path] = {}
    is_a_total = 0
    derived_total = 0
    for sample, graph in _sample_graphs(cfg, st):
        lig = infuse(graph, st.rules)
        is_a_total += count_is_a_derivations(lig)
        derived_total += sum(len(d) for d in lig.per_rule.values())
        path = logic_dir / f"{_safe_name(sample.id)}.tsv"
        write_logic_file(lig, path)
        artifacts[f"logic/{path.name}"] = path
    _update_manifest(
        cfg, "infuse", artifacts,
        {"derivations": derived_total, "is_a_derivations": is_a_total},
    )


def run_prep_lu(cfg: PipelineConfig) -> None:
    st = _prepare(cfg)
    graphs = dict((s.id, g) for s, g in _sample_graphs(cfg, st))
    records = [
        emit_lu_record(s, infuse(graphs[s.id], st.rules), st.rules_block)
        for s in st.train()
    ]
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / "lu_train.jsonl"
    write_records_jsonl(records, path)
    _update_manifest(
        cfg, "prep-lu", {"lu_train.jsonl": path}, {"records": len(records)}
    )


def run_prep_aqa(cfg: PipelineConfig) -> None:
    st = _prepare(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    train_records = [emit_aqa_record(s, st.rules_block) for s in st.train()]
    test_records = [emit_aqa_record(s, st.rules_block) for s in st.test()]
    train_path = cfg.output_dir / "aqa_train.jsonl"
    test_path = cfg.output_dir / "aqa_test.jsonl"
    gold_path = cfg.output_dir / "gold_test.jsonl"
    write_records_jsonl(train_records, train_path)
    write_records_jsonl(test_records, test_path)
    write_id_text_jsonl([(s.id, s.answer) for s in st.test()], gold_path)
    _update_manifest(
        cfg, "prep-aqa",
        {"aqa_train.jsonl": train_path, "aqa_test.jsonl": test_path,
         "gold_test.jsonl": gold_path},
        {"train_records": len(train_records), "test_records": len(test_records)},
    )


def run_generate(cfg: PipelineConfig) -> None:
    st = _prepare(cfg)
    test_samples = st.test()
    gen_dir = cfg.output_dir / "generations"
    gen_dir.mkdir(parents=True, exist_ok=True)

    aqa_prompts = [emit_aqa_record(s, st.rules_block).input_text for s in test_samples]
    lu_prompts = [build_lu_input(s, st.rules_block) for s in test_samples]
    reqs = [
        GenRequest(
            prompt=p,
            max_new_tokens=cfg.llm.max_new_tokens,
            temperature=cfg.llm.temperature,
            model_name=cfg.llm.model_name,
        )
        for p in aqa_prompts + lu_prompts
    ]
    results = generate_batch(
        reqs, cfg.llm.endpoint, cfg.llm.auth_token,
        max_in_flight=cfg.llm.max_in_flight,
        timeout_s=cfg.llm.timeout_s,
        rng_seed=cfg.split_seed,
    )
    failed = [
        test_samples[i % len(test_samples)].id
        for i, r in enumerate(results)
        if isinstance(r, GatewayError)
    ]
    if failed:
        first = next(r for r in results if isinstance(r, GatewayError))
        raise GatewayError(
            f"generation failed for {len(failed)} prompt(s) "
            f"(ids: {', '.join(sorted(set(failed)))}): {first}"
        )
    texts = [r.text for r in results if not isinstance(r, GatewayError)]
    aqa_texts = texts[: len(test_samples)]
    lu_texts = texts[len(test_samples):]

    aqa_path = gen_dir / "aqa_test.jsonl"
    lu_path = gen_dir / "lu_test.jsonl"
    write_id_text_jsonl(
        [(s.id, t) for s, t in zip(test_samples, aqa_texts)], aqa_path
    )
    write_id_text_jsonl(
        [(s.id, t) for s, t in zip(test_samples, lu_texts)], lu_path
    )
    _update_manifest(
        cfg, "generate",
        {"generations/aqa_test.jsonl": aqa_path, "generations/lu_test.jsonl": lu_path},
        {"prompts": len(reqs)},
    )


def run_parse_lu(cfg: PipelineConfig) -> None:
    gen_path = cfg.output_dir / "generations" / "lu_test.jsonl"
    if not gen_path.is_file():
        raise ConfigError(f"missing {gen_path}; run 'generate' first")
    parsed_dir = cfg.output_dir / "parsed_lu"
    parsed_dir.mkdir(parents=True, exist_ok=True)

    artifacts: dict[str, Path] = {}
    reject_lines: list[str] = []
    total_triples = 0
    for sample_id, text in read_id_text_jsonl(gen_path):
        parse = parse_lu_output(text)
        lines = sorted(
            f"{rule}\t{t.as_line()}"
            for rule, triples in parse.by_rule.items()
            for t in triples
        )
        total_triples += sum(len(ts) for ts in parse.by_rule.values())
        path = parsed_dir / f"{_safe_name(sample_id)}.tsv"
        body = "\n".join(lines)
        path.write_text(body + "\n" if body else "", encoding="utf-8", newline="\n")
        artifacts[f"parsed_lu/{path.name}"] = path
        reject_lines.extend(f"{sample_id}\t{r}" for r in parse.rejects)

    rejects_path = parsed_dir / "rejects.txt"
    body = "\n".join(reject_lines)
    rejects_path.write_text(body + "\n" if body else "", encoding="utf-8", newline="\n")
    artifacts["parsed_lu/rejects.txt"] = rejects_path
    _update_manifest(
        cfg, "parse-lu", artifacts,
        {"triples": total_triples, "rejects": len(reject_lines)},
    )


def run_evaluate(cfg: PipelineConfig) -> None:
    st = _prepare(cfg)
    pred_path = cfg.output_dir / "generations" / "aqa_test.jsonl"
    gold_path = cfg.output_dir / "gold_test.jsonl"
    for p, cmd in ((pred_path, "generate"), (gold_path, "prep-aqa")):
        if not p.is_file():
            raise ConfigError(f"missing {p}; run '{cmd}' first")
    vectors = WordVectors.load(cfg.metrics.vectors_path)
    report = evaluate_corpus(
        pred_path, gold_path, st.lexicon, vectors, bleu_n=cfg.metrics.bleu_n
    )
    tsv_path = cfg.output_dir / "report.tsv"
    json_path = cfg.output_dir / "report.json"
    write_report_tsv(report, tsv_path)
    write_report_json(report, json_path)
    _update_manifest(
        cfg, "evaluate",
        {"report.tsv": tsv_path, "report.json": json_path},
        {"samples": len(report.samples)},
    )


def run_all(cfg: PipelineConfig) -> None:
    run_build_kg(cfg)
    run_infuse(cfg)
    run_prep_lu(cfg)
    run_prep_aqa(cfg)
    run_generate(cfg)
    run_parse_lu(cfg)
    run_evaluate(cfg)


COMMANDS: dict[str, Callable[[PipelineConfig], None]] = {
    "build-kg": run_build_kg,
    "infuse": run_infuse,
    "prep-lu": run_prep_lu,
    "prep-aqa": run_prep_aqa,
    "generate": run_generate,
    "parse-lu": run_parse_lu,
    "evaluate": run_evaluate,
    "all": run_all,
}


def run_command(name: str, cfg: PipelineConfig) -> None:
    COMMANDS[name](cfg)
