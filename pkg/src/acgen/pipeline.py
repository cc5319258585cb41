"""Pipeline configuration, stage commands and run persistence.

A run lives in ``<run_dir>/<run_id>/`` where ``run_id`` hashes everything
that can change an output: the configuration snapshot (minus paths and cache
mode), the dataset fingerprint and the provider fingerprints. Stages persist
their artifacts there so later stages, or other runs sharing the replay
cache, can pick them up::

    indices/text.json, indices/visual.json
    generation/<story>.json
    polish/<story>.json
    eval/retrieval.json, eval/acs.json
    manifest.json, report.json, report.txt
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping, Sequence

import filelock
import yaml

from .corpus import AcceptanceCriterion, Dataset, load_dataset, render_all
from .errors import ConfigError, EmptyRelevanceSet, MissingArtifact, RunLocked
from .evaluation import (
    accuracy_report,
    compare_polish,
    judge_story,
    mean_metrics,
    mean_text_metrics,
    ranking_metrics,
    text_metrics,
)
from .evaluation.judges import JudgeVerdict
from .generation import (
    Ablation,
    GenerationOutput,
    PromptTemplate,
    TemplateKind,
    TextContext,
    VisualContext,
    build_prompt,
    generate_acs,
)
from .prompts import PromptConfig, load_prompts
from .providers.base import Provider, ProviderConfig, RetryPolicy, Sampling, config_fingerprint, content_hash
from .providers.http import HttpProvider
from .providers.replay import MODES, ReplayCache, ReplayProvider
from .providers.toy import toy_provider
from .retrieval import RetrievalConfig, Retriever, TextIndex, TextStrategy, VisualIndex, VisualVariant
from .reward import PolishConfig, PolishOutcome, PolishProviders, ScorerKind, polish

logger = logging.getLogger(__name__)

ProviderFactory = Callable[[ProviderConfig], Provider]

ROLE_NAMES = ("embedder", "generator", "reward_judge", "scorer")


def bundled_dataset() -> Path:
    return Path(str(resources.files("acgen.data").joinpath("toy/dataset.json")))


def _default_providers() -> tuple[ProviderConfig, ...]:
    def toy(name: str, strictness: float = 0.0) -> ProviderConfig:
        return ProviderConfig(name=name, backend="toy", options={"strictness": strictness})

    return (toy("toy-embed"), toy("toy-gen"), toy("toy-reward"),
            toy("toy-judge-a"), toy("toy-judge-b", 0.1), toy("toy-judge-c", 0.2))


def _default_roles() -> dict[str, Any]:
    return {"embedder": "toy-embed", "generator": "toy-gen", "reward_judge": "toy-reward",
            "scorer": "toy-reward", "judges": ["toy-judge-a", "toy-judge-b", "toy-judge-c"]}


@dataclass(frozen=True)
class PipelineConfig:
    dataset: Path = field(default_factory=bundled_dataset)
    cache_dir: Path = Path("cache")
    run_dir: Path = Path("runs")
    cache_mode: str = "record"
    retrieval: RetrievalConfig = RetrievalConfig()
    template: TemplateKind = TemplateKind.APEER
    ablation: Ablation = Ablation.FULL
    max_prompt_chars: int | None = None
    temperature: float | None = None
    polish: PolishConfig = PolishConfig()
    providers: tuple[ProviderConfig, ...] = field(default_factory=_default_providers)
    roles: Mapping[str, Any] = field(default_factory=_default_roles)
    prompts: Path | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "template", TemplateKind(self.template))
        object.__setattr__(self, "ablation", Ablation(self.ablation))
        if self.cache_mode not in MODES:
            raise ConfigError(f"cache_mode must be one of {sorted(MODES)}, got {self.cache_mode!r}")
        if self.max_prompt_chars is not None and self.max_prompt_chars < 1:
            raise ConfigError("max_prompt_chars must be >= 1")
        names = [p.name for p in self.providers]
        if len(set(names)) != len(names):
            raise ConfigError(f"provider names must be unique: {names}")
        for role in ROLE_NAMES:
            if self.roles.get(role) not in names:
                raise ConfigError(f"role {role!r} refers to unknown provider {self.roles.get(role)!r}")
        judges = list(self.roles.get("judges", []))
        if len(judges) != 3 or len(set(judges)) != 3:
            raise ConfigError("roles.judges must name three distinct providers")
        for j in judges:
            if j not in names:
                raise ConfigError(f"judge {j!r} refers to unknown provider")

    def provider_config(self, name: str) -> ProviderConfig:
        return next(p for p in self.providers if p.name == name)

    def check_env(self) -> None:
        """Every http provider's key variable must be set before any call."""
        for p in self.providers:
            if p.backend == "http" and p.api_key_env and p.api_key_env not in os.environ:
                raise ConfigError(f"provider {p.name!r} needs environment variable {p.api_key_env}",
                                  provider=p.name, variable=p.api_key_env)

    def snapshot(self) -> dict[str, Any]:
        """Output-relevant settings; paths and cache mode are left out."""
        return {
            "retrieval": {"k": self.retrieval.k, "text_strategy": self.retrieval.text_strategy.value,
                          "visual_variant": self.retrieval.visual_variant.value},
            "template": self.template.value,
            "ablation": self.ablation.value,
            "max_prompt_chars": self.max_prompt_chars,
            "temperature": self.temperature,
            "polish": {"threshold": self.polish.threshold, "max_rounds": self.polish.max_rounds,
                       "local_scorer": self.polish.local_scorer.value},
            "roles": {k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in sorted(self.roles.items())},
        }


def _provider_from_dict(d: Mapping[str, Any]) -> ProviderConfig:
    d = dict(d)
    if "retry" in d:
        d["retry"] = RetryPolicy(**d["retry"])
    try:
        return ProviderConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad provider entry {d.get('name')!r}: {exc}") from exc


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Read a YAML config and apply flat overrides (``None`` values are ignored).

    Relative paths in the file resolve against the file's directory.
    """
    raw: dict[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        base = path.parent
    o = {k: v for k, v in (overrides or {}).items() if v is not None}

    def resolve(value: Any) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    paths = raw.get("paths", {})
    retrieval = raw.get("retrieval", {})
    generation = raw.get("generation", {})
    polish_raw = raw.get("polish", {})
    kwargs: dict[str, Any] = {}
    if "dataset" in raw:
        kwargs["dataset"] = resolve(raw["dataset"])
    if "cache_dir" in paths:
        kwargs["cache_dir"] = resolve(paths["cache_dir"])
    if "run_dir" in paths:
        kwargs["run_dir"] = resolve(paths["run_dir"])
    if "prompts" in raw:
        kwargs["prompts"] = resolve(raw["prompts"])
    if "providers" in raw:
        kwargs["providers"] = tuple(_provider_from_dict(p) for p in raw["providers"])
    if "roles" in raw:
        kwargs["roles"] = dict(raw["roles"])
    for key in ("cache_mode",):
        if key in raw:
            kwargs[key] = raw[key]
    for key in ("template", "ablation", "max_prompt_chars", "temperature"):
        if key in generation:
            kwargs[key] = generation[key]

    # Command-line overrides win over the file; CLI paths are cwd-relative.
    for key in ("dataset", "cache_dir", "run_dir", "prompts"):
        if key in o:
            kwargs[key] = Path(o[key])
    for key in ("cache_mode", "template", "ablation", "max_prompt_chars", "temperature"):
        if key in o:
            kwargs[key] = o[key]
    try:
        kwargs["retrieval"] = RetrievalConfig(
            k=o.get("k", retrieval.get("k", 5)),
            text_strategy=o.get("text_strategy", retrieval.get("text_strategy", TextStrategy.DENSE_COSINE)),
            visual_variant=o.get("visual_variant", retrieval.get("visual_variant", VisualVariant.DIRECT_EMBEDDING)),
        )
        kwargs["polish"] = PolishConfig(
            threshold=o.get("threshold", polish_raw.get("threshold", 5)),
            max_rounds=o.get("max_rounds", polish_raw.get("max_rounds", 1)),
            local_scorer=o.get("scorer", polish_raw.get("local_scorer", ScorerKind.VERIFIER)),
        )
        return PipelineConfig(**kwargs)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def default_factory(cfg: ProviderConfig) -> Provider:
    if cfg.backend in ("toy", "mock"):
        return toy_provider(cfg.name, dim=cfg.dim, strictness=float(cfg.options.get("strictness", 0.0)),
                            config=cfg)
    if cfg.backend == "http":
        return HttpProvider(cfg)
    raise ConfigError(f"provider {cfg.name!r}: unknown backend {cfg.backend!r}")


def _dump(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _load(path: Path, stage: str) -> Any:
    if not path.is_file():
        raise MissingArtifact(f"{path.name} not found; run `{stage}` first", path=str(path), stage=stage)
    return json.loads(path.read_text(encoding="utf-8"))


class Pipeline:
    """Stage commands over one configured run."""

    def __init__(self, config: PipelineConfig, factory: ProviderFactory = default_factory,
                 run_id: str | None = None) -> None:
        self.config = config
        config.check_env()
        self.dataset: Dataset = load_dataset(config.dataset)
        self.prompts: PromptConfig = load_prompts(config.prompts)
        self.cache = ReplayCache(config.cache_dir)
        self._factory = factory
        self._providers: dict[str, Provider] = {}
        self.run_id = run_id or self.compute_run_id()
        self.run_path = config.run_dir / self.run_id

    # -- providers --------------------------------------------------------

    def provider(self, name: str) -> Provider:
        if name not in self._providers:
            cfg = self.config.provider_config(name)
            inner = self._factory(cfg) if self.config.cache_mode == "record" else None
            self._providers[name] = ReplayProvider(self.cache, cfg, inner=inner, mode=self.config.cache_mode)
        return self._providers[name]

    def role(self, role: str) -> Provider:
        return self.provider(self.config.roles[role])

    @property
    def judges(self) -> list[Provider]:
        return [self.provider(n) for n in self.config.roles["judges"]]

    def provider_fingerprints(self) -> dict[str, str]:
        return {p.name: config_fingerprint(p) for p in self.config.providers}

    def compute_run_id(self) -> str:
        ident = {"config": self.config.snapshot(), "dataset": self.dataset.fingerprint(),
                 "providers": self.provider_fingerprints(), "prompts": content_hash(self.prompts.data)}
        return content_hash(ident)[:16]

    # -- run bookkeeping ---------------------------------------------------

    @contextmanager
    def locked(self) -> Iterator[None]:
        self.run_path.mkdir(parents=True, exist_ok=True)
        lock = filelock.FileLock(str(self.run_path / ".lock"), timeout=0)
        try:
            lock.acquire()
        except filelock.Timeout as exc:
            raise RunLocked(f"run {self.run_id} is in use by another command", run_id=self.run_id) from exc
        try:
            yield
        finally:
            lock.release()

    @property
    def manifest_path(self) -> Path:
        return self.run_path / "manifest.json"

    def _update_manifest(self, stage: str, seconds: float, **entries: Any) -> None:
        manifest = json.loads(self.manifest_path.read_text()) if self.manifest_path.is_file() else {}
        manifest.update({
            "run_id": self.run_id,
            "config": self.config.snapshot(),
            "ablation": self.config.ablation.value,
            "dataset_fingerprint": self.dataset.fingerprint(),
            "provider_fingerprints": self.provider_fingerprints(),
        })
        for key, value in entries.items():
            manifest.setdefault(key, {}).update(value)
        manifest.setdefault("timing", {})[stage] = round(seconds, 6)
        _dump(self.manifest_path, manifest)

    @contextmanager
    def _stage(self, name: str) -> Iterator[dict[str, Any]]:
        entries: dict[str, Any] = {}
        with self.locked():
            start = time.perf_counter()
            yield entries
            self._update_manifest(name, time.perf_counter() - start, **entries)
        logger.info("stage %s done for run %s", name, self.run_id)

    # -- index ------------------------------------------------------------

    def cmd_index(self) -> Path:
        retriever = Retriever(self.role("embedder"))
        cfg = self.config.retrieval
        with self._stage("index"):
            text = retriever.index_text(self.dataset.chunks, cfg.text_strategy)
            _dump(self.run_path / "indices" / "text.json", text.to_dict())
            if self.dataset.visuals:
                visual = retriever.index_visual(self.dataset.visuals, cfg.visual_variant)
                _dump(self.run_path / "indices" / "visual.json", visual.to_dict())
        return self.run_path / "indices"

    def _indices(self, need_visual: bool) -> tuple[TextIndex, VisualIndex | None]:
        text = TextIndex.from_dict(_load(self.run_path / "indices" / "text.json", "index"))
        visual = None
        if need_visual and self.dataset.visuals:
            visual = VisualIndex.from_dict(_load(self.run_path / "indices" / "visual.json", "index"))
        return text, visual

    # -- generate ---------------------------------------------------------

    def cmd_generate(self) -> list[GenerationOutput]:
        ablation = self.config.ablation
        template = PromptTemplate.load(self.config.template, self.prompts)
        generator = self.role("generator")
        sampling = Sampling(temperature=self.config.temperature)
        retriever = text_index = visual_index = None
        if ablation is not Ablation.NO_RAG:
            text_index, visual_index = self._indices(need_visual=ablation is Ablation.FULL)
            retriever = Retriever(self.role("embedder"))
        outputs = []
        with self._stage("generate") as entries:
            hashes = {}
            for story in self.dataset.stories:
                texts: list[TextContext] = []
                visuals: list[VisualContext] = []
                if retriever is not None:
                    hits = retriever.query_text(text_index, story, self.config.retrieval)
                    texts = [TextContext(h, self.dataset.chunk_by_id[h.doc_id].text) for h in hits]
                    if visual_index is not None:
                        vhits = retriever.query_visual(visual_index, story, self.config.retrieval)
                        visuals = [VisualContext(h, self.dataset.visual_by_id[h.doc_id]) for h in vhits]
                prompt = build_prompt(template, story, texts, visuals, ablation, self.config.max_prompt_chars)
                out = generate_acs(prompt, generator, sampling, self.prompts)
                _dump(self.run_path / "generation" / f"{story.id}.json", {
                    "prompt": {"text_ids": list(prompt.text_ids), "image_ids": list(prompt.image_ids),
                               "dropped": list(prompt.dropped), "size": prompt.size},
                    "output": out.to_dict(),
                })
                hashes[story.id] = out.transcript_hash
                outputs.append(out)
            entries["transcripts"] = {"generation": hashes}
        return outputs

    def load_generation(self) -> dict[str, GenerationOutput]:
        return {
            s.id: GenerationOutput.from_dict(_load(self.run_path / "generation" / f"{s.id}.json", "generate")["output"])
            for s in self.dataset.stories
        }

    # -- polish -----------------------------------------------------------

    def cmd_polish(self) -> dict[str, PolishOutcome]:
        generated = self.load_generation()
        providers = PolishProviders(judge=self.role("reward_judge"), scorer=self.role("scorer"),
                                    polisher=self.role("generator"))
        sampling = Sampling(temperature=self.config.temperature)
        outcomes = {}
        with self._stage("polish") as entries:
            hashes = {}
            for story in self.dataset.stories:
                gen = generated[story.id]
                outcome = polish(story, gen.acs, self.config.polish, providers, gen.dialogue, self.prompts,
                                 sampling)
                _dump(self.run_path / "polish" / f"{story.id}.json", outcome.to_dict())
                hashes[story.id] = content_hash(list(outcome.transcript))
                outcomes[story.id] = outcome
            entries["transcripts"] = {"polish": hashes}
        return outcomes

    def load_polish(self) -> dict[str, PolishOutcome] | None:
        paths = {s.id: self.run_path / "polish" / f"{s.id}.json" for s in self.dataset.stories}
        if not all(p.is_file() for p in paths.values()):
            return None
        return {sid: PolishOutcome.from_dict(json.loads(p.read_text())) for sid, p in paths.items()}

    # -- evaluation -------------------------------------------------------

    def cmd_eval_retrieval(self) -> dict[str, Any]:
        text_index, visual_index = self._indices(need_visual=True)
        retriever = Retriever(self.role("embedder"))
        k = self.config.retrieval.k
        chunk_ids = set(self.dataset.chunk_by_id)
        visual_ids = set(self.dataset.visual_by_id)
        report: dict[str, Any] = {"k": k}
        with self._stage("eval-retrieval"):
            for modality, index, ids in (("text", text_index, chunk_ids), ("visual", visual_index, visual_ids)):
                if index is None:
                    continue
                full = dataclasses.replace(self.config.retrieval, k=len(index))
                per_story = {}
                for story in self.dataset.stories:
                    relevant = self.dataset.relevance.get(story.id, frozenset()) & ids
                    if not relevant:
                        continue
                    query = retriever.query_text if modality == "text" else retriever.query_visual
                    ranked = [h.doc_id for h in query(index, story, full)]
                    try:
                        per_story[story.id] = ranking_metrics(ranked, relevant, k)
                    except EmptyRelevanceSet:  # pragma: no cover - guarded above
                        continue
                if per_story:
                    report[modality] = {
                        "mean": mean_metrics(list(per_story.values())).to_dict(),
                        "per_story": {sid: m.to_dict() for sid, m in per_story.items()},
                    }
            _dump(self.run_path / "eval" / "retrieval.json", report)
        return report

    def _accuracy(self, acs_by_story: Mapping[str, Sequence[AcceptanceCriterion]]) -> dict[str, Any]:
        judges = self.judges
        verdicts: list[JudgeVerdict] = []
        objectives = {sid: objs for sid, objs in self.dataset.objectives.items() if objs}
        for story in self.dataset.stories:
            if story.id in objectives:
                verdicts += judge_story(objectives[story.id], acs_by_story[story.id], story, judges, self.prompts)
        report = accuracy_report(verdicts, objectives)
        return {"accuracy": report.to_dict(), "verdicts": [v.to_dict() for v in verdicts]}

    def cmd_eval_acs(self) -> dict[str, Any]:
        generated = self.load_generation()
        polished = self.load_polish()
        embedder = self.role("embedder")
        with self._stage("eval-acs"):
            per_story = {}
            for story in self.dataset.stories:
                reference = self.dataset.ground_truth_acs.get(story.id)
                if not reference:
                    continue
                candidate = render_all(generated[story.id].acs)
                per_story[story.id] = text_metrics(candidate, render_all(reference), embedder)
            report: dict[str, Any] = {
                "text_metrics": {
                    "mean": mean_text_metrics(list(per_story.values())) if per_story else None,
                    "per_story": {sid: m.to_dict() for sid, m in per_story.items()},
                },
                "generated": self._accuracy({sid: g.acs for sid, g in generated.items()}),
            }
            if polished is not None:
                report["polished"] = self._accuracy({sid: p.acs for sid, p in polished.items()})
                results = []
                for story in self.dataset.stories:
                    outcome = polished[story.id]
                    if outcome.rounds_executed == 0:
                        continue
                    results.append(compare_polish(story, generated[story.id].acs, outcome.acs, self.judges,
                                                  self.prompts))
                report["compare"] = {
                    "position_swap": "judges at odd positions see the polished set first",
                    "compared": len(results),
                    "unanimous_better": sum(r.unanimous_better for r in results),
                    "per_story": [r.to_dict() for r in results],
                }
            _dump(self.run_path / "eval" / "acs.json", report)
        return report

    # -- report -----------------------------------------------------------

    def cmd_report(self) -> dict[str, Any]:
        acs = _load(self.run_path / "eval" / "acs.json", "eval-acs")
        retrieval_path = self.run_path / "eval" / "retrieval.json"
        manifest = _load(self.manifest_path, "generate")
        report = {
            "run_id": self.run_id,
            "config": manifest["config"],
            "dataset_fingerprint": manifest["dataset_fingerprint"],
            "provider_fingerprints": manifest["provider_fingerprints"],
            "transcripts": manifest.get("transcripts", {}),
            "retrieval": json.loads(retrieval_path.read_text()) if retrieval_path.is_file() else None,
            "acs": acs,
        }
        polished = self.load_polish()
        if polished is not None:
            report["polish"] = {
                sid: {"rounds": o.rounds_executed, "replaced": list(o.replaced_indices),
                      "global_before": o.global_before.level, "global_after": o.global_after.level}
                for sid, o in sorted(polished.items())
            }
        with self.locked():
            _dump(self.run_path / "report.json", report)
            (self.run_path / "report.txt").write_text(format_report(report), encoding="utf-8")
        return report

    def cmd_run(self) -> dict[str, Any]:
        self.cmd_index()
        self.cmd_generate()
        self.cmd_polish()
        self.cmd_eval_retrieval()
        self.cmd_eval_acs()
        return self.cmd_report()


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100 * x:6.2f}"


def format_report(report: Mapping[str, Any]) -> str:
    cfg = report["config"]
    lines = [
        f"run {report['run_id']}",
        f"template {cfg['template']}  ablation {cfg['ablation']}  k {cfg['retrieval']['k']}  "
        f"text {cfg['retrieval']['text_strategy']}  visual {cfg['retrieval']['visual_variant']}",
        "",
    ]
    retrieval = report.get("retrieval") or {}
    if retrieval.get("text") or retrieval.get("visual"):
        lines.append(f"{'retrieval':<10} {'P':>6} {'R':>6} {'F1':>6} {'nDCG':>6} {'Hit':>6} {'MAP':>6}")
        for modality in ("text", "visual"):
            if modality in retrieval:
                m = retrieval[modality]["mean"]
                lines.append(f"{modality:<10} " + " ".join(_pct(m[key]) for key in
                                                           ("precision", "recall", "f1", "ndcg", "hit_rate", "map")))
        lines.append("")
    acs = report["acs"]
    tm = acs["text_metrics"]["mean"]
    if tm:
        lines.append(f"{'text':<10} {'Sim':>6} {'R-1':>6} {'R-2':>6} {'R-L':>6} {'BLEU':>6} {'Lev':>8}")
        lines.append(f"{'generated':<10} {_pct(tm['semantic_sim'])} {_pct(tm['rouge1']['f1'])} "
                     f"{_pct(tm['rouge2']['f1'])} {_pct(tm['rougeL']['f1'])} {_pct(tm['bleu'])} "
                     f"{tm['levenshtein']:8.1f}")
        lines.append("")
    lines.append(f"{'accuracy':<10} {'Hit(C)':>6} {'Cor(C)':>6} {'Hit(P)':>6} {'Cor(P)':>6}")
    for label in ("generated", "polished"):
        if label in acs:
            a = acs[label]["accuracy"]
            lines.append(f"{label:<10} {_pct(a['hit_case'])} {_pct(a['cor_case'])} "
                         f"{_pct(a['hit_point'])} {_pct(a['cor_point'])}")
    if "compare" in acs:
        c = acs["compare"]
        lines += ["", f"polished preferred unanimously: {c['unanimous_better']}/{c['compared']}"]
    return "\n".join(lines) + "\n"
