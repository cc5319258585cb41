"""Requirements corpus: stories, domain chunks, screenshots and acceptance criteria.

Also home to the Gherkin dialect used throughout the package and the
version-1 JSON dataset format.
"""

from __future__ import annotations

import hashlib
import json
import mimetypes
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping

import jsonschema

from .errors import (
    DanglingReference,
    DuplicateId,
    EmptyClause,
    EmptyInput,
    ImageNotFound,
    MissingKeyword,
    SchemaError,
)

SCHEMA_VERSION = "1"


class ChunkKind(str, Enum):
    BACKGROUND = "Background"
    CONSIDERATION = "Consideration"


@dataclass(frozen=True)
class UserStory:
    id: str
    title: str
    narrative: str
    extensions: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("story id must be non-empty")
        if not self.narrative.strip():
            raise ValueError(f"story {self.id!r} has an empty narrative")
        object.__setattr__(self, "extensions", tuple(self.extensions))

    @property
    def query_text(self) -> str:
        """Title, narrative and extensions joined by newlines."""
        parts = [self.title, self.narrative, *self.extensions]
        return "\n".join(p for p in parts if p)


@dataclass(frozen=True)
class DomainChunk:
    id: str
    text: str
    kind: ChunkKind = ChunkKind.BACKGROUND
    source: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("chunk id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"chunk {self.id!r} has empty text")
        object.__setattr__(self, "kind", ChunkKind(self.kind))


@dataclass(frozen=True)
class VisualDoc:
    id: str
    image: bytes
    media_type: str = "image/png"
    html_full: str | None = None
    html_pruned: str | None = None
    caption: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("visual id must be non-empty")
        if not self.image:
            raise ValueError(f"visual {self.id!r} has an empty image payload")
        if self.html_pruned is not None:
            if self.html_full is None:
                raise ValueError(f"visual {self.id!r}: html_pruned requires html_full")
            if len(self.html_pruned.encode()) > len(self.html_full.encode()):
                raise ValueError(f"visual {self.id!r}: html_pruned is longer than html_full")

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.image).hexdigest()


@dataclass(frozen=True)
class AcceptanceCriterion:
    given: tuple[str, ...]
    when: tuple[str, ...]
    then: tuple[str, ...]
    raw: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        for name in ("given", "when", "then"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.raw:
            object.__setattr__(self, "raw", render(self))

    @property
    def is_atomic(self) -> bool:
        return len(self.then) == 1

    @property
    def text(self) -> str:
        """Single-line canonical rendering."""
        return render(self, inline=True)


@dataclass(frozen=True)
class GroundTruthObjective:
    id: str
    story_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("objective id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"objective {self.id!r} has empty text")


# -- Gherkin --------------------------------------------------------------

# A keyword at the start of a line may carry list markers, markdown emphasis
# and any casing. Mid-line keywords are recognised only when upper-case, so
# ordinary words like "and" inside a clause are left alone.
_LINE_KEYWORD = re.compile(
    r"^[ \t]*(?:(?:[-*+•>]|\d+[.)]|#+)[ \t]*)*(?:\*\*|__)?"
    r"(given|when|then|and|but)\b[:,]?(?:\*\*|__)?[:,]?(?=\s|$)",
    re.IGNORECASE,
)
_INLINE_KEYWORD = re.compile(r"(?<!\S)(GIVEN|WHEN|THEN|AND|BUT)(?!\S)")


@dataclass
class _Segment:
    keyword: str | None
    text: str
    offset: int
    end: int
    after_blank: bool


def _segments(text: str) -> list[_Segment]:
    out: list[_Segment] = []
    offset = 0
    blank = False
    for line in text.splitlines(keepends=True):
        start = offset
        offset += len(line)
        body = line.rstrip("\r\n")
        if not body.strip():
            blank = True
            continue
        m = _LINE_KEYWORD.match(body)
        if m:
            keyword: str | None = m.group(1).lower()
            rest_at = m.end()
            seg_at = start + m.start(1)
        else:
            keyword, rest_at, seg_at = None, 0, start
        rest = body[rest_at:]
        pieces = _INLINE_KEYWORD.split(rest)
        cursor = rest_at + len(pieces[0])
        out.append(_Segment(keyword, pieces[0], seg_at, start + cursor, blank))
        for kw, chunk in zip(pieces[1::2], pieces[2::2]):
            out.append(_Segment(kw.lower(), chunk, start + cursor, start + cursor + len(kw) + len(chunk), False))
            cursor += len(kw) + len(chunk)
        blank = False
    return out


def _clean(text: str) -> str:
    return " ".join(text.split()).lstrip(":").strip().rstrip(",;").strip()


class _Builder:
    def __init__(self, offset: int) -> None:
        self.offset = offset
        self.end = offset
        self.sections: dict[str, list[str]] = {"given": [], "when": [], "then": []}
        self.current = "given"

    def add(self, section: str, text: str) -> None:
        self.current = section
        self.sections[section].append(text)

    def extend(self, text: str) -> None:
        clauses = self.sections[self.current]
        clauses[-1] = f"{clauses[-1]} {text}".strip()

    def finish(self, source: str) -> AcceptanceCriterion:
        raw = source[self.offset:self.end].strip()
        for name in ("when", "then"):
            if not self.sections[name]:
                raise MissingKeyword(f"criterion has no {name.upper()} clause", keyword=name.upper(), raw=raw)
        for name, clauses in self.sections.items():
            if any(not c for c in clauses):
                raise EmptyClause(f"empty {name.upper()} clause", raw=raw)
        return AcceptanceCriterion(
            given=tuple(self.sections["given"]),
            when=tuple(self.sections["when"]),
            then=tuple(self.sections["then"]),
            raw=raw,
        )


def parse_gherkin(text: str) -> list[AcceptanceCriterion]:
    """Parse GIVEN/WHEN/THEN text into acceptance criteria.

    Keywords are case-insensitive at the start of a line and upper-case
    anywhere else. AND/BUT continue the current clause list, each GIVEN opens
    a new criterion, and text before the first GIVEN is ignored. A line with
    no keyword extends the previous clause unless a blank line separates them.
    """
    if not text or not text.strip():
        raise EmptyInput("no text to parse")
    acs: list[AcceptanceCriterion] = []
    builder: _Builder | None = None
    for seg in _segments(text):
        clause = _clean(seg.text)
        if seg.keyword is None:
            if builder is not None and not seg.after_blank and clause:
                builder.extend(clause)
                builder.end = seg.end
            continue
        if seg.keyword == "given":
            if builder is not None:
                acs.append(builder.finish(text))
            builder = _Builder(seg.offset)
            builder.add("given", clause)
            builder.end = seg.end
            continue
        if builder is None:
            continue
        builder.end = seg.end
        if seg.keyword == "when":
            if builder.current == "then":
                raise MissingKeyword("WHEN after THEN without a new GIVEN", keyword="GIVEN")
            builder.add("when", clause)
        elif seg.keyword == "then":
            if not builder.sections["when"]:
                raise MissingKeyword("THEN before any WHEN", keyword="WHEN")
            builder.add("then", clause)
        else:
            builder.add(builder.current, clause)
    if builder is None:
        raise MissingKeyword("no GIVEN clause found", keyword="GIVEN")
    acs.append(builder.finish(text))
    return acs


def render(ac: AcceptanceCriterion, inline: bool = False) -> str:
    lines: list[str] = []
    for keyword, clauses in (("GIVEN", ac.given), ("WHEN", ac.when), ("THEN", ac.then)):
        for i, clause in enumerate(clauses):
            lines.append(f"{keyword if i == 0 else 'AND'} {clause}")
    return (" " if inline else "\n").join(lines)


def render_all(acs: Iterable[AcceptanceCriterion]) -> str:
    return "\n\n".join(render(ac) for ac in acs)


def atomicize(ac: AcceptanceCriterion) -> list[AcceptanceCriterion]:
    """Split an AC into one AC per THEN outcome, keeping GIVEN/WHEN."""
    if ac.is_atomic:
        return [ac]
    return [AcceptanceCriterion(ac.given, ac.when, (outcome,)) for outcome in ac.then]


# -- dataset --------------------------------------------------------------

_ID = {"type": "string", "minLength": 1}
_NULLABLE_STR = {"type": ["string", "null"]}

DATASET_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["version", "stories", "chunks", "visuals", "ground_truth", "objectives", "relevance"],
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "stories": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "title", "narrative"],
                "properties": {
                    "id": _ID,
                    "title": {"type": "string"},
                    "narrative": {"type": "string", "minLength": 1},
                    "extensions": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "chunks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "text", "kind"],
                "properties": {
                    "id": _ID,
                    "text": {"type": "string", "minLength": 1},
                    "kind": {"enum": [k.value for k in ChunkKind]},
                    "source": {"type": "string"},
                },
            },
        },
        "visuals": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "image"],
                "properties": {
                    "id": _ID,
                    "image": {"type": "string", "minLength": 1},
                    "media_type": {"enum": ["image/png", "image/jpeg"]},
                    "html_full": _NULLABLE_STR,
                    "html_pruned": _NULLABLE_STR,
                    "caption": _NULLABLE_STR,
                },
            },
        },
        "ground_truth": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "string", "minLength": 1}},
        },
        "objectives": {
            "type": "object",
            "additionalProperties": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["id", "text"],
                    "properties": {"id": _ID, "text": {"type": "string", "minLength": 1}},
                },
            },
        },
        "relevance": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": _ID},
        },
    },
}


def _pointer(path: Iterable[Any]) -> str:
    return "/" + "/".join(str(p).replace("~", "~0").replace("/", "~1") for p in path)


@dataclass(frozen=True)
class Dataset:
    stories: tuple[UserStory, ...]
    chunks: tuple[DomainChunk, ...]
    visuals: tuple[VisualDoc, ...]
    ground_truth_acs: Mapping[str, tuple[AcceptanceCriterion, ...]] = field(default_factory=dict)
    objectives: Mapping[str, tuple[GroundTruthObjective, ...]] = field(default_factory=dict)
    relevance: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "stories", tuple(self.stories))
        object.__setattr__(self, "chunks", tuple(self.chunks))
        object.__setattr__(self, "visuals", tuple(self.visuals))
        object.__setattr__(self, "ground_truth_acs", {k: tuple(v) for k, v in self.ground_truth_acs.items()})
        object.__setattr__(self, "objectives", {k: tuple(v) for k, v in self.objectives.items()})
        object.__setattr__(self, "relevance", {k: frozenset(v) for k, v in self.relevance.items()})
        self._validate()

    def _validate(self) -> None:
        seen: set[str] = set()
        all_ids = [s.id for s in self.stories] + [c.id for c in self.chunks] + [v.id for v in self.visuals]
        all_ids += [o.id for objs in self.objectives.values() for o in objs]
        for doc_id in all_ids:
            if doc_id in seen:
                raise DuplicateId(f"duplicate id {doc_id!r}", id=doc_id)
            seen.add(doc_id)
        story_ids = {s.id for s in self.stories}
        doc_ids = {c.id for c in self.chunks} | {v.id for v in self.visuals}
        for label, mapping in (("ground_truth", self.ground_truth_acs), ("objectives", self.objectives),
                               ("relevance", self.relevance)):
            for sid in mapping:
                if sid not in story_ids:
                    raise DanglingReference(f"{label} references unknown story {sid!r}", story_id=sid)
        for sid, objs in self.objectives.items():
            for o in objs:
                if o.story_id != sid:
                    raise DanglingReference(
                        f"objective {o.id!r} listed under {sid!r} but references {o.story_id!r}",
                        objective_id=o.id,
                    )
        for sid, docs in self.relevance.items():
            for doc_id in sorted(docs):
                if doc_id not in doc_ids:
                    raise DanglingReference(f"relevance for {sid!r} references unknown doc {doc_id!r}",
                                            doc_id=doc_id)

    @cached_property
    def story_by_id(self) -> dict[str, UserStory]:
        return {s.id: s for s in self.stories}

    @cached_property
    def chunk_by_id(self) -> dict[str, DomainChunk]:
        return {c.id: c for c in self.chunks}

    @cached_property
    def visual_by_id(self) -> dict[str, VisualDoc]:
        return {v.id: v for v in self.visuals}

    def fingerprint(self) -> str:
        payload = _to_json(self, image_ref=lambda v: v.sha256)
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode()).hexdigest()


def _to_json(ds: Dataset, image_ref) -> dict[str, Any]:
    return {
        "version": SCHEMA_VERSION,
        "stories": [
            {"id": s.id, "title": s.title, "narrative": s.narrative, "extensions": list(s.extensions)}
            for s in ds.stories
        ],
        "chunks": [{"id": c.id, "text": c.text, "kind": c.kind.value, "source": c.source} for c in ds.chunks],
        "visuals": [
            {
                "id": v.id,
                "image": image_ref(v),
                "media_type": v.media_type,
                "html_full": v.html_full,
                "html_pruned": v.html_pruned,
                "caption": v.caption,
            }
            for v in ds.visuals
        ],
        "ground_truth": {sid: [ac.raw for ac in acs] for sid, acs in ds.ground_truth_acs.items()},
        "objectives": {sid: [{"id": o.id, "text": o.text} for o in objs] for sid, objs in ds.objectives.items()},
        "relevance": {sid: sorted(docs) for sid, docs in ds.relevance.items()},
    }


def _ext(media_type: str) -> str:
    return ".jpg" if media_type == "image/jpeg" else ".png"


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` as JSON plus an ``images/`` directory beside it."""
    path = Path(path)
    image_dir = path.parent / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    def write_image(v: VisualDoc) -> str:
        name = f"images/{v.id}{_ext(v.media_type)}"
        (path.parent / name).write_bytes(v.image)
        return name

    payload = _to_json(ds, image_ref=write_image)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", pointer="", line=exc.lineno) from exc
    errors = sorted(jsonschema.Draft202012Validator(DATASET_SCHEMA).iter_errors(payload),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise SchemaError(err.message, pointer=_pointer(err.absolute_path))

    def build(pointer: str, factory, **kwargs):
        try:
            return factory(**kwargs)
        except ValueError as exc:
            raise SchemaError(str(exc), pointer=pointer) from exc

    stories = [
        build(f"/stories/{i}", UserStory, id=s["id"], title=s["title"], narrative=s["narrative"],
              extensions=tuple(s.get("extensions", ())))
        for i, s in enumerate(payload["stories"])
    ]
    chunks = [
        build(f"/chunks/{i}", DomainChunk, id=c["id"], text=c["text"], kind=ChunkKind(c["kind"]),
              source=c.get("source", ""))
        for i, c in enumerate(payload["chunks"])
    ]
    visuals = []
    for i, v in enumerate(payload["visuals"]):
        image_path = path.parent / v["image"]
        if not image_path.is_file():
            raise ImageNotFound(f"image for visual {v['id']!r} not found: {v['image']}", pointer=f"/visuals/{i}/image")
        media_type = v.get("media_type") or mimetypes.guess_type(image_path.name)[0] or "image/png"
        visuals.append(build(f"/visuals/{i}", VisualDoc, id=v["id"], image=image_path.read_bytes(),
                             media_type=media_type, html_full=v.get("html_full"),
                             html_pruned=v.get("html_pruned"), caption=v.get("caption")))
    ground_truth: dict[str, tuple[AcceptanceCriterion, ...]] = {}
    for sid, texts in payload["ground_truth"].items():
        acs: list[AcceptanceCriterion] = []
        for j, raw in enumerate(texts):
            parsed = build(f"/ground_truth/{_pointer([sid])[1:]}/{j}", parse_gherkin, text=raw)
            if len(parsed) != 1:
                raise SchemaError("each ground-truth entry must hold exactly one criterion",
                                  pointer=f"/ground_truth/{_pointer([sid])[1:]}/{j}")
            acs.append(parsed[0])
        ground_truth[sid] = tuple(acs)
    objectives = {
        sid: tuple(GroundTruthObjective(id=o["id"], story_id=sid, text=o["text"]) for o in objs)
        for sid, objs in payload["objectives"].items()
    }
    relevance = {sid: frozenset(ids) for sid, ids in payload["relevance"].items()}
    return Dataset(tuple(stories), tuple(chunks), tuple(visuals), ground_truth, objectives, relevance)
