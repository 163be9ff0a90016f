"""Needle-in-a-video-haystack instance generation, validation, and scoring.

A haystack is an abstract sequence of frame slots. A reasoning path is a
chain of hops: each hop occupies one slot, carries one library item, and its
clue text names the next hop's item by caption. The correct path ends at the
needle; distractor paths are built the same way from disjoint items and end
at decoys. A responder must follow the clue chain from the start hint to the
needle (scored as CAP) and answer the needle's question (scored as QA; QA
also requires the needle to be found, so QA <= CAP always).

Library items, instances, and responses all have JSON representations with
fixed key order, so serialization is byte-deterministic per seed.
"""
from __future__ import annotations

import json
import math
import os
import random
import string
from dataclasses import dataclass, field

from .errors import CapacityError, DomainError

CLUE_TEMPLATE = "The clue in this image points to the item titled '{next_caption}'."
START_TEMPLATE = "The reasoning path starts at the item titled '{caption}'."
Q1_TEXT = "Following the textual clues from the starting image, which item is the needle?"

CHECK_POSITIONS = "positions"
CHECK_CHAIN = "chain"
CHECK_DECOY = "decoy"
CHECK_DISTRACTOR = "distractor-reach"
CHECK_STRUCTURE = "structure"


@dataclass(frozen=True)
class NeedleItem:
    id: str
    caption: str
    question: str
    answer: str

    def __post_init__(self) -> None:
        if not (self.id and self.caption and self.question and self.answer):
            raise DomainError("needle item fields must be non-empty")


@dataclass(frozen=True)
class Hop:
    """One slot of a reasoning path; clue is None on the terminal hop."""

    item_id: str
    position: int
    clue: str | None


@dataclass(frozen=True)
class ReasoningPath:
    hops: tuple[Hop, ...]
    is_correct: bool

    def __post_init__(self) -> None:
        if not self.hops:
            raise DomainError("a reasoning path needs at least one hop")


@dataclass(frozen=True)
class NiahInstance:
    seed: int
    haystack_len: int
    correct_path: ReasoningPath
    distractors: tuple[ReasoningPath, ...]
    start_hint: str
    q1: str
    q2: str
    ground_truth: tuple[str, str]

    @property
    def instance_id(self) -> str:
        h = len(self.correct_path.hops)
        if h == 1 and not self.distractors:
            pos = self.correct_path.hops[0].position
            return f"sh-L{self.haystack_len}-p{pos}-s{self.seed}"
        return f"mh-L{self.haystack_len}-h{h}-x{len(self.distractors)}-s{self.seed}"

    def all_hops(self) -> list[Hop]:
        hops = list(self.correct_path.hops)
        for path in self.distractors:
            hops.extend(path.hops)
        return hops


@dataclass(frozen=True)
class Response:
    instance_id: str
    needle_id: str
    answer: str


@dataclass(frozen=True)
class Score:
    cap: float
    qa: float


@dataclass
class ValidationReport:
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def codes(self) -> list[str]:
        return [code for code, _ in self.failures]


# ---------------------------------------------------------------------------
# library


def load_library(path: str | os.PathLike) -> list[NeedleItem]:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, list):
        raise DomainError("item library must be a JSON array")
    items = [
        NeedleItem(
            id=str(e["id"]),
            caption=str(e["caption"]),
            question=str(e["question"]),
            answer=str(e["answer"]),
        )
        for e in raw
    ]
    ids = [i.id for i in items]
    if len(set(ids)) != len(ids):
        raise DomainError("item library contains duplicate ids")
    return items


def save_library(items: list[NeedleItem], path: str | os.PathLike) -> None:
    payload = [
        {"id": i.id, "caption": i.caption, "question": i.question, "answer": i.answer}
        for i in items
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


_COLORS = (
    "red", "blue", "green", "yellow", "purple", "orange", "teal", "silver",
    "crimson", "amber", "violet", "indigo", "olive", "maroon", "coral", "navy",
)
_OBJECTS = (
    "kite", "lantern", "bicycle", "umbrella", "suitcase", "telescope",
    "accordion", "canoe", "ladder", "teapot", "compass", "typewriter",
    "wheelbarrow", "hammock", "banjo", "kettle",
)
_PLACES = (
    "harbor", "orchard", "rooftop", "meadow", "lighthouse", "station",
    "fountain", "workshop", "gallery", "cliff", "market", "greenhouse",
    "pier", "courtyard", "windmill", "observatory",
)


def synth_library(size: int, seed: int = 0) -> list[NeedleItem]:
    """Deterministic caption/QA library with pairwise-distinct captions."""
    limit = len(_COLORS) * len(_OBJECTS) * len(_PLACES)
    if not (1 <= size <= limit):
        raise CapacityError(f"library size must be in [1, {limit}]")
    rng = random.Random(seed)
    triples = rng.sample(range(limit), size)
    items = []
    for i, t in enumerate(triples):
        color = _COLORS[t % len(_COLORS)]
        obj = _OBJECTS[(t // len(_COLORS)) % len(_OBJECTS)]
        place = _PLACES[t // (len(_COLORS) * len(_OBJECTS))]
        items.append(
            NeedleItem(
                id=f"item-{i:04d}",
                caption=f"a {color} {obj} near the {place}",
                question=f"What color is the {obj} near the {place}?",
                answer=color,
            )
        )
    return items


# ---------------------------------------------------------------------------
# templates


def render_template(template: str, placeholder: str, value: str) -> str:
    return template.replace("{" + placeholder + "}", value)


def extract_from_template(template: str, placeholder: str, rendered: str) -> str:
    """Invert render_template, recovering the placeholder value."""
    marker = "{" + placeholder + "}"
    if template.count(marker) != 1:
        raise DomainError(f"template must contain {marker} exactly once")
    prefix, suffix = template.split(marker)
    if not rendered.startswith(prefix) or not rendered.endswith(suffix):
        raise DomainError(f"text does not match template: {rendered!r}")
    end = len(rendered) - len(suffix)
    if end < len(prefix):
        raise DomainError(f"text does not match template: {rendered!r}")
    return rendered[len(prefix) : end]


# ---------------------------------------------------------------------------
# generation


def gen_single_hop(
    haystack_len: int,
    depth: float,
    needle: NeedleItem,
    seed: int = 0,
    *,
    start_template: str = START_TEMPLATE,
    q1_text: str = Q1_TEXT,
) -> NiahInstance:
    """One needle at relative depth in [0, 1], no clue chain, no distractors."""
    if haystack_len < 1:
        raise DomainError("haystack_len must be >= 1")
    if not (0.0 <= depth <= 1.0):
        raise DomainError("depth must be in [0, 1]")
    position = math.floor(depth * (haystack_len - 1) + 0.5)
    path = ReasoningPath(hops=(Hop(needle.id, position, None),), is_correct=True)
    return NiahInstance(
        seed=seed,
        haystack_len=haystack_len,
        correct_path=path,
        distractors=(),
        start_hint=render_template(start_template, "caption", needle.caption),
        q1=q1_text,
        q2=needle.question,
        ground_truth=(needle.id, needle.answer),
    )


def _unique_caption_pool(library: list[NeedleItem]) -> list[NeedleItem]:
    counts: dict[str, int] = {}
    for item in library:
        counts[item.caption] = counts.get(item.caption, 0) + 1
    return [item for item in library if counts[item.caption] == 1]


def _build_path(
    items: list[NeedleItem],
    positions: list[int],
    is_correct: bool,
    clue_template: str,
) -> ReasoningPath:
    hops = []
    for i, (item, pos) in enumerate(zip(items, positions)):
        clue = None
        if i + 1 < len(items):
            clue = render_template(clue_template, "next_caption", items[i + 1].caption)
        hops.append(Hop(item.id, pos, clue))
    return ReasoningPath(hops=tuple(hops), is_correct=is_correct)


def gen_multi_hop(
    haystack_len: int,
    hops: int,
    distractor_count: int,
    library: list[NeedleItem],
    seed: int = 0,
    *,
    ordered: bool = False,
    clue_template: str = CLUE_TEMPLATE,
    start_template: str = START_TEMPLATE,
    q1_text: str = Q1_TEXT,
) -> NiahInstance:
    """Seeded multi-hop instance with `distractor_count` decoy paths.

    Items (from the library's unique-caption pool) and positions are sampled
    without replacement, so every hop slot is globally distinct and no two
    paths share an item. With ordered=True each path's hop positions ascend.
    """
    if hops < 1:
        raise DomainError("hops must be >= 1")
    if distractor_count < 0:
        raise DomainError("distractor_count must be >= 0")
    needed = hops * (1 + distractor_count)
    pool = _unique_caption_pool(library)
    if len(pool) < needed:
        raise CapacityError(
            f"library has {len(pool)} usable items, instance needs {needed}"
        )
    if haystack_len < needed:
        raise CapacityError(
            f"haystack of {haystack_len} cannot host {needed} hop positions"
        )
    rng = random.Random(seed)
    items = rng.sample(pool, needed)
    positions = rng.sample(range(haystack_len), needed)

    def path_slice(i: int) -> tuple[list[NeedleItem], list[int]]:
        its = items[i * hops : (i + 1) * hops]
        ps = positions[i * hops : (i + 1) * hops]
        return its, sorted(ps) if ordered else ps

    correct_items, correct_pos = path_slice(0)
    correct = _build_path(correct_items, correct_pos, True, clue_template)
    distractors = tuple(
        _build_path(*path_slice(1 + j), False, clue_template)
        for j in range(distractor_count)
    )
    needle = correct_items[-1]
    return NiahInstance(
        seed=seed,
        haystack_len=haystack_len,
        correct_path=correct,
        distractors=distractors,
        start_hint=render_template(start_template, "caption", correct_items[0].caption),
        q1=q1_text,
        q2=needle.question,
        ground_truth=(needle.id, needle.answer),
    )


# ---------------------------------------------------------------------------
# traversal, validation, oracle


def _caption_map(
    instance: NiahInstance, library: list[NeedleItem]
) -> tuple[dict[str, NeedleItem], dict[str, str]]:
    """Map instance item ids to items and instance captions to item ids."""
    by_id = {item.id: item for item in library}
    captions: dict[str, str] = {}
    for hop in instance.all_hops():
        item = by_id.get(hop.item_id)
        if item is None:
            raise DomainError(f"instance references unknown item {hop.item_id!r}")
        if item.caption in captions and captions[item.caption] != item.id:
            raise DomainError(f"ambiguous caption {item.caption!r} in instance")
        captions[item.caption] = item.id
    return by_id, captions


def _traverse(
    start_item_id: str,
    instance: NiahInstance,
    captions: dict[str, str],
    clue_template: str,
) -> list[str]:
    """Follow clues hop to hop; returns visited item ids, terminal last."""
    hops_by_item = {hop.item_id: hop for hop in instance.all_hops()}
    visited: list[str] = []
    current = start_item_id
    while True:
        if current in visited:
            raise DomainError(f"clue chain cycles at item {current!r}")
        visited.append(current)
        hop = hops_by_item.get(current)
        if hop is None:
            raise DomainError(f"no hop carries item {current!r}")
        if hop.clue is None:
            return visited
        caption = extract_from_template(clue_template, "next_caption", hop.clue)
        nxt = captions.get(caption)
        if nxt is None:
            raise DomainError(f"clue names unknown caption {caption!r}")
        current = nxt


def validate_instance(
    instance: NiahInstance,
    library: list[NeedleItem],
    *,
    clue_template: str = CLUE_TEMPLATE,
    start_template: str = START_TEMPLATE,
) -> ValidationReport:
    """Check an instance is solvable and its distractors are safe.

    (positions)        every hop position unique and inside the haystack
    (chain)            the correct clue chain runs start hint -> ground truth
    (decoy)            no distractor terminal is the needle
    (distractor-reach) traversal from any distractor start misses the needle
    (structure)        ids resolvable, captions unambiguous, paths well formed
    """
    report = ValidationReport()
    needle_id = instance.ground_truth[0]

    all_hops = instance.all_hops()
    positions = [h.position for h in all_hops]
    if len(set(positions)) != len(positions):
        report.failures.append((CHECK_POSITIONS, "duplicate hop positions"))
    bad = [p for p in positions if not (0 <= p < instance.haystack_len)]
    if bad:
        report.failures.append((CHECK_POSITIONS, f"positions out of range: {bad}"))

    if not instance.correct_path.is_correct:
        report.failures.append((CHECK_STRUCTURE, "correct_path flagged incorrect"))
    for path in instance.distractors:
        if path.is_correct:
            report.failures.append((CHECK_STRUCTURE, "distractor flagged correct"))

    try:
        _, captions = _caption_map(instance, library)
        start_caption = extract_from_template(
            start_template, "caption", instance.start_hint
        )
        start_id = captions.get(start_caption)
        if start_id is None:
            report.failures.append(
                (CHECK_CHAIN, f"start hint names unknown caption {start_caption!r}")
            )
        else:
            visited = _traverse(start_id, instance, captions, clue_template)
            if visited[-1] != needle_id:
                report.failures.append(
                    (CHECK_CHAIN, f"correct chain ends at {visited[-1]!r}, not the needle")
                )
            chain_items = [h.item_id for h in instance.correct_path.hops]
            if visited != chain_items:
                report.failures.append(
                    (CHECK_CHAIN, "clue chain does not follow the correct path's hops")
                )
    except DomainError as exc:
        report.failures.append((CHECK_CHAIN, str(exc)))
        captions = None

    for i, path in enumerate(instance.distractors):
        if path.hops[-1].item_id == needle_id:
            report.failures.append(
                (CHECK_DECOY, f"distractor {i} terminates at the needle")
            )
        if captions is None:
            continue
        try:
            visited = _traverse(path.hops[0].item_id, instance, captions, clue_template)
        except DomainError as exc:
            report.failures.append((CHECK_DISTRACTOR, f"distractor {i}: {exc}"))
            continue
        if needle_id in visited:
            report.failures.append(
                (CHECK_DISTRACTOR, f"distractor {i} traversal reaches the needle")
            )
    return report


def oracle_solve(
    instance: NiahInstance,
    library: list[NeedleItem],
    *,
    clue_template: str = CLUE_TEMPLATE,
    start_template: str = START_TEMPLATE,
) -> tuple[str, str]:
    """Perfect-perception reference solver: follow the clues, answer from the library."""
    by_id, captions = _caption_map(instance, library)
    start_caption = extract_from_template(start_template, "caption", instance.start_hint)
    start_id = captions.get(start_caption)
    if start_id is None:
        raise DomainError(f"start hint names unknown caption {start_caption!r}")
    visited = _traverse(start_id, instance, captions, clue_template)
    terminal = visited[-1]
    return terminal, by_id[terminal].answer


# ---------------------------------------------------------------------------
# scoring

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Case-fold, trim, strip punctuation, collapse whitespace."""
    return " ".join(text.casefold().translate(_PUNCT_TABLE).split())


def score(instances: list[NiahInstance], responses: list[Response]) -> Score:
    """CAP = fraction with the right needle; QA additionally needs the answer."""
    if not instances:
        raise DomainError("need at least one instance to score")
    by_id = {inst.instance_id: inst for inst in instances}
    if len(by_id) != len(instances):
        raise DomainError("instances contain duplicate ids")
    seen = [r.instance_id for r in responses]
    if sorted(seen) != sorted(by_id):
        raise DomainError("responses must cover each instance exactly once")
    cap_hits = 0
    qa_hits = 0
    for resp in responses:
        needle_id, answer = by_id[resp.instance_id].ground_truth
        if resp.needle_id == needle_id:
            cap_hits += 1
            if normalize_answer(resp.answer) == normalize_answer(answer):
                qa_hits += 1
    n = len(instances)
    return Score(cap=cap_hits / n, qa=qa_hits / n)


# ---------------------------------------------------------------------------
# heatmap grid


@dataclass(frozen=True)
class HeatmapCell:
    length: int
    depth: float
    instance: NiahInstance


def heatmap_grid(
    lengths: list[int],
    depths: list[float],
    library: list[NeedleItem],
    seed: int = 0,
) -> list[HeatmapCell]:
    """One single-hop instance per (length, depth) cell, row-major order."""
    if not lengths or not depths:
        raise DomainError("lengths and depths must be non-empty")
    if not library:
        raise DomainError("library must be non-empty")
    rng = random.Random(seed)
    cells = []
    index = 0
    for length in lengths:
        for depth in depths:
            needle = library[rng.randrange(len(library))]
            cells.append(
                HeatmapCell(
                    length=length,
                    depth=depth,
                    instance=gen_single_hop(length, depth, needle, seed=seed + index),
                )
            )
            index += 1
    return cells


def heatmap_scores(
    cells: list[HeatmapCell], responses: list[Response]
) -> list[tuple[int, float, float]]:
    """Join responses onto grid cells, yielding (length, depth, accuracy) rows."""
    by_id: dict[str, list[Response]] = {}
    for r in responses:
        by_id.setdefault(r.instance_id, []).append(r)
    rows = []
    for cell in cells:
        got = by_id.get(cell.instance.instance_id)
        if not got:
            raise DomainError(f"no response for instance {cell.instance.instance_id}")
        hits = sum(1 for r in got if r.needle_id == cell.instance.ground_truth[0])
        rows.append((cell.length, cell.depth, hits / len(got)))
    return rows


# ---------------------------------------------------------------------------
# serialization


def instance_to_dict(instance: NiahInstance) -> dict:
    def path_dict(path: ReasoningPath) -> dict:
        return {
            "hops": [
                {"item_id": h.item_id, "position": h.position, "clue": h.clue}
                for h in path.hops
            ],
            "is_correct": path.is_correct,
        }

    return {
        "seed": instance.seed,
        "haystack_len": instance.haystack_len,
        "correct_path": path_dict(instance.correct_path),
        "distractors": [path_dict(p) for p in instance.distractors],
        "start_hint": instance.start_hint,
        "q1": instance.q1,
        "q2": instance.q2,
        "ground_truth": list(instance.ground_truth),
    }


def instance_from_dict(raw: dict) -> NiahInstance:
    def path_from(d: dict) -> ReasoningPath:
        return ReasoningPath(
            hops=tuple(
                Hop(item_id=h["item_id"], position=h["position"], clue=h["clue"])
                for h in d["hops"]
            ),
            is_correct=bool(d["is_correct"]),
        )

    gt = raw["ground_truth"]
    return NiahInstance(
        seed=int(raw["seed"]),
        haystack_len=int(raw["haystack_len"]),
        correct_path=path_from(raw["correct_path"]),
        distractors=tuple(path_from(p) for p in raw["distractors"]),
        start_hint=raw["start_hint"],
        q1=raw["q1"],
        q2=raw["q2"],
        ground_truth=(gt[0], gt[1]),
    )


def dump_instance(instance: NiahInstance) -> str:
    return json.dumps(instance_to_dict(instance), indent=2) + "\n"


def load_instance(path: str | os.PathLike) -> NiahInstance:
    with open(path, "r", encoding="utf-8") as f:
        return instance_from_dict(json.load(f))


def write_instance(instance: NiahInstance, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_instance(instance))


def load_responses(path: str | os.PathLike) -> list[Response]:
    responses = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            responses.append(
                Response(
                    instance_id=str(raw["instance_id"]),
                    needle_id=str(raw["needle_id"]),
                    answer=str(raw["answer"]),
                )
            )
    return responses


def write_responses(responses: list[Response], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in responses:
            f.write(
                json.dumps(
                    {
                        "instance_id": r.instance_id,
                        "needle_id": r.needle_id,
                        "answer": r.answer,
                    }
                )
                + "\n"
            )
