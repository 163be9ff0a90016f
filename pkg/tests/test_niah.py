import dataclasses
import random

import pytest

from hico import niah
from hico.errors import CapacityError, DomainError

LIB = niah.synth_library(100, seed=0)


def needle_for(i=0):
    return LIB[i]


# ---------------------------------------------------------------------------
# generation


@pytest.mark.parametrize(
    "length,depth,position",
    [(10, 0.0, 0), (10, 1.0, 9), (10000, 0.5, 5000), (1, 0.7, 0)],
)
def test_single_hop_positions(length, depth, position):
    inst = niah.gen_single_hop(length, depth, needle_for())
    assert inst.correct_path.hops[0].position == position
    assert inst.distractors == ()
    assert inst.ground_truth == (needle_for().id, needle_for().answer)


def test_single_hop_rejects_bad_depth():
    with pytest.raises(DomainError):
        niah.gen_single_hop(10, 1.5, needle_for())
    with pytest.raises(DomainError):
        niah.gen_single_hop(0, 0.5, needle_for())


def test_multi_hop_structure():
    inst = niah.gen_multi_hop(500, 3, 2, LIB, seed=42)
    assert len(inst.correct_path.hops) == 3
    assert len(inst.distractors) == 2
    assert inst.correct_path.hops[-1].clue is None
    assert inst.correct_path.hops[-1].item_id == inst.ground_truth[0]
    items = [h.item_id for h in inst.all_hops()]
    assert len(set(items)) == 9
    positions = [h.position for h in inst.all_hops()]
    assert len(set(positions)) == 9


def test_multi_hop_single_hop_degenerate_case():
    inst = niah.gen_multi_hop(50, 1, 0, LIB, seed=3)
    assert len(inst.correct_path.hops) == 1
    assert inst.correct_path.hops[0].clue is None
    assert inst.distractors == ()
    assert inst.ground_truth[0] == inst.correct_path.hops[0].item_id


def test_multi_hop_deterministic_serialization():
    a = niah.gen_multi_hop(1000, 3, 1, LIB, seed=7)
    b = niah.gen_multi_hop(1000, 3, 1, LIB, seed=7)
    assert niah.dump_instance(a) == niah.dump_instance(b)
    c = niah.gen_multi_hop(1000, 3, 1, LIB, seed=8)
    assert niah.dump_instance(a) != niah.dump_instance(c)


def test_multi_hop_ordered_positions():
    inst = niah.gen_multi_hop(300, 4, 2, LIB, seed=5, ordered=True)
    for path in (inst.correct_path, *inst.distractors):
        pos = [h.position for h in path.hops]
        assert pos == sorted(pos)


def test_multi_hop_capacity_errors():
    with pytest.raises(CapacityError):
        niah.gen_multi_hop(1000, 3, 2, LIB[:5], seed=0)
    with pytest.raises(CapacityError):
        niah.gen_multi_hop(5, 3, 2, LIB, seed=0)


def test_instance_json_round_trip():
    inst = niah.gen_multi_hop(200, 3, 1, LIB, seed=11)
    again = niah.instance_from_dict(niah.instance_to_dict(inst))
    assert again == inst


# ---------------------------------------------------------------------------
# validation and oracle


def test_generated_instances_validate_and_solve():
    for seed in range(60):
        rng = random.Random(seed)
        inst = niah.gen_multi_hop(
            rng.randrange(20, 2000),
            rng.randrange(1, 5),
            rng.randrange(0, 4),
            LIB,
            seed=seed,
        )
        report = niah.validate_instance(inst, LIB)
        assert report.ok, report.failures
        assert niah.oracle_solve(inst, LIB) == inst.ground_truth


def test_validate_flags_duplicate_positions():
    inst = niah.gen_multi_hop(100, 2, 1, LIB, seed=1)
    hops = inst.distractors[0].hops
    clash = dataclasses.replace(
        hops[0], position=inst.correct_path.hops[0].position
    )
    bad = dataclasses.replace(
        inst,
        distractors=(
            dataclasses.replace(inst.distractors[0], hops=(clash,) + hops[1:]),
        ),
    )
    report = niah.validate_instance(bad, LIB)
    assert niah.CHECK_POSITIONS in report.codes


def test_validate_flags_decoy_replaced_by_needle():
    inst = niah.gen_multi_hop(100, 2, 1, LIB, seed=2)
    hops = inst.distractors[0].hops
    fake_terminal = dataclasses.replace(hops[-1], item_id=inst.ground_truth[0])
    bad = dataclasses.replace(
        inst,
        distractors=(
            dataclasses.replace(
                inst.distractors[0], hops=hops[:-1] + (fake_terminal,)
            ),
        ),
    )
    report = niah.validate_instance(bad, LIB)
    assert niah.CHECK_DECOY in report.codes


def test_validate_flags_broken_chain():
    inst = niah.gen_multi_hop(100, 3, 0, LIB, seed=3)
    hops = inst.correct_path.hops
    broken = dataclasses.replace(
        hops[0],
        clue=niah.render_template(niah.CLUE_TEMPLATE, "next_caption", "no such thing"),
    )
    bad = dataclasses.replace(
        inst,
        correct_path=dataclasses.replace(
            inst.correct_path, hops=(broken,) + hops[1:]
        ),
    )
    report = niah.validate_instance(bad, LIB)
    assert niah.CHECK_CHAIN in report.codes


def test_validate_flags_out_of_range_position():
    inst = niah.gen_single_hop(10, 0.5, needle_for())
    bad_hop = dataclasses.replace(inst.correct_path.hops[0], position=99)
    bad = dataclasses.replace(
        inst,
        correct_path=dataclasses.replace(inst.correct_path, hops=(bad_hop,)),
    )
    report = niah.validate_instance(bad, LIB)
    assert niah.CHECK_POSITIONS in report.codes


def test_oracle_never_visits_distractor_hops():
    inst = niah.gen_multi_hop(400, 3, 3, LIB, seed=9)
    distractor_items = {
        h.item_id for path in inst.distractors for h in path.hops
    }
    _, captions = niah._caption_map(inst, LIB)
    start = captions[
        niah.extract_from_template(niah.START_TEMPLATE, "caption", inst.start_hint)
    ]
    visited = niah._traverse(start, inst, captions, niah.CLUE_TEMPLATE)
    assert not distractor_items.intersection(visited)
    assert visited == [h.item_id for h in inst.correct_path.hops]


def test_custom_templates_round_trip():
    clue_tpl = "Next stop: <<{next_caption}>>"
    start_tpl = "Begin at <<{caption}>>"
    inst = niah.gen_multi_hop(
        100, 3, 1, LIB, seed=4, clue_template=clue_tpl, start_template=start_tpl
    )
    report = niah.validate_instance(
        inst, LIB, clue_template=clue_tpl, start_template=start_tpl
    )
    assert report.ok
    assert niah.oracle_solve(
        inst, LIB, clue_template=clue_tpl, start_template=start_tpl
    ) == inst.ground_truth


# ---------------------------------------------------------------------------
# scoring


def oracle_responses(instances):
    return [
        niah.Response(i.instance_id, *niah.oracle_solve(i, LIB)) for i in instances
    ]


def test_score_all_correct():
    instances = [niah.gen_multi_hop(100, 3, 1, LIB, seed=s) for s in range(10)]
    result = niah.score(instances, oracle_responses(instances))
    assert result.cap == 1.0
    assert result.qa == 1.0


def test_score_correct_needle_wrong_answer():
    instances = [niah.gen_single_hop(10, 0.5, needle_for(), seed=0)]
    responses = [
        niah.Response(instances[0].instance_id, instances[0].ground_truth[0], "wrong")
    ]
    result = niah.score(instances, responses)
    assert result.cap == 1.0
    assert result.qa == 0.0


def test_score_wrong_needle_right_answer_counts_nothing():
    instances = [niah.gen_single_hop(10, 0.5, needle_for(), seed=0)]
    responses = [
        niah.Response(
            instances[0].instance_id, "item-9999", instances[0].ground_truth[1]
        )
    ]
    result = niah.score(instances, responses)
    assert result.cap == 0.0
    assert result.qa == 0.0


def test_score_normalizes_answers():
    inst = niah.gen_single_hop(10, 0.5, needle_for(), seed=0)
    messy = "  " + inst.ground_truth[1].upper() + "!?  "
    result = niah.score(
        [inst], [niah.Response(inst.instance_id, inst.ground_truth[0], messy)]
    )
    assert result.qa == 1.0


def test_score_requires_matching_responses():
    inst = niah.gen_single_hop(10, 0.5, needle_for(), seed=0)
    with pytest.raises(DomainError):
        niah.score([inst], [])
    with pytest.raises(DomainError):
        niah.score([inst], [niah.Response("nope", "a", "b")])


def test_qa_never_exceeds_cap():
    rng = random.Random(0)
    instances = [niah.gen_multi_hop(100, 2, 1, LIB, seed=s) for s in range(50)]
    responses = [
        niah.Response(
            i.instance_id,
            rng.choice(LIB).id,
            rng.choice(LIB).answer,
        )
        for i in instances
    ]
    result = niah.score(instances, responses)
    assert result.qa <= result.cap


def test_normalize_answer():
    assert niah.normalize_answer("  The RED Kite! ") == "the red kite"
    assert niah.normalize_answer("a,b;c") == "abc"


# ---------------------------------------------------------------------------
# heatmap


def test_heatmap_grid_shape_and_positions():
    cells = niah.heatmap_grid([100], [0.0, 0.5, 1.0], LIB, seed=0)
    assert len(cells) == 3
    positions = {c.instance.correct_path.hops[0].position for c in cells}
    assert positions == {0, 50, 99}
    nine = niah.heatmap_grid([10, 20, 30], [0.1, 0.5, 0.9], LIB, seed=0)
    assert len(nine) == 9
    assert len({c.instance.instance_id for c in nine}) == 9


def test_heatmap_oracle_scores_all_ones():
    cells = niah.heatmap_grid([50, 60], [0.0, 1.0], LIB, seed=1)
    responses = oracle_responses([c.instance for c in cells])
    rows = niah.heatmap_scores(cells, responses)
    assert [acc for _, _, acc in rows] == [1.0] * 4


def test_heatmap_missing_response_rejected():
    cells = niah.heatmap_grid([50], [0.5], LIB, seed=1)
    with pytest.raises(DomainError):
        niah.heatmap_scores(cells, [])


# ---------------------------------------------------------------------------
# library

def test_synth_library_distinct():
    ids = [i.id for i in LIB]
    captions = [i.caption for i in LIB]
    assert len(set(ids)) == len(LIB)
    assert len(set(captions)) == len(LIB)


def test_library_round_trip(tmp_path):
    path = tmp_path / "lib.json"
    niah.save_library(LIB[:7], path)
    again = niah.load_library(path)
    assert again == LIB[:7]


def test_library_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "lib.json"
    items = [LIB[0], LIB[0]]
    niah.save_library(items, path)
    with pytest.raises(DomainError):
        niah.load_library(path)
