from __future__ import annotations

import pytest

from ltner.corpus import CONLL2003, EntitySpan, make_example
from ltner.marking import TagConfig, decode_tagged
from ltner.prompting import (CANONICAL_ROLE_CODES, ChatMessage, PromptPlan, RoleSetting,
                             TemplateError, build_messages, default_instruction,
                             render_instruction)

HH = TagConfig("##", "##")
PLAN = PromptPlan(instruction="Tag entities of types {labels}.", shots=2)


@pytest.fixture
def shots():
    return [
        make_example("a", ["Rome", "fell", "."], [EntitySpan(0, 1, "LOC")]),
        make_example("b", ["Caesar", "spoke", "."], [EntitySpan(0, 1, "PER")]),
    ]


def test_sua_one_shot_layout(shots, schema):
    msgs = build_messages(PLAN, RoleSetting("SUA"), HH, shots[:1], "Visit Lima .", schema)
    assert [(m.role) for m in msgs] == ["system", "user", "assistant", "user"]
    assert msgs[0].content == "Tag entities of types PER, LOC, ORG, MISC."
    assert msgs[1].content == "Rome fell ."
    assert msgs[2].content == "##Rome##LOC fell ."
    assert msgs[3].content == "Visit Lima ."


def test_aaa_zero_shot_layout(schema):
    msgs = build_messages(PLAN, RoleSetting("AAA"), HH, [], "Visit Lima .", schema)
    assert [(m.role, m.content) for m in msgs] == [
        ("assistant", "Tag entities of types PER, LOC, ORG, MISC."),
        ("assistant", "Visit Lima ."),
    ]


def test_uua_two_shot_role_sequence(shots, schema):
    msgs = build_messages(PLAN, RoleSetting("UUA"), HH, shots, "Visit Lima .", schema)
    assert [m.role for m in msgs] == ["user", "user", "assistant", "user", "assistant", "user"]


def test_message_count_is_2n_plus_2(shots, schema):
    for code in CANONICAL_ROLE_CODES:
        for n in (0, 1, 2):
            msgs = build_messages(PLAN, RoleSetting(code), HH, shots[:n], "q", schema)
            assert len(msgs) == 2 * n + 2


def test_role_changes_never_touch_content(shots, schema):
    reference = None
    for code in CANONICAL_ROLE_CODES:
        msgs = build_messages(PLAN, RoleSetting(code), HH, shots, "Visit Lima .", schema)
        contents = [m.content for m in msgs]
        if reference is None:
            reference = contents
        assert contents == reference


def test_similar_last_puts_rank1_next_to_query(shots, schema):
    msgs = build_messages(PLAN, RoleSetting("SUA"), HH, shots, "q", schema)
    # rank-1 example ("Rome fell .") is adjacent to the query
    assert msgs[-3].content == "Rome fell ."
    assert msgs[-2].content == "##Rome##LOC fell ."
    first = PromptPlan(instruction=PLAN.instruction, shots=2, ordering="similar-first")
    msgs = build_messages(first, RoleSetting("SUA"), HH, shots, "q", schema)
    assert msgs[1].content == "Rome fell ."


def test_prompt_outputs_roundtrip_to_gold(shots, schema):
    msgs = build_messages(PLAN, RoleSetting("SUA"), HH, shots, "q", schema)
    pairs = list(zip(msgs[1:-1:2], msgs[2:-1:2]))
    assert len(pairs) == 2
    for inp, out in pairs:
        ex = next(e for e in shots if e.sentence == inp.content)
        dec = decode_tagged(out.content, ex.words, HH, schema)
        assert dec.spans == ex.spans and dec.diagnostics == ()


def test_json_mode_outputs(shots, schema):
    msgs = build_messages(PLAN, RoleSetting("SUA"), HH, shots[:1], "q", schema, mode="json")
    assert msgs[2].content == '{"sentence": "Rome fell .", "label": {"LOC": ["Rome"]}}'


def test_render_instruction_substitutes(schema):
    plan = PromptPlan(
        instruction="Mark entities of types {labels} using {tag_open}entity{tag_close}LABEL.")
    assert render_instruction(plan, schema, HH) == \
        "Mark entities of types PER, LOC, ORG, MISC using ##entity##LABEL."


def test_render_instruction_verbatim_without_placeholders(schema):
    plan = PromptPlan(instruction="No placeholders here.")
    assert render_instruction(plan, schema, HH) == "No placeholders here."


def test_render_instruction_unknown_placeholder(schema):
    plan = PromptPlan(instruction="Hello {bogus}.")
    with pytest.raises(TemplateError, match="bogus"):
        render_instruction(plan, schema, HH)


def test_default_templates_render(schema):
    for mode in ("tag", "json"):
        plan = PromptPlan(instruction=default_instruction(mode))
        text = render_instruction(plan, schema, HH)
        assert "PER, LOC, ORG, MISC" in text


def test_role_setting_validation():
    assert RoleSetting("SUA").instruction_role == "system"
    assert RoleSetting("SUA").input_role == "user"
    assert RoleSetting("SUA").output_role == "assistant"
    with pytest.raises(ValueError):
        RoleSetting("SU")
    with pytest.raises(ValueError):
        RoleSetting("SUX")
    with pytest.warns(UserWarning):
        RoleSetting("SSS")


def test_empty_query_rejected(schema):
    with pytest.raises(ValueError):
        build_messages(PLAN, RoleSetting("SUA"), HH, [], "   ", schema)


def test_chat_message_validation():
    with pytest.raises(ValueError):
        ChatMessage("user", "")
    with pytest.raises(ValueError):
        ChatMessage("narrator", "hi")


def test_prompt_plan_validation():
    with pytest.raises(ValueError):
        PromptPlan(instruction="x", shots=-1)
    with pytest.raises(ValueError):
        PromptPlan(instruction="x", ordering="sideways")
