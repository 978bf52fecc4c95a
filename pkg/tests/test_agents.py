import numpy as np
import pytest

from bikescape.agents import (
    DEFAULT_ABSENCE_PHRASES,
    HIGHLIGHT_MEANING_CLAUSE,
    EmptyOptimizationError,
    PartialPoolError,
    compose_generation_prompt,
    generate_candidates,
    generate_highlight,
    locate_lane,
    optimize_prompt,
    parse_lane_sections,
)
from bikescape.domain import LaneDescription, OptimizedPrompt, Stage, get_scenario
from bikescape.providers import MockImageEditor, mock_provider_set
from bikescape.providers.base import (
    ImageEditor,
    PartialBatchError,
    RateLimitedError,
    VisionDescriber,
    check_edit_preconditions,
)
from bikescape.templating import (
    ExemplarSet,
    PromptTemplate,
    TemplateRenderError,
    load_default_exemplars,
    load_template,
)



class RecordingDescriber(VisionDescriber):
    """Returns a canned response and records every outgoing request."""

    def __init__(self, response: str):
        self.response = response
        self.calls: list[tuple] = []

    def describe(self, image, system_prompt, user_prompt):
        self.calls.append((image, system_prompt, user_prompt))
        return self.response


class TestTemplates:
    @pytest.mark.parametrize(
        "name,anchor",
        [
            ("locator", "describe precisely the physical location"),
            ("optimizer", "Output only the optimized prompt"),
            ("highlight", "into a {COLOR}-painted lane"),
            ("compliance", "a single lowercase word, exactly"),
        ],
    )
    def test_anchor_phrases_present(self, name, anchor):
        tpl = load_template(name)
        assert anchor in tpl.system_text + "\n" + tpl.user_text

    def test_full_map_leaves_no_placeholders(self):
        import re

        pattern = re.compile(r"\{[A-Z][A-Z0-9_]*\}")
        fills = {
            "locator": {},
            "optimizer": {"EXEMPLARS": "e", "BOUNDARY_CLAUSES": "b", "USER_PROMPT": "u"},
            "highlight": {"COLOR": "green"},
            "compliance": {"CHECKLIST": "c", "FINAL_PROMPT": "f"},
        }
        for name, variables in fills.items():
            rendered = load_template(name).render(variables)
            assert not pattern.search(rendered.system)
            assert not pattern.search(rendered.user)

    def test_incomplete_map_fails_before_any_call(self):
        with pytest.raises(TemplateRenderError):
            load_template("highlight").render({})

    def test_unknown_variable_rejected(self):
        with pytest.raises(TemplateRenderError):
            load_template("highlight").render({"COLOR": "green", "BOGUS": "x"})

    def test_default_exemplars_are_three_blocks(self):
        exemplars = load_default_exemplars()
        assert len(exemplars.examples) == 3
        assert "approximately 6 feet wide, fully painted green" in exemplars.examples[0]
        assert "vertical red-and-white striped bollards" in exemplars.examples[2]
        rendered = exemplars.rendered()
        for i in (1, 2, 3):
            assert f"##Example {i}##" in rendered

    def test_template_hash_stable(self):
        assert load_template("locator").content_hash() == load_template("locator").content_hash()


class TestLocateLane:
    def test_present_lane_parsed(self, scene):
        providers = mock_provider_set(0)
        lane = locate_lane(scene, providers.describer)
        assert lane.present
        assert lane.raw_text
        assert "right side of the roadway" in lane.raw_text
        assert lane.relative_position
        assert lane.width_estimate
        assert not lane.parse_warning

    def test_absent_lane_flagged(self, scene):
        providers = mock_provider_set(0, lane_absent=True)
        lane = locate_lane(scene, providers.describer)
        assert not lane.present
        assert lane.markings == ""

    @pytest.mark.parametrize("phrase", DEFAULT_ABSENCE_PHRASES)
    def test_absence_phrases(self, scene, phrase):
        describer = RecordingDescriber(f"Unfortunately there is {phrase} in this image.")
        lane = locate_lane(scene, describer)
        assert not lane.present

    def test_unparseable_keeps_raw_text_with_warning(self, scene):
        describer = RecordingDescriber("Nothing useful here at all")
        lane = locate_lane(scene, describer)
        assert lane.present
        assert lane.parse_warning
        assert lane.raw_text == "Nothing useful here at all"
        assert lane.markings == ""

    def test_request_uses_locator_template(self, scene):
        describer = RecordingDescriber("A lane with white lines on the right side, 5 feet wide.")
        locate_lane(scene, describer)
        _, system, user = describer.calls[0]
        assert "describe precisely the physical location" in user
        assert system


class TestParseSections:
    def test_labeled_sections_preferred(self):
        text = (
            "A bike lane is present. Markings: two solid white lines. "
            "Pattern: green-painted surface. Width: approximately 5 feet wide. "
            "Position: adjacent to the curb on the right side."
        )
        sections = parse_lane_sections(text)
        assert sections["markings"] == "two solid white lines."
        assert sections["pattern"].startswith("green-painted")
        assert "5 feet" in sections["width_estimate"]
        assert "curb" in sections["relative_position"]

    def test_keyword_fallback(self):
        text = (
            "The lane is bounded by white lines. It sits adjacent to the sidewalk. "
            "It looks about 6 feet wide."
        )
        sections = parse_lane_sections(text)
        assert "white lines" in sections["markings"]
        assert sections["relative_position"]
        assert sections["width_estimate"]


class TestOptimizePrompt:
    def test_mock_round_trip(self):
        providers = mock_provider_set(0)
        scenario = get_scenario(3)
        opt = optimize_prompt("protect the lane with bollards", scenario, None, providers.describer)
        assert opt.scenario_id == 3
        assert opt.word_count == len(opt.text.split())
        assert not opt.length_warning
        assert opt.exemplar_set_id == "builtin-v1"

    def test_scenario_clauses_reach_the_wire(self):
        describer = RecordingDescriber("A compact optimized prompt.")
        optimize_prompt("x", get_scenario(3), None, describer)
        _, system, user = describer.calls[0]
        assert "1.5 ft buffer with bollards" in user
        assert "##Example 1##" in user
        assert "Output only the optimized prompt" in user
        assert "expert prompt optimizer" in system

    def test_user_prompt_substituted(self):
        describer = RecordingDescriber("ok prompt")
        optimize_prompt("paint it green please", get_scenario(1), None, describer)
        _, _, user = describer.calls[0]
        assert "paint it green please" in user
        assert "{USER_PROMPT}" not in user

    def test_131_words_sets_warning(self):
        long_text = " ".join(f"w{i}" for i in range(131))
        opt = optimize_prompt(
            "u", get_scenario(1), None, RecordingDescriber(long_text)
        )
        assert opt.word_count == 131
        assert opt.length_warning

    def test_120_words_no_warning(self):
        text = " ".join(f"w{i}" for i in range(120))
        opt = optimize_prompt("u", get_scenario(1), None, RecordingDescriber(text))
        assert not opt.length_warning

    def test_empty_response_is_error(self):
        with pytest.raises(EmptyOptimizationError):
            optimize_prompt("u", get_scenario(1), None, RecordingDescriber("   "))

    def test_empty_user_prompt_rejected(self):
        with pytest.raises(ValueError):
            optimize_prompt("", get_scenario(1), None, RecordingDescriber("x"))

    def test_custom_exemplars_used(self):
        describer = RecordingDescriber("fine")
        exemplars = ExemplarSet(exemplar_set_id="custom", examples=("only example",))
        opt = optimize_prompt("u", get_scenario(2), exemplars, describer)
        assert opt.exemplar_set_id == "custom"
        assert "only example" in describer.calls[0][2]


class TestComposePrompt:
    def _parts(self):
        opt = OptimizedPrompt.from_text(
            "optimized text", scenario_id=1, user_prompt="u", exemplar_set_id="e"
        )
        lane = LaneDescription(present=True, raw_text="the lane runs right of center")
        return opt, lane

    def test_three_segments_in_order(self):
        opt, lane = self._parts()
        text = compose_generation_prompt(opt, lane)
        i_opt = text.index("optimized text")
        i_lane = text.index(lane.raw_text)
        i_clause = text.index(HIGHLIGHT_MEANING_CLAUSE)
        assert i_opt < i_lane < i_clause

    def test_deterministic(self):
        opt, lane = self._parts()
        assert compose_generation_prompt(opt, lane) == compose_generation_prompt(opt, lane)

    def test_absent_lane_rejected(self):
        opt, _ = self._parts()
        with pytest.raises(ValueError):
            compose_generation_prompt(opt, LaneDescription(present=False))


class RecordingEditor(ImageEditor):
    def __init__(self, inner: ImageEditor):
        self.inner = inner
        self.prompts: list[str] = []

    def edit_image(self, image, prompt, n):
        self.prompts.append(prompt)
        return self.inner.edit_image(image, prompt, n)


class TestGenerateHighlight:
    def test_color_substituted_no_residual_placeholder(self, scene):
        editor = RecordingEditor(MockImageEditor(0))
        lane = LaneDescription(present=True, raw_text="lane")
        candidate = generate_highlight(scene, lane, "green", editor, run_id="r1")
        assert candidate.stage is Stage.HIGHLIGHT
        assert candidate.image.shape == scene.image.shape
        prompt = editor.prompts[0]
        assert "green-painted lane" in prompt
        assert "{COLOR}" not in prompt

    def test_unresolved_placeholder_fails_before_network(self, scene):
        calls = []

        class ExplodingEditor(ImageEditor):
            def edit_image(self, image, prompt, n):
                calls.append(prompt)
                raise AssertionError("editor must not be called")

        broken = PromptTemplate(template_id="broken", system_text="s", user_text="{COLOR} {MISSING}")
        lane = LaneDescription(present=True, raw_text="lane")
        with pytest.raises(TemplateRenderError):
            generate_highlight(scene, lane, "green", ExplodingEditor(), template=broken)
        assert calls == []

    def test_absent_lane_rejected(self, scene):
        with pytest.raises(ValueError):
            generate_highlight(scene, LaneDescription(present=False), "green", MockImageEditor())

    def test_deterministic_for_fixed_seed(self, scene):
        lane = LaneDescription(present=True, raw_text="lane")
        a = generate_highlight(scene, lane, "green", MockImageEditor(5))
        b = generate_highlight(scene, lane, "green", MockImageEditor(5))
        assert np.array_equal(a.image, b.image)


class TestGenerateCandidates:
    def _highlight(self, scene):
        return generate_highlight(
            scene, LaneDescription(present=True, raw_text="lane"), "green", MockImageEditor(0),
            run_id="r",
        )

    def test_pool_of_six(self, scene):
        highlight = self._highlight(scene)
        out = generate_candidates(highlight, "final", 6, MockImageEditor(0), run_id="r")
        assert len(out) == 6
        assert [c.candidate_id for c in out] == [f"r1-f{i:02d}" for i in range(1, 7)]
        assert all(c.stage is Stage.FINAL for c in out)
        assert all(c.parent_id == highlight.candidate_id for c in out)

    @pytest.mark.parametrize("pool_size", [4, 11, 0])
    def test_pool_size_bounds(self, scene, pool_size):
        highlight = self._highlight(scene)
        with pytest.raises(ValueError):
            generate_candidates(highlight, "final", pool_size, MockImageEditor(0))

    @pytest.mark.parametrize("pool_size", [5, 10])
    def test_pool_size_edges_allowed(self, scene, pool_size):
        highlight = self._highlight(scene)
        out = generate_candidates(highlight, "final", pool_size, MockImageEditor(0))
        assert len(out) == pool_size

    def test_final_stage_input_rejected(self, scene):
        highlight = self._highlight(scene)
        final = generate_candidates(highlight, "final", 5, MockImageEditor(0))[0]
        with pytest.raises(ValueError):
            generate_candidates(final, "final", 5, MockImageEditor(0))

    def test_reproducible_for_fixed_seed(self, scene):
        highlight = self._highlight(scene)
        a = generate_candidates(highlight, "final", 6, MockImageEditor(1))
        b = generate_candidates(highlight, "final", 6, MockImageEditor(1))
        assert [c.candidate_id for c in a] == [c.candidate_id for c in b]
        for x, y in zip(a, b):
            assert np.array_equal(x.image, y.image)

    def test_partial_batches_refilled(self, scene):
        class FlakyEditor(ImageEditor):
            def __init__(self):
                self.calls = 0
                self.mock = MockImageEditor(0)

            def edit_image(self, image, prompt, n):
                check_edit_preconditions(prompt, n)
                self.calls += 1
                if self.calls == 1:
                    raise PartialBatchError("half done", self.mock.edit_image(image, prompt, 3))
                return self.mock.edit_image(image, prompt, n)

        highlight = self._highlight(scene)
        out = generate_candidates(highlight, "final", 6, FlakyEditor())
        assert len(out) == 6

    def test_exhausted_refills_raise_partial_pool(self, scene):
        class AlwaysPartial(ImageEditor):
            def __init__(self):
                self.mock = MockImageEditor(0)

            def edit_image(self, image, prompt, n):
                raise PartialBatchError("one only", self.mock.edit_image(image, prompt, 1))

        highlight = self._highlight(scene)
        with pytest.raises(PartialPoolError) as exc_info:
            generate_candidates(highlight, "final", 6, AlwaysPartial(), max_refills=2)
        assert 0 < len(exc_info.value.completed) < 6

    def test_hard_failure_carries_completed(self, scene):
        class Dead(ImageEditor):
            def edit_image(self, image, prompt, n):
                raise RateLimitedError("nope")

        highlight = self._highlight(scene)
        with pytest.raises(PartialPoolError) as exc_info:
            generate_candidates(highlight, "final", 6, Dead())
        assert exc_info.value.completed == []
