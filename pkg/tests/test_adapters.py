import numpy as np
import pytest

from fairperturb.adapters import (
    BackendUnavailable,
    MockDetector,
    MockGenerativeScorer,
    MockImageGenerator,
    MockInpainter,
    MockRaceClassifier,
    MockSegmenter,
    MockVQA,
    MockZeroShotClassifier,
    NoFaceError,
    PreconditionError,
    import_backend,
)
from fairperturb.groups import ALL_GROUPS, DemographicGroup
from fairperturb.records import Box, VQAResult


@pytest.fixture
def gen(store):
    return MockImageGenerator(store)


class TestImageGenerator:
    def test_same_prompt_and_seed_give_identical_bytes(self, gen, store):
        gen.generate("p", 7, (64, 64), "a.png")
        gen.generate("p", 7, (64, 64), "b.png")
        assert store.path("a.png").read_bytes() == store.path("b.png").read_bytes()

    def test_different_seeds_differ(self, gen, store):
        gen.generate("p", 7, (64, 64), "a.png")
        gen.generate("p", 8, (64, 64), "b.png")
        assert not np.array_equal(store.read_image("a.png"), store.read_image("b.png"))

    def test_size(self, gen, store):
        gen.generate("p", 1, (48, 32), "a.png")
        assert store.image_size("a.png") == (48, 32)
        assert store.read_image("a.png").shape == (32, 48, 3)

    def test_configured_failure(self, store):
        with pytest.raises(BackendUnavailable):
            MockImageGenerator(store, fail_seeds=[3]).generate("p", 3, (8, 8), "a.png")

    def test_grayscale_seed(self, store):
        MockImageGenerator(store, grayscale_seeds=[4]).generate("p", 4, (8, 8), "a.png")
        px = store.read_image("a.png")
        assert np.all(px[..., 0] == px[..., 1]) and np.all(px[..., 1] == px[..., 2])


class TestInpainter:
    @pytest.fixture
    def base(self, gen):
        return gen.generate("base", 1, (32, 32), "base.png")

    def test_empty_mask_is_identity(self, store, base):
        store.write_mask("m.png", np.zeros((32, 32), bool))
        MockInpainter(store).inpaint(base, "m.png", "new", 5, "out.png")
        assert np.array_equal(store.read_image("out.png"), store.read_image(base))

    def test_full_mask_regenerates(self, store, gen, base):
        store.write_mask("m.png", np.ones((32, 32), bool))
        MockInpainter(store).inpaint(base, "m.png", "new", 5, "out.png")
        gen.generate("new", 5, (32, 32), "fresh.png")
        assert np.array_equal(store.read_image("out.png"), store.read_image("fresh.png"))

    def test_half_mask_keeps_unmasked_half(self, store, base):
        mask = np.zeros((32, 32), bool)
        mask[:, 16:] = True
        store.write_mask("m.png", mask)
        MockInpainter(store).inpaint(base, "m.png", "new", 5, "out.png")
        out, orig = store.read_image("out.png"), store.read_image(base)
        assert np.array_equal(out[:, :16], orig[:, :16])
        assert not np.array_equal(out[:, 16:], orig[:, 16:])
        assert out.shape == orig.shape

    def test_resolution_mismatch(self, store, base):
        store.write_mask("m.png", np.zeros((16, 16), bool))
        with pytest.raises(PreconditionError):
            MockInpainter(store).inpaint(base, "m.png", "new", 5, "out.png")


class TestVQA:
    def test_table_lookup(self):
        vqa = MockVQA(table={("img1", "Q1"): ("yes", 0.9)})
        assert vqa.answer("img1", "Q1") == VQAResult("yes", 0.9)

    def test_default(self):
        assert MockVQA().answer("unknown", "Q1") == VQAResult("no", 0.5)

    def test_glob_rule_is_deterministic_and_in_range(self):
        vqa = MockVQA(by_question={"Is there a * in this image?": {"answers": ["yes", "no"], "weights": [1, 0]}})
        r1 = vqa.answer("a.png", "Is there a chef in this image?")
        assert r1 == vqa.answer("a.png", "Is there a chef in this image?")
        assert r1.answer == "yes"
        assert 0.5 <= r1.score < 1.0

    def test_score_range_validated(self):
        with pytest.raises(ValueError):
            VQAResult("yes", 1.5)

    @pytest.mark.parametrize("answer, yes, no", [("Yes", True, False), ("yes.", True, False), ("No", False, True),
                                                 ("no, not really", False, True), ("maybe", False, False)])
    def test_answer_prefix_parsing(self, answer, yes, no):
        r = VQAResult(answer, 0.7)
        assert r.is_yes() is yes and r.is_no() is no

    def test_real_score_flips_fake(self):
        assert VQAResult("real", 0.8).real_score() == 0.8
        assert VQAResult("Fake", 0.8).real_score() == pytest.approx(0.2)


class TestDetectorAndSegmenter:
    @pytest.fixture
    def image(self, gen):
        return gen.generate("p", 1, (40, 20), "img.png")

    def test_configured_box(self, store, image):
        det = MockDetector(store, table={image: [(10, 5, 30, 15, 0.8)]})
        assert det.detect(image, "person") == [Box(10, 5, 30, 15, 0.8)]

    def test_empty(self, store, image):
        assert MockDetector(store, table={image: []}).detect(image, "person") == []

    def test_default_box_scaled_and_clipped(self, store, image):
        det = MockDetector(store, default=[(0.25, 0.25, 0.75, 0.75, 0.9), (-0.5, 0.5, 2.0, 1.5, 0.5)])
        boxes = det.detect(image, "person")
        assert boxes[0] == Box(10, 5, 30, 15, 0.9)
        assert boxes[1] == Box(0, 10, 40, 20, 0.5)
        assert all(b.within(40, 20) for b in boxes)

    def test_empty_query_rejected(self, store, image):
        with pytest.raises(PreconditionError):
            MockDetector(store).detect(image, "")

    def test_whole_image_box(self, store, image):
        MockSegmenter(store).segment(image, Box(0, 0, 40, 20), "m.png")
        assert store.read_mask("m.png").all()

    def test_quarter_area_box(self, store, image):
        MockSegmenter(store).segment(image, Box(0, 0, 20, 10), "m.png")
        mask = store.read_mask("m.png")
        assert mask.sum() == 200 == 40 * 20 // 4
        assert mask[:10, :20].all()

    def test_degenerate_box(self, store, image):
        with pytest.raises(PreconditionError):
            MockSegmenter(store).segment(image, Box(5, 5, 5, 10), "m.png")

    def test_out_of_bounds_box(self, store, image):
        with pytest.raises(PreconditionError):
            MockSegmenter(store).segment(image, Box(0, 0, 41, 10), "m.png")

    def test_mask_png_values(self, store, image):
        MockSegmenter(store).segment(image, Box(0, 0, 20, 10), "m.png")
        from PIL import Image

        with Image.open(store.path("m.png")) as im:
            assert im.mode == "L"
            assert set(np.unique(np.asarray(im)).tolist()) == {0, 255}


class TestRaceClassifier:
    def test_table(self):
        clf = MockRaceClassifier(table={"a.png": "Indian"})
        assert clf.classify("a.png") is DemographicGroup.INDIAN

    def test_unknown_is_no_face(self):
        with pytest.raises(NoFaceError):
            MockRaceClassifier().classify("zzz.png")

    def test_infer_from_ref_closed_over_groups(self):
        clf = MockRaceClassifier(infer_from_ref=True, flip_rate=0.5)
        outs = [clf.classify(f"v/{i}/{g.canonical_name}.png") for i in range(20) for g in ALL_GROUPS]
        assert set(outs) <= set(ALL_GROUPS)
        assert any(o is not g for o, g in zip(outs, [g for _ in range(20) for g in ALL_GROUPS]))


class TestZeroShotAndScorer:
    def test_fixed_vector(self):
        clf = MockZeroShotClassifier(default=[0.1, 0.2, 0.3])
        assert np.array_equal(clf.similarities("x", ["a", "b", "c"]), [0.1, 0.2, 0.3])

    def test_hashed_length_and_range(self):
        sims = MockZeroShotClassifier().similarities("x", ["a", "b", "c", "d"])
        assert sims.shape == (4,)
        assert np.all((sims >= -1) & (sims <= 1))

    def test_empty_labels(self):
        with pytest.raises(PreconditionError):
            MockZeroShotClassifier().similarities("x", [])

    def test_joint_log_prob_sums_tokens(self):
        scorer = MockGenerativeScorer(token_table={"chef": [-1.0, -0.5], "waiter": [-2.0]})
        assert scorer.log_probs("x", "{answer}", ["chef", "waiter"]).tolist() == [-1.5, -2.0]

    def test_output_length(self):
        assert MockGenerativeScorer().log_probs("x", "{answer}", ["a", "b c", "d"]).shape == (3,)


def test_import_backend():
    clf = import_backend("fairperturb.adapters.mock:MockZeroShotClassifier", {"default": [0.5]})
    assert clf.similarities("x", ["a"]).tolist() == [0.5]
    with pytest.raises(BackendUnavailable):
        import_backend("nonexistent.module:Thing")
