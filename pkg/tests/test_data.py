"""
Tests for tokenisation, the synthetic generator and annotation I/O.
"""

import json

import numpy as np
import pytest

from yoro._errors import GenerationError, IngestError, InputError, ValidationError
from yoro.config import ModelConfig
from yoro.data import (UNK, Description, SceneObject, SyntheticSpec, Vocabulary, content_positions,
                       detokenize, export_samples, generate, ingest, read_image, relation_holds,
                       resolve, split_words, tokenize, write_pgm, write_ppm)
from yoro.losses import alignment_table


def _referents(words, scene):
    """Objects a parsed phrase fits, checked directly against the scene geometry."""
    color, shape = words[1], words[2]
    relation = " ".join(words[3:-3]) if len(words) > 3 else None
    anchor = (words[-2], words[-1]) if relation else None

    def fits(a, b):
        ax1, ay1, ax2, ay2 = a.corners
        bx1, by1, bx2, by2 = b.corners
        return {"left of": ax2 <= bx1, "right of": ax1 >= bx2,
                "above": ay2 <= by1, "below": ay1 >= by2}[relation]

    hits = []
    for obj in scene:
        if (obj.color, obj.shape) != (color, shape):
            continue
        if relation and not any((o.color, o.shape) == anchor and o is not obj and fits(obj, o)
                                for o in scene):
            continue
        hits.append(obj)
    return hits


class TestTokenize:
    """Test word splitting, vocabularies and token ids."""

    def test_split_words(self):
        """Test case folding, punctuation and digit runs."""
        assert split_words("The RED circle, left-of 900!") == [
            "the", "red", "circle", "left", "of", "900"]

    def test_vocabulary_order_independent(self):
        """Test that the vocabulary does not depend on phrase order."""
        a = Vocabulary.build(["b a", "c"])
        b = Vocabulary.build(["c", "a b a"])
        assert a == b
        assert a.words == [UNK, "a", "b", "c"]
        assert len(a) == 4
        assert a.to_list() == ["a", "b", "c"]

    def test_unknown_words(self):
        """Test that unknown words map to id 0."""
        vocab = Vocabulary.build(["red circle"])
        assert tokenize("Red SQUARE", vocab) == [vocab.id("red"), 0]

    def test_round_trip(self):
        """Test detokenize(tokenize(text)) on in-vocabulary lowercase text."""
        vocab = Vocabulary.build(["the red circle left of the blue square"])
        text = "the blue circle left of the red square"
        assert detokenize(tokenize(text, vocab), vocab) == text

    def test_truncation(self):
        """Test that m_max keeps the leading words."""
        vocab = Vocabulary.build(["a b c d"])
        assert tokenize("a b c d", vocab, m_max=2) == [vocab.id("a"), vocab.id("b")]

    def test_empty_phrase(self):
        """Test that a phrase without words raises InputError."""
        with pytest.raises(InputError):
            tokenize(" ,. ", Vocabulary([]))

    def test_content_positions(self):
        """Test that stop words are left out unless nothing else remains."""
        assert content_positions(["the", "red", "circle", "left", "of", "the", "box"]) == (
            1, 2, 3, 6)
        assert content_positions(["the", "of"]) == (0, 1)


class TestSynthetic:
    """Test the synthetic referring-expression generator."""

    def test_deterministic(self):
        """Test that a seed reproduces the dataset exactly."""
        a = list(generate(SyntheticSpec(seed=7), 20))
        b = list(generate(SyntheticSpec(seed=7), 20))
        for x, y in zip(a, b):
            assert x.phrase == y.phrase
            assert x.pixel_boxes == y.pixel_boxes
            np.testing.assert_array_equal(x.image, y.image)

    def test_seeds_differ(self):
        """Test that different seeds give different data."""
        a = [s.phrase for s in generate(SyntheticSpec(seed=1), 20)]
        b = [s.phrase for s in generate(SyntheticSpec(seed=2), 20)]
        assert a != b

    def test_unique_referent(self):
        """Test that every phrase picks out exactly its box."""
        for sample in generate(SyntheticSpec(seed=0), 1000):
            hits = _referents(list(sample.words), sample.scene)
            assert len(hits) == 1
            assert tuple(float(v) for v in hits[0].corners) == sample.pixel_boxes[0]

    def test_sample_layout(self):
        """Test image format, box count and token sets."""
        for sample in generate(SyntheticSpec(seed=5), 50):
            assert sample.image.shape == (64, 64, 3)
            assert sample.image.dtype == np.uint8
            assert len(sample.pixel_boxes) == 1
            assert sample.token_sets[0]
            assert all(0 <= i < len(sample.words) for i in sample.token_sets[0])
            assert 0.0 <= sample.pixels.min() and sample.pixels.max() <= 1.0

    def test_object_is_drawn(self):
        """Test that the referred object's color appears inside its box."""
        from yoro.data import COLORS

        for sample in generate(SyntheticSpec(seed=6), 20):
            x1, y1, x2, y2 = (int(v) for v in sample.pixel_boxes[0])
            patch = sample.image[y1:y2, x1:x2].reshape(-1, 3)
            color = COLORS[sample.words[1]]
            assert np.any(np.all(patch == color, axis=1))

    def test_alignment_consistent(self):
        """Test that the ground-truth table equals a fresh computation."""
        config = ModelConfig()
        for sample in generate(SyntheticSpec(seed=8), 10):
            gt = sample.ground_truth(config)
            expected = alignment_table(sample.boxes, sample.token_sets, len(sample.words),
                                       config.grid())
            np.testing.assert_array_equal(gt.alignment, expected)

    def test_impossible_uniqueness(self):
        """Test that a single color and shape cannot be described uniquely."""
        spec = SyntheticSpec(colors=("red",), shapes=("circle",), max_attempts=5)
        with pytest.raises(GenerationError):
            list(generate(spec, 1))

    def test_unknown_color(self):
        """Test that an unknown color raises GenerationError."""
        with pytest.raises(GenerationError):
            list(generate(SyntheticSpec(colors=("purple",)), 1))

    def test_relations(self):
        """Test relation predicates and description resolution."""
        left = SceneObject("circle", "red", (0, 0, 10, 10))
        right = SceneObject("square", "blue", (20, 0, 30, 10))
        twin = SceneObject("circle", "red", (40, 0, 50, 10))
        assert relation_holds("left of", left.corners, right.corners)
        assert relation_holds("right of", twin.corners, right.corners)
        assert not relation_holds("above", left.corners, right.corners)
        scene = [left, right, twin]
        assert resolve(Description("red", "circle"), scene) == [0, 2]
        assert resolve(Description("red", "circle", "left of", ("blue", "square")), scene) == [0]
        with pytest.raises(ValidationError):
            relation_holds("near", left.corners, right.corners)


class TestAnnotations:
    """Test export and ingestion of annotation files."""

    def test_round_trip(self, tmp_path, shapes32):
        """Test that exported samples read back to identical ground truth."""
        ann = export_samples(shapes32, tmp_path)
        loaded = ingest(ann)
        config = ModelConfig(image_height=32, image_width=32)
        assert len(loaded) == len(shapes32)
        for a, b in zip(shapes32, loaded):
            assert a.phrase == b.phrase
            assert a.pixel_boxes == b.pixel_boxes
            assert a.token_sets == b.token_sets
            np.testing.assert_array_equal(a.image, b.image)
            ga, gb = a.ground_truth(config), b.ground_truth(config)
            np.testing.assert_array_equal(ga.boxes, gb.boxes)
            np.testing.assert_array_equal(ga.alignment, gb.alignment)

    def test_record_format(self, tmp_path, shapes32):
        """Test the fields of one exported record."""
        ann = export_samples(shapes32[:1], tmp_path)
        record = json.loads(ann.read_text().splitlines()[0])
        assert sorted(record) == ["box", "height", "image", "phrase", "token_box_map", "width"]
        assert record["image"] == "images/00000.ppm"
        assert (tmp_path / "images" / "00000.ppm").read_bytes().startswith(b"P6")

    def test_pixel_box(self, tmp_path):
        """Test that a pixel box becomes a normalised box."""
        write_ppm(tmp_path / "a.ppm", np.zeros((64, 64, 3), dtype=np.uint8))
        (tmp_path / "ann.jsonl").write_text(json.dumps(
            {"image": "a.ppm", "width": 64, "height": 64, "phrase": "the thing",
             "box": [16, 16, 48, 48]}) + "\n")
        (sample,) = ingest(tmp_path / "ann.jsonl")
        assert sample.boxes[0].as_tuple() == (0.5, 0.5, 0.5, 0.5)
        assert sample.token_sets == ((1,),)

    def test_missing_images_below_limit(self, tmp_path, shapes32):
        """Test that a few bad records are skipped."""
        samples = shapes32 * 2
        ann = export_samples(samples[:20], tmp_path)
        (tmp_path / "images" / "00003.ppm").unlink()
        with open(ann, "a") as f:
            f.write("{not json\n")
        assert len(ingest(ann)) == 19

    def test_undecodable_line_is_skipped(self, tmp_path, shapes32):
        """Test that a line of invalid UTF-8 costs only that record."""
        ann = export_samples((shapes32 * 2)[:20], tmp_path)
        lines = ann.read_bytes().splitlines(keepends=True)
        ann.write_bytes(b"".join(lines[:5] + [b"\xff\xfe\n"] + lines[5:]))
        loaded = ingest(ann)
        assert len(loaded) == 20
        assert loaded[5].phrase == shapes32[5 % len(shapes32)].phrase

    def test_too_many_failures(self, tmp_path, shapes32):
        """Test that more than 10% bad records abort ingestion."""
        ann = export_samples(shapes32[:10], tmp_path)
        for idx in (0, 4, 7):
            (tmp_path / "images" / f"{idx:05d}.ppm").unlink()
        with pytest.raises(IngestError):
            ingest(ann)

    def test_raw_rgb_with_sidecar(self, tmp_path):
        """Test raw RGB bytes described by a JSON sidecar."""
        image = np.arange(4 * 6 * 3, dtype=np.uint8).reshape(4, 6, 3)
        (tmp_path / "img.rgb").write_bytes(image.tobytes())
        (tmp_path / "img.rgb.json").write_text(json.dumps({"width": 6, "height": 4}))
        np.testing.assert_array_equal(read_image(tmp_path / "img.rgb"), image)

    def test_raw_rgb_size_mismatch(self, tmp_path):
        """Test that a short raw file raises InputError."""
        (tmp_path / "img.rgb").write_bytes(b"\x00" * 10)
        (tmp_path / "img.rgb.json").write_text(json.dumps({"width": 6, "height": 4}))
        with pytest.raises(InputError):
            read_image(tmp_path / "img.rgb")

    def test_resize(self, tmp_path, shapes32):
        """Test that resizing scales images and boxes together."""
        ann = export_samples(shapes32[:3], tmp_path)
        for original, small in zip(shapes32, ingest(ann, resize=(16, 16))):
            assert small.image.shape == (16, 16, 3)
            assert small.pixel_boxes[0] == tuple(v / 2 for v in original.pixel_boxes[0])
            assert small.boxes[0].as_tuple() == pytest.approx(original.boxes[0].as_tuple())

    def test_pgm(self, tmp_path):
        """Test that grey images are written as binary PGM."""
        write_pgm(tmp_path / "map.pgm", np.full((4, 4), 128, dtype=np.uint8))
        assert (tmp_path / "map.pgm").read_bytes().startswith(b"P5")
