"""
Grounding data: vocabulary, synthetic referring expressions, annotation I/O.

A sample pairs an RGB image with one phrase and its referred box(es). The
annotation container is line-delimited JSON, one record per line::

    {"image": "images/00000.ppm", "width": 64, "height": 64,
     "phrase": "the red circle left of the blue square",
     "box": [8, 16, 24, 32], "token_box_map": [[1, 2, 3, 6, 7]]}

``box`` is in pixel corner form. Images are binary PPM (P6) or raw RGB
bytes with a ``<image>.json`` sidecar holding ``{"width", "height"}``.
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from yoro._errors import GenerationError, IngestError, InputError, ValidationError, YoroError
from yoro._log import get_logger
from yoro.config import ModelConfig
from yoro.geometry import Box, Corners
from yoro.losses import GroundTruth, build_ground_truth

logger = get_logger("data")

UNK = "[UNK]"
STOP_WORDS = frozenset({"the", "that", "is", "of", "to"})
ANNOTATIONS = "annotations.jsonl"
MAX_SKIP_FRACTION = 0.10

_WORD = re.compile(r"[^\W\d_]+|\d+")

PathLike = Union[str, Path]


# ---------------------------------------------------------------------
# Tokenisation
# ---------------------------------------------------------------------

def split_words(phrase: str) -> List[str]:
    """Lowercase and split on whitespace and punctuation; digit runs stay whole."""
    return _WORD.findall(phrase.lower())


class Vocabulary:
    """
    Word-level vocabulary. Id 0 is the unknown word, the remaining ids
    follow the sorted unique words of the corpus.
    """

    def __init__(self, words: Iterable[str]):
        self.words: List[str] = [UNK] + sorted(set(words) - {UNK})
        self._ids: Dict[str, int] = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def build(cls, phrases: Iterable[str]) -> "Vocabulary":
        words = set()
        for phrase in phrases:
            words.update(split_words(phrase))
        return cls(words)

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words

    def id(self, word: str) -> int:
        return self._ids.get(word, 0)

    def to_list(self) -> List[str]:
        return list(self.words[1:])


def tokenize(phrase: str, vocab: Vocabulary, m_max: Optional[int] = None) -> List[int]:
    """
    Token ids of *phrase*, truncated to *m_max* when given.

    Raises
    ------
    InputError
        If the phrase holds no words.
    """
    words = split_words(phrase)
    if not words:
        raise InputError("phrase is empty", phrase=phrase)
    if m_max is not None:
        words = words[:m_max]
    return [vocab.id(w) for w in words]


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.words[i] for i in ids)


def content_positions(words: Sequence[str]) -> Tuple[int, ...]:
    """Positions of non-stop words; every position if the phrase is all stop words."""
    picked = tuple(i for i, w in enumerate(words) if w not in STOP_WORDS)
    return picked or tuple(range(len(words)))


# ---------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GroundingSample:
    """
    One image/phrase pair.

    ``pixel_boxes`` are pixel corners ``(x1, y1, x2, y2)``; ``token_sets[k]``
    lists the word positions that refer to box ``k``. Synthetic samples keep
    the drawn ``scene``.
    """

    image: np.ndarray = field(repr=False)
    phrase: str
    pixel_boxes: Tuple[Corners, ...]
    token_sets: Tuple[Tuple[int, ...], ...]
    words: Tuple[str, ...] = ()
    scene: Tuple["SceneObject", ...] = field(default=(), repr=False)

    def __post_init__(self):
        if not self.words:
            object.__setattr__(self, "words", tuple(split_words(self.phrase)))

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def pixels(self) -> np.ndarray:
        """Image as float values in ``[0, 1]``."""
        return self.image.astype(np.float64) / 255.0

    @property
    def boxes(self) -> Tuple[Box, ...]:
        return tuple(Box.from_pixels(c, self.width, self.height) for c in self.pixel_boxes)

    def token_ids(self, vocab: Vocabulary, m_max: int) -> List[int]:
        return [vocab.id(w) for w in self.words[:m_max]]

    def ground_truth(self, config: ModelConfig) -> GroundTruth:
        m = min(len(self.words), config.m_max)
        return build_ground_truth(list(self.boxes), self.token_sets, m, config)


# ---------------------------------------------------------------------
# Synthetic referring expressions
# ---------------------------------------------------------------------

SHAPES = ("circle", "square", "triangle")
COLORS = {
    "red": (220, 50, 47),
    "green": (60, 180, 75),
    "blue": (40, 90, 220),
    "yellow": (240, 210, 40),
}
RELATIONS = ("left of", "right of", "above", "below")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic shapes scenes."""

    seed: int = 0
    size: int = 64
    shapes: Tuple[str, ...] = SHAPES
    colors: Tuple[str, ...] = tuple(COLORS)
    min_objects: int = 2
    max_objects: int = 5
    min_side: int = 12
    max_side: int = 20
    relation_rate: float = 0.3
    max_attempts: int = 100


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    corners: Tuple[int, int, int, int]

    @property
    def kind(self) -> Tuple[str, str]:
        return (self.color, self.shape)


def relation_holds(relation: str, a: Sequence[float], b: Sequence[float]) -> bool:
    """Whether box *a* stands in *relation* to box *b* (strict separation)."""
    if relation == "left of":
        return a[2] <= b[0]
    if relation == "right of":
        return a[0] >= b[2]
    if relation == "above":
        return a[3] <= b[1]
    if relation == "below":
        return a[1] >= b[3]
    raise ValidationError(f"unknown relation {relation!r}")


@dataclass(frozen=True)
class Description:
    """``the <color> <shape> [<relation> the <color> <shape>]``."""

    color: str
    shape: str
    relation: Optional[str] = None
    anchor: Optional[Tuple[str, str]] = None

    @property
    def phrase(self) -> str:
        text = f"the {self.color} {self.shape}"
        if self.relation is not None:
            text += f" {self.relation} the {self.anchor[0]} {self.anchor[1]}"
        return text


def resolve(description: Description, objects: Sequence[SceneObject]) -> List[int]:
    """Indices of every object the description fits."""
    hits = []
    for idx, obj in enumerate(objects):
        if obj.kind != (description.color, description.shape):
            continue
        if description.relation is not None:
            anchors = [o for o in objects if o.kind == description.anchor and o is not obj]
            if not any(relation_holds(description.relation, obj.corners, a.corners)
                       for a in anchors):
                continue
        hits.append(idx)
    return hits


def _place(spec: SyntheticSpec, rng: np.random.Generator,
           placed: List[Tuple[int, int, int, int]]) -> Optional[Tuple[int, int, int, int]]:
    for _ in range(50):
        side = int(rng.integers(spec.min_side, spec.max_side + 1))
        x1 = int(rng.integers(0, spec.size - side + 1))
        y1 = int(rng.integers(0, spec.size - side + 1))
        box = (x1, y1, x1 + side, y1 + side)
        # one pixel gap between objects
        if all(box[2] + 1 <= o[0] or o[2] + 1 <= box[0] or box[3] + 1 <= o[1]
               or o[3] + 1 <= box[1] for o in placed):
            return box
    return None


def _scene(spec: SyntheticSpec, rng: np.random.Generator) -> Optional[List[SceneObject]]:
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    objects, placed = [], []
    for _ in range(count):
        box = _place(spec, rng, placed)
        if box is None:
            return None
        placed.append(box)
        shape = spec.shapes[int(rng.integers(len(spec.shapes)))]
        color = spec.colors[int(rng.integers(len(spec.colors)))]
        objects.append(SceneObject(shape, color, box))
    return objects


def _describe(spec: SyntheticSpec, rng: np.random.Generator, objects: List[SceneObject],
              target: int) -> Optional[Description]:
    ref = objects[target]
    twins = [o for i, o in enumerate(objects) if o.kind == ref.kind and i != target]
    plain = Description(ref.color, ref.shape)
    if not twins and rng.random() >= spec.relation_rate:
        return plain
    kinds = [o.kind for o in objects]
    options = []
    for anchor in objects:
        if anchor is ref or kinds.count(anchor.kind) != 1:
            continue
        for relation in RELATIONS:
            if relation_holds(relation, ref.corners, anchor.corners) and not any(
                    relation_holds(relation, t.corners, anchor.corners) for t in twins):
                options.append(Description(ref.color, ref.shape, relation, anchor.kind))
    if options:
        return options[int(rng.integers(len(options)))]
    return None if twins else plain


def render(objects: Sequence[SceneObject], size: int) -> np.ndarray:
    """Draw the scene on a black ``size`` x ``size`` RGB canvas."""
    canvas = Image.new("RGB", (size, size), (0, 0, 0))
    draw = ImageDraw.Draw(canvas)
    for obj in objects:
        x1, y1, x2, y2 = obj.corners
        fill = COLORS[obj.color]
        if obj.shape == "square":
            draw.rectangle([x1, y1, x2 - 1, y2 - 1], fill=fill)
        elif obj.shape == "circle":
            draw.ellipse([x1, y1, x2 - 1, y2 - 1], fill=fill)
        else:
            draw.polygon([(x1, y2 - 1), (x2 - 1, y2 - 1), ((x1 + x2 - 1) / 2.0, y1)], fill=fill)
    return np.asarray(canvas, dtype=np.uint8).copy()


def generate(spec: SyntheticSpec, count: int) -> Iterator[GroundingSample]:
    """
    Yield *count* synthetic samples, reproducible from ``spec.seed``.

    Each phrase refers to exactly one object; its token set holds the
    content words of the whole phrase.

    Raises
    ------
    GenerationError
        If ``spec.max_attempts`` scenes in a row admit no unique description.
    """
    unknown = (set(spec.colors) - set(COLORS)) | (set(spec.shapes) - set(SHAPES))
    if unknown:
        raise GenerationError(f"unknown colors/shapes: {sorted(unknown)}")
    rng = np.random.default_rng(spec.seed)
    for index in range(count):
        for _ in range(spec.max_attempts):
            objects = _scene(spec, rng)
            if objects is None:
                continue
            target = int(rng.integers(len(objects)))
            description = _describe(spec, rng, objects, target)
            if description is None or resolve(description, objects) != [target]:
                continue
            words = tuple(split_words(description.phrase))
            yield GroundingSample(
                image=render(objects, spec.size),
                phrase=description.phrase,
                pixel_boxes=(tuple(float(v) for v in objects[target].corners),),
                token_sets=(content_positions(words),),
                words=words,
                scene=tuple(objects),
            )
            break
        else:
            raise GenerationError(
                f"no uniquely describable scene after {spec.max_attempts} attempts",
                sample=index, attempts=spec.max_attempts)


# ---------------------------------------------------------------------
# Image files
# ---------------------------------------------------------------------

def write_ppm(path: PathLike, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(path, format="PPM")


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), "L").save(path, format="PPM")


def read_image(path: PathLike) -> np.ndarray:
    """
    Load an 8-bit RGB image: PPM/PGM through Pillow, or raw RGB bytes when a
    ``<path>.json`` sidecar with ``width`` and ``height`` exists.
    """
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if sidecar.is_file():
        extents = json.loads(sidecar.read_text(encoding="utf-8"))
        width, height = int(extents["width"]), int(extents["height"])
        raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
        if raw.size != width * height * 3:
            raise InputError(f"{path}: {raw.size} bytes, expected {width * height * 3}",
                             path=str(path))
        return raw.reshape(height, width, 3).copy()
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def resize_image(image: np.ndarray, width: int, height: int) -> np.ndarray:
    if image.shape[:2] == (height, width):
        return image
    resized = Image.fromarray(image, "RGB").resize((width, height), Image.Resampling.BILINEAR)
    return np.asarray(resized, dtype=np.uint8).copy()


# ---------------------------------------------------------------------
# Annotation files
# ---------------------------------------------------------------------

def export_samples(samples: Iterable[GroundingSample], out_dir: PathLike) -> Path:
    """
    Write ``annotations.jsonl`` and ``images/NNNNN.ppm`` under *out_dir*.

    Returns the annotation file path.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    ann = out / ANNOTATIONS
    with open(ann, "w", encoding="utf-8", newline="\n") as f:
        for idx, sample in enumerate(samples):
            rel = f"images/{idx:05d}.ppm"
            write_ppm(out / rel, sample.image)
            record = {
                "image": rel,
                "width": sample.width,
                "height": sample.height,
                "phrase": sample.phrase,
                "box": list(sample.pixel_boxes[0]),
                "token_box_map": [list(t) for t in sample.token_sets],
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return ann


def _parse_record(record: dict, images_dir: Path,
                  resize: Optional[Tuple[int, int]]) -> GroundingSample:
    width, height = int(record["width"]), int(record["height"])
    phrase = str(record["phrase"])
    words = tuple(split_words(phrase))
    if not words:
        raise InputError("empty phrase")
    corners = tuple(float(v) for v in record["box"])
    if len(corners) != 4:
        raise InputError("box needs 4 values")
    image = read_image(images_dir / record["image"])
    if image.shape[:2] != (height, width):
        raise InputError(f"image is {image.shape[1]}x{image.shape[0]}, record says "
                         f"{width}x{height}")
    Box.from_pixels(corners, width, height)
    if "token_box_map" in record:
        token_sets = tuple(tuple(int(i) for i in t) for t in record["token_box_map"])
        if len(token_sets) != 1 or not token_sets[0]:
            raise InputError("token_box_map needs one nonempty token list")
        if any(not 0 <= i < len(words) for i in token_sets[0]):
            raise InputError("token_box_map index outside the phrase")
    else:
        token_sets = (content_positions(words),)
    if resize is not None:
        new_h, new_w = resize
        image = resize_image(image, new_w, new_h)
        sx, sy = new_w / width, new_h / height
        corners = (corners[0] * sx, corners[1] * sy, corners[2] * sx, corners[3] * sy)
    return GroundingSample(image, phrase, (corners,), token_sets, words)


def ingest(annotations: PathLike, images_dir: Optional[PathLike] = None,
           resize: Optional[Tuple[int, int]] = None) -> List[GroundingSample]:
    """
    Read an annotation file into samples.

    Parameters
    ----------
    annotations : str or Path
        Line-delimited JSON file.
    images_dir : str or Path, optional
        Base directory of the ``image`` paths; defaults to the annotation
        file's directory.
    resize : (height, width), optional
        Rescale every image (and its box) to these extents.

    Raises
    ------
    IngestError
        If more than 10% of the records are malformed or reference
        missing images. Each skipped line is logged with its number.
    """
    annotations = Path(annotations)
    base = Path(images_dir) if images_dir is not None else annotations.parent
    samples, skipped, total = [], 0, 0
    # Lines are decoded one at a time so a bad byte costs only its record.
    with open(annotations, "rb") as f:
        for lineno, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            total += 1
            try:
                samples.append(_parse_record(json.loads(raw.decode("utf-8")), base, resize))
            except (ValueError, KeyError, TypeError, OSError, YoroError) as e:
                skipped += 1
                logger.warning("%s:%d: record skipped: %s", annotations, lineno, e)
    if total and skipped > MAX_SKIP_FRACTION * total:
        raise IngestError(f"{skipped} of {total} records skipped in {annotations}",
                          skipped=skipped, total=total)
    logger.debug("ingested %d samples from %s (%d skipped)", len(samples), annotations, skipped)
    return samples
