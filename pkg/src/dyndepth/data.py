"""Datasets: synthetic mixed-difficulty generator, vocabulary, tokenizer, TSV IO.

The synthetic "marker-depth" family builds classification sequences where
easy examples carry one class-revealing marker token near the front while
hard examples state a query key up front and bury the answer in shuffled
key-value bindings mixed with filler.  Resolving a hard example means
matching the queried key against the bindings and reading off its value,
which needs more than one round of token mixing; the difficulty mix is what
gives an adaptive model room to spend fewer blocks on the easy fraction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError
from .rng import STREAM_DATA, make_rng

PAD_ID, CLS_ID, UNK_ID, SEP_ID = 0, 1, 2, 3
PAD_TOKEN, CLS_TOKEN, UNK_TOKEN, SEP_TOKEN = "[PAD]", "[CLS]", "[UNK]", "[SEP]"
_RESERVED = (PAD_TOKEN, CLS_TOKEN, UNK_TOKEN, SEP_TOKEN)

EASY, HARD = "easy", "hard"


class DataError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass
class Example:
    text_a: str
    label: int
    text_b: str | None = None
    difficulty: str | None = None


@dataclass
class Vocab:
    """Frequency-then-lexicographic token ids, stable under rebuilds.

    Ids 0..3 are reserved for the special markers; corpus tokens start at 4.
    """

    id_to_token: list = field(default_factory=lambda: list(_RESERVED))

    def __post_init__(self):
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    @classmethod
    def build(cls, examples) -> "Vocab":
        counts = {}
        for ex in examples:
            for text in (ex.text_a, ex.text_b or ""):
                for tok in text.split():
                    counts[tok] = counts.get(tok, 0) + 1
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(id_to_token=list(_RESERVED) + ordered)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if tuple(tokens[:4]) != _RESERVED:
            raise DataError(f"vocab file {path} does not start with the reserved tokens")
        return cls(id_to_token=tokens)


def tokenize(example: Example, vocab: Vocab, max_len: int):
    """[CLS] + text_a tokens (+ [SEP] + text_b tokens), cut then padded to max_len."""
    ids = [CLS_ID]
    ids.extend(vocab.encode_token(t) for t in example.text_a.split())
    if example.text_b is not None:
        ids.append(SEP_ID)
        ids.extend(vocab.encode_token(t) for t in example.text_b.split())
    ids = ids[:max_len]
    ids.extend([PAD_ID] * (max_len - len(ids)))
    return ids


# -- synthetic task ---------------------------------------------------------------


@dataclass
class SynthSpec:
    family: str = "marker-depth"
    num_classes: int = 2
    easy_frac: float = 0.7
    min_len: int = 10
    max_len: int = 16
    marker_window: int = 3  # easy marker lands in the first few positions
    num_keys: int = 4       # key alphabet for the hard retrieval bindings
    min_filler: int = 3     # filler-token segments shuffled between bindings
    max_filler: int = 6


_NOISE_TOKENS = tuple(f"w{i}" for i in range(8))


def gen_synthetic(seed: int, n_examples: int, spec: SynthSpec | str = "marker-depth"):
    """Deterministic synthetic dataset: balanced classes, tagged easy/hard mix."""
    if isinstance(spec, str):
        spec = SynthSpec(family=spec)
    if spec.family != "marker-depth":
        raise ConfigError(f"unknown synthetic task family {spec.family!r}")
    if spec.num_classes < 2:
        raise ConfigError("marker-depth needs at least 2 classes")
    if spec.num_keys < 2:
        raise ConfigError("marker-depth needs at least 2 keys for the hard bindings")
    rng = make_rng(seed, STREAM_DATA)

    # Exact class balance (within 1) and a Bresenham-spread difficulty ratio
    # inside each class, fixed before any random draw.
    plan = []
    easy_acc = [0.0] * spec.num_classes
    for i in range(n_examples):
        label = i % spec.num_classes
        easy_acc[label] += spec.easy_frac
        if easy_acc[label] >= 1.0 - 1e-9:
            easy_acc[label] -= 1.0
            plan.append((label, EASY))
        else:
            plan.append((label, HARD))

    examples = [_gen_one(rng, spec, label, difficulty) for label, difficulty in plan]
    order = rng.permutation(n_examples)
    return [examples[i] for i in order]


def _gen_one(rng, spec: SynthSpec, label: int, difficulty: str) -> Example:
    if difficulty == EASY:
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        tokens = [_NOISE_TOKENS[j] for j in rng.integers(0, len(_NOISE_TOKENS), size=length)]
        pos = int(rng.integers(0, min(spec.marker_window, length)))
        tokens[pos] = f"mrk{label}"
    else:
        # "qry k3 ... k3 v1 ... k0 v0 ..." - the value bound to the queried key
        # is the label; the other binding's value is a decoy drawn freely, so
        # only matching the key resolves the class.
        keys = rng.choice(spec.num_keys, size=2, replace=False)
        values = [label, int(rng.integers(0, spec.num_classes))]
        segments = [[f"k{k}", f"v{v}"] for k, v in zip(keys, values)]
        for _ in range(int(rng.integers(spec.min_filler, spec.max_filler + 1))):
            segments.append([_NOISE_TOKENS[int(rng.integers(0, len(_NOISE_TOKENS)))]])
        order = rng.permutation(len(segments))
        tokens = ["qry", f"k{keys[0]}"]
        for j in order:
            tokens.extend(segments[j])
    return Example(text_a=" ".join(tokens), label=label, difficulty=difficulty)


# -- TSV files --------------------------------------------------------------------


@dataclass
class TsvSchema:
    """Column mapping for GLUE-style TSV files.

    ``label_names`` maps label strings to indices by position; when absent
    the label column must hold integers.
    """

    text_a: str = "text_a"
    label: str = "label"
    text_b: str | None = None
    difficulty: str | None = None
    label_names: list | None = None


#: Schema produced by :func:`write_tsv` for generated datasets.
DEFAULT_SCHEMA = TsvSchema(text_b="text_b", difficulty="difficulty")


def load_tsv(path, schema: TsvSchema = DEFAULT_SCHEMA):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError(f"{path} is empty")
    header = lines[0].split("\t")
    col = {name: i for i, name in enumerate(header)}

    def column(name, required):
        if name is None:
            return None
        if name not in col:
            if required:
                raise SchemaError(f"{path}: missing required column {name!r} (header has {header})")
            return None
        return col[name]

    ia = column(schema.text_a, required=True)
    ilabel = column(schema.label, required=True)
    ib = column(schema.text_b, required=False)
    idiff = column(schema.difficulty, required=False)

    examples = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(header):
            raise DataError(
                f"{path} line {lineno}: expected {len(header)} fields, got {len(fields)}"
            )
        raw_label = fields[ilabel]
        if schema.label_names is not None:
            if raw_label not in schema.label_names:
                raise DataError(f"{path} line {lineno}: unknown label {raw_label!r}")
            label = schema.label_names.index(raw_label)
        else:
            try:
                label = int(raw_label)
            except ValueError:
                raise DataError(f"{path} line {lineno}: unknown label {raw_label!r}") from None
        text_b = fields[ib] if ib is not None and fields[ib] != "" else None
        diff = fields[idiff] if idiff is not None and fields[idiff] != "" else None
        examples.append(Example(text_a=fields[ia], label=label, text_b=text_b, difficulty=diff))
    return examples


def write_tsv(path, examples) -> None:
    """Write the generated-dataset schema; loads back losslessly via DEFAULT_SCHEMA."""
    for ex in examples:
        for text in (ex.text_a, ex.text_b or ""):
            if "\t" in text or "\n" in text:
                raise DataError("text fields must not contain tabs or newlines")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("text_a\ttext_b\tlabel\tdifficulty\n")
        for ex in examples:
            fh.write(f"{ex.text_a}\t{ex.text_b or ''}\t{ex.label}\t{ex.difficulty or ''}\n")


def split_dataset(examples, val_fraction: float = 0.25):
    """Content-hash split: an example's text alone decides its side, so the
    two sides stay disjoint even across re-runs and duplicated rows."""
    train, val = [], []
    for ex in examples:
        digest = hashlib.sha256(
            (ex.text_a + "\x1f" + (ex.text_b or "")).encode("utf-8")
        ).digest()
        bucket = int.from_bytes(digest[:4], "big") / 2**32
        (val if bucket < val_fraction else train).append(ex)
    return train, val


def class_counts(examples, num_classes: int):
    counts = [0] * num_classes
    for ex in examples:
        if not (0 <= ex.label < num_classes):
            raise DataError(f"label {ex.label} outside [0, {num_classes})")
        counts[ex.label] += 1
    return counts
