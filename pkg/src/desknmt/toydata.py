"""Synthetic Hindi-English corpora for desk-scale runs.

Sentences follow a tiny grammar: Hindi is subject-object-verb, English is
subject-verb-object, so translation needs reordering. Subjects may be
personal names composed from Devanagari syllables with a fixed
transliteration, which gives a long tail of rare words that a word-level
vocabulary cannot cover but subword units can.
"""

from __future__ import annotations

import itertools

import numpy as np

from .corpus import Bitext, SentencePair

SUBJECTS = [
    ("राम", "ram"), ("सीता", "sita"), ("लड़का", "the boy"), ("लड़की", "the girl"),
    ("किसान", "the farmer"), ("शिक्षक", "the teacher"), ("डॉक्टर", "the doctor"),
    ("बच्चा", "the child"), ("राजा", "the king"), ("माँ", "mother"),
]
OBJECTS = [
    ("सेब", "apple"), ("किताब", "book"), ("पानी", "water"), ("रोटी", "bread"),
    ("दूध", "milk"), ("पत्र", "letter"), ("गाना", "song"), ("कहानी", "story"),
    ("चाय", "tea"), ("फल", "fruit"), ("घोड़ा", "horse"), ("गाड़ी", "car"),
]
VERBS = [
    ("खाता है", "eats"), ("पढ़ता है", "reads"), ("पीता है", "drinks"), ("लिखता है", "writes"),
    ("गाता है", "sings"), ("देखता है", "sees"), ("लाता है", "brings"), ("बेचता है", "sells"),
    ("खरीदता है", "buys"), ("चाहता है", "wants"),
]
ADJECTIVES = [
    ("बड़ा", "big"), ("छोटा", "small"), ("अच्छा", "good"), ("नया", "new"),
    ("पुराना", "old"), ("लाल", "red"), ("मीठा", "sweet"), ("सुंदर", "beautiful"),
]
PLACES = [
    ("घर में", "at home"), ("बाज़ार में", "in the market"), ("स्कूल में", "in the school"),
    ("गाँव में", "in the village"), ("शहर में", "in the city"), ("बगीचे में", "in the garden"),
]

CONSONANTS = [
    ("क", "k"), ("ग", "g"), ("ज", "j"), ("त", "t"), ("द", "d"), ("न", "n"), ("प", "p"),
    ("ब", "b"), ("म", "m"), ("र", "r"), ("ल", "l"), ("व", "v"), ("स", "s"), ("ह", "h"),
]
VOWEL_SIGNS = [("", "a"), ("ि", "i"), ("ु", "u"), ("े", "e"), ("ो", "o")]


def syllables() -> list[tuple[str, str]]:
    return [(c + v, cl + vl) for (c, cl), (v, vl) in itertools.product(CONSONANTS, VOWEL_SIGNS)]


def make_name(rng: np.random.Generator) -> tuple[str, str]:
    syl = syllables()
    k = int(rng.integers(2, 4))
    picks = [syl[int(i)] for i in rng.integers(0, len(syl), size=k)]
    return "".join(h for h, _ in picks), "".join(e for _, e in picks)


def make_sentence(rng: np.random.Generator, name_prob: float = 0.0) -> tuple[str, str]:
    if rng.random() < name_prob:
        s = make_name(rng)
    else:
        s = SUBJECTS[int(rng.integers(len(SUBJECTS)))]
    o = OBJECTS[int(rng.integers(len(OBJECTS)))]
    v = VERBS[int(rng.integers(len(VERBS)))]
    hi_obj, en_obj = o[0], o[1]
    if rng.random() < 0.4:
        a = ADJECTIVES[int(rng.integers(len(ADJECTIVES)))]
        hi_obj, en_obj = f"{a[0]} {o[0]}", f"{a[1]} {o[1]}"
    hi = [s[0]]
    en = [s[1], v[1], en_obj]
    if rng.random() < 0.3:
        p = PLACES[int(rng.integers(len(PLACES)))]
        hi.append(p[0])
        en.append(p[1])
    hi += [hi_obj, v[0]]
    return " ".join(hi), " ".join(en)


def toy_parallel(n: int, seed: int = 0, name_prob: float = 0.0, name: str = "toy") -> Bitext:
    """``n`` distinct sentence pairs."""
    rng = np.random.default_rng(seed)
    seen: set[tuple[str, str]] = set()
    pairs = []
    attempts = 0
    while len(pairs) < n:
        attempts += 1
        if attempts > 200 * n + 1000:
            raise ValueError(f"grammar cannot produce {n} distinct pairs")
        pair = make_sentence(rng, name_prob)
        if pair in seen:
            continue
        seen.add(pair)
        pairs.append(SentencePair(*pair))
    return Bitext(tuple(pairs), name)


def toy_monolingual(n: int, seed: int = 1, name_prob: float = 0.0, exclude=()) -> list[str]:
    """``n`` distinct English lines not present in ``exclude``."""
    rng = np.random.default_rng(seed)
    banned = set(exclude)
    out, seen = [], set()
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 200 * n + 1000:
            raise ValueError(f"grammar cannot produce {n} distinct monolingual lines")
        _, en = make_sentence(rng, name_prob)
        if en in seen or en in banned:
            continue
        seen.add(en)
        out.append(en)
    return out


def overfit_pairs(n: int = 64, seed: int = 7) -> Bitext:
    """Small, name-free fixture for memorisation runs."""
    return toy_parallel(n, seed=seed, name_prob=0.0, name="overfit")


TOY_CONFIG = """\
model.num_layers = 2
model.d_model = 32
model.num_heads = 4
model.d_ff = 128
model.max_len = 32
model.dropout_rate = 0.0
train.micro_batch_size = 32
train.effective_batch_size = 64
train.max_steps = 600
train.lr_scale = 1.0
train.warmup_steps = 100
train.eval_every = 100
train.patience = 3
tokenizer.word_vocab_size = 120
tokenizer.num_merges = 300
batch.scale = 1e-4
experiment.decode_batch_size = 64
"""


def toy_inputs(n: int = 2000, seed: int = 0, name_prob: float = 0.3, dev: int = 100, test: int = 400,
               mono: int = 400):
    """Split a toy corpus into train/dev/test and add unseen monolingual English."""
    from .pipeline import ExperimentInputs

    b = toy_parallel(n, seed=seed, name_prob=name_prob)
    ntrain = n - dev - test
    held = {p.target for p in b.pairs[ntrain:]}
    return ExperimentInputs(
        b[:ntrain].with_name("train"),
        b[ntrain : ntrain + dev].with_name("dev"),
        b[ntrain + dev :].with_name("test"),
        tuple(toy_monolingual(mono, seed=seed + 1, name_prob=name_prob, exclude=held)),
    )


def toy_config():
    from .config import parse_config

    return parse_config(TOY_CONFIG, "<toy>")
