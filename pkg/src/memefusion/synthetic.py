"""Seeded synthetic memes for tests, demos and smoke runs.

Each misogyny type owns a few signature words, one object class and one
direction in sentiment space, so labels are recoverable from any single
modality. Captions carry OCR-style debris (clock times, dates, watermarks)
and random casing so the cleaning rules have something to do.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_ingest import MemeRecord, write_dataset
from .preprocess import Vocab, build_vocab

SIGNATURE_WORDS = {
    "shaming": ("crimson", "scarlet", "ruby"),
    "stereotype": ("azure", "cobalt", "navy"),
    "objectification": ("jade", "olive", "emerald"),
    "violence": ("onyx", "coal", "ebony"),
}

FILLER_WORDS = (
    "the a an and or but so if when then that this these those it its is are was were be been "
    "i you he she we they me him her us them my your his our their what who how why where "
    "can could will would should do does did have has had not no yes just only also very "
    "all any some every each more most other same new old good bad big small long short "
    "first last next best great little right left high low real true fake funny happy sad "
    "day night week year time today life world home work school friend family people man "
    "woman girl boy guy kid mom dad wife husband sister brother baby dog cat car food water "
    "coffee pizza phone game movie music party money house room bed door window table chair "
    "book picture face hand eyes head hair heart body love hate like want need know think "
    "feel see look watch say said tell talk ask call make made take get got give go going "
    "come came find try use play run walk sit stand eat drink sleep wake open close start "
    "stop wait hope wish remember forget meet leave stay live die win lose pay buy sell send "
    "read write learn teach help show turn keep put let mean seem hear bring hold change "
    "move wear break fix clean cook drive fly swim dance sing laugh cry smile kiss hug "
    "again always never sometimes often still already soon now here there up down out off "
    "over under back away around about after before during while until because though "
    "really actually literally basically probably maybe finally totally pretty enough too "
    "much many few lot thing things something nothing everything anything someone everyone "
    "nobody anyone way part place point case fact idea problem question answer reason story "
    "meme memes post photo video text message chat internet online social media news boss "
    "job office meeting class teacher student test exam homework weekend holiday summer "
    "winter morning evening birthday christmas dinner lunch breakfast kitchen dishes laundry "
    "shopping dress shoes makeup mirror selfie gym diet beach sun rain snow tree garden city "
    "street road town country king queen hero star team fan club bar beer wine date boyfriend "
    "girlfriend relationship marriage wedding single dating ex crush text reply ignore wrong "
    "sorry please thanks hello hi hey bye okay ok lol omg wow yeah nope sure well oh"
).split()

WATERMARKS = ("imgflip.com", "makeameme.org", "memez.com", "@memelord", "quickmeme")
DEBRIS = ("4:41 PM", "12:31 AM", "Dec 11 at 12:31 AM", "Mon, Jan 3", "10:15", "03/04/2021")

SUFFIX_PIECES = ("##s", "##es", "##ed", "##ing", "##er", "##ers", "##ly", "##y", "##ness", "##ful", "##less", "##est")

TYPE_ORDER = tuple(SIGNATURE_WORDS)
NUM_OBJECT_CLASSES = 20
REGION_DIM = 16
SENTIMENT_DIM = 8
SENTIMENT_SHIFT = 4.0


def fixture_vocab() -> Vocab:
    words = list(dict.fromkeys(FILLER_WORDS + [w for ws in SIGNATURE_WORDS.values() for w in ws]))
    vocab = build_vocab(words)
    return Vocab(vocab.tokens + tuple(p for p in SUFFIX_PIECES if p not in vocab))


@dataclass
class SyntheticCorpus:
    records: list[MemeRecord]
    regions: list[dict]
    sentiment: list[dict]

    def write(self, directory: str | Path, stem: str = "") -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "dataset": directory / f"{stem}dataset.tsv",
            "regions": directory / f"{stem}regions.jsonl",
            "sentiment": directory / f"{stem}sentiment.jsonl",
        }
        write_dataset(paths["dataset"], self.records, with_cleaned=False)
        paths["regions"].write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in self.regions))
        paths["sentiment"].write_text("".join(json.dumps(s, sort_keys=True) + "\n" for s in self.sentiment))
        return paths


def _r(x: float) -> float:
    return float(f"{x:.6g}")


def generate(
    n_records: int = 200,
    seed: int = 0,
    positive_rate: float = 0.5,
    id_prefix: str = "syn",
    debris_rate: float = 0.3,
    random_labels: bool = False,
    filler_size: int = 40,
) -> SyntheticCorpus:
    """Separable synthetic memes, or label-independent content when
    ``random_labels`` is set (for memorization checks)."""
    rng = np.random.default_rng(seed)
    filler = FILLER_WORDS[:filler_size] if filler_size else FILLER_WORDS
    n_pos = int(round(n_records * positive_rate))
    is_pos = np.array([1] * n_pos + [0] * (n_records - n_pos))
    rng.shuffle(is_pos)
    records, regions, sentiment = [], [], []
    for idx in range(n_records):
        rid = f"{id_prefix}{idx:04d}"
        mis = int(is_pos[idx])
        types = [0, 0, 0, 0]
        if mis:
            types[int(rng.integers(4))] = 1
            for k in range(4):
                if rng.random() < 0.2:
                    types[k] = 1
        signal = [0, 0, 0, 0] if random_labels else types

        words = list(rng.choice(filler, size=int(rng.integers(3, 9))))
        for k, on in enumerate(signal):
            if on:
                sig = SIGNATURE_WORDS[TYPE_ORDER[k]]
                words.extend(rng.choice(sig, size=2))
        if random_labels:
            words.extend(rng.choice(filler, size=3))
        order = rng.permutation(len(words))
        text = " ".join(str(words[i]) for i in order)
        if rng.random() < 0.5:
            text = text.upper()
        if rng.random() < debris_rate:
            text = f"{rng.choice(DEBRIS)} {text}"
        if rng.random() < debris_rate:
            text = f"{text} {rng.choice(WATERMARKS)}"
        records.append(MemeRecord(rid, text, mis, tuple(types)))

        width, height = int(rng.integers(200, 800)), int(rng.integers(200, 800))
        objects = []
        classes = [4 + int(c) for c in rng.integers(0, NUM_OBJECT_CLASSES - 4, size=int(rng.integers(1, 4)))]
        classes += [k for k, on in enumerate(signal) if on]
        for class_id in classes:
            x1, y1 = float(rng.uniform(0, width * 0.5)), float(rng.uniform(0, height * 0.5))
            x2, y2 = float(rng.uniform(x1 + 10, width)), float(rng.uniform(y1 + 10, height))
            feature = rng.normal(0.0, 0.3, size=REGION_DIM)
            feature[class_id % REGION_DIM] += 3.0
            objects.append(
                {
                    "box": [_r(x1), _r(y1), _r(x2), _r(y2)],
                    "class_id": class_id,
                    "confidence": _r(rng.uniform(0.72, 1.0) if class_id < 4 else rng.uniform(0.5, 1.0)),
                    "feature": [_r(v) for v in feature],
                }
            )
        regions.append({"id": rid, "width": width, "height": height, "regions": objects})

        vec = rng.normal(0.0, 0.3, size=SENTIMENT_DIM)
        for k, on in enumerate(signal):
            if on:
                vec[k] += SENTIMENT_SHIFT
        if not any(signal) and not random_labels:
            vec[4] += SENTIMENT_SHIFT
        sentiment.append({"id": rid, "vector": [_r(v) for v in vec]})
    return SyntheticCorpus(records, regions, sentiment)
