"""Deterministic synthetic KB + dialog corpus with derivable gold labels.

Every recommendation exchange elicits two attribute values that jointly match
exactly one KB entity; the agent then recommends that entity by name.  Any two
entities share at most one attribute value, so every value pair is uniquely
identifying.  Types in the pairs {movie, music} and {food, poi} can share
attribute keys/values (controlled by attribute_overlap), which is the only
source of type ambiguity.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .kb import Entity, KnowledgeBase, render_entity_text
from .model import SPECIAL_TOKENS, Vocab

TYPES = ("movie", "music", "food", "poi")

TYPE_KEYS = {
    "movie": ["genre", "director", "lead_actor", "decade"],
    "music": ["style", "artist", "mood", "tempo"],
    "food": ["cuisine", "main_ingredient", "spice_level", "course"],
    "poi": ["category", "city", "ambience", "price_range"],
}

SHARED_KEYS = {
    ("movie", "music"): ["theme", "origin", "era"],
    ("food", "poi"): ["flavor_profile", "region", "setting"],
}

TYPE_VALUES = {
    "movie": [
        "noir", "western", "heist", "slapstick", "biopic", "thriller", "moody",
        "epic", "gritty", "whimsical", "dystopian", "swashbuckling", "campy",
        "arthouse", "silent", "animated", "sprawling", "claustrophobic",
        "hardboiled", "surreal", "mockumentary", "melodrama", "screwball", "pulpy",
    ],
    "music": [
        "jazzy", "acoustic", "orchestral", "synthwave", "bluesy", "choral",
        "ambient", "folk", "punchy", "lofi", "baroque", "reggae", "operatic",
        "funky", "shoegaze", "grunge", "honkytonk", "chiptune", "bluegrass",
        "salsa", "bossa", "techno", "dirge", "anthemic",
    ],
    "food": [
        "scallions", "ginger", "garlic", "saffron", "smoky", "tangy", "braised",
        "pickled", "crispy", "umami", "charred", "fermented", "buttery",
        "peppery", "herbal", "citrusy", "roasted", "steamed", "nutty",
        "caramelized", "brined", "zesty", "flaky", "hearty",
    ],
    "poi": [
        "riverside", "rooftop", "candlelit", "bustling", "tucked", "panoramic",
        "historic", "artsy", "cozy", "grand", "lakeside", "subterranean",
        "alfresco", "opulent", "rustic", "minimalist", "vibrant", "secluded",
        "ornate", "stately", "quaint", "lively", "chic", "breezy",
    ],
}

SHARED_VALUES = {
    ("movie", "music"): [
        "retro", "upbeat", "dark", "romantic", "nostalgic", "experimental",
        "mellow", "energetic", "haunting", "playful", "dreamy", "cinematic",
        "stripped", "lush", "brooding", "festive", "hypnotic", "raw",
        "soaring", "intimate", "quirky", "somber", "triumphant", "wistful",
    ],
    ("food", "poi"): [
        "spicy", "sweet", "traditional", "fusion", "seasonal", "coastal",
        "mountain", "urban", "homestyle", "gourmet", "casual", "exotic",
        "fresh", "comforting", "bold", "delicate", "aromatic", "earthy",
        "vivid", "refined", "humble", "savory", "mild", "robust",
    ],
}

_NAME_SYLLABLES = [
    "ba", "ce", "do", "fa", "gu", "ka", "li", "mo", "na", "pe",
    "ra", "su", "ta", "ve", "zo", "chi", "del", "mar", "lun", "ser",
]

CHITCHAT_USER = [
    "hi there how are you doing today",
    "hello hope you are having a good day",
    "nice weather we are having right now",
    "i had quite a long day at work",
    "what have you been up to lately",
    "good to chat with you again my friend",
]

CHITCHAT_AGENT = [
    "i am doing great thanks for asking",
    "glad to hear from you again",
    "happy to chat with you anytime",
    "that sounds really nice indeed",
    "i hope the rest of your day goes well",
    "always good to talk with you",
]

REQUEST_USER = [
    "i want something with {v1} and {v2} can you recommend something",
    "looking for {v1} plus {v2} any recommendation for me",
    "could you recommend one with {v1} and also {v2}",
    "please suggest something featuring {v1} and {v2} for me",
    "any suggestion with {v1} together with {v2} would help",
]

RECOMMEND_AGENT = [
    "you should try {name} i think you will like it",
    "i recommend {name} it fits what you want",
    "my pick for you is {name} hope you enjoy it",
    "{name} would be a great choice for you",
    "give {name} a try it matches your taste",
]


class CorpusError(Exception):
    pass


@dataclass
class CorpusConfig:
    seed: int = 7
    n_entities_per_type: int = 10
    types: tuple = TYPES
    n_dialogs: int = 300
    turns_range: tuple = (2, 4)
    chitchat_ratio: float = 0.5
    attribute_overlap: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.chitchat_ratio <= 1.0:
            raise ValueError("chitchat_ratio must be in [0, 1]")
        if not 0.0 <= self.attribute_overlap <= 1.0:
            raise ValueError("attribute_overlap must be in [0, 1]")
        lo, hi = self.turns_range
        if not (1 <= lo <= hi):
            raise ValueError("invalid turns_range")
        if self.n_entities_per_type < 1 or self.n_dialogs < 1:
            raise ValueError("counts must be positive")


@dataclass
class DialogTurn:
    speaker: str
    text: str
    entities: list = field(default_factory=list)
    trigger: bool | None = None
    gold_entity: int | None = None
    gold_type: str | None = None

    def validate(self, where=""):
        if self.speaker not in ("user", "agent"):
            raise CorpusError(f"{where}: unknown speaker {self.speaker!r}")
        if self.speaker == "agent":
            if self.trigger is None:
                raise CorpusError(f"{where}: agent turn missing trigger label")
            if self.trigger and self.gold_entity is None:
                raise CorpusError(f"{where}: trigger set but gold_entity missing")
            if not self.trigger and self.gold_entity is not None:
                raise CorpusError(f"{where}: gold_entity set on a non-trigger turn")


@dataclass
class LabeledDialog:
    id: str
    turns: list


def _pair_of(type_name: str):
    for pair in SHARED_KEYS:
        if type_name in pair:
            return pair
    raise KeyError(type_name)


def _make_entities(cfg: CorpusConfig, rng: random.Random) -> list[Entity]:
    names = set()

    def coin_name():
        while True:
            name = "".join(rng.choice(_NAME_SYLLABLES) for _ in range(3))
            if name not in names:
                names.add(name)
                return name

    entities = []
    value_sets = []  # full attribute-value set per accepted entity
    for type_id, type_name in enumerate(cfg.types):
        pair = _pair_of(type_name)
        for _ in range(cfg.n_entities_per_type):
            for _attempt in range(500):
                n_attrs = rng.randint(2, 4)
                shared_flags = [rng.random() < cfg.attribute_overlap for _ in range(n_attrs)]
                n_shared = min(sum(shared_flags), len(SHARED_KEYS[pair]))
                n_specific = n_attrs - n_shared
                keys = rng.sample(SHARED_KEYS[pair], n_shared) + \
                    rng.sample(TYPE_KEYS[type_name], n_specific)
                rng.shuffle(keys)
                values = []
                for key in keys:
                    pool = SHARED_VALUES[pair] if key in SHARED_KEYS[pair] else TYPE_VALUES[type_name]
                    values.append(rng.choice(pool))
                if len(set(values)) != len(values):
                    continue
                full = set(values)
                # at most one value in common with any other entity, so any
                # two of this entity's values pin it down uniquely
                if all(len(full & other) <= 1 for other in value_sets):
                    break
            else:
                raise CorpusError(
                    "could not generate a uniquely identifiable entity; "
                    "reduce n_entities_per_type or attribute_overlap")
            value_sets.append(full)
            entities.append(Entity(
                id=len(entities),
                name=coin_name(),
                type_id=type_id,
                attributes=tuple(zip(keys, values)),
            ))
    return entities


def generate_corpus(cfg: CorpusConfig):
    """Returns (KnowledgeBase, {"train": [...], "dev": [...], "test": [...]})."""
    rng_kb = random.Random(cfg.seed)
    entities = _make_entities(cfg, rng_kb)
    kb = KnowledgeBase(types=list(cfg.types), entities=entities, triples=[])

    # dialog stream is independent of the KB stream so the same seed yields the
    # same KB regardless of n_dialogs
    rng = random.Random(cfg.seed + 1)
    gold_queue: list[int] = []

    def next_gold() -> int:
        if not gold_queue:
            ids = [e.id for e in entities]
            rng.shuffle(ids)
            gold_queue.extend(ids)
        return gold_queue.pop()

    dialogs = []
    for d in range(cfg.n_dialogs):
        turns = []
        n_exchanges = rng.randint(*cfg.turns_range)
        for _ in range(n_exchanges):
            if rng.random() < cfg.chitchat_ratio:
                turns.append(DialogTurn("user", rng.choice(CHITCHAT_USER)))
                turns.append(DialogTurn("agent", rng.choice(CHITCHAT_AGENT), trigger=False))
            else:
                gold = entities[next_gold()]
                v1, v2 = rng.sample([v for _, v in gold.attributes], 2)
                user_text = rng.choice(REQUEST_USER).format(v1=v1, v2=v2)
                agent_text = rng.choice(RECOMMEND_AGENT).format(name=gold.name)
                turns.append(DialogTurn("user", user_text))
                turns.append(DialogTurn(
                    "agent", agent_text, entities=[gold.id], trigger=True,
                    gold_entity=gold.id, gold_type=cfg.types[gold.type_id]))
        dialogs.append(LabeledDialog(id=f"d{d:05d}", turns=turns))

    n = len(dialogs)
    n_train = int(n * 0.8)
    n_dev = int(n * 0.1)
    splits = {
        "train": dialogs[:n_train],
        "dev": dialogs[n_train:n_train + n_dev],
        "test": dialogs[n_train + n_dev:],
    }
    return kb, splits


def build_vocab(kb: KnowledgeBase) -> Vocab:
    """Vocabulary covering every utterance any corpus over this KB can produce."""
    texts = [render_entity_text(kb, e.id) for e in kb.entities]
    texts.extend(CHITCHAT_USER + CHITCHAT_AGENT)
    texts.extend(t.format(v1="", v2="") for t in REQUEST_USER)
    texts.extend(t.format(name="") for t in RECOMMEND_AGENT)
    for pools in (TYPE_VALUES, SHARED_VALUES):
        for values in pools.values():
            texts.extend(values)
    return Vocab.build(texts)


class DialogFormatError(Exception):
    pass


def save_dialogs(dialogs, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in dialogs:
            doc = {"id": d.id, "turns": [
                {
                    "speaker": t.speaker,
                    "text": t.text,
                    "entities": list(t.entities),
                    "trigger": t.trigger,
                    "gold_entity": t.gold_entity,
                    "gold_type": t.gold_type,
                }
                for t in d.turns
            ]}
            f.write(json.dumps(doc, ensure_ascii=False) + "\n")


def load_dialogs(path) -> list:
    dialogs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                turns = [DialogTurn(**t) for t in doc["turns"]]
                dialog = LabeledDialog(id=doc["id"], turns=turns)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DialogFormatError(f"{path}:{lineno}: malformed dialog: {exc}") from exc
            for i, t in enumerate(dialog.turns):
                try:
                    t.validate(where=f"{path}:{lineno} turn {i}")
                except CorpusError as exc:
                    raise DialogFormatError(str(exc)) from exc
            dialogs.append(dialog)
    return dialogs
