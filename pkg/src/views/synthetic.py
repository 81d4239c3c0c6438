"""Synthetic micro-corpus generator with a built-in oracle.

Every sample devotes one frame to each of its entities: the frame is
that (type, surface)'s deterministic direction vector plus small noise,
in shuffled order, with any leftover frames pure clutter. Features
therefore encode entities bijectively and the generator is the ground
truth for every learnability claim. Captions and knowledge passages are
templated from the entities with two deliberate asymmetries:

- file codes appear in captions and knowledge passages but never in the
  frame features, so the knowledge channel is irreplaceable;
- NORP and ORG entities appear in captions and entity strings but not
  in knowledge passages, so the entity channel is irreplaceable too.

Collision fixtures (a surface used as PERSON in one sample and GPE in
its twin, all other surfaces shared) make flat knowledge queries
ambiguous where structured ones are not.
"""

from __future__ import annotations

import datetime as dt
import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    CaptionOrigin,
    CaptionRecord,
    Corpus,
    VideoSample,
    save_caption_file,
    save_corpus,
    save_entity_file,
)
from .entities import EntitySet
from .knowledge import MockKB
from .perceiver import HashTextEmbedder

# pools are deliberately small: every surface must recur across many
# training scenes or the perceiver can memorize instead of composing
GIVEN_NAMES = ["Omar", "Vela", "Sorin", "Keld", "Mira", "Tano", "Ilsa", "Brek"]
SURNAMES = ["Rask", "Joren", "Vance", "Pell", "Torum", "Galen", "Mercer", "Holt"]
PLACE_STEMS = ["Brindara", "Kovesh", "Talin", "Veyra", "Ostrev",
               "Lumara", "Danholm", "Serrat", "Quorra", "Milten"]
PLACE_SUFFIXES = ["City", "Port", "Valley", "Heights"]
NORPS = ["Velorian", "Kandese", "Ostreli", "Maruvian",
         "Tolric", "Senwari", "Ardeni", "Folvan"]
ORG_FIRST = ["Apex", "Zenith", "Harbor", "Crescent",
             "Meridian", "Summit", "Pioneer", "Unity"]
ORG_SECOND = ["Council", "Group", "Alliance", "Network"]
# mononyms usable as either a PERSON or a GPE: the type-collision pool
COLLISION_NAMES = ["Zorava", "Kestrel", "Novira", "Thalen",
                   "Ormund", "Calyps", "Verdan", "Soleya"]
CODE_LETTERS = "bdfghjklmnpqrstvwz"

DEFAULT_SALT = "views-synthetic"

CAPTION_TEMPLATE = ("{p1} and {p2} appeared in {place} . {norp} crowds "
                    "welcomed the {org} . file {c1} {c2} .")
PASSAGE_TEMPLATE = "Update on {p1} and {p2} in {place} . file {c1} {c2} ."
DEFAULT_KB_PASSAGE = "no relevant news article was found ."


@dataclass(frozen=True)
class SyntheticConfig:
    n_samples: int = 320
    feature_dim: int = 32
    n_frames: int = 6
    noise_scale: float = 0.02
    n_collision_pairs: int = 16
    seed: int = 13
    date_start: dt.date = dt.date(2015, 1, 5)
    date_end: dt.date = dt.date(2016, 12, 20)


@dataclass
class SyntheticDataset:
    corpus: Corpus
    kb: MockKB
    inventory: list[tuple[str, str]]  # typed entities, builder-facing
    gazetteer: list[tuple[str, str]]  # inventory + file codes, eval-facing

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": out_dir / "corpus.jsonl",
            "captions": out_dir / "captions.jsonl",
            "entities": out_dir / "entities.jsonl",
            "kb": out_dir / "kb.jsonl",
            "inventory": out_dir / "inventory.json",
            "gazetteer": out_dir / "gazetteer.json",
        }
        save_corpus(self.corpus, paths["corpus"])
        save_caption_file(self.corpus.captions, paths["captions"])
        save_entity_file(self.corpus.entities, paths["entities"])
        self.kb.save(paths["kb"])
        for key in ("inventory", "gazetteer"):
            rows = getattr(self, key)
            paths[key].write_text(json.dumps(
                [{"surface": s, "type": t} for s, t in rows], indent=1),
                encoding="utf-8")
        return paths


def _code_pool(n: int, start: int = 0) -> list[str]:
    pool = [f"{letter}{digit}" for letter in CODE_LETTERS for digit in range(10)]
    return pool[start:start + n]


@dataclass
class _Scene:
    persons: tuple[str, str]
    place: str
    norp: str
    org: str
    codes: tuple[str, str]

    def entity_set(self) -> EntitySet:
        return EntitySet({
            "PERSON": list(self.persons),
            "GPE": [self.place],
            "NORP": [self.norp],
            "ORG": [self.org],
        })

    def caption(self) -> str:
        return CAPTION_TEMPLATE.format(
            p1=self.persons[0], p2=self.persons[1], place=self.place,
            norp=self.norp, org=self.org, c1=self.codes[0], c2=self.codes[1])

    def passage(self) -> str:
        return PASSAGE_TEMPLATE.format(
            p1=self.persons[0], p2=self.persons[1], place=self.place,
            c1=self.codes[0], c2=self.codes[1])


def _org_pool() -> list[str]:
    return [f"{first} {second}" for first in ORG_FIRST for second in ORG_SECOND]


def _draw_scene(rng: random.Random, used_pairs: set, codes: list[str],
                places: list[str], orgs: list[str] | None = None) -> _Scene:
    while True:
        p1 = f"{rng.choice(GIVEN_NAMES)} {rng.choice(SURNAMES)}"
        p2 = f"{rng.choice(GIVEN_NAMES)} {rng.choice(SURNAMES)}"
        if p1 == p2:
            continue
        pair = frozenset((p1, p2))
        if pair in used_pairs:
            continue
        used_pairs.add(pair)
        break
    return _Scene(
        persons=(p1, p2),
        place=rng.choice(places),
        norp=rng.choice(NORPS),
        org=rng.choice(orgs if orgs is not None else _org_pool()),
        codes=(rng.choice(codes), rng.choice(codes)),
    )


def _collision_twins(rng: random.Random, used_pairs: set, codes: list[str],
                     collision_pool: list[str]) -> tuple[_Scene, _Scene]:
    """Two scenes equal as surface sets but with two types swapped."""
    x, y = rng.sample(collision_pool, 2)
    while True:
        anchor = f"{rng.choice(GIVEN_NAMES)} {rng.choice(SURNAMES)}"
        if (frozenset((anchor, x)) not in used_pairs
                and frozenset((anchor, y)) not in used_pairs):
            break
    used_pairs.add(frozenset((anchor, x)))
    used_pairs.add(frozenset((anchor, y)))
    norp = rng.choice(NORPS)
    org = rng.choice(_org_pool())
    first = _Scene(persons=(anchor, x), place=y, norp=norp, org=org,
                   codes=(rng.choice(codes), rng.choice(codes)))
    second = _Scene(persons=(anchor, y), place=x, norp=norp, org=org,
                    codes=(rng.choice(codes), rng.choice(codes)))
    return first, second


def _support_scenes(rng: random.Random, used_pairs: set, codes: list[str],
                    places: list[str], name: str,
                    n_each: int = 2) -> list[_Scene]:
    """Extra coverage for a collision mononym used both ways.

    The perceiver can only type-disambiguate a surface it has seen as a
    PERSON and as a GPE elsewhere in training.
    """
    scenes = []
    for _ in range(n_each):
        while True:
            partner = f"{rng.choice(GIVEN_NAMES)} {rng.choice(SURNAMES)}"
            if frozenset((partner, name)) not in used_pairs:
                used_pairs.add(frozenset((partner, name)))
                break
        scenes.append(_Scene(
            persons=(partner, name), place=rng.choice(places),
            norp=rng.choice(NORPS),
            org=rng.choice(_org_pool()),
            codes=(rng.choice(codes), rng.choice(codes))))
    for _ in range(n_each):
        scene = _draw_scene(rng, used_pairs, codes, places)
        scene.place = name
        scenes.append(scene)
    return scenes


def _direction(embedder: HashTextEmbedder, surface: str, etype: str) -> np.ndarray:
    # sum of per-word vectors, so unseen word combinations stay decodable
    total = sum(embedder.embed_text(word, etype) for word in surface.split())
    return (total / np.linalg.norm(total)).astype(np.float32)


def _features(scene: _Scene, embedder: HashTextEmbedder, n_frames: int,
              noise_scale: float, rng: np.random.Generator) -> np.ndarray:
    directions = [_direction(embedder, surface, etype)
                  for etype, surfaces in scene.entity_set().items()
                  for surface in surfaces]
    if n_frames < len(directions):
        raise ValueError(f"{n_frames} frames cannot carry "
                         f"{len(directions)} entities")
    frames = [directions[i] for i in rng.permutation(len(directions))]
    while len(frames) < n_frames:  # leftover frames are clutter
        frames.append(np.zeros(embedder.dim, dtype=np.float32))
    noise = noise_scale * rng.standard_normal((n_frames, embedder.dim))
    return (np.stack(frames) + noise).astype(np.float32)


def _article(scene: _Scene, with_date: bool) -> tuple[str, list[str]]:
    date_tail = " on March 3, 2008" if with_date else ""
    bullets = [
        f"{scene.persons[0]} arrives in {scene.place}{date_tail}",
        f"{scene.persons[1]} greets {scene.norp} crowds",
        f"{scene.org} delegation attends the briefing",
    ]
    text = (f"{scene.place} summit coverage.\n"
            "Rundown of the broadcast:\n"
            + "\n".join(f"- {b}" for b in bullets)
            + "\nMore updates to follow.")
    return text, bullets


def _sample_dates(rng: random.Random, n: int, start: dt.date, end: dt.date) -> list[dt.date]:
    span = (end - start).days
    return [start + dt.timedelta(days=rng.randrange(span + 1)) for _ in range(n)]


def _build_inventory(scenes: list[_Scene]) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    typed: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    codes: list[str] = []
    code_seen: set[str] = set()
    for scene in scenes:
        for etype, surfaces in scene.entity_set().items():
            for surface in surfaces:
                if (surface, etype) not in seen:
                    seen.add((surface, etype))
                    typed.append((surface, etype))
        for code in scene.codes:
            if code not in code_seen:
                code_seen.add(code)
                codes.append(code)
    gazetteer = typed + [(c, "CODE") for c in codes]
    return typed, gazetteer


def _assemble(scenes: list[_Scene], dates: list[dt.date], config: SyntheticConfig,
              id_prefix: str, salt: str, date_every: int = 5,
              asr_every: int = 3) -> tuple[list[VideoSample], dict, dict, list]:
    embedder = HashTextEmbedder(config.feature_dim, salt=salt)
    noise_rng = np.random.default_rng(config.seed + 104729)
    samples: list[VideoSample] = []
    captions: dict[str, CaptionRecord] = {}
    entities: dict[str, EntitySet] = {}
    kb_entries: list[tuple[EntitySet, str]] = []
    for i, (scene, date) in enumerate(zip(scenes, dates)):
        sample_id = f"{id_prefix}{i:04d}"
        article, bullets = _article(scene, with_date=(i % date_every == 2))
        asr = (f"live remarks by {scene.persons[0]} in {scene.place}"
               if i % asr_every == 0 else None)
        samples.append(VideoSample(
            id=sample_id,
            source="synthetic-news",
            publish_date=date,
            title=f"{scene.place} summit bulletin",
            article_text=article,
            bullet_summaries=tuple(bullets),
            frame_features=_features(scene, embedder, config.n_frames,
                                     config.noise_scale, noise_rng),
            asr_text=asr,
        ))
        captions[sample_id] = CaptionRecord.from_text(
            sample_id, scene.caption(), CaptionOrigin.EVENT_DESCRIPTIONS)
        entities[sample_id] = scene.entity_set()
        kb_entries.append((scene.entity_set(), scene.passage()))
    return samples, captions, entities, kb_entries


def generate_corpus(config: SyntheticConfig = SyntheticConfig()) -> SyntheticDataset:
    """The main micro-corpus: unique scenes, collision twins included."""
    rng = random.Random(config.seed)
    codes = _code_pool(48)
    places = [f"{stem} {suffix}" for stem in PLACE_STEMS for suffix in PLACE_SUFFIXES[:2]]
    used_pairs: set = set()
    scenes: list[_Scene] = []
    for _ in range(config.n_collision_pairs):
        scenes.extend(_collision_twins(rng, used_pairs, codes, COLLISION_NAMES))
    for name in COLLISION_NAMES:
        scenes.extend(_support_scenes(rng, used_pairs, codes, places, name))
    while len(scenes) < config.n_samples:
        scenes.append(_draw_scene(rng, used_pairs, codes, places))
    rng.shuffle(scenes)
    dates = sorted(_sample_dates(rng, len(scenes), config.date_start, config.date_end))
    samples, captions, entities, kb_entries = _assemble(
        scenes, dates, config, id_prefix="vid", salt=DEFAULT_SALT)
    corpus = Corpus(samples=samples, captions=captions, entities=entities)
    inventory, gazetteer = _build_inventory(scenes)
    return SyntheticDataset(
        corpus=corpus,
        kb=MockKB(kb_entries, default_passage=DEFAULT_KB_PASSAGE),
        inventory=inventory,
        gazetteer=gazetteer,
    )


def generate_time_split_corpus(config: SyntheticConfig = SyntheticConfig(),
                               n_post: int = 40,
                               cutoff: dt.date = dt.date(2017, 1, 1)) -> SyntheticDataset:
    """Date-straddling corpus for the time-generalization study.

    Post-cutoff scenes recombine pre-cutoff person/NORP surfaces into
    unseen sets, while places, orgs, and code pairs are novel token
    combinations that only the knowledge base can supply; the KB holds
    entries for both sides, post-cutoff first.
    """
    rng = random.Random(config.seed + 7)
    # one code pool for both sides: the tokens recur, the pairings do not,
    # and a decoder can only produce tokens it has been trained to emit
    pre_codes = _code_pool(40)
    post_codes = pre_codes
    # post-cutoff places/orgs recombine words that all occur before the
    # cutoff; the pairings themselves never do. Reserving a quarter of the
    # grid keeps every word paired several ways pre-cutoff, so a trained
    # model cannot fall back on a fixed word-to-word transition.
    pre_places, post_places, pre_orgs, post_orgs = [], [], [], []
    for i, stem in enumerate(PLACE_STEMS):
        for j, suffix in enumerate(PLACE_SUFFIXES):
            held_out = (i + j) % 4 == 0
            ((post_places if held_out else pre_places)).append(f"{stem} {suffix}")
    for i, first in enumerate(ORG_FIRST):
        for j, second in enumerate(ORG_SECOND):
            held_out = (i + j) % 4 == 0
            ((post_orgs if held_out else pre_orgs)).append(f"{first} {second}")
    used_pairs: set = set()
    pre_scenes = [_draw_scene(rng, used_pairs, pre_codes, pre_places, pre_orgs)
                  for _ in range(config.n_samples)]
    post_scenes = [_draw_scene(rng, used_pairs, post_codes, post_places, post_orgs)
                   for _ in range(n_post)]
    pre_dates = sorted(_sample_dates(rng, len(pre_scenes),
                                     config.date_start, config.date_end))
    post_dates = sorted(_sample_dates(rng, len(post_scenes),
                                      dt.date(2018, 1, 10), dt.date(2018, 11, 20)))
    pre = _assemble(pre_scenes, pre_dates, config, id_prefix="pre", salt=DEFAULT_SALT)
    post = _assemble(post_scenes, post_dates, config, id_prefix="post", salt=DEFAULT_SALT)
    corpus = Corpus(samples=pre[0] + post[0],
                    captions={**pre[1], **post[1]},
                    entities={**pre[2], **post[2]})
    inventory, gazetteer = _build_inventory(pre_scenes + post_scenes)
    # post entries first: on equal overlap the newer article wins
    kb = MockKB(post[3] + pre[3], default_passage=DEFAULT_KB_PASSAGE)
    if not (pre_dates[-1] < cutoff <= post_dates[0]):
        raise ValueError("cutoff must fall between the two date clusters")
    return SyntheticDataset(corpus=corpus, kb=kb, inventory=inventory,
                            gazetteer=gazetteer)


def generate_noise_corpus(n_samples: int = 48, feature_dim: int = 16,
                          n_frames: int = 2, seed: int = 5) -> SyntheticDataset:
    """Control corpus where VI is uninformative by construction.

    Captions are drawn independently of entities and features are pure
    noise, so no ablation ordering should be expected of it.
    """
    rng = random.Random(seed)
    noise_rng = np.random.default_rng(seed + 1)
    generic = ["crowds gather downtown for the evening broadcast .",
               "officials hold a routine press briefing .",
               "the weekly report airs without incident .",
               "traffic resumes after a quiet afternoon ."]
    codes = _code_pool(12)
    places = [f"{stem} {suffix}" for stem in PLACE_STEMS[:4] for suffix in PLACE_SUFFIXES[:1]]
    used_pairs: set = set()
    samples = []
    captions = {}
    entities = {}
    kb_entries = []
    dates = sorted(_sample_dates(rng, n_samples, dt.date(2015, 1, 5), dt.date(2016, 12, 20)))
    for i in range(n_samples):
        scene = _draw_scene(rng, used_pairs, codes, places)
        sample_id = f"noise{i:04d}"
        article, bullets = _article(scene, with_date=False)
        samples.append(VideoSample(
            id=sample_id,
            source="synthetic-noise",
            publish_date=dates[i],
            title=f"{scene.place} bulletin",
            article_text=article,
            bullet_summaries=tuple(bullets),
            frame_features=noise_rng.standard_normal(
                (n_frames, feature_dim)).astype(np.float32),
            asr_text=None,
        ))
        captions[sample_id] = CaptionRecord.from_text(
            sample_id, rng.choice(generic), CaptionOrigin.EVENT_DESCRIPTIONS)
        entities[sample_id] = scene.entity_set()
        kb_entries.append((scene.entity_set(), scene.passage()))
    corpus = Corpus(samples=samples, captions=captions, entities=entities)
    typed = sorted({(s, t) for es in entities.values() for t, ss in es.items() for s in ss})
    inventory = list(typed)
    gazetteer = inventory + [(c, "CODE") for c in codes]
    return SyntheticDataset(corpus=corpus,
                            kb=MockKB(kb_entries, default_passage=DEFAULT_KB_PASSAGE),
                            inventory=inventory, gazetteer=gazetteer)
