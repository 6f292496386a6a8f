"""Synthetic doctor-patient conversations paired with styled note sections.

Each author writes notes with a set of phrasing choices (one variant per
style slot), a pronoun convention, and a small trigger lexicon: shorthand
phrases spoken in the conversation that stand for a boilerplate note
sentence. Authors in one hospital start from a shared hospital style and
re-draw a few slots in proportion to ``style_divergence``.

Transcripts carry no speaker tags. HPI content is recoverable from the
transcript; PE and AP notes additionally contain sentences that never
appear in the conversation.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .seeding import derive_seed, make_rng

SECTIONS = ("HPI", "PE", "AP")

# --------------------------------------------------------------------- lexicon

FIRST_NAMES = {
    "female": ["jane", "maria", "linda", "susan", "karen", "emily", "grace", "alice"],
    "male": ["john", "robert", "david", "james", "mark", "peter", "frank", "henry"],
}
AGES = [str(a) for a in range(22, 86, 3)]
SIDES = ["left", "right"]
BODY_PARTS = ["knee", "shoulder", "hip", "ankle", "wrist", "elbow", "back", "neck"]
SYMPTOMS = ["pain", "swelling", "stiffness", "weakness"]
DURATIONS = ["two weeks", "three weeks", "one month", "three months", "six months", "a year"]
CAUSES = {
    "a fall": "i fell",
    "lifting a heavy box": "i was lifting a heavy box",
    "playing basketball": "i was playing basketball",
    "a car accident": "i was in a car accident",
    "running": "i was out running",
    "no clear injury": "nothing really happened",
}
FINDINGS = {
    "pain": "tenderness to palpation",
    "swelling": "mild effusion",
    "stiffness": "limited range of motion",
    "weakness": "reduced strength",
}
DIAGNOSES = {
    "knee": "osteoarthritis", "shoulder": "rotator cuff tendinopathy", "hip": "trochanteric bursitis",
    "ankle": "lateral ankle sprain", "wrist": "tenosynovitis", "elbow": "lateral epicondylitis",
    "back": "lumbar strain", "neck": "cervical strain",
}
TREATMENTS = {
    "injection": ("a cortisone injection", "i think a cortisone shot would help"),
    "therapy": ("physical therapy twice weekly", "let us get you started with physical therapy"),
    "mri": ("an mri of the affected area", "i want to get an mri to look closer"),
    "brace": ("a brace and activity modification", "we can try a brace for now"),
}

SMALLTALK = [
    "how was your weekend",
    "the weather has been really nice lately",
    "did you catch the game last night",
    "traffic was terrible coming in today",
    "how are the grandkids doing",
    "sorry about the wait today we are running behind",
    "are you still working at the same place",
    "i love that jacket where did you get it",
]
EXAM_TALK = [
    "let me take a look at your {part}",
    "does it hurt when i press here",
    "push against my hand as hard as you can",
    "can you bend it for me",
    "okay now relax",
]
NARRATIVE = [
    "my {side} {part} has been really bothering me for about {duration}",
    "it started after {cause_talk}",
    "the {symptom} gets worse at night",
    "i have been taking ibuprofen but it does not help much",
]
FILLER_WORDS = ["um", "uh", "so", "yeah", "okay", "like", "right", "well"]

# Phrasing variants per style slot; {pron} etc. are filled per encounter.
STYLE_SLOTS: dict[str, list[str]] = {
    "hpi_open": [
        "{name} is a pleasant {age} year old {sex} who presents with {side} {part} {symptom}.",
        "patient is a {age} year old {sex} seen today for {side} {part} {symptom}.",
        "this is a {age} year old {sex} presenting for evaluation of {side} {part} {symptom}.",
        "{name} is a {age} year old {sex} here for a new problem of {side} {part} {symptom}.",
    ],
    "hpi_onset": [
        "{pron} reports the symptoms began {duration} ago after {cause}.",
        "symptoms started approximately {duration} ago following {cause}.",
        "onset was {duration} ago in the setting of {cause}.",
    ],
    "hpi_close": [
        "{pron} denies any numbness or tingling.",
        "{pron} has tried ice and rest without significant relief.",
        "no prior surgery or injections to this area.",
        "{pron} is otherwise in good health today.",
    ],
    "pe_general": [
        "patient is alert and oriented x3.",
        "general no acute distress well developed and well nourished.",
        "constitutional the patient is awake alert and cooperative.",
    ],
    "pe_exam": [
        "examination of the {side} {part} reveals {finding}.",
        "{side} {part} {finding} noted on exam.",
        "focused exam of the {side} {part} demonstrates {finding}.",
    ],
    "pe_extra": [
        "skin is warm and dry with no lesions.",
        "sensation is intact distally with brisk capillary refill.",
        "strength is 5 out of 5 in all other muscle groups.",
        "gait is normal and nonantalgic.",
    ],
    "pe_extra2": [
        "mood and affect are appropriate.",
        "distal pulses are 2 plus and symmetric.",
        "no lymphadenopathy is appreciated.",
    ],
    "ap_assess": [
        "assessment {side} {part} {diagnosis}.",
        "impression is {diagnosis} of the {side} {part}.",
        "{diagnosis} {side} {part} consistent with exam findings.",
    ],
    "ap_plan": [
        "plan {treatment}.",
        "we will proceed with {treatment}.",
        "recommend {treatment} at this time.",
    ],
    "ap_implicit": [
        "risks and benefits were discussed and all questions were answered.",
        "the patient verbalized understanding and agreement with the plan.",
        "return precautions were reviewed in detail.",
        "home exercise program was provided and reviewed.",
    ],
}

# Trigger phrase -> (section, boilerplate). {poss} is filled per encounter.
TRIGGER_POOL: dict[str, tuple[str, str]] = {
    "three month populate smith check": (
        "AP", "the patient will follow up with john smith np c in 3 months to review {poss} progress."),
    "six week recheck jones": ("AP", "follow up with dr jones in 6 weeks for repeat evaluation."),
    "add cortisone injection follow up": (
        "AP", "the patient will return after the cortisone injection for reassessment."),
    "two week wound check": ("AP", "return in 2 weeks for wound check and suture removal."),
    "standard xray order": ("PE", "xrays of the affected joint were obtained and reviewed today."),
    "populate normal neuro": ("PE", "neurovascular exam is otherwise within normal limits."),
    "populate bilateral compare": ("PE", "the contralateral side was examined for comparison and is normal."),
    "work note standard": ("AP", "a work note was provided with light duty restrictions."),
}

PRONOUNS = {
    ("gendered", "female"): ("she", "her"),
    ("gendered", "male"): ("he", "his"),
    ("neutral", "female"): ("the patient", "the patient s"),
    ("neutral", "male"): ("the patient", "the patient s"),
}


# --------------------------------------------------------------------- types

@dataclass
class StyleProfile:
    author: str
    hospital: str
    trigger_lexicon: dict[str, str]
    pronoun_mode: str
    section_templates: dict[str, str]
    smalltalk_rate: float
    implicit_phrases: dict[str, list[str]]
    trigger_sections: dict[str, str] = field(default_factory=dict)
    noise_rate: float = 0.1

    def validate(self) -> None:
        if not 0.0 <= self.smalltalk_rate <= 1.0:
            raise ValueError("smalltalk_rate must lie in [0, 1]")
        if any(not t.strip() for t in self.trigger_lexicon):
            raise ValueError("empty trigger phrase")
        if self.pronoun_mode not in ("gendered", "neutral"):
            raise ValueError(f"unknown pronoun mode {self.pronoun_mode}")

    def inventory(self) -> set[tuple[str, str]]:
        """(slot, choice) pairs, including triggers, used for overlap checks."""
        inv = set(self.section_templates.items())
        inv |= {("trigger", t) for t in self.trigger_lexicon}
        return inv

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StyleProfile":
        return cls(**d)


@dataclass
class EncounterRecord:
    record_id: str
    author: str
    hospital: str
    transcript: str
    notes: dict[str, str]
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncounterRecord":
        return cls(**d)


@dataclass
class SplitCounts:
    n_train_authors: int = 12
    n_train_hospitals: int = 4
    n_new_authors: int = 4
    new_shared_fraction: float = 0.5
    train_per_author: int = 24
    validation_per_author: int = 2
    evaluation_per_author: int = 3
    adapt_per_author: int = 20
    test_adapt_per_author: int = 40

    @classmethod
    def paper_shaped(cls) -> "SplitCounts":
        # 21k train / 1.3k val / 1.4k eval conversations over 62 authors, 10 new authors
        # (6 sharing a training hospital), 20 adapt pairs and ~70 test-adapt pairs each.
        return cls(n_train_authors=62, n_train_hospitals=27, n_new_authors=10,
                   new_shared_fraction=0.6, train_per_author=340, validation_per_author=21,
                   evaluation_per_author=23, adapt_per_author=20, test_adapt_per_author=71)

    @property
    def n_new_shared(self) -> int:
        return int(round(self.new_shared_fraction * self.n_new_authors))


@dataclass
class DatasetSplits:
    train: list[EncounterRecord]
    validation: list[EncounterRecord]
    evaluation: list[EncounterRecord]
    adapt: list[EncounterRecord]
    test_adapt: list[EncounterRecord]
    train_authors: list[str]
    new_authors: list[str]

    SPLIT_NAMES = ("train", "validation", "evaluation", "adapt", "test_adapt")

    def split(self, name: str) -> list[EncounterRecord]:
        if name not in self.SPLIT_NAMES:
            raise KeyError(f"unknown split {name}")
        return getattr(self, name)

    def by_author(self, name: str) -> dict[str, list[EncounterRecord]]:
        out: dict[str, list[EncounterRecord]] = {}
        for rec in self.split(name):
            out.setdefault(rec.author, []).append(rec)
        return out

    def check(self, adapt_per_author: int | None = None) -> None:
        train = set(self.train_authors)
        new = set(self.new_authors)
        if train & new:
            raise ValueError("new authors overlap training authors")
        for name in ("validation", "evaluation"):
            if not {r.author for r in self.split(name)} <= train:
                raise ValueError(f"{name} contains authors unseen in training")
        for name in ("adapt", "test_adapt"):
            if {r.author for r in self.split(name)} != new:
                raise ValueError(f"{name} authors differ from the new-author list")
        if adapt_per_author is not None:
            for author, recs in self.by_author("adapt").items():
                if len(recs) != adapt_per_author:
                    raise ValueError(f"adapt has {len(recs)} records for {author}")


# --------------------------------------------------------------------- profiles

def hospital_style(hospital: str, seed: int) -> dict:
    rng = make_rng(seed, "hospital", hospital)
    templates = {slot: variants[int(rng.integers(len(variants)))] for slot, variants in STYLE_SLOTS.items()}
    triggers = [str(t) for t in rng.choice(sorted(TRIGGER_POOL), size=2, replace=False)]
    pronoun = "neutral" if rng.random() < 0.5 else "gendered"
    return {"templates": templates, "triggers": triggers, "pronoun_mode": pronoun}


def n_perturbed_slots(style_divergence: float) -> int:
    # At most a quarter of the inventory changes per author, so any two authors
    # of one hospital still share at least half of it.
    total = len(STYLE_SLOTS) + 2
    return int(math.floor(style_divergence * total / 4))


def author_profile(author: str, hospital: str, style_divergence: float, seed: int,
                   noise_rate: float = 0.1) -> StyleProfile:
    if not 0.0 <= style_divergence <= 1.0:
        raise ValueError("style_divergence must lie in [0, 1]")
    base = hospital_style(hospital, seed)
    rng = make_rng(seed, "author", author)
    templates = dict(base["templates"])
    triggers = list(base["triggers"])
    slots = sorted(STYLE_SLOTS) + ["trigger:0", "trigger:1"]
    k = n_perturbed_slots(style_divergence)
    for slot in rng.choice(slots, size=k, replace=False):
        slot = str(slot)
        if slot.startswith("trigger:"):
            i = int(slot.split(":")[1])
            options = [t for t in sorted(TRIGGER_POOL) if t not in triggers]
            triggers[i] = options[int(rng.integers(len(options)))]
        else:
            options = [v for v in STYLE_SLOTS[slot] if v != templates[slot]]
            templates[slot] = options[int(rng.integers(len(options)))]
    implicit = {
        "PE": [templates["pe_general"], templates["pe_extra"], templates["pe_extra2"]],
        "AP": [templates["ap_implicit"]],
    }
    profile = StyleProfile(
        author=author,
        hospital=hospital,
        trigger_lexicon={t: TRIGGER_POOL[t][1] for t in triggers},
        trigger_sections={t: TRIGGER_POOL[t][0] for t in triggers},
        pronoun_mode=base["pronoun_mode"],
        section_templates=templates,
        smalltalk_rate=float(np.round(rng.uniform(0.1, 0.6), 3)),
        implicit_phrases=implicit,
        noise_rate=noise_rate,
    )
    profile.validate()
    return profile


def make_profiles(n_authors: int, n_hospitals: int, style_divergence: float, seed: int,
                  author_prefix: str = "author", hospital_prefix: str = "hosp",
                  start: int = 0, noise_rate: float = 0.1) -> list[StyleProfile]:
    """Profiles with hospitals assigned round-robin; deterministic in ``seed``."""
    if n_hospitals <= 0:
        raise ValueError("n_hospitals must be positive")
    if n_hospitals > n_authors:
        raise ValueError("more hospitals than authors")
    return [
        author_profile(f"{author_prefix}_{start + i:02d}", f"{hospital_prefix}_{i % n_hospitals:02d}",
                       style_divergence, seed, noise_rate)
        for i in range(n_authors)
    ]


def make_population(counts: SplitCounts, style_divergence: float, seed: int,
                    noise_rate: float = 0.1) -> list[StyleProfile]:
    """Training profiles followed by new-author profiles.

    The first ``counts.n_new_shared`` new authors join training hospitals;
    the rest each come from a hospital absent from training.
    """
    train = make_profiles(counts.n_train_authors, counts.n_train_hospitals, style_divergence, seed,
                          noise_rate=noise_rate)
    new = []
    for j in range(counts.n_new_authors):
        name = f"new_{j:02d}"
        if j < counts.n_new_shared:
            hospital = f"hosp_{j % counts.n_train_hospitals:02d}"
        else:
            hospital = f"hosp_{counts.n_train_hospitals + j - counts.n_new_shared:02d}"
        new.append(author_profile(name, hospital, style_divergence, seed, noise_rate))
    return train + new


# --------------------------------------------------------------------- encounters

def _fill(template: str, slots: dict) -> str:
    return template.format(**slots)


def _noisy(words: list[str], rate: float, rng: np.random.Generator) -> list[str]:
    out = []
    for w in words:
        u = rng.random()
        if u < rate / 2:
            continue
        if u < rate:
            out.append(FILLER_WORDS[int(rng.integers(len(FILLER_WORDS)))])
        else:
            out.append(w)
    return out


def synth_encounter(profile: StyleProfile, seed: int, record_id: str = "") -> EncounterRecord:
    """One conversation/note triple; a pure function of (profile, seed)."""
    rng = make_rng(seed, "encounter")
    sex = "female" if rng.random() < 0.5 else "male"
    pron, poss = PRONOUNS[(profile.pronoun_mode, sex)]
    part = BODY_PARTS[int(rng.integers(len(BODY_PARTS)))]
    symptom = SYMPTOMS[int(rng.integers(len(SYMPTOMS)))]
    cause = sorted(CAUSES)[int(rng.integers(len(CAUSES)))]
    treatment_key = sorted(TREATMENTS)[int(rng.integers(len(TREATMENTS)))]
    treatment, treatment_talk = TREATMENTS[treatment_key]
    slots = {
        "name": FIRST_NAMES[sex][int(rng.integers(len(FIRST_NAMES[sex])))],
        "age": AGES[int(rng.integers(len(AGES)))],
        "sex": sex,
        "side": SIDES[int(rng.integers(2))],
        "part": part,
        "symptom": symptom,
        "duration": DURATIONS[int(rng.integers(len(DURATIONS)))],
        "cause": cause,
        "cause_talk": CAUSES[cause],
        "finding": FINDINGS[symptom],
        "diagnosis": DIAGNOSES[part],
        "treatment": treatment,
        "pron": pron,
        "poss": poss,
    }
    used_triggers = [t for t in sorted(profile.trigger_lexicon) if rng.random() < 0.6]

    # Transcript segments: (text, protected from noise?)
    segments: list[tuple[str, bool]] = []
    n_small = int(rng.binomial(3, profile.smalltalk_rate))
    for i in rng.choice(len(SMALLTALK), size=n_small, replace=False):
        segments.append((SMALLTALK[int(i)], False))
    segments.append((_fill("{name} is a {age} year old {sex}", slots), False))
    for line in NARRATIVE:
        segments.append((_fill(line, slots), False))
    n_exam = int(rng.integers(2, len(EXAM_TALK) + 1))
    for line in EXAM_TALK[:n_exam]:
        segments.append((_fill(line, slots), False))
    segments.append((treatment_talk, False))
    for t in used_triggers:
        segments.append((t, True))
    words: list[str] = []
    for text, protected in segments:
        w = text.split()
        words.extend(w if protected else _noisy(w, profile.noise_rate, rng))
    transcript = " ".join(words)

    tpl = profile.section_templates
    notes = {
        "HPI": " ".join(_fill(tpl[s], slots) for s in ("hpi_open", "hpi_onset", "hpi_close")),
        "PE": " ".join(_fill(tpl[s], slots) for s in ("pe_general", "pe_exam", "pe_extra", "pe_extra2")),
        "AP": " ".join(_fill(tpl[s], slots) for s in ("ap_assess", "ap_plan", "ap_implicit")),
    }
    for t in used_triggers:
        section = profile.trigger_sections.get(t, TRIGGER_POOL[t][0])
        notes[section] = notes[section] + " " + _fill(profile.trigger_lexicon[t], slots)
    return EncounterRecord(record_id, profile.author, profile.hospital, transcript, notes, int(seed))


# --------------------------------------------------------------------- splits

def make_splits(profiles: Sequence[StyleProfile], counts: SplitCounts, seed: int) -> DatasetSplits:
    """Generate every split; the last ``counts.n_new_authors`` profiles are the new authors."""
    if counts.n_new_authors < 1 or counts.n_new_authors >= len(profiles):
        raise ValueError("new-author count must be positive and below the number of authors")
    per_author = (counts.train_per_author, counts.validation_per_author, counts.evaluation_per_author,
                  counts.adapt_per_author, counts.test_adapt_per_author)
    if min(per_author) < 1:
        raise ValueError("all per-author record counts must be positive")
    train_profiles = list(profiles[: len(profiles) - counts.n_new_authors])
    new_profiles = list(profiles[len(profiles) - counts.n_new_authors:])
    names = [p.author for p in profiles]
    if len(set(names)) != len(names):
        raise ValueError("duplicate author names")

    def gen(split: str, plist: Iterable[StyleProfile], k: int) -> list[EncounterRecord]:
        out = []
        for p in plist:
            for i in range(k):
                rid = f"{split}/{p.author}/{i:03d}"
                out.append(synth_encounter(p, derive_seed(seed, rid), rid))
        return out

    splits = DatasetSplits(
        train=gen("train", train_profiles, counts.train_per_author),
        validation=gen("validation", train_profiles, counts.validation_per_author),
        evaluation=gen("evaluation", train_profiles, counts.evaluation_per_author),
        adapt=gen("adapt", new_profiles, counts.adapt_per_author),
        test_adapt=gen("test_adapt", new_profiles, counts.test_adapt_per_author),
        train_authors=[p.author for p in train_profiles],
        new_authors=[p.author for p in new_profiles],
    )
    splits.check(counts.adapt_per_author)
    return splits


# --------------------------------------------------------------------- persistence

def write_jsonl(records: Iterable[EncounterRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    tmp.replace(path)


def read_jsonl(path: str | Path) -> list[EncounterRecord]:
    with open(path, encoding="utf-8") as fh:
        return [EncounterRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def save_splits(splits: DatasetSplits, data_dir: str | Path, meta: dict | None = None) -> Path:
    """Write one JSONL file per split plus ``splits.json`` listing record ids."""
    data_dir = Path(data_dir)
    for name in DatasetSplits.SPLIT_NAMES:
        write_jsonl(splits.split(name), data_dir / f"{name}.jsonl")
    manifest = {
        "splits": {name: [r.record_id for r in splits.split(name)] for name in DatasetSplits.SPLIT_NAMES},
        "train_authors": splits.train_authors,
        "new_authors": splits.new_authors,
        "meta": meta or {},
    }
    path = data_dir / "splits.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    tmp.replace(path)
    return path


def load_splits(data_dir: str | Path) -> DatasetSplits:
    data_dir = Path(data_dir)
    manifest_path = data_dir / "splits.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing split manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    parts = {}
    for name in DatasetSplits.SPLIT_NAMES:
        path = data_dir / f"{name}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"missing split: {path}")
        recs = read_jsonl(path)
        if [r.record_id for r in recs] != manifest["splits"][name]:
            raise ValueError(f"split {name} does not match its manifest")
        parts[name] = recs
    return DatasetSplits(**parts, train_authors=manifest["train_authors"], new_authors=manifest["new_authors"])
