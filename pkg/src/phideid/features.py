"""Binary per-token features: EHR, morphological, semantic, temporal, gazetteer, regex.

The catalog order below is the vector-layout contract serialized with every
model; ``docs/feature-catalog.md`` lists it with the regular expressions.
Multi-token patterns (regexes, decades, apostrophe years) are matched against
a window of up to three tokens on each side, rebuilt with the original gap
widths, and fire for every token the match overlaps.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import EhrMetadata
from .resources import resource_root
from .tokenizer import Token, TokenSequence

FAMILIES = ("ehr", "morphological", "semantic", "temporal", "gazetteer", "regex")

EHR_FEATURES = ("ehr_patient_first", "ehr_patient_last", "ehr_doctor_first", "ehr_doctor_last")
MORPH_FEATURES = (
    "ends_with_s", "first_letter_capitalized", "contains_digit", "is_numeric", "is_alphabetic",
    "is_alphanumeric", "is_title_case", "is_all_lower", "is_all_upper", "is_stop_word",
)
SEMANTIC_FLAGS = ("person_hypernym", "location_hypernym", "organization_hypernym", "polysemous")
SEMANTIC_FEATURES = (
    "has_person_hypernym", "has_location_hypernym", "has_organization_hypernym", "is_polysemous", "is_known_lemma",
)
TEMPORAL_FEATURES = (
    "season", "month", "weekday", "time_of_day", "year", "year_apostrophe", "festivity", "holiday",
    "cardinal_number", "decade", "fuzzy_quantifier", "future_trigger",
)
GAZETTEER_NAMES = (
    "honorifics_doctor", "honorifics", "medical_specialists", "medical_specialties", "first_names",
    "last_names", "last_name_prefixes", "street_suffixes", "us_cities", "us_states_and_abbrevs",
    "countries", "nationalities", "organizations", "professions",
)
GAZETTEER_FEATURES = tuple(f"gaz_{n}" for n in GAZETTEER_NAMES)
REGEX_FEATURES = ("re_email", "re_age", "re_date", "re_phone", "re_zip", "re_id_number", "re_mrn")

FAMILY_FEATURES = {
    "ehr": EHR_FEATURES,
    "morphological": MORPH_FEATURES,
    "semantic": SEMANTIC_FEATURES,
    "temporal": TEMPORAL_FEATURES,
    "gazetteer": GAZETTEER_FEATURES,
    "regex": REGEX_FEATURES,
}

MODES = {
    "none": (),
    "ehr_only": ("ehr",),
    "ehr": ("ehr",),
    "all": FAMILIES,
}

WINDOW = 3

_MONTH = (r"(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?"
          r"|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)")

# Phone numbers deliberately exclude extensions and separator-corrupted forms
# such as "617-554-|2395".
REGEX_PATTERNS: dict[str, tuple[re.Pattern, ...]] = {
    "re_email": (re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}"),),
    "re_age": (
        re.compile(r"(?i)(?<!\d)(?P<v>\d{1,3})\s*-?\s*(?:y/?o|years?\s*-?\s*old|yrs?\b|years?\b)"),
        re.compile(r"(?i)\b(?:age|aged)\s*:?\s*(?P<v>\d{1,3})(?!\d)"),
    ),
    "re_date": (
        re.compile(r"(?<!\d)\d{1,2}/\d{1,2}(?:/\d{2,4})?(?![\d/])"),
        re.compile(r"(?<!\d)\d{4}-\d{1,2}-\d{1,2}(?!\d)"),
        re.compile(r"(?<![\d-])\d{1,2}-\d{1,2}-\d{2,4}(?![\d-])"),
        re.compile(rf"(?i)\b{_MONTH}\.?\s+\d{{1,2}}(?:st|nd|rd|th)?(?:,?\s+\d{{4}})?(?!\d)"),
        re.compile(rf"(?i)(?<!\d)\d{{1,2}}\s+{_MONTH}\b\.?,?(?:\s+\d{{4}})?"),
        re.compile(rf"(?i)\b{_MONTH}\.?,?\s+\d{{4}}(?!\d)"),
    ),
    "re_phone": (re.compile(r"(?<!\d)(?:\(\d{3}\)\s?|\d{3}[-.\s])?\d{3}[-.]\d{4}(?!\d)"),),
    "re_zip": (re.compile(r"(?<![\d-])\d{5}(?:-\d{4})?(?![\d-])"),),
    "re_id_number": (re.compile(r"(?<!\d)\d{6,10}(?!\d)"),),
    "re_mrn": (
        re.compile(
            r"(?i)\b(?:mrn|medical\s+record(?:\s+(?:number|no|#))?|mr\s*#|unit\s+no)\s*[:#.]?\s*(?P<v>\d{6,10})(?!\d)"
        ),
    ),
}

YEAR_APOSTROPHE = re.compile(r"'(?P<v>\d{2})(?![\d])")
DECADE = re.compile(r"(?:(?<![\d'])\d{3}0|'\d0)'?s(?![A-Za-z])")


class FeatureError(ValueError):
    pass


# --- schema -------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureConfig:
    mode: str = "all"
    families: tuple[str, ...] | None = None


@dataclass(frozen=True)
class FeatureSchema:
    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise FeatureError("feature names must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    @property
    def families(self) -> list[str]:
        return [f for f in FAMILIES if any(fam == f for _, fam in self.entries)]

    def to_json(self) -> str:
        return json.dumps([list(e) for e in self.entries])

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        return cls(tuple((str(n), str(f)) for n, f in json.loads(text)))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]


def build_schema(config: FeatureConfig | str = "all") -> FeatureSchema:
    if isinstance(config, str):
        config = FeatureConfig(mode=config)
    if config.families is not None:
        families = tuple(config.families)
    elif config.mode in MODES:
        families = MODES[config.mode]
    else:
        raise FeatureError(f"unknown feature mode {config.mode!r}")
    unknown = [f for f in families if f not in FAMILY_FEATURES]
    if unknown:
        raise FeatureError(f"unknown feature family {unknown[0]!r}")
    entries = tuple((name, fam) for fam in FAMILIES if fam in families for name in FAMILY_FEATURES[fam])
    return FeatureSchema(entries)


CATALOG = build_schema("all")


# --- resources ----------------------------------------------------------------

def read_terms(path: Path) -> frozenset[str]:
    terms = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            terms.add(line.casefold())
    return frozenset(terms)


@dataclass(frozen=True)
class GazetteerSet:
    sets: dict[str, frozenset[str]]

    def __post_init__(self):
        missing = [n for n in GAZETTEER_NAMES if not self.sets.get(n)]
        if missing:
            raise FeatureError(f"gazetteer {missing[0]!r} is missing or empty")

    @classmethod
    def load(cls, directory: Path) -> "GazetteerSet":
        return cls({n: read_terms(directory / f"{n}.txt") for n in GAZETTEER_NAMES if (directory / f"{n}.txt").exists()})


@dataclass(frozen=True)
class TemporalLexicon:
    seasons: frozenset[str]
    months: frozenset[str]
    weekdays: frozenset[str]
    times_of_day: frozenset[str]
    festivities: frozenset[str]
    holidays: frozenset[str]
    fuzzy_quantifiers: frozenset[str]
    future_triggers: frozenset[str]
    number_words: frozenset[str]

    @classmethod
    def load(cls, directory: Path) -> "TemporalLexicon":
        return cls(**{f: read_terms(directory / f"{f}.txt") for f in cls.__dataclass_fields__})


@dataclass(frozen=True)
class SemanticLexicon:
    entries: dict[str, frozenset[str]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path) -> "SemanticLexicon":
        entries = {}
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            lemma, _, flags = line.partition("\t")
            found = frozenset(f.strip() for f in flags.split(",") if f.strip())
            bad = found - set(SEMANTIC_FLAGS)
            if bad:
                raise FeatureError(f"{path}:{lineno}: unknown semantic flag {sorted(bad)[0]!r}")
            entries[lemma.strip().casefold()] = found
        return cls(entries)

    def lookup(self, surface: str) -> frozenset[str] | None:
        key = surface.casefold()
        if key in self.entries:
            return self.entries[key]
        if len(key) > 3 and key.endswith("s") and key[:-1] in self.entries:
            return self.entries[key[:-1]]
        return None


@dataclass(frozen=True)
class Resources:
    gazetteers: GazetteerSet | None = None
    temporal: TemporalLexicon | None = None
    semantic: SemanticLexicon | None = None
    stopwords: frozenset[str] | None = None

    @classmethod
    def load(cls, root: str | Path | None = None) -> "Resources":
        root = Path(root) if root else resource_root()
        return cls(
            gazetteers=GazetteerSet.load(root / "gazetteers"),
            temporal=TemporalLexicon.load(root / "temporal"),
            semantic=SemanticLexicon.load(root / "semantic_lexicon.tsv"),
            stopwords=read_terms(root / "stopwords.txt"),
        )

    def check(self, schema: FeatureSchema) -> None:
        needs = {
            "morphological": self.stopwords,
            "semantic": self.semantic,
            "temporal": self.temporal,
            "gazetteer": self.gazetteers,
        }
        for fam in schema.families:
            if fam in needs and needs[fam] is None:
                raise FeatureError(f"feature family {fam!r} is scheduled but its resource is not loaded")


# --- per-family extractors -----------------------------------------------------

def extract_ehr(token: Token, meta: EhrMetadata) -> tuple[int, ...]:
    s = token.surface.casefold()
    return (
        int(s == meta.patient_first_name.casefold()),
        int(s == meta.patient_last_name.casefold()),
        int(any(s == n.casefold() for n in meta.doctor_first_names)),
        int(any(s == n.casefold() for n in meta.doctor_last_names)),
    )


def extract_morphological(token: Token, stopwords: Iterable[str] = frozenset()) -> tuple[int, ...]:
    s = token.surface
    return (
        int(s.lower().endswith("s")),
        int(s[:1].isupper()),
        int(any(c.isdigit() for c in s)),
        int(s.isdigit()),
        int(s.isalpha()),
        int(s.isalnum()),
        int(s.istitle()),
        int(s.islower()),
        int(s.isupper()),
        int(s.casefold() in stopwords),
    )


def extract_semantic(token: Token, lex: SemanticLexicon) -> tuple[int, ...]:
    flags = lex.lookup(token.surface)
    if flags is None:
        return (0,) * len(SEMANTIC_FEATURES)
    return tuple(int(f in flags) for f in SEMANTIC_FLAGS) + (1,)


def _window(token: Token, left: Sequence[Token], right: Sequence[Token]) -> tuple[str, int]:
    """Detokenized window text and the character offset of its first token."""
    toks = list(left) + [token] + list(right)
    base = toks[0].start
    parts = []
    pos = base
    for t in toks:
        parts.append(" " * (t.start - pos))
        parts.append(t.surface)
        pos = t.end
    return "".join(parts), base


def _fires(patterns: Iterable[re.Pattern], window: str, lo: int, hi: int) -> int:
    for pat in patterns:
        for m in pat.finditer(window):
            s, e = m.span("v") if "v" in pat.groupindex else m.span()
            if s < hi and lo < e:
                return 1
    return 0


def _year(s: str) -> int:
    return int(len(s) == 4 and s.isdigit() and 1900 <= int(s) <= 2099)


def extract_temporal(token: Token, lex: TemporalLexicon, left_context: Sequence[Token] = (),
                     right_context: Sequence[Token] = ()) -> tuple[int, ...]:
    s = token.surface.casefold()
    window, base = _window(token, left_context, right_context)
    lo, hi = token.start - base, token.end - base
    return (
        int(s in lex.seasons),
        int(s in lex.months),
        int(s in lex.weekdays),
        int(s in lex.times_of_day),
        _year(s),
        _fires((YEAR_APOSTROPHE,), window, lo, hi),
        int(s in lex.festivities),
        int(s in lex.holidays),
        int(s.isdigit() or s in lex.number_words),
        _fires((DECADE,), window, lo, hi),
        int(s in lex.fuzzy_quantifiers),
        int(s in lex.future_triggers),
    )


def extract_gazetteer(token: Token, gaz: GazetteerSet) -> tuple[int, ...]:
    s = token.surface.casefold()
    return tuple(int(s in gaz.sets[n]) for n in GAZETTEER_NAMES)


def extract_regex(token: Token, left_context: Sequence[Token] = (), right_context: Sequence[Token] = ()) -> tuple[int, ...]:
    window, base = _window(token, left_context, right_context)
    lo, hi = token.start - base, token.end - base
    return tuple(_fires(REGEX_PATTERNS[name], window, lo, hi) for name in REGEX_FEATURES)


# --- assembly -----------------------------------------------------------------

def context_window(tokens: Sequence[Token], i: int, size: int = WINDOW) -> tuple[Sequence[Token], Sequence[Token]]:
    """Neighbours of token ``i`` reaching ``size`` word tokens on each side.

    Separator tokens ("-", "(", "@" ...) lie inside the window without using
    up its budget, so a 5-token phone number is visible from its first digit.
    """
    lo, seen = i, 0
    while lo > 0 and seen < size:
        lo -= 1
        seen += tokens[lo].surface.isalnum()
    hi, seen = i + 1, 0
    while hi < len(tokens) and seen < size:
        seen += tokens[hi].surface.isalnum()
        hi += 1
    return tokens[lo:i], tokens[i + 1:hi]


def extract_family(family: str, tokens: Sequence[Token], i: int, meta: EhrMetadata, res: Resources) -> tuple[int, ...]:
    tok = tokens[i]
    if family == "ehr":
        return extract_ehr(tok, meta)
    if family == "morphological":
        return extract_morphological(tok, res.stopwords)
    if family == "semantic":
        return extract_semantic(tok, res.semantic)
    left, right = context_window(tokens, i)
    if family == "temporal":
        return extract_temporal(tok, res.temporal, left, right)
    if family == "gazetteer":
        return extract_gazetteer(tok, res.gazetteers)
    if family == "regex":
        return extract_regex(tok, left, right)
    raise FeatureError(f"unknown feature family {family!r}")


def extract_all(seq: TokenSequence | Sequence[Token], meta: EhrMetadata, schema: FeatureSchema,
                resources: Resources | None = None) -> list[np.ndarray]:
    """One uint8 vector per token laid out in schema order."""
    return list(feature_matrix(seq, meta, schema, resources).astype(np.uint8))


def feature_matrix(seq: TokenSequence | Sequence[Token], meta: EhrMetadata, schema: FeatureSchema,
                   resources: Resources | None = None) -> np.ndarray:
    tokens = seq.tokens if isinstance(seq, TokenSequence) else list(seq)
    resources = resources or Resources()
    resources.check(schema)
    out = np.zeros((len(tokens), len(schema)), dtype=np.float64)
    if not len(schema):
        return out
    families = schema.families
    col = {name: j for j, (name, _) in enumerate(schema.entries)}
    for i in range(len(tokens)):
        for fam in families:
            bits = extract_family(fam, tokens, i, meta, resources)
            for name, bit in zip(FAMILY_FEATURES[fam], bits):
                j = col.get(name)
                if j is not None:
                    out[i, j] = bit
    return out


def fired_names(vector: Sequence[int], schema: FeatureSchema) -> list[str]:
    return [name for name, bit in zip(schema.names, vector) if bit]
