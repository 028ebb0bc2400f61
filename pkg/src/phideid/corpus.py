"""Annotated notes with EHR sidecars: loading, writing, splitting, generation.

On disk a corpus is a directory of triples::

    <doc_id>.txt        UTF-8 note text
    <doc_id>.ann        PHI_TYPE<TAB>start<TAB>end<TAB>surface, one per line
    <doc_id>.meta.json  patient_first_name, patient_last_name,
                        doctor_first_names[], doctor_last_names[]
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .neural.rng import Rng
from .resources import resource_root


class CorpusError(ValueError):
    pass


class PhiType(str, Enum):
    ZIP = "Zip"
    DATE = "Date"
    PHONE = "Phone"
    PATIENT = "Patient"
    ID = "ID"
    DOCTOR = "Doctor"
    LOCATION = "Location"
    AGE = "Age"
    HOSPITAL = "Hospital"
    STATE = "State"
    STREET = "Street"
    COUNTRY = "Country"

    @property
    def hipaa_required(self) -> bool:
        return self not in _NOT_HIPAA

    @classmethod
    def parse(cls, name: str) -> "PhiType":
        key = name.strip().lower()
        for t in cls:
            if t.value.lower() == key:
                return t
        raise CorpusError(f"unknown PHI type {name!r}")


_NOT_HIPAA = frozenset({PhiType.DOCTOR, PhiType.HOSPITAL, PhiType.STATE, PhiType.COUNTRY})
PHI_TYPES: tuple[PhiType, ...] = tuple(PhiType)


@dataclass(frozen=True)
class Annotation:
    phi_type: PhiType
    start: int
    end: int
    surface: str


@dataclass(frozen=True)
class EhrMetadata:
    patient_first_name: str
    patient_last_name: str
    doctor_first_names: frozenset[str] = frozenset()
    doctor_last_names: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.patient_first_name or not self.patient_last_name:
            raise CorpusError("patient names must be nonempty")
        object.__setattr__(self, "doctor_first_names", frozenset(self.doctor_first_names))
        object.__setattr__(self, "doctor_last_names", frozenset(self.doctor_last_names))

    def to_json(self) -> str:
        obj = {
            "patient_first_name": self.patient_first_name,
            "patient_last_name": self.patient_last_name,
            "doctor_first_names": sorted(self.doctor_first_names),
            "doctor_last_names": sorted(self.doctor_last_names),
        }
        return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EhrMetadata":
        obj = json.loads(text)
        try:
            return cls(
                obj["patient_first_name"],
                obj["patient_last_name"],
                frozenset(obj["doctor_first_names"]),
                frozenset(obj["doctor_last_names"]),
            )
        except KeyError as exc:
            raise CorpusError(f"metadata is missing key {exc}") from None


@dataclass
class Document:
    doc_id: str
    text: str
    annotations: list[Annotation]
    metadata: EhrMetadata

    def __post_init__(self):
        self.annotations = validate_annotations(self.doc_id, self.text, self.annotations)


@dataclass
class DatasetSplit:
    train: list[str]
    validation: list[str]
    test: list[str]

    def to_json(self) -> str:
        return json.dumps({"train": self.train, "validation": self.validation, "test": self.test}, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetSplit":
        obj = json.loads(text)
        return cls(list(obj["train"]), list(obj["validation"]), list(obj["test"]))


def validate_annotations(doc_id: str, text: str, annotations: Iterable[Annotation]) -> list[Annotation]:
    """Sorted annotations; raises on range, surface or overlap violations."""
    anns = sorted(annotations, key=lambda a: (a.start, a.end))
    prev_end = -1
    for a in anns:
        if a.start >= 0 and text[a.start:a.end] != a.surface:
            raise CorpusError(
                f"{doc_id}: annotation [{a.start}, {a.end}) surface {a.surface!r} "
                f"does not match text {text[a.start:a.end]!r}"
            )
        if not 0 <= a.start < a.end <= len(text):
            raise CorpusError(f"{doc_id}: annotation [{a.start}, {a.end}) out of range for text of length {len(text)}")
        if a.start < prev_end:
            raise CorpusError(f"{doc_id}: annotation [{a.start}, {a.end}) overlaps the previous one ending at {prev_end}")
        prev_end = a.end
    return anns


def parse_ann(doc_id: str, content: str) -> list[Annotation]:
    anns = []
    for lineno, line in enumerate(content.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise CorpusError(f"{doc_id}.ann:{lineno}: expected 4 tab-separated fields")
        kind, start, end, surface = parts
        try:
            s, e = int(start), int(end)
        except ValueError:
            raise CorpusError(f"{doc_id}.ann:{lineno}: offsets must be integers") from None
        anns.append(Annotation(PhiType.parse(kind), s, e, surface))
    return anns


def format_ann(annotations: Iterable[Annotation]) -> str:
    lines = []
    for a in sorted(annotations, key=lambda a: (a.start, a.end)):
        if "\t" in a.surface or "\n" in a.surface:
            raise CorpusError(f"annotation surface {a.surface!r} cannot be written on one line")
        lines.append(f"{a.phi_type.value}\t{a.start}\t{a.end}\t{a.surface}\n")
    return "".join(lines)


def read_text(path: Path) -> str:
    # newline="" keeps CRLF intact so offsets index the file as written
    with open(path, encoding="utf-8", newline="") as fh:
        return fh.read()


def load_corpus(notes_dir: str | Path, require_annotations: bool = True) -> list[Document]:
    """Read ``<id>.txt`` notes with their sidecars, sorted by doc id.

    With ``require_annotations=False`` a missing ``.ann`` means no gold spans
    (unlabeled notes for prediction); the metadata sidecar is always required.
    """
    notes_dir = Path(notes_dir)
    if not notes_dir.is_dir():
        raise CorpusError(f"{notes_dir} is not a directory")
    docs = []
    for txt in sorted(notes_dir.glob("*.txt")):
        doc_id = txt.name[:-4]
        ann_path = notes_dir / f"{doc_id}.ann"
        meta_path = notes_dir / f"{doc_id}.meta.json"
        required = (ann_path, meta_path) if require_annotations else (meta_path,)
        for p in required:
            if not p.exists():
                raise CorpusError(f"{doc_id}: missing sidecar {p.name}")
        text = read_text(txt)
        anns = parse_ann(doc_id, ann_path.read_text(encoding="utf-8")) if ann_path.exists() else []
        meta = EhrMetadata.from_json(meta_path.read_text(encoding="utf-8"))
        docs.append(Document(doc_id, text, anns, meta))
    return docs


def write_document(doc: Document, out_dir: Path) -> None:
    with open(out_dir / f"{doc.doc_id}.txt", "w", encoding="utf-8", newline="") as fh:
        fh.write(doc.text)
    (out_dir / f"{doc.doc_id}.ann").write_text(format_ann(doc.annotations), encoding="utf-8")
    (out_dir / f"{doc.doc_id}.meta.json").write_text(doc.metadata.to_json(), encoding="utf-8")


def write_corpus(docs: Iterable[Document], out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seen = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise CorpusError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        write_document(doc, out_dir)
    return out_dir


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """Validation and test get floor(n * f); train takes the remainder."""
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, validation, test)")
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"fraction {f} outside [0, 1]")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, expected 1")
    n_val = math.floor(n * fractions[1] + 1e-9)
    n_test = math.floor(n * fractions[2] + 1e-9)
    return n - n_val - n_test, n_val, n_test


def split_corpus(corpus: Sequence[Document] | Sequence[str], fractions=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetSplit:
    """Document-level seeded split.

    Doc ids are sorted, permuted by Fisher-Yates under ``Rng(seed)`` and cut
    into train / validation / test in that order.
    """
    ids = sorted(d if isinstance(d, str) else d.doc_id for d in corpus)
    if not ids:
        raise ValueError("cannot split an empty corpus")
    if len(set(ids)) != len(ids):
        raise CorpusError("doc_ids must be unique")
    n_train, n_val, _ = split_sizes(len(ids), fractions)
    order = Rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return DatasetSplit(
        sorted(shuffled[:n_train]),
        sorted(shuffled[n_train:n_train + n_val]),
        sorted(shuffled[n_train + n_val:]),
    )


# synthetic generation -------------------------------------------------------

_SLOT = re.compile(r"\{([A-Z_]+)\}")

# slot -> PHI type; every other slot draws an unannotated filler from pools/
SLOT_TYPES = {
    "PATIENT_FIRST": PhiType.PATIENT,
    "PATIENT_LAST": PhiType.PATIENT,
    "DOCTOR_FIRST": PhiType.DOCTOR,
    "DOCTOR_LAST": PhiType.DOCTOR,
    "DATE": PhiType.DATE,
    "PHONE": PhiType.PHONE,
    "ZIP": PhiType.ZIP,
    "ID": PhiType.ID,
    "LOCATION": PhiType.LOCATION,
    "AGE": PhiType.AGE,
    "HOSPITAL": PhiType.HOSPITAL,
    "STATE": PhiType.STATE,
    "STREET": PhiType.STREET,
    "COUNTRY": PhiType.COUNTRY,
}

# Body-sentence group weights; roughly follow the per-type support of real
# discharge summaries (dates dominate, then clinician names, phones, hospitals).
DEFAULT_GROUP_WEIGHTS = {
    "Date": 30.0, "Doctor": 12.0, "Phone": 5.0, "Hospital": 5.0, "ID": 3.0, "Location": 3.0,
    "Patient": 6.0, "Age": 1.5, "State": 1.5, "Street": 1.5, "Zip": 1.5, "Country": 1.5, "None": 40.0,
}


@dataclass
class GenProfile:
    group_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_GROUP_WEIGHTS))
    min_body_sentences: int = 6
    max_body_sentences: int = 10
    extra_ehr_doctors: int = 2
    template_dir: Path | None = None


@dataclass
class TemplateBank:
    header: list[str]
    body: list[tuple[str, str]]
    footer: list[str]
    pools: dict[str, list[str]]

    @classmethod
    def load(cls, root: Path | None = None) -> "TemplateBank":
        root = Path(root) if root else resource_root() / "synth"
        sections: dict[str, list[str]] = {"header": [], "body": [], "footer": []}
        current = None
        for raw in (root / "templates.txt").read_text(encoding="utf-8").splitlines():
            if not raw.strip() or raw.startswith("#"):
                continue
            m = re.fullmatch(r"\[(\w+)\]", raw.strip())
            if m:
                current = m.group(1)
                if current not in sections:
                    raise CorpusError(f"unknown template section [{current}]")
                continue
            if current is None:
                raise CorpusError("template line outside a section")
            sections[current].append(raw)
        body = []
        for line in sections["body"]:
            group, _, tmpl = line.partition("\t")
            if group != "None":
                PhiType.parse(group)
            body.append((group, tmpl))
        pools = {}
        for p in sorted((root / "pools").glob("*.txt")):
            pools[p.stem.upper()] = [
                ln.strip() for ln in p.read_text(encoding="utf-8").splitlines() if ln.strip() and not ln.startswith("#")
            ]
        return cls(sections["header"], body, sections["footer"], pools)

    def groups(self) -> list[str]:
        return sorted({g for g, _ in self.body})


@dataclass(frozen=True)
class InjectedValue:
    """A PHI value written into a generated note, before span merging."""

    slot: str
    phi_type: PhiType
    start: int
    end: int


class _NoteBuilder:
    def __init__(self, rng: Rng, bank: TemplateBank, patient: tuple[str, str], doctors: list[tuple[str, str]]):
        self.rng = rng
        self.bank = bank
        self.patient = patient
        self.doctors = doctors
        self.parts: list[str] = []
        self.length = 0
        self.annotations: list[Annotation] = []
        self.injected: list[InjectedValue] = []

    def _emit(self, s: str) -> None:
        self.parts.append(s)
        self.length += len(s)

    def _value(self, slot: str, doctor: tuple[str, str]) -> str:
        if slot == "PATIENT_FIRST":
            return self.patient[0]
        if slot == "PATIENT_LAST":
            return self.patient[1]
        if slot == "DOCTOR_FIRST":
            return doctor[0]
        if slot == "DOCTOR_LAST":
            return doctor[1]
        gen = _GENERATED.get(slot)
        if gen is not None:
            return gen(self.rng, self.bank.pools)
        pool = self.bank.pools.get(slot)
        if not pool:
            raise CorpusError(f"template slot {{{slot}}} has no pool file")
        return self.rng.choice(pool)

    def line(self, template: str) -> None:
        doctor = self.rng.choice(self.doctors)
        pos = 0
        pending: Annotation | None = None
        for m in _SLOT.finditer(template):
            literal = template[pos:m.start()]
            if pending is not None and not (literal.strip() == "" and SLOT_TYPES.get(m.group(1)) == pending.phi_type):
                self.annotations.append(pending)
                pending = None
            self._emit(literal)
            value = self._value(m.group(1), doctor)
            start = self.length
            self._emit(value)
            kind = SLOT_TYPES.get(m.group(1))
            if kind is not None:
                self.injected.append(InjectedValue(m.group(1), kind, start, self.length))
                if pending is not None:
                    # adjacent same-type values separated by blanks form one span
                    pending = Annotation(kind, pending.start, self.length, "")
                else:
                    pending = Annotation(kind, start, self.length, "")
            pos = m.end()
        if pending is not None:
            self.annotations.append(pending)
        self._emit(template[pos:] + "\n")

    def finish(self) -> tuple[str, list[Annotation]]:
        text = "".join(self.parts)
        anns = [Annotation(a.phi_type, a.start, a.end, text[a.start:a.end]) for a in self.annotations]
        return text, anns


_MONTHS = ["January", "February", "March", "April", "May", "June", "July", "August",
           "September", "October", "November", "December"]


def _gen_date(rng: Rng, pools) -> str:
    y, m, d = 1990 + rng.randbelow(31), 1 + rng.randbelow(12), 1 + rng.randbelow(28)
    style = rng.randbelow(6)
    if style == 0:
        return f"{m}/{d}/{y}"
    if style == 1:
        return f"{y}-{m:02d}-{d:02d}"
    if style == 2:
        return f"{_MONTHS[m - 1]} {d}, {y}"
    if style == 3:
        return f"{m}/{d}"
    if style == 4:
        return f"{_MONTHS[m - 1][:3]} {d}"
    return f"{m:02d}/{d:02d}/{y % 100:02d}"


def _digits(rng: Rng, n: int) -> str:
    return "".join(str(rng.randbelow(10)) for _ in range(n))


def _gen_phone(rng: Rng, pools) -> str:
    area = rng.choice(["617", "508", "781", "978", "413", "339", "857"])
    body = f"{2 + rng.randbelow(8)}{_digits(rng, 2)}"
    last = _digits(rng, 4)
    style = rng.randbelow(20)
    if style < 10:
        return f"{area}-{body}-{last}"
    if style < 15:
        return f"({area}) {body}-{last}"
    if style < 18:
        return f"{area}.{body}.{last}"
    if style < 19:
        return f"{area}-{body}-{last} ext {_digits(rng, 4)}"
    return f"{area}-{body}-|{last}"


def _gen_zip(rng: Rng, pools) -> str:
    z = "0" + _digits(rng, 4)
    return z if rng.randbelow(5) else f"{z}-{_digits(rng, 4)}"


def _gen_id(rng: Rng, pools) -> str:
    return str(1 + rng.randbelow(9)) + _digits(rng, 5 + rng.randbelow(4))


def _gen_age(rng: Rng, pools) -> str:
    return str(90 + rng.randbelow(14))


def _gen_young_age(rng: Rng, pools) -> str:
    return str(18 + rng.randbelow(72))


def _gen_street(rng: Rng, pools) -> str:
    return f"{1 + rng.randbelow(998)} {rng.choice(pools['STREET_NAME'])} {rng.choice(pools['STREET_SUFFIX'])}"


def _gen_number(rng: Rng, pools) -> str:
    return str(1 + rng.randbelow(20))


def _gen_dose(rng: Rng, pools) -> str:
    return rng.choice(["5", "10", "12.5", "20", "25", "40", "50", "81", "100", "325", "500"])


_GENERATED = {
    "DATE": _gen_date,
    "PHONE": _gen_phone,
    "ZIP": _gen_zip,
    "ID": _gen_id,
    "AGE": _gen_age,
    "AGE_YOUNG": _gen_young_age,
    "STREET": _gen_street,
    "NUM": _gen_number,
    "DOSE": _gen_dose,
}


def generate_document(doc_id: str, rng: Rng, bank: TemplateBank, profile: GenProfile,
                      forced_group: str | None = None) -> Document:
    return render_document(doc_id, rng, bank, profile, forced_group)[0]


def render_document(doc_id: str, rng: Rng, bank: TemplateBank, profile: GenProfile,
                    forced_group: str | None = None) -> tuple[Document, list[InjectedValue]]:
    """Generate one note and also return every injected PHI value."""
    first, last = bank.pools["FIRST_NAME"], bank.pools["LAST_NAME"]
    patient = (rng.choice(first), rng.choice(last))
    doctors = [(rng.choice(first), rng.choice(last)) for _ in range(1 + rng.randbelow(3))]
    staff = doctors + [(rng.choice(first), rng.choice(last)) for _ in range(profile.extra_ehr_doctors)]
    builder = _NoteBuilder(rng, bank, patient, doctors)
    for tmpl in bank.header:
        builder.line(tmpl)
    groups = sorted({g for g, _ in bank.body})
    weights = [profile.group_weights.get(g, 0.0) for g in groups]
    by_group = {g: [t for gg, t in bank.body if gg == g] for g in groups}
    n_body = profile.min_body_sentences + rng.randbelow(profile.max_body_sentences - profile.min_body_sentences + 1)
    chosen = [groups[rng.weighted_index(weights)] for _ in range(n_body)]
    if forced_group is not None:
        chosen[rng.randbelow(n_body)] = forced_group
    for g in chosen:
        builder.line(rng.choice(by_group[g]))
    for tmpl in bank.footer:
        builder.line(tmpl)
    text, anns = builder.finish()
    meta = EhrMetadata(patient[0], patient[1], frozenset(d[0] for d in staff), frozenset(d[1] for d in staff))
    return Document(doc_id, text, anns, meta), list(builder.injected)


def generate_synthetic_corpus(n_docs: int, seed: int, profile: GenProfile | None = None) -> list[Document]:
    """Deterministic discharge-summary-like notes with gold PHI spans.

    Note ``i`` is forced to contain a body sentence for PHI type
    ``i mod 12`` so every type has at least ``n_docs // 12`` annotations.
    """
    if n_docs < 1:
        raise ValueError("n_docs must be >= 1")
    profile = profile or GenProfile()
    bank = TemplateBank.load(profile.template_dir)
    root = Rng(seed)
    width = max(4, len(str(n_docs - 1)))
    docs = []
    for i in range(n_docs):
        rng = root.derive(f"doc{i}")
        forced = PHI_TYPES[i % len(PHI_TYPES)].value
        docs.append(generate_document(f"note{i:0{width}d}", rng, bank, profile, forced))
    return docs


def type_support(docs: Iterable[Document]) -> dict[PhiType, int]:
    counts = {t: 0 for t in PHI_TYPES}
    for d in docs:
        for a in d.annotations:
            counts[a.phi_type] += 1
    return counts
