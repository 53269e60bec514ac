"""
Synthetic EHR cohorts with known latent disease status.

A cohort is a list of ``PatientRecord`` (ordered visits, each a set of disease
codes) plus the held-out ``CohortTruth``, a ``GenotypeMatrix`` with planted
causal variants in LD blocks, and a ``CovariateTable``. This module also owns
the cohort file formats, the code vocabulary and the token encoding fed to the
transformer classifier.
"""

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from .exceptions import AlignmentError, CohortConfigError, CohortFormatError, ExperimentConfigError
from .formats import atomic_write_text, read_table, write_table

logger = logging.getLogger(__name__)

PAD, UNK, SEP, CLS = "[PAD]", "[UNK]", "[SEP]", "[CLS]"
SPECIAL_TOKENS = (PAD, UNK, SEP, CLS)
PAD_ID, UNK_ID, SEP_ID, CLS_ID = range(4)

N_PCS = 10


# ============================================
# Records
# ============================================

@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    visits: tuple

    def __post_init__(self):
        object.__setattr__(self, "visits", tuple(frozenset(v) for v in self.visits))

    @property
    def n_visits(self):
        return len(self.visits)

    @property
    def n_codes(self):
        return sum(len(v) for v in self.visits)

    def code_counts(self):
        """Number of visits each code appears in."""
        return Counter(code for visit in self.visits for code in visit)


def retain_min_codes(records, min_codes=5):
    """Drop patients with fewer than ``min_codes`` codes in total."""
    kept = [r for r in records if r.n_codes >= min_codes]
    if len(kept) < len(records):
        logger.info("Dropped %d patients with fewer than %d codes", len(records) - len(kept), min_codes)
    return kept


@dataclass(frozen=True)
class CohortTruth:
    """Latent labels; only evaluation code may read this."""

    patient_ids: tuple
    y: np.ndarray
    liability: np.ndarray
    config: dict = field(default_factory=dict)

    @property
    def prevalence(self):
        return float(self.y.mean()) if len(self.y) else 0.0


@dataclass(frozen=True)
class GenotypeMatrix:
    patient_ids: tuple
    variant_ids: tuple
    dosages: np.ndarray
    maf: np.ndarray
    causal_effects: dict
    ld_blocks: np.ndarray

    def __post_init__(self):
        if self.dosages.shape != (len(self.patient_ids), len(self.variant_ids)):
            raise AlignmentError("genotype matrix shape does not match patient and variant ids")
        missing = set(self.causal_effects) - set(self.variant_ids)
        if missing:
            raise CohortConfigError(f"causal variants not in matrix: {sorted(missing)}")

    @property
    def n_variants(self):
        return len(self.variant_ids)

    def index_of(self, variant_id):
        return self._index()[variant_id]

    def _index(self):
        # cached lazily on the frozen instance
        try:
            return self.__dict__["_variant_index"]
        except KeyError:
            index = {vid: j for j, vid in enumerate(self.variant_ids)}
            object.__setattr__(self, "_variant_index", index)
            return index

    def column(self, variant):
        j = variant if isinstance(variant, (int, np.integer)) else self.index_of(variant)
        return self.dosages[:, j]

    def subset(self, rows):
        rows = np.asarray(rows)
        return GenotypeMatrix(
            patient_ids=tuple(self.patient_ids[i] for i in rows),
            variant_ids=self.variant_ids,
            dosages=self.dosages[rows],
            maf=self.maf,
            causal_effects=self.causal_effects,
            ld_blocks=self.ld_blocks,
        )


@dataclass(frozen=True)
class CovariateTable:
    patient_ids: tuple
    sex: np.ndarray
    age: np.ndarray
    pcs: np.ndarray

    def __post_init__(self):
        n = len(self.patient_ids)
        if len(self.sex) != n or len(self.age) != n or self.pcs.shape[0] != n:
            raise AlignmentError("covariate columns must have one row per patient")
        if not (np.isfinite(self.age).all() and np.isfinite(self.pcs).all()):
            raise CohortFormatError("covariate table has missing entries")

    def matrix(self, n_pcs=N_PCS):
        """Covariate design columns: sex, age and the first ``n_pcs`` PCs."""
        return np.column_stack([self.sex.astype(float), self.age, self.pcs[:, :n_pcs]])

    def subset(self, rows):
        rows = np.asarray(rows)
        return CovariateTable(
            patient_ids=tuple(self.patient_ids[i] for i in rows),
            sex=self.sex[rows],
            age=self.age[rows],
            pcs=self.pcs[rows],
        )


# ============================================
# Generator
# ============================================

@dataclass(frozen=True)
class ComorbidityCode:
    code: str
    control_log_odds: float
    case_log_odds: float


DEFAULT_COMORBIDITIES = (
    ComorbidityCode("401.1", -2.2, -1.2),
    ComorbidityCode("272.1", -2.5, -1.4),
    ComorbidityCode("250.2", -3.0, -1.8),
    ComorbidityCode("427.2", -3.4, -2.0),
    ComorbidityCode("496.0", -3.2, -2.6),
    ComorbidityCode("585.3", -3.6, -2.4),
)


@dataclass(frozen=True)
class GeneratorConfig:
    n_patients: int = 5000
    n_variants: int = 200
    maf_range: tuple = (0.05, 0.5)
    ld_block_size: int = 5
    ld_mutation_prob: float = 0.1
    causal_effects: tuple = (0.35, 0.35, 0.35)
    causal_variants: tuple = ()
    prevalence: float = 0.1
    beta_sex: float = 0.0
    beta_age: float = 0.0
    anchor_codes: tuple = ("714.0",)
    anchor_sensitivity: float = 0.7
    anchor_false_positive_rate: float = 0.0
    anchor_repeat_prob: float = 0.3
    comorbidities: tuple = DEFAULT_COMORBIDITIES
    interaction_codes: tuple = ()
    interaction_strength: float = 0.0
    n_background_codes: int = 150
    background_codes_per_visit: float = 2.0
    mean_visits: float = 5.0
    min_codes: int = 5

    def __post_init__(self):
        object.__setattr__(self, "maf_range", tuple(self.maf_range))
        object.__setattr__(self, "causal_effects", tuple(float(b) for b in self.causal_effects))
        object.__setattr__(self, "causal_variants", tuple(self.causal_variants))
        object.__setattr__(self, "anchor_codes", tuple(self.anchor_codes))
        object.__setattr__(self, "interaction_codes", tuple(self.interaction_codes))
        object.__setattr__(self, "comorbidities", tuple(
            c if isinstance(c, ComorbidityCode) else ComorbidityCode(**c) for c in self.comorbidities
        ))
        self.validate()

    def validate(self):
        if self.n_patients < 10:
            raise CohortConfigError("n_patients must be at least 10")
        if not 0.0 < self.prevalence < 1.0:
            raise CohortConfigError("prevalence must lie in (0, 1)")
        if not 0.0 < self.anchor_sensitivity <= 1.0:
            raise CohortConfigError("anchor_sensitivity must lie in (0, 1]; 0 leaves no anchor positives")
        if not 0.0 <= self.anchor_false_positive_rate < 1.0:
            raise CohortConfigError("anchor_false_positive_rate must lie in [0, 1)")
        if not 0.0 <= self.anchor_repeat_prob <= 1.0:
            raise CohortConfigError("anchor_repeat_prob must lie in [0, 1]")
        if not self.anchor_codes:
            raise CohortConfigError("at least one anchor code is required")
        lo, hi = self.maf_range
        if not 0.0 < lo <= hi <= 0.5:
            raise CohortConfigError("maf_range must satisfy 0 < low <= high <= 0.5")
        if self.n_variants < 1 or self.ld_block_size < 1:
            raise CohortConfigError("n_variants and ld_block_size must be positive")
        if not 0.0 <= self.ld_mutation_prob <= 1.0:
            raise CohortConfigError("ld_mutation_prob must lie in [0, 1]")
        if self.causal_variants and len(self.causal_variants) != len(self.causal_effects):
            raise CohortConfigError("causal_variants and causal_effects must have the same length")
        if len(self.causal_effects) > self.n_blocks:
            raise CohortConfigError("more causal variants than LD blocks")
        if self.interaction_codes and len(self.interaction_codes) != 2:
            raise CohortConfigError("interaction_codes must name exactly two codes")
        if not 0.0 <= self.interaction_strength <= 1.0:
            raise CohortConfigError("interaction_strength must lie in [0, 1]")
        if self.mean_visits < 1 or self.n_background_codes < 1:
            raise CohortConfigError("mean_visits and n_background_codes must be at least 1")
        distinct = self.n_background_codes + len(self.comorbidities) + len(self.interaction_codes)
        if self.min_codes > distinct:
            raise CohortConfigError(
                f"min_codes ({self.min_codes}) exceeds the {distinct} distinct non-anchor codes available"
            )
        reserved = set(self.anchor_codes) & (
            {c.code for c in self.comorbidities} | set(self.interaction_codes)
        )
        if reserved:
            raise CohortConfigError(f"anchor codes reused as signal codes: {sorted(reserved)}")

    @property
    def n_blocks(self):
        return math.ceil(self.n_variants / self.ld_block_size)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise CohortConfigError(f"unknown generator settings: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        data = asdict(self)
        data["comorbidities"] = [asdict(c) for c in self.comorbidities]
        return json.loads(json.dumps(data))


class GeneratedCohort(NamedTuple):
    records: list
    truth: CohortTruth
    genotypes: GenotypeMatrix
    covariates: CovariateTable


def variant_id(j, n_variants):
    width = max(4, len(str(n_variants)))
    return f"v{j + 1:0{width}d}"


def generate_cohort(config: GeneratorConfig, seed: int) -> GeneratedCohort:
    """Draw a cohort, its latent labels, genotypes and covariates from ``config``."""
    geno_rng, cov_rng, liab_rng, code_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)
    )
    n = config.n_patients
    patient_ids = tuple(f"P{i + 1:06d}" for i in range(n))

    genotypes = _generate_genotypes(config, patient_ids, geno_rng)
    covariates = CovariateTable(
        patient_ids=patient_ids,
        sex=cov_rng.integers(0, 2, size=n).astype(np.int8),
        age=np.clip(cov_rng.normal(57.0, 8.0, size=n), 40.0, 70.0),
        pcs=cov_rng.standard_normal((n, N_PCS)),
    )

    causal_idx = [genotypes.index_of(v) for v in genotypes.causal_effects]
    effects = np.array(list(genotypes.causal_effects.values()), dtype=float)
    age_std = (covariates.age - covariates.age.mean()) / covariates.age.std()
    liability = (
        genotypes.dosages[:, causal_idx].astype(float) @ effects
        + config.beta_sex * covariates.sex
        + config.beta_age * age_std
        + liab_rng.standard_normal(n)
    )
    cutoff = np.quantile(liability, 1.0 - config.prevalence)
    y = (liability > cutoff).astype(np.int8)
    truth = CohortTruth(patient_ids=patient_ids, y=y, liability=liability, config=config.to_dict())

    records = _generate_records(config, patient_ids, y, code_rng)
    logger.info(
        "Generated cohort: %d patients, %d variants, prevalence %.4f, seed %d",
        n, genotypes.n_variants, truth.prevalence, seed,
    )
    return GeneratedCohort(records, truth, genotypes, covariates)


def _generate_genotypes(config, patient_ids, rng):
    n, m, size = len(patient_ids), config.n_variants, config.ld_block_size
    variant_ids = tuple(variant_id(j, m) for j in range(m))
    block_maf = rng.uniform(*config.maf_range, size=config.n_blocks)
    dosages = np.empty((n, m), dtype=np.int8)
    blocks = np.arange(m) // size
    for b in range(config.n_blocks):
        seed_column = rng.binomial(2, block_maf[b], size=n)
        start, stop = b * size, min((b + 1) * size, m)
        dosages[:, start] = seed_column
        for j in range(start + 1, stop):
            # mutated entries are redrawn at the block frequency
            mutate = rng.random(n) < config.ld_mutation_prob
            fresh = rng.binomial(2, block_maf[b], size=n)
            dosages[:, j] = np.where(mutate, fresh, seed_column)

    if config.causal_variants:
        causal = config.causal_variants
    else:
        chosen = np.sort(rng.choice(config.n_blocks, size=len(config.causal_effects), replace=False))
        causal = tuple(variant_ids[b * size] for b in chosen)
    return GenotypeMatrix(
        patient_ids=patient_ids,
        variant_ids=variant_ids,
        dosages=dosages,
        maf=block_maf[blocks],
        causal_effects=dict(zip(causal, config.causal_effects)),
        ld_blocks=blocks,
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _generate_records(config, patient_ids, y, rng):
    width = max(3, len(str(config.n_background_codes)))
    background = [f"B{k:0{width}d}" for k in range(config.n_background_codes)]
    every_background = frozenset(background)
    weights = 1.0 / np.arange(1, len(background) + 1)
    weights /= weights.sum()
    comorbid = [c.code for c in config.comorbidities]
    comorbid_p = np.array([
        [_sigmoid(c.control_log_odds) for c in config.comorbidities],
        [_sigmoid(c.case_log_odds) for c in config.comorbidities],
    ])
    records = []
    for pid, label in zip(patient_ids, y):
        n_visits = 1 + rng.poisson(config.mean_visits - 1.0)
        visits = [set() for _ in range(n_visits)]

        for visit in visits:
            k = rng.poisson(config.background_codes_per_visit)
            visit.update(background[j] for j in rng.choice(len(background), size=k, p=weights))
        if comorbid:
            present = rng.random((n_visits, len(comorbid))) < comorbid_p[label]
            for t, j in zip(*np.nonzero(present)):
                visits[t].add(comorbid[j])
        if config.interaction_codes:
            first = rng.random() < 0.5
            if rng.random() < config.interaction_strength:
                second = first != bool(label)
            else:
                second = rng.random() < 0.5
            for code, flag in zip(config.interaction_codes, (first, second)):
                if flag:
                    visits[rng.integers(n_visits)].add(code)

        # top-up counts non-anchor codes only so the anchor stays independent of x given y
        while sum(len(v) for v in visits) < config.min_codes:
            if all(every_background <= v for v in visits):
                visits.append(set())
                n_visits += 1
            visits[rng.integers(n_visits)].add(background[rng.choice(len(background), p=weights)])

        carries = rng.random() < (config.anchor_sensitivity if label else config.anchor_false_positive_rate)
        if carries:
            anchors = config.anchor_codes
            first_visit = rng.integers(n_visits)
            for t, visit in enumerate(visits):
                if t == first_visit or rng.random() < config.anchor_repeat_prob:
                    visit.add(anchors[rng.integers(len(anchors))])

        records.append(PatientRecord(pid, tuple(visits)))
    return records


# ============================================
# Files
# ============================================

def _check_code(code, line_number):
    if not code or any(ch in code for ch in "\t,\n"):
        raise CohortFormatError(f"invalid code {code!r}", line_number)


def format_record(record: PatientRecord) -> str:
    return "\t".join([record.patient_id] + [",".join(sorted(visit)) for visit in record.visits])


def save_cohort(records, path):
    lines = [format_record(r) for r in records]
    return atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_cohort(path):
    records, seen = [], set()
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            patient_id, visit_fields = parts[0], parts[1:]
            if not patient_id:
                raise CohortFormatError("empty patient_id", line_number)
            if not visit_fields:
                raise CohortFormatError(f"patient {patient_id} has no visits", line_number)
            if patient_id in seen:
                raise CohortFormatError(f"duplicate patient_id {patient_id}", line_number)
            seen.add(patient_id)
            visits = []
            for visit_field in visit_fields:
                codes = visit_field.split(",")
                for code in codes:
                    _check_code(code, line_number)
                visits.append(frozenset(codes))
            records.append(PatientRecord(patient_id, tuple(visits)))
    return records


def save_genotypes(genotypes: GenotypeMatrix, path):
    path = Path(path)
    frame = pd.DataFrame(genotypes.dosages, columns=list(genotypes.variant_ids))
    frame.insert(0, "patient_id", list(genotypes.patient_ids))
    write_table(frame, path)
    meta = pd.DataFrame({
        "variant_id": list(genotypes.variant_ids),
        "maf": genotypes.maf,
        "causal": [int(v in genotypes.causal_effects) for v in genotypes.variant_ids],
        "effect": [genotypes.causal_effects.get(v, 0.0) for v in genotypes.variant_ids],
        "ld_block": genotypes.ld_blocks,
    })
    write_table(meta, genotype_metadata_path(path))
    return path


def genotype_metadata_path(path):
    path = Path(path)
    return path.with_name(path.name.rsplit(".", 1)[0] + ".meta.tsv")


def load_genotypes(path) -> GenotypeMatrix:
    frame = read_table(path, required=("patient_id",), dtype={"patient_id": str})
    meta = read_table(genotype_metadata_path(path), required=("variant_id", "maf", "causal", "effect", "ld_block"),
                      dtype={"variant_id": str})
    variant_ids = tuple(frame.columns[1:])
    if variant_ids != tuple(meta["variant_id"]):
        raise CohortFormatError("genotype header does not match its metadata file")
    values = frame.iloc[:, 1:].to_numpy()
    if not np.isin(values, (0, 1, 2)).all():
        raise CohortFormatError("genotype entries must be 0, 1 or 2")
    causal = meta[meta["causal"] == 1]
    return GenotypeMatrix(
        patient_ids=tuple(frame["patient_id"]),
        variant_ids=variant_ids,
        dosages=values.astype(np.int8),
        maf=meta["maf"].to_numpy(dtype=float),
        causal_effects=dict(zip(causal["variant_id"], causal["effect"].astype(float))),
        ld_blocks=meta["ld_block"].to_numpy(dtype=int),
    )


def save_truth(truth: CohortTruth, path):
    frame = pd.DataFrame({"patient_id": list(truth.patient_ids), "y": truth.y, "liability": truth.liability})
    return write_table(frame, path)


def load_truth(path) -> CohortTruth:
    frame = read_table(path, required=("patient_id", "y", "liability"), dtype={"patient_id": str})
    return CohortTruth(
        patient_ids=tuple(frame["patient_id"]),
        y=frame["y"].to_numpy(dtype=np.int8),
        liability=frame["liability"].to_numpy(dtype=float),
    )


def save_covariates(covariates: CovariateTable, path):
    frame = pd.DataFrame({"patient_id": list(covariates.patient_ids), "sex": covariates.sex, "age": covariates.age})
    for k in range(covariates.pcs.shape[1]):
        frame[f"pc{k + 1}"] = covariates.pcs[:, k]
    return write_table(frame, path)


def load_covariates(path) -> CovariateTable:
    frame = read_table(path, required=("patient_id", "sex", "age"), dtype={"patient_id": str})
    if frame.isna().any().any():
        raise CohortFormatError("covariate table has missing entries")
    pc_columns = [c for c in frame.columns if c.startswith("pc")]
    return CovariateTable(
        patient_ids=tuple(frame["patient_id"]),
        sex=frame["sex"].to_numpy(dtype=np.int8),
        age=frame["age"].to_numpy(dtype=float),
        pcs=frame[pc_columns].to_numpy(dtype=float),
    )


# ============================================
# Vocabulary and encoding
# ============================================

@dataclass(frozen=True)
class Vocabulary:
    token_ids: dict
    min_frequency_fraction: float = 1e-4

    def __len__(self):
        return len(self.token_ids)

    def __contains__(self, code):
        return code in self.token_ids

    def id_for(self, code):
        return self.token_ids.get(code, UNK_ID)

    @property
    def codes(self):
        """Non-special codes in token-id order."""
        return [c for c, _ in sorted(self.token_ids.items(), key=lambda kv: kv[1]) if c not in SPECIAL_TOKENS]

    def digest(self):
        payload = json.dumps(sorted(self.token_ids.items()), separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_vocabulary(records, min_frequency_fraction=1e-4, forced_codes=()) -> Vocabulary:
    """
    Assign token ids to codes whose corpus count reaches the frequency threshold.

    Ids are given by descending count, ties broken by code string, after the
    four special tokens. ``forced_codes`` (the anchor codes) always get an id.
    """
    counts = Counter(code for record in records for visit in record.visits for code in visit)
    total = sum(counts.values())
    threshold = min_frequency_fraction * total
    kept = [
        code for code, count in counts.items()
        if count >= threshold or math.isclose(count, threshold)
    ]
    kept += [code for code in forced_codes if code not in kept]
    ordered = sorted(kept, key=lambda code: (-counts.get(code, 0), code))
    token_ids = {token: i for i, token in enumerate(SPECIAL_TOKENS)}
    token_ids.update({code: len(SPECIAL_TOKENS) + i for i, code in enumerate(ordered)})
    logger.debug("Vocabulary of %d codes from %d code occurrences", len(ordered), total)
    return Vocabulary(token_ids=token_ids, min_frequency_fraction=min_frequency_fraction)


@dataclass(frozen=True)
class EncodedSequence:
    token_ids: np.ndarray
    position_ids: np.ndarray
    segment_ids: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return len(self.token_ids)


def encode_record(record: PatientRecord, vocab: Vocabulary, max_len=256) -> EncodedSequence:
    """
    Lay out ``[CLS] v1 [SEP] v2 [SEP] ...`` and pad to ``max_len``.

    Over-length records keep their most recent whole visits. A single visit
    longer than ``max_len - 2`` keeps its first codes in sorted order.
    """
    if max_len < 3:
        raise ExperimentConfigError("max_len must leave room for [CLS], a code and [SEP]")
    visits = [sorted(v) for v in record.visits]
    budget = max_len - 1
    kept = []
    for visit in reversed(visits):
        cost = len(visit) + 1
        if cost > budget:
            if not kept:
                kept.append(visit[:budget - 1])
            break
        kept.append(visit)
        budget -= cost
    kept.reverse()

    tokens, positions, segments = [CLS_ID], [0], [0]
    for t, visit in enumerate(kept, start=1):
        ids = [vocab.id_for(code) for code in visit] + [SEP_ID]
        tokens += ids
        positions += [t] * len(ids)
        segments += [(t - 1) % 2] * len(ids)

    n_pad = max_len - len(tokens)
    valid = [True] * len(tokens) + [False] * n_pad
    positions += [positions[-1]] * n_pad
    tokens += [PAD_ID] * n_pad
    segments += [0] * n_pad
    return EncodedSequence(
        token_ids=np.array(tokens, dtype=np.int64),
        position_ids=np.array(positions, dtype=np.int64),
        segment_ids=np.array(segments, dtype=np.int64),
        valid=np.array(valid, dtype=bool),
    )


@dataclass(frozen=True)
class EncodedBatch:
    token_ids: np.ndarray
    position_ids: np.ndarray
    segment_ids: np.ndarray

    def __len__(self):
        return len(self.token_ids)


def encode_records(records, vocab, max_len=256) -> EncodedBatch:
    encoded = [encode_record(r, vocab, max_len) for r in records]
    if not encoded:
        empty = np.zeros((0, max_len), dtype=np.int64)
        return EncodedBatch(empty, empty.copy(), empty.copy())
    return EncodedBatch(
        token_ids=np.stack([e.token_ids for e in encoded]),
        position_ids=np.stack([e.position_ids for e in encoded]),
        segment_ids=np.stack([e.segment_ids for e in encoded]),
    )
