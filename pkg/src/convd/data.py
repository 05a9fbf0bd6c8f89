"""Triple ingestion, vocabularies, reciprocal augmentation, 1-N targets,
priori frequency statistics, filtered-candidate indexes, and a deterministic
toy graph generator for desk-scale runs.

Triple file format: UTF-8, LF line endings, one `head<TAB>relation<TAB>tail`
per line, no header, tabs forbidden inside symbols.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, GenerationError, StateError
from .rng import RngStream

RECIPROCAL_SUFFIX = "_inv"


@dataclass
class Vocab:
    """Bidirectional symbol/id maps; ids are dense and lexicographically assigned."""

    entity_to_id: dict
    relation_to_id: dict
    id_to_entity: list
    id_to_relation: list

    @classmethod
    def from_symbols(cls, entities, relations) -> "Vocab":
        ents = sorted(set(entities))
        rels = sorted(set(relations))
        return cls(
            entity_to_id={e: i for i, e in enumerate(ents)},
            relation_to_id={r: i for i, r in enumerate(rels)},
            id_to_entity=ents,
            id_to_relation=rels,
        )

    @property
    def n_entities(self) -> int:
        return len(self.id_to_entity)

    @property
    def n_relations(self) -> int:
        return len(self.id_to_relation)


def _parse_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected head<TAB>relation<TAB>tail")
            yield parts


def load_triples(path, vocab: Vocab | None = None, strict: bool = True):
    """Load one split file. Returns (vocab, (n, 3) int64 id array).

    Without a vocab, symbols are collected and ids assigned lexicographically.
    With one, unseen symbols raise in strict mode (the filtered-evaluation
    convention) and are appended in lexicographic batches otherwise.
    """
    rows = list(_parse_lines(path))
    if vocab is None:
        heads = [h for h, _, _ in rows]
        rels = [r for _, r, _ in rows]
        tails = [t for _, _, t in rows]
        vocab = Vocab.from_symbols(heads + tails, rels)
    else:
        new_ents = sorted(
            {s for h, _, t in rows for s in (h, t) if s not in vocab.entity_to_id}
        )
        new_rels = sorted({r for _, r, _ in rows if r not in vocab.relation_to_id})
        if strict and (new_ents or new_rels):
            sample = (new_ents + new_rels)[0]
            raise DataError(f"{path}: symbol {sample!r} not present in the vocabulary")
        for e in new_ents:
            vocab.entity_to_id[e] = len(vocab.id_to_entity)
            vocab.id_to_entity.append(e)
        for r in new_rels:
            vocab.relation_to_id[r] = len(vocab.id_to_relation)
            vocab.id_to_relation.append(r)
    ids = np.array(
        [
            (vocab.entity_to_id[h], vocab.relation_to_id[r], vocab.entity_to_id[t])
            for h, r, t in rows
        ],
        dtype=np.int64,
    ).reshape(-1, 3)
    return vocab, ids


@dataclass
class TripleStore:
    """Train/valid/test id triples plus the filtered-candidates index."""

    vocab: Vocab
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    augmented: bool = False
    n_base_relations: int = 0
    all_true: set = field(default_factory=set)
    tails_by_query: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_base_relations == 0:
            self.n_base_relations = self.vocab.n_relations
        self._reindex()

    def _reindex(self):
        self.all_true = set()
        self.tails_by_query = {}
        n_ent, n_rel = self.vocab.n_entities, self.vocab.n_relations
        for split in (self.train, self.valid, self.test):
            for h, r, t in split:
                if not (0 <= h < n_ent and 0 <= t < n_ent and 0 <= r < n_rel):
                    raise DataError(f"triple ({h}, {r}, {t}) outside vocabulary bounds")
                self.all_true.add((int(h), int(r), int(t)))
                self.tails_by_query.setdefault((int(h), int(r)), set()).add(int(t))

    def split(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split {name!r}") from None

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    @classmethod
    def from_dir(cls, directory, strict: bool = True) -> "TripleStore":
        vocab, train = load_triples(os.path.join(directory, "train.txt"))
        _, valid = load_triples(os.path.join(directory, "valid.txt"), vocab, strict=strict)
        _, test = load_triples(os.path.join(directory, "test.txt"), vocab, strict=strict)
        return cls(vocab=vocab, train=train, valid=valid, test=test)


def filtered_candidates(store: TripleStore, query) -> set:
    """All tail ids known true for (h, r) in any split."""
    return set(store.tails_by_query.get((int(query[0]), int(query[1])), set()))


def augment_reciprocal(store: TripleStore) -> TripleStore:
    """Add (t, r_inv, h) for every (h, r, t); relation count doubles.

    The inverse of relation id r is r + n_base_relations for base relations
    and r - n_base_relations for the added ones, so augmenting twice is
    meaningless and rejected.
    """
    if store.augmented:
        raise StateError("store is already augmented with reciprocal relations")
    base = store.vocab.n_relations
    inv_names = [name + RECIPROCAL_SUFFIX for name in store.vocab.id_to_relation]
    for name in inv_names:
        if name in store.vocab.relation_to_id:
            raise DataError(f"reciprocal name collision: {name!r}")
    rels = store.vocab.id_to_relation + inv_names
    vocab = Vocab(
        entity_to_id=dict(store.vocab.entity_to_id),
        relation_to_id={r: i for i, r in enumerate(rels)},
        id_to_entity=list(store.vocab.id_to_entity),
        id_to_relation=rels,
    )

    def extend(split):
        if split.shape[0] == 0:
            return split.copy()
        mirrored = split[:, [2, 1, 0]].copy()
        mirrored[:, 1] += base
        return np.concatenate([split, mirrored], axis=0)

    return TripleStore(
        vocab=vocab,
        train=extend(store.train),
        valid=extend(store.valid),
        test=extend(store.test),
        augmented=True,
        n_base_relations=base,
    )


@dataclass
class PrioriTable:
    """Per-(head entity, relation) train-split frequencies, log-smoothed."""

    freq: dict
    log_base: float

    def value(self, h: int, r: int) -> float:
        count = self.freq.get((int(h), int(r)), 0)
        # log_a(n+1) as a ratio of base-2 logs; exact for the default a = 2.
        return math.log2(count + 1) / math.log2(self.log_base)

    def values(self, h_ids, r_ids) -> np.ndarray:
        return np.array(
            [self.value(h, r) for h, r in zip(h_ids, r_ids)], dtype=np.float64
        )


def build_priori(store: TripleStore, a: float = 2.0) -> PrioriTable:
    """Count (head, relation) pairs over the train split only (no leakage)."""
    if not a > 1.0:
        raise ConfigError(f"priori log base must be > 1, got {a}")
    freq: dict = {}
    for h, r, _ in store.train:
        key = (int(h), int(r))
        freq[key] = freq.get(key, 0) + 1
    return PrioriTable(freq=freq, log_base=a)


@dataclass
class OneToNTarget:
    """Smoothed multi-label target for one (head, relation) query."""

    query: tuple
    positives: set
    smoothed: np.ndarray


def one_to_n_targets(store: TripleStore, split: str, label_smoothing: float, n_entities: int):
    """One target per distinct (h, r) in the split, in sorted query order.

    smoothed[t] = (1 - eps) * [t is positive] + eps / n_entities
    """
    if not 0.0 <= label_smoothing < 1.0:
        raise ConfigError(f"label smoothing must be in [0, 1), got {label_smoothing}")
    grouped: dict = {}
    for h, r, t in store.split(split):
        grouped.setdefault((int(h), int(r)), set()).add(int(t))
    for query in sorted(grouped):
        positives = grouped[query]
        smoothed = np.full(n_entities, label_smoothing / n_entities, dtype=np.float64)
        smoothed[sorted(positives)] += 1.0 - label_smoothing
        yield OneToNTarget(query=query, positives=positives, smoothed=smoothed)


def smoothed_targets_matrix(queries, positives_by_query, label_smoothing, n_entities):
    """Dense (len(queries), n_entities) target matrix for a batch of queries."""
    out = np.full(
        (len(queries), n_entities), label_smoothing / n_entities, dtype=np.float64
    )
    for row, q in enumerate(queries):
        out[row, sorted(positives_by_query[q])] += 1.0 - label_smoothing
    return out


def generate_toy_kg(
    seed: int, n_entities: int, n_relations: int, composition_depth: int = 2
) -> TripleStore:
    """Deterministic learnable toy graph.

    Relation 0 is a random permutation pi, relation 1 its explicit inverse,
    and relation j >= 2 the composition pi applied 1 + ((j - 2) % depth)
    times, so every relation holds exactly n_entities triples. The 80/10/10
    split comes from a seeded shuffle, with a first pass that keeps every
    entity and relation covered by the train split.
    """
    if n_entities < 20:
        raise GenerationError(f"need at least 20 entities, got {n_entities}")
    if n_relations < 2:
        raise GenerationError(f"need at least 2 relations, got {n_relations}")
    if composition_depth < 1:
        raise GenerationError(f"composition depth must be >= 1, got {composition_depth}")
    rng = RngStream(seed, "toy-kg")
    perm = rng.permutation(n_entities)

    def hops(rel_index: int) -> np.ndarray:
        count = 1 + (rel_index - 2) % composition_depth
        target = np.arange(n_entities)
        for _ in range(count):
            target = perm[target]
        return target

    triples = []
    source = np.arange(n_entities)
    for rel in range(n_relations):
        if rel == 0:
            target = perm[source]
        elif rel == 1:
            target = np.argsort(perm)[source]
        else:
            target = hops(rel)
        triples.extend((int(s), rel, int(t)) for s, t in zip(source, target))

    order = rng.permutation(len(triples))
    shuffled = [triples[i] for i in order]
    total = len(shuffled)
    n_train = (8 * total) // 10
    n_valid = total // 10
    n_test = total - n_train - n_valid
    if n_valid == 0 or n_test == 0:
        raise GenerationError("too few triples to populate valid and test splits")

    # Coverage pass: train must contain every entity and relation so that no
    # valid/test symbol is unseen at training time.
    seen_ents: set = set()
    seen_rels: set = set()
    train, rest = [], []
    for h, r, t in shuffled:
        if h not in seen_ents or t not in seen_ents or r not in seen_rels:
            train.append((h, r, t))
            seen_ents.update((h, t))
            seen_rels.add(r)
        else:
            rest.append((h, r, t))
    if len(train) > n_train:
        raise GenerationError("coverage pass exceeded the train budget; enlarge the graph")
    fill = n_train - len(train)
    train.extend(rest[:fill])
    remaining = rest[fill:]
    valid = remaining[:n_valid]
    test = remaining[n_valid:]

    names_e = [f"e{i:05d}" for i in range(n_entities)]
    names_r = [f"r{j:03d}" for j in range(n_relations)]
    vocab = Vocab.from_symbols(names_e, names_r)
    to_arr = lambda rows: np.array(rows, dtype=np.int64).reshape(-1, 3)
    return TripleStore(
        vocab=vocab, train=to_arr(train), valid=to_arr(valid), test=to_arr(test)
    )


def write_splits(store: TripleStore, directory) -> None:
    """Write train/valid/test .txt files in the triple file format."""
    os.makedirs(directory, exist_ok=True)
    for name in ("train", "valid", "test"):
        rows = store.split(name)
        path = os.path.join(directory, f"{name}.txt")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for h, r, t in rows:
                fh.write(
                    f"{store.vocab.id_to_entity[h]}\t"
                    f"{store.vocab.id_to_relation[r]}\t"
                    f"{store.vocab.id_to_entity[t]}\n"
                )
