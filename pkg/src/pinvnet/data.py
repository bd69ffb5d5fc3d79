"""Dataset ingestion, normalization, target encoding, and splitting.

Input files are UCI-style delimited text. A small INI schema file declares
the column roles, the task kind, and optional class labels, so the loader
never guesses. Features are kept raw until :func:`normalize` maps them to
[-1, 1] with statistics from the training rows only; class labels stay as
integer indices until :func:`encode_targets` expands them to one-hot rows.

Split sizes follow the largest-remainder rule. For classification the split
is stratified: per-class counts are apportioned so the overall part sizes
still match the plain largest-remainder answer while every class stays
within one sample of its exact share in each part.
"""

from __future__ import annotations

import collections
import configparser
import csv
import dataclasses
import logging
import math

import numpy as np

from .numerics import as_matrix

log = logging.getLogger("pinvnet.data")

#: Tokens treated as a missing value in input files.
MISSING_TOKENS = ("", "?")

#: Column roles accepted in schema files.
ROLES = ("num", "cat", "onehot", "target", "label", "skip")


class StratificationError(ValueError):
    """A class ended up absent from one of the split parts."""


@dataclasses.dataclass(frozen=True)
class TaskKind:
    """Regression, or classification with a known class count."""

    kind: str
    num_classes: int | None = None

    def __post_init__(self):
        if self.kind not in ("regression", "classification"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "classification":
            if self.num_classes is None or self.num_classes < 2:
                raise ValueError(
                    f"classification needs num_classes >= 2, got {self.num_classes}"
                )
        elif self.num_classes is not None:
            raise ValueError("regression tasks do not carry a class count")

    @classmethod
    def regression(cls) -> "TaskKind":
        return cls(kind="regression")

    @classmethod
    def classification(cls, num_classes: int) -> "TaskKind":
        return cls(kind="classification", num_classes=num_classes)


@dataclasses.dataclass(frozen=True)
class Schema:
    """Column roles and task declaration for one dataset file."""

    name: str
    task_kind: str
    roles: tuple
    classes: tuple | None = None
    delimiter: str = "comma"
    header: bool = False

    def __post_init__(self):
        for role in self.roles:
            if role not in ROLES:
                raise ValueError(
                    f"unknown column role {role!r}; expected one of {ROLES}"
                )
        n_target = self.roles.count("target")
        n_label = self.roles.count("label")
        if self.task_kind == "regression":
            if n_target != 1 or n_label != 0:
                raise ValueError(
                    "a regression schema needs exactly one 'target' column "
                    "and no 'label' column"
                )
        elif self.task_kind == "classification":
            if n_label != 1 or n_target != 0:
                raise ValueError(
                    "a classification schema needs exactly one 'label' column "
                    "and no 'target' column"
                )
        else:
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        if not any(r in ("num", "cat", "onehot") for r in self.roles):
            raise ValueError("schema declares no feature columns")
        if self.delimiter not in ("comma", "whitespace", "semicolon", "tab"):
            raise ValueError(f"unknown delimiter {self.delimiter!r}")


def parse_schema(path) -> Schema:
    """Read a schema INI file with a single [dataset] section."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read or not parser.has_section("dataset"):
        raise ValueError(f"{path}: schema file needs a [dataset] section")
    sec = parser["dataset"]
    for key in ("name", "task", "columns"):
        if key not in sec:
            raise ValueError(f"{path}: schema is missing the {key!r} key")
    classes = None
    if "classes" in sec:
        classes = tuple(sec["classes"].split())
        if len(classes) < 2:
            raise ValueError(f"{path}: a class list needs at least two entries")
    return Schema(
        name=sec["name"].strip(),
        task_kind=sec["task"].strip(),
        roles=tuple(sec["columns"].split()),
        classes=classes,
        delimiter=sec.get("delimiter", "comma").strip(),
        header=sec.getboolean("header", fallback=False),
    )


@dataclasses.dataclass(frozen=True)
class Dataset:
    """Feature matrix, target matrix, and bookkeeping for one dataset.

    ``t`` holds raw regression targets, integer class labels (one column),
    or one-hot rows after :func:`encode_targets`. ``feature_ranges`` is None
    until :func:`normalize` records the (min, max) pairs it mapped from.
    """

    name: str
    x: np.ndarray
    t: np.ndarray
    task: TaskKind
    feature_names: tuple
    class_names: tuple | None = None
    feature_ranges: tuple | None = None

    def __post_init__(self):
        x = as_matrix(self.x, "feature matrix")
        t = as_matrix(self.t, "target matrix")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        if x.shape[0] != t.shape[0]:
            raise ValueError(
                f"feature and target row counts differ: {x.shape[0]} vs {t.shape[0]}"
            )
        if len(self.feature_names) != x.shape[1]:
            raise ValueError("feature_names length must match the column count")
        if self.task.kind == "regression" and t.shape[1] != 1:
            raise ValueError("regression targets must form a single column")
        if self.task.kind == "classification":
            k = self.task.num_classes
            if t.shape[1] not in (1, k):
                raise ValueError(
                    f"classification targets must be one label column or "
                    f"{k} one-hot columns, got {t.shape[1]}"
                )

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def encoded(self) -> bool:
        """True once classification targets are one-hot."""
        return (
            self.task.kind == "classification"
            and self.t.shape[1] == self.task.num_classes
        )


def _split_line(line: str, delimiter: str):
    if delimiter == "whitespace":
        return line.split()
    sep = {"comma": ",", "semicolon": ";", "tab": "\t"}[delimiter]
    return next(csv.reader([line], delimiter=sep))


def load_csv(path, schema: Schema) -> Dataset:
    """Parse a delimited text file under ``schema`` into a raw Dataset.

    Rows with missing entries are dropped and counted in a warning; any
    structurally bad row fails the whole load with its line number.
    """
    roles = schema.roles
    rows = []
    n_missing = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if schema.header and lineno == 1:
                continue
            line = line.strip()
            if not line:
                continue
            fields = _split_line(line, schema.delimiter)
            if len(fields) != len(roles):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(roles)} columns, "
                    f"got {len(fields)}"
                )
            fields = [f.strip() for f in fields]
            if any(f in MISSING_TOKENS for f in fields):
                n_missing += 1
                continue
            rows.append((lineno, fields))
    if n_missing:
        log.warning("%s: dropped %d rows with missing values", path, n_missing)
    if not rows:
        raise ValueError(f"{path}: no usable data rows")

    # gather raw columns by role
    numeric = {}      # col index -> list of floats (num and target)
    strings = {}      # col index -> list of raw category/label strings
    for j, role in enumerate(roles):
        if role in ("num", "target"):
            numeric[j] = []
        elif role in ("cat", "onehot", "label"):
            strings[j] = []
    for lineno, fields in rows:
        for j, role in enumerate(roles):
            if role == "skip":
                continue
            if role in ("num", "target"):
                try:
                    numeric[j].append(float(fields[j]))
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: column {j + 1}: could not parse "
                        f"{fields[j]!r} as a number"
                    ) from None
            else:
                strings[j].append(fields[j])

    n = len(rows)
    feature_cols = []
    feature_names = []
    for j, role in enumerate(roles):
        if role == "num":
            feature_cols.append(np.asarray(numeric[j], dtype=np.float64))
            feature_names.append(f"col{j + 1}")
        elif role == "cat":
            cats = sorted(set(strings[j]))
            # equally spaced ordinal codes in [-1, 1], categories in
            # lexicographic order
            codes = dict(zip(cats, np.linspace(-1.0, 1.0, len(cats))))
            feature_cols.append(
                np.asarray([codes[s] for s in strings[j]], dtype=np.float64)
            )
            feature_names.append(f"col{j + 1}")
        elif role == "onehot":
            cats = sorted(set(strings[j]))
            for cat in cats:
                feature_cols.append(
                    np.asarray(
                        [1.0 if s == cat else 0.0 for s in strings[j]],
                        dtype=np.float64,
                    )
                )
                feature_names.append(f"col{j + 1}={cat}")
    x = np.column_stack(feature_cols)

    class_names = None
    if schema.task_kind == "regression":
        j = roles.index("target")
        t = np.asarray(numeric[j], dtype=np.float64).reshape(n, 1)
        task = TaskKind.regression()
    else:
        j = roles.index("label")
        seen = strings[j]
        if schema.classes is not None:
            class_names = tuple(schema.classes)
            index = {c: i for i, c in enumerate(class_names)}
            for (lineno, _), s in zip(rows, seen):
                if s not in index:
                    raise ValueError(
                        f"{path}:{lineno}: label {s!r} is not in the declared "
                        f"class list"
                    )
        else:
            class_names = tuple(sorted(set(seen)))
            index = {c: i for i, c in enumerate(class_names)}
        if len(class_names) < 2:
            raise ValueError(f"{path}: found fewer than two classes")
        t = np.asarray([index[s] for s in seen], dtype=np.float64).reshape(n, 1)
        task = TaskKind.classification(len(class_names))

    return Dataset(
        name=schema.name,
        x=x,
        t=t,
        task=task,
        feature_names=tuple(feature_names),
        class_names=class_names,
    )


def normalize(d: Dataset, train_indices=None) -> Dataset:
    """Map every feature column affinely onto [-1, 1].

    Column statistics come from ``train_indices`` rows only (all rows when
    None), so validation and test rows may land slightly outside the
    interval; that is the price of not leaking their statistics. Columns
    that are constant on the training rows carry no information under an
    affine map and are dropped with a warning. The recorded
    ``feature_ranges`` allow the same map to be applied to new inputs later.
    """
    if train_indices is None:
        ref = d.x
    else:
        train_indices = np.asarray(train_indices, dtype=np.intp)
        if train_indices.size == 0:
            raise ValueError("train_indices is empty")
        ref = d.x[train_indices]
    lo = ref.min(axis=0)
    hi = ref.max(axis=0)
    keep = hi > lo
    if not np.any(keep):
        raise ValueError(
            f"{d.name}: every feature column is constant; nothing to train on"
        )
    if not np.all(keep):
        dropped = [d.feature_names[j] for j in np.flatnonzero(~keep)]
        log.warning(
            "%s: dropped %d constant feature column(s): %s",
            d.name,
            len(dropped),
            ", ".join(dropped),
        )
    lo = lo[keep]
    hi = hi[keep]
    x = -1.0 + 2.0 * (d.x[:, keep] - lo) / (hi - lo)
    names = tuple(nm for nm, k in zip(d.feature_names, keep) if k)
    ranges = tuple((float(a), float(b)) for a, b in zip(lo, hi))
    return dataclasses.replace(
        d, x=x, feature_names=names, feature_ranges=ranges
    )


def apply_feature_ranges(x, feature_ranges) -> np.ndarray:
    """Apply a recorded normalization map to new raw inputs."""
    x = as_matrix(x, "input matrix")
    if x.shape[1] != len(feature_ranges):
        raise ValueError(
            f"input has {x.shape[1]} columns but the recorded map covers "
            f"{len(feature_ranges)}"
        )
    lo = np.array([r[0] for r in feature_ranges])
    hi = np.array([r[1] for r in feature_ranges])
    return -1.0 + 2.0 * (x - lo) / (hi - lo)


def encode_targets(d: Dataset) -> Dataset:
    """Expand classification labels to one-hot rows; regression unchanged."""
    if d.task.kind == "regression" or d.encoded:
        return d
    k = d.task.num_classes
    labels = d.t[:, 0]
    rounded = np.rint(labels)
    if not np.array_equal(rounded, labels):
        raise ValueError("class labels must be integers")
    labels = rounded.astype(np.intp)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(
            f"class labels must lie in [0, {k}), found range "
            f"[{labels.min()}, {labels.max()}]"
        )
    t = np.zeros((d.n_samples, k))
    t[np.arange(d.n_samples), labels] = 1.0
    return dataclasses.replace(d, t=t)


def decode_outputs(y, num_classes: int) -> np.ndarray:
    """Row-argmax decode of network outputs back to class indices."""
    y = as_matrix(y, "output matrix")
    if y.shape[1] != num_classes:
        raise ValueError(
            f"outputs have {y.shape[1]} columns, expected {num_classes}"
        )
    return np.argmax(y, axis=1)


@dataclasses.dataclass(frozen=True)
class Split:
    """Disjoint, covering train/validation/test row indices."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    fractions: tuple
    seed: int


def _largest_remainder(total: int, fractions) -> list:
    """Integer part sizes for ``total`` items; ties go to the earlier part."""
    exact = [total * f for f in fractions]
    base = [int(math.floor(e)) for e in exact]
    leftover = total - sum(base)
    order = sorted(
        range(len(fractions)), key=lambda i: (-(exact[i] - base[i]), i)
    )
    for i in order[:leftover]:
        base[i] += 1
    return base


def _route_extras(leftovers, deficits):
    """Distribute leftover seats of each class over parts still short.

    Each (class, part) cell may take at most one extra seat, so the final
    count stays within one of the exact share. Routing one seat per cell
    while hitting the part totals exactly is a small transportation
    problem; solved by augmenting-path max flow on the class/part graph,
    which is deterministic and finds a valid routing whenever one exists.
    Any flow the unit caps cannot carry (not expected for real datasets)
    is placed greedily afterwards.
    """
    n_c, n_p = len(leftovers), len(deficits)
    n = n_c + n_p + 2
    src, snk = 0, n - 1
    cap = [[0] * n for _ in range(n)]
    for c in range(n_c):
        cap[src][1 + c] = leftovers[c]
        for p in range(n_p):
            cap[1 + c][1 + n_c + p] = 1
    for p in range(n_p):
        cap[1 + n_c + p][snk] = deficits[p]
    while True:
        parent = [-1] * n
        parent[src] = src
        queue = collections.deque([src])
        while queue and parent[snk] == -1:
            u = queue.popleft()
            for v in range(n):
                if parent[v] == -1 and cap[u][v] > 0:
                    parent[v] = u
                    queue.append(v)
        if parent[snk] == -1:
            break
        v, bottleneck = snk, max(leftovers, default=0) + 1
        while v != src:
            u = parent[v]
            bottleneck = min(bottleneck, cap[u][v])
            v = u
        v = snk
        while v != src:
            u = parent[v]
            cap[u][v] -= bottleneck
            cap[v][u] += bottleneck
            v = u
    # flow through a class->part edge accumulates on the reverse arc
    extra = [
        [cap[1 + n_c + p][1 + c] for p in range(n_p)] for c in range(n_c)
    ]
    unrouted = [leftovers[c] - sum(extra[c]) for c in range(n_c)]
    short = [
        deficits[p] - sum(extra[c][p] for c in range(n_c))
        for p in range(n_p)
    ]
    for c in range(n_c):
        while unrouted[c] > 0:
            p = max(range(n_p), key=lambda q: short[q])
            extra[c][p] += 1
            unrouted[c] -= 1
            short[p] -= 1
    return extra


def _stratified_counts(class_sizes, fractions, part_totals):
    """Per-class part counts whose column sums hit ``part_totals`` exactly."""
    n_parts = len(fractions)
    counts = [
        [int(math.floor(size * f)) for f in fractions] for size in class_sizes
    ]
    deficits = [
        part_totals[pi] - sum(counts[ci][pi] for ci in range(len(class_sizes)))
        for pi in range(n_parts)
    ]
    leftovers = [
        size - sum(counts[ci]) for ci, size in enumerate(class_sizes)
    ]
    extra = _route_extras(leftovers, deficits)
    for ci in range(len(class_sizes)):
        for pi in range(n_parts):
            counts[ci][pi] += extra[ci][pi]
    return counts


def split(d: Dataset, fractions=(0.5, 0.25, 0.25), seed=0) -> Split:
    """Deterministic train/validation/test split of a dataset.

    Part sizes follow the largest-remainder rule on ``fractions`` (ties to
    the earlier part). Classification datasets are stratified per class;
    the overall part sizes still match the unstratified answer. Raises
    StratificationError when any class would vanish from a part.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must name train, validation, test parts")
    if any(not (f > 0.0) for f in fractions):
        raise ValueError(f"all split fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")
    n = d.n_samples
    totals = _largest_remainder(n, fractions)
    if min(totals) == 0:
        raise ValueError(
            f"split of {n} samples with fractions {fractions} leaves an "
            f"empty part (sizes {totals})"
        )
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    if d.task.kind == "classification":
        labels = d.t.argmax(axis=1) if d.encoded else d.t[:, 0].astype(np.intp)
        class_values = np.unique(labels)
        class_sizes = [int(np.sum(labels == c)) for c in class_values]
        counts = _stratified_counts(class_sizes, fractions, totals)
        for ci, c in enumerate(class_values):
            for pi, cnt in enumerate(counts[ci]):
                if cnt == 0:
                    part = ("train", "validation", "test")[pi]
                    raise StratificationError(
                        f"class {int(c)} would have no samples in the "
                        f"{part} part"
                    )
            idx = np.flatnonzero(labels == c)
            idx = rng.permutation(idx)
            k0, k1, _ = counts[ci]
            parts[0].extend(idx[:k0])
            parts[1].extend(idx[k0 : k0 + k1])
            parts[2].extend(idx[k0 + k1 :])
    else:
        perm = rng.permutation(n)
        k0, k1, _ = totals
        parts[0] = perm[:k0]
        parts[1] = perm[k0 : k0 + k1]
        parts[2] = perm[k0 + k1 :]
    train, val, test = (
        np.sort(np.asarray(p, dtype=np.intp)) for p in parts
    )
    return Split(
        train=train,
        validation=val,
        test=test,
        fractions=tuple(fractions),
        seed=seed,
    )


def subset(d: Dataset, indices) -> Dataset:
    """Dataset restricted to the given rows."""
    indices = np.asarray(indices, dtype=np.intp)
    return dataclasses.replace(d, x=d.x[indices], t=d.t[indices])
