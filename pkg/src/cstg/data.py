"""Datasets: synthetic moving-XOR generators, rotated MNIST, CSV ingestion, splits."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, FormatError
from .objective import check_loss_kind


@dataclass
class Dataset:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    task: str
    feature_names: list[str] | None = None
    context_names: list[str] | None = None
    # Optional per-row metadata carried through subsetting.
    context_label: np.ndarray | None = None
    noise: np.ndarray | None = None
    groups: np.ndarray | None = None

    def __post_init__(self):
        check_loss_kind(self.task)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.z.ndim == 1:
            self.z = self.z[:, None]
        n = self.y.size
        if self.x.ndim != 2 or self.x.shape[0] != n or self.z.shape[0] != n:
            raise DataError(f"rows do not align: x {self.x.shape}, z {self.z.shape}, y {self.y.shape}")
        if not (np.isfinite(self.x).all() and np.isfinite(self.z).all() and np.isfinite(self.y).all()):
            raise DataError("dataset contains non-finite values")
        if self.task == "bce" and not np.all((self.y == 0) | (self.y == 1)):
            raise DataError("classification targets must be 0 or 1")

    def __len__(self):
        return self.y.size

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def context_dim(self) -> int:
        return self.z.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]
        return replace(self, x=self.x[idx], z=self.z[idx], y=self.y[idx],
                       context_label=pick(self.context_label), noise=pick(self.noise),
                       groups=pick(self.groups))

    def unique_contexts(self) -> np.ndarray:
        return np.unique(self.z, axis=0)


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _names(prefix, k):
    return [f"{prefix}{i}" for i in range(k)]


# -- moving XOR generators ------------------------------------------------------

XOR1_PAIRS = ((0, 1), (1, 2), (2, 3))
XOR2_BRANCHES = (((0, 0.5), (1, 1.0)),
                 ((0, 1.0), (1, 0.5)),
                 ((2, 0.5), (3, 1.0)),
                 ((2, 1.0), (3, 0.5)))
XOR3_SUPPORT = ((0, 1), (2, 3))
XOR4_SUPPORT = ((0, 1), (2, 3, 4, 5))


def xor1_target(x, label):
    pair = np.asarray(XOR1_PAIRS)[label]
    rows = np.arange(len(label))
    prod = x[rows, pair[:, 0]] * x[rows, pair[:, 1]]
    return (prod > 0).astype(np.float64)


def xor2_target(x, label):
    coef = np.zeros((4, x.shape[1]))
    for k, branch in enumerate(XOR2_BRANCHES):
        for d, c in branch:
            coef[k, d] = c
    return np.maximum(np.einsum("nd,nd->n", x, coef[label]), 0.0)


def linear_support_target(x, label, supports, noise):
    mask = np.zeros((len(supports), x.shape[1]))
    for k, sup in enumerate(supports):
        mask[k, list(sup)] = 1.0
    return np.einsum("nd,nd->n", x, mask[label]) + noise


def gen_xor1(n: int = 1500, seed: int = 0, n_features: int = 20) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.choice(np.array([-1.0, 1.0]), size=(n, n_features))
    label = rng.integers(0, 3, size=n)
    return Dataset(x, one_hot(label, 3), xor1_target(x, label), "bce",
                   _names("x", n_features), _names("z", 3), context_label=label)


def gen_xor2(n: int = 1000, seed: int = 0, n_features: int = 25) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, n_features))
    label = rng.integers(0, 4, size=n)
    return Dataset(x, one_hot(label, 4), xor2_target(x, label), "mse",
                   _names("x", n_features), _names("z", 4), context_label=label)


def _gen_linear(supports, n, seed, n_features):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, n_features))
    label = rng.integers(0, 2, size=n)
    noise = rng.normal(0.0, 0.5, size=n)
    y = linear_support_target(x, label, supports, noise)
    return Dataset(x, one_hot(label, 2), y, "mse", _names("x", n_features), _names("z", 2),
                   context_label=label, noise=noise)


def gen_xor3(n: int = 1000, seed: int = 0, n_features: int = 25) -> Dataset:
    return _gen_linear(XOR3_SUPPORT, n, seed, n_features)


def gen_xor4(n: int = 1000, seed: int = 0, n_features: int = 25) -> Dataset:
    return _gen_linear(XOR4_SUPPORT, n, seed, n_features)


GENERATORS = {"xor1": gen_xor1, "xor2": gen_xor2, "xor3": gen_xor3, "xor4": gen_xor4}


# -- IDX / MNIST ------------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path, magic, ndim):
    with open(path, "rb") as fh:
        blob = fh.read()
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise FormatError(f"{path}: truncated header", offset=len(blob))
    (got,) = struct.unpack(">I", blob[:4])
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    dims = struct.unpack(">" + "I" * ndim, blob[4:header])
    count = int(np.prod(dims))
    if len(blob) - header < count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(blob) - header}",
                          offset=len(blob))
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label pair; pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"{labels_path}: label {labels[bad[0]]} outside 0-9", offset=8 + int(bad[0]))
    return images.astype(np.float64) / 255.0, labels.astype(int)


def write_idx(images, labels, images_path, labels_path) -> None:
    """Write uint8 images (n x rows x cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def rotate_image(img: np.ndarray, k: int) -> np.ndarray:
    """Rotate by ``45 * k`` degrees about the image centre, bilinear, zero fill."""
    if k % 8 == 0:
        return np.array(img, dtype=np.float64)
    out = ndimage.rotate(np.asarray(img, dtype=np.float64), 45.0 * k, reshape=False,
                         order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def make_rotating_mnist(images, labels, digits=(4, 9), seed: int = 0) -> Dataset:
    """Eight rotated copies (multiples of 45 degrees) of every kept image.

    Targets are 1 for ``digits[1]`` and 0 for ``digits[0]``; the context is the
    one-hot rotation index.  ``groups`` records the source image so splits can
    keep all rotations of an image together.
    """
    digits = tuple(digits)
    keep = np.flatnonzero(np.isin(labels, digits))
    if keep.size == 0:
        raise DataError(f"no images with digits {digits}")
    images = np.asarray(images, dtype=np.float64)[keep]
    target = (np.asarray(labels)[keep] == digits[1]).astype(np.float64)
    n, h, w = images.shape
    x = np.empty((n * 8, h * w))
    for k in range(8):
        for i in range(n):
            x[i * 8 + k] = rotate_image(images[i], k).ravel()
    rot = np.tile(np.arange(8), n)
    order = np.random.default_rng(seed).permutation(n * 8)
    src = np.repeat(keep, 8)
    return Dataset(x[order], one_hot(rot, 8)[order], np.repeat(target, 8)[order], "bce",
                   _names("px", h * w), [f"rot{45 * k}" for k in range(8)],
                   context_label=rot[order], groups=src[order])


# -- CSV ingestion ----------------------------------------------------------------


def load_csv(path, context_columns, target_column, task, categorical=()) -> Dataset:
    """Tabular CSV with a header row.

    Columns listed in ``categorical`` are one-hot expanded (one column per
    observed value, sorted) before the x/z split.  All other cells must parse
    as floats.
    """
    check_loss_kind(task)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        records = list(reader)
    declared = [*context_columns, target_column, *categorical]
    missing = [c for c in declared if c not in header]
    if missing:
        raise ConfigError(f"{path}: missing declared column(s) {', '.join(missing)}")
    if target_column in context_columns:
        raise ConfigError(f"target column {target_column!r} is also a context column")

    col = {h: i for i, h in enumerate(header)}
    bad = []
    numeric = {}
    for h in header:
        if h in categorical:
            continue
        vals = np.empty(len(records))
        for r, rec in enumerate(records):
            try:
                vals[r] = float(rec[col[h]])
                if not np.isfinite(vals[r]):
                    raise ValueError
            except (ValueError, IndexError):
                bad.append((r + 2, h))
        numeric[h] = vals
    if bad:
        listing = ", ".join(f"row {r} column {c!r}" for r, c in bad[:20])
        raise DataError(f"{path}: unparsable or missing cells: {listing}")

    expanded: dict[str, list[tuple[str, np.ndarray]]] = {}
    for h in categorical:
        raw = [rec[col[h]].strip() if col[h] < len(rec) else "" for rec in records]
        values = sorted(set(raw))
        expanded[h] = [(f"{h}={v}", np.array([r == v for r in raw], dtype=np.float64)) for v in values]

    def columns(names):
        out = []
        for h in names:
            out.extend(expanded[h] if h in expanded else [(h, numeric[h])])
        return out

    ctx = columns(context_columns)
    feats = columns([h for h in header if h not in context_columns and h != target_column])
    if not feats:
        raise ConfigError(f"{path}: no explanatory columns left")
    x = np.column_stack([v for _, v in feats])
    z = np.column_stack([v for _, v in ctx]) if ctx else np.zeros((len(records), 0))
    return Dataset(x, z, numeric[target_column], task,
                   [n for n, _ in feats], [n for n, _ in ctx])


def save_cache(ds: Dataset, path) -> None:
    """Serialize as CSV with ``x_*``, ``z_*`` and ``y`` columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*(f"x_{i}" for i in range(ds.n_features)),
                    *(f"z_{j}" for j in range(ds.context_dim)), "y"])
        for xr, zr, yv in zip(ds.x, ds.z, ds.y):
            w.writerow([*map(repr, xr.tolist()), *map(repr, zr.tolist()), repr(float(yv))])


def load_cache(path, task: str | None = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        try:
            arr = np.array([[float(v) for v in rec] for rec in reader], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    xi = [i for i, h in enumerate(header) if h.startswith("x_")]
    zi = [i for i, h in enumerate(header) if h.startswith("z_")]
    if "y" not in header or not xi:
        raise FormatError(f"{path}: cache needs x_* columns and a y column")
    arr = arr.reshape(-1, len(header))
    y = arr[:, header.index("y")]
    if task is None:
        task = "bce" if np.all((y == 0) | (y == 1)) else "mse"
    return Dataset(arr[:, xi], arr[:, zi], y, task,
                   [header[i][2:] for i in xi], [header[i][2:] for i in zi])


# -- splitting --------------------------------------------------------------------


@dataclass
class SplitPlan:
    seed: int = 0
    folds: int | None = None
    fractions: tuple[float, float, float] | None = None
    stratify: bool = True

    def __post_init__(self):
        if (self.folds is None) == (self.fractions is None):
            raise ConfigError("split plan needs exactly one of folds / fractions")
        if self.folds is not None and self.folds < 2:
            raise ConfigError(f"need at least 2 folds, got {self.folds}")
        if self.fractions is not None:
            if len(self.fractions) != 3 or min(self.fractions) < 0 or \
                    abs(sum(self.fractions) - 1.0) > 1e-9:
                raise ConfigError(f"fractions must be three nonnegative values summing to 1, "
                                  f"got {self.fractions}")


def _interleaved_order(strata: np.ndarray, rng) -> np.ndarray:
    """Random permutation arranged so that any contiguous or strided slice is
    close to class-balanced."""
    keys = np.empty(strata.size)
    for cls in np.unique(strata):
        members = np.flatnonzero(strata == cls)
        members = members[rng.permutation(members.size)]
        keys[members] = (np.arange(members.size) + rng.uniform()) / members.size
    return np.argsort(keys, kind="stable")


def split(ds: Dataset, plan: SplitPlan):
    """Folds (list of test-index arrays) or a (train, val, test) triple of index arrays.

    When the dataset carries ``groups`` all rows of a group land in the same part.
    """
    rng = np.random.default_rng(plan.seed)
    if ds.groups is not None:
        units, first, inverse = np.unique(ds.groups, return_index=True, return_inverse=True)
        unit_labels = ds.y[first]
    else:
        units = np.arange(len(ds))
        inverse = units
        unit_labels = ds.y
    m = units.size
    strata = unit_labels if plan.stratify and ds.task == "bce" else np.zeros(m)
    order = _interleaved_order(strata, rng)

    def expand(unit_idx):
        unit_idx = np.sort(unit_idx)
        if ds.groups is None:
            return unit_idx
        return np.flatnonzero(np.isin(inverse, unit_idx))

    if plan.folds is not None:
        if plan.folds > m:
            raise ConfigError(f"{plan.folds} folds requested for {m} samples")
        return [expand(order[f::plan.folds]) for f in range(plan.folds)]

    n_train = int(round(plan.fractions[0] * m))
    n_val = int(round(plan.fractions[1] * m))
    n_val = min(n_val, m - n_train)
    parts = np.split(order, [n_train, n_train + n_val])
    return tuple(expand(p) for p in parts)


def complement(n: int, idx) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[idx] = False
    return np.flatnonzero(mask)
