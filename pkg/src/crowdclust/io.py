"""File formats: annotation/gold CSVs, flat key=value config files, run manifests.

Annotation files carry a header `instance_id,user_id,label` with arbitrary
string ids and integer labels 1..C; ids map to dense indices in first-seen
order, which the manifest records. Parsers reject rather than coerce, and
report row numbers.
"""

import ast
import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import Hyperparameters, LabelMatrix
from .errors import ValidationError
from .gibbs import ChainConfig

__version__ = "0.1.0"

__all__ = [
    "read_annotations",
    "write_annotations",
    "read_gold",
    "write_gold",
    "parse_config_file",
    "split_config",
    "make_hyperparameters",
    "make_chain_config",
    "RunManifest",
    "sha256_file",
    "write_json",
]


def read_annotations(path, n_categories=None):
    """Parse an annotation CSV; returns (LabelMatrix, instance_ids, user_ids)."""
    instance_ids, user_ids = [], []
    inst_index, user_index = {}, {}
    rows = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != [
            "instance_id", "user_id", "label",
        ]:
            raise ValidationError(
                f"{path}: expected header 'instance_id,user_id,label', got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            iid, uid, lab = (col.strip() for col in row)
            try:
                label = int(lab)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: label {lab!r} is not an integer") from None
            if label < 1:
                raise ValidationError(f"{path}:{lineno}: label must be >= 1, got {label}")
            if iid not in inst_index:
                inst_index[iid] = len(instance_ids)
                instance_ids.append(iid)
            if uid not in user_index:
                user_index[uid] = len(user_ids)
                user_ids.append(uid)
            key = (inst_index[iid], user_index[uid])
            if key in seen:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate annotation for instance {iid!r}, user {uid!r}"
                )
            seen.add(key)
            rows.append((key[0], key[1], label, lineno))
    if not rows:
        raise ValidationError(f"{path}: no annotations")
    C = int(n_categories) if n_categories is not None else max(r[2] for r in rows)
    bad = [r for r in rows if r[2] > C]
    if bad:
        raise ValidationError(
            f"{path}:{bad[0][3]}: label {bad[0][2]} outside 1..{C}"
        )
    labels = LabelMatrix.from_entries(
        len(instance_ids), len(user_ids), C, [(i, u, y) for i, u, y, _ in rows]
    )
    return labels, instance_ids, user_ids


def write_annotations(path, labels, instance_ids, user_ids):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "user_id", "label"])
        for i, u, y in zip(labels.instances, labels.users, labels.labels):
            writer.writerow([instance_ids[i], user_ids[u], int(y)])


def read_gold(path, instance_ids, n_categories):
    """Parse a gold CSV (`instance_id,label`) aligned to instance_ids; every
    instance must be covered and every gold id known."""
    index = {iid: k for k, iid in enumerate(instance_ids)}
    gold = np.zeros(len(instance_ids), dtype=np.int64)
    filled = np.zeros(len(instance_ids), dtype=bool)
    unknown = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["instance_id", "label"]:
            raise ValidationError(f"{path}: expected header 'instance_id,label', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            iid, lab = row[0].strip(), row[1].strip()
            try:
                label = int(lab)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: label {lab!r} is not an integer") from None
            if not (1 <= label <= n_categories):
                raise ValidationError(
                    f"{path}:{lineno}: label {label} outside 1..{n_categories}"
                )
            if iid not in index:
                unknown.append(iid)
                continue
            gold[index[iid]] = label
            filled[index[iid]] = True
    if unknown:
        raise ValidationError(f"{path}: gold ids not present in annotations: {unknown[:10]}")
    if not filled.all():
        missing = [instance_ids[k] for k in np.nonzero(~filled)[0][:10]]
        raise ValidationError(f"{path}: no gold label for instances {missing}")
    return gold


def write_gold(path, instance_ids, gold):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "label"])
        for iid, y in zip(instance_ids, gold):
            writer.writerow([iid, int(y)])


def parse_config_file(path):
    """Flat `key = value` lines; values parse as Python literals (lists for
    vectors/matrices), falling back to bare strings. '#' starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key or not value:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            try:
                out[key] = ast.literal_eval(value)
            except (ValueError, SyntaxError):
                out[key] = value
    return out


_CHAIN_KEYS = {f.name for f in fields(ChainConfig)}
_HYPER_KEYS = {f.name for f in fields(Hyperparameters)}


def split_config(config):
    """Split a flat config dict into (hyper overrides, chain overrides); unknown keys fail."""
    hyper, chain = {}, {}
    for key, value in config.items():
        if key in _HYPER_KEYS:
            hyper[key] = value
        elif key in _CHAIN_KEYS:
            chain[key] = value
        else:
            raise ValidationError(
                f"unknown config key {key!r}; hyperparameter keys: {sorted(_HYPER_KEYS)}; "
                f"chain keys: {sorted(_CHAIN_KEYS)}"
            )
    return hyper, chain


def _broadcast_hyper(key, value, C):
    """Scalars broadcast to the field's natural shape; lists pass through."""
    if key in ("eta", "gamma"):
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            raise ValidationError(f"{key} must be a C x C matrix of rows summing to 1")
        return arr
    if key in ("beta", "mu", "phi", "a_t", "b_t"):
        arr = np.asarray(value, dtype=float)
        return np.full(C, float(arr)) if arr.ndim == 0 else arr
    return value


def make_hyperparameters(n_categories, overrides=None):
    defaults = Hyperparameters.defaults(n_categories)
    if not overrides:
        return defaults
    kwargs = {f.name: getattr(defaults, f.name) for f in fields(Hyperparameters)}
    for key, value in overrides.items():
        kwargs[key] = _broadcast_hyper(key, value, n_categories)
    return Hyperparameters(**kwargs)


def make_chain_config(overrides=None, **direct):
    kwargs = {}
    if overrides:
        kwargs.update(overrides)
    for key, value in direct.items():
        if value is not None:
            kwargs[key] = value
    unknown = set(kwargs) - _CHAIN_KEYS
    if unknown:
        raise ValidationError(f"unknown chain config keys {sorted(unknown)}")
    return ChainConfig(**kwargs)


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path, payload):
    """Deterministic JSON: sorted keys, fixed separators, trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


@dataclass
class RunManifest:
    """Everything needed to reproduce a command's outputs bit for bit
    (duration is informational and excluded from reproduction comparisons)."""

    command: str
    arguments: dict
    seed: int
    input_digests: dict
    software_version: str = __version__
    duration_seconds: float = 0.0
    instance_ids: list = field(default_factory=list)
    user_ids: list = field(default_factory=list)

    def write(self, path):
        write_json(path, asdict(self))

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))
