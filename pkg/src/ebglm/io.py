"""CSV ingestion and the on-disk model document.

Model documents are JSON text.  Floats are written with 17 significant
digits, so every binary64 value survives a save/load cycle unchanged.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ModelFormatError
from .family import Family
from .objective import Dataset, Standardization
from .priors import Prior, prior_from_dict

FORMAT_NAME = "ebglm-model"
FORMAT_VERSION = 1


# -- CSV ---------------------------------------------------------------------


def _read_rows(path):
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [(k + 1, row) for k, row in enumerate(csv.reader(fh)) if row and any(c.strip() for c in row)]
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except (UnicodeDecodeError, csv.Error) as exc:
        raise DataError(f"{path}: cannot parse as CSV ({exc})") from None
    if not rows:
        raise DataError(f"{path}: file is empty")
    return rows


def _split_header(path, rows, has_header):
    if has_header:
        line, header = rows[0]
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        body = rows[1:]
    else:
        header = [f"x{j + 1}" for j in range(len(rows[0][1]))]
        body = rows
    if not body:
        raise DataError(f"{path}: no data rows")
    return header, body


def _numeric(path, header, body) -> np.ndarray:
    width = len(header)
    out = np.empty((len(body), width))
    for i, (line, row) in enumerate(body):
        if len(row) != width:
            raise DataError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise DataError(
                    f"{path}: non-numeric or non-finite cell {cell.strip()!r} "
                    f"at line {line}, column {header[j]!r}"
                )
            out[i, j] = v
    return out


def _column_index(header, column, path) -> int:
    if isinstance(column, (int, np.integer)):
        idx = int(column)
    elif column in header:
        return header.index(column)
    elif isinstance(column, str) and column.lstrip("-").isdigit():
        idx = int(column)
    else:
        raise DataError(f"{path}: response column {column!r} not found")
    if not -len(header) <= idx < len(header):
        raise DataError(f"{path}: response column index {idx} out of range")
    return idx % len(header)


def read_table(path, has_header: bool = True):
    """(column names, float matrix) from a rectangular numeric CSV."""
    rows = _read_rows(path)
    header, body = _split_header(path, rows, has_header)
    return header, _numeric(path, header, body)


def load_csv(path, has_header: bool = True, response_column="y", intercept: bool = True,
             standardize: bool = False) -> Dataset:
    """Read a training set; the response is a column name or a 0-based index."""
    header, data = read_table(path, has_header)
    k = _column_index(header, response_column, path)
    keep = [j for j in range(len(header)) if j != k]
    if not keep:
        raise DataError(f"{path}: no feature columns besides the response")
    try:
        return Dataset.from_features(
            data[:, keep], data[:, k], intercept=intercept, standardize=standardize,
            feature_names=tuple(header[j] for j in keep), response_name=header[k],
        )
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def load_features(path, feature_names, has_header: bool = True) -> np.ndarray:
    """Feature rows for prediction, columns ordered as in ``feature_names``.

    With a header, columns are picked by name (extra columns such as the
    response are ignored).  Without one, the file must hold exactly the
    feature columns in training order.
    """
    header, data = read_table(path, has_header)
    feature_names = list(feature_names)
    if has_header:
        missing = [f for f in feature_names if f not in header]
        if missing:
            raise DataError(f"{path}: missing feature column(s) {missing}")
        return data[:, [header.index(f) for f in feature_names]]
    if data.shape[1] != len(feature_names):
        raise DataError(f"{path}: {data.shape[1]} columns, model expects {len(feature_names)}")
    return data


def fmt_float(v) -> str:
    text = "%.17g" % v
    if not any(c in text for c in ".en"):
        text += ".0"
    return text


def write_csv(path, header, columns):
    """Write equal-length columns; floats get 17 significant digits."""
    columns = [np.asarray(c) for c in columns]
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(fmt_float(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    text = "\n".join(lines) + "\n"
    if path in (None, "-"):
        import sys
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# -- model document ----------------------------------------------------------


@dataclass(frozen=True)
class Coefficient:
    name: str
    theta: float
    posterior_sd: float
    nonzero_prob: float
    z: float
    s2: float


@dataclass(frozen=True)
class TrainingMeta:
    n: int
    p: int
    objective_final: float
    converged: bool
    iters: tuple
    seed: int


@dataclass(frozen=True)
class ModelDocument:
    family: Family
    prior: Prior
    has_intercept: bool
    standardization: Standardization | None
    coefficients: tuple
    meta: TrainingMeta
    response_name: str | None = None
    format_version: int = FORMAT_VERSION
    _theta: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(self.coefficients))
        object.__setattr__(self, "_theta", np.array([c.theta for c in self.coefficients], dtype=float))

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @property
    def coef_names(self) -> list[str]:
        return [c.name for c in self.coefficients]

    @property
    def feature_names(self) -> tuple:
        names = self.coef_names
        return tuple(names[1:] if self.has_intercept else names)

    def __eq__(self, other):
        if not isinstance(other, ModelDocument):
            return NotImplemented
        return dumps_model(self) == dumps_model(other)

    __hash__ = None

    @classmethod
    def from_fit(cls, fit) -> "ModelDocument":
        sm = fit.summary
        coefs = tuple(
            Coefficient(name, float(fit.theta[j]), float(sm.sd[j]), float(sm.nonzero_prob[j]),
                        float(sm.z[j]), float(fit.s2[j]))
            for j, name in enumerate(fit.coef_names)
        )
        meta = TrainingMeta(int(fit.n), len(fit.theta), float(fit.objective), bool(fit.converged),
                            (int(fit.outer_iters), int(fit.inner_iters)), int(fit.seed))
        return cls(fit.family, fit.prior, bool(fit.has_intercept), fit.standardization, coefs, meta,
                   fit.response_name)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "format_version": self.format_version,
            "family": {"name": self.family.cli_name, "dispersion": self.family.dispersion},
            "prior": self.prior.to_dict(),
            "has_intercept": self.has_intercept,
            "standardization": None if self.standardization is None else self.standardization.to_dict(),
            "response_name": self.response_name,
            "coefficients": [
                {"name": c.name, "theta": c.theta, "posterior_sd": c.posterior_sd,
                 "nonzero_prob": c.nonzero_prob, "z": c.z, "s2": c.s2}
                for c in self.coefficients
            ],
            "meta": {
                "n": self.meta.n, "p": self.meta.p, "objective_final": self.meta.objective_final,
                "converged": self.meta.converged, "iters": list(self.meta.iters), "seed": self.meta.seed,
            },
        }


def _emit(obj, indent: int, level: int = 0) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        # NaN (nonzero_prob of a spikeless prior) is stored as null
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_emit(v, indent) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _emit(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, dict):
        items = [pad + json.dumps(k) + ": " + _emit(v, indent, level + 1) for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_model(doc: ModelDocument) -> str:
    return _emit(doc.to_dict(), indent=2) + "\n"


def _need(d, key, types, where):
    if not isinstance(d, dict) or key not in d:
        raise ModelFormatError(f"model document: missing field {where}{key!r}")
    v = d[key]
    if not isinstance(v, types) or (isinstance(v, bool) and bool not in _as_tuple(types)):
        raise ModelFormatError(f"model document: field {where}{key!r} has the wrong type")
    return v


def _as_tuple(t):
    return t if isinstance(t, tuple) else (t,)


_NUM = (int, float)


def _num(d, key, where, allow_null=False):
    v = d.get(key) if isinstance(d, dict) else None
    if v is None and allow_null and isinstance(d, dict) and key in d:
        return math.nan
    return float(_need(d, key, _NUM, where))


def loads_model(text: str) -> ModelDocument:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model document is truncated or malformed: {exc}") from None
    if not isinstance(raw, dict) or raw.get("format") != FORMAT_NAME:
        raise ModelFormatError("not an ebglm model document")
    version = _need(raw, "format_version", int, "")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"model format_version {version} is not supported (expected {FORMAT_VERSION})")
    try:
        fam_d = _need(raw, "family", dict, "")
        family = Family(_need(fam_d, "name", str, "family."), _num(fam_d, "dispersion", "family."))
        prior = prior_from_dict(_need(raw, "prior", dict, ""))
        has_intercept = _need(raw, "has_intercept", bool, "")
        std_d = raw.get("standardization", "absent")
        if std_d == "absent":
            raise ModelFormatError("model document: missing field 'standardization'")
        std = None
        if std_d is not None:
            center = np.array(_need(std_d, "center", list, "standardization."), dtype=float)
            scale = np.array(_need(std_d, "scale", list, "standardization."), dtype=float)
            std = Standardization(center, scale)
        response_name = raw.get("response_name")
        coefs = []
        for k, c in enumerate(_need(raw, "coefficients", list, "")):
            where = f"coefficients[{k}]."
            coefs.append(Coefficient(
                _need(c, "name", str, where), _num(c, "theta", where), _num(c, "posterior_sd", where),
                _num(c, "nonzero_prob", where, allow_null=True), _num(c, "z", where), _num(c, "s2", where),
            ))
        m = _need(raw, "meta", dict, "")
        iters = _need(m, "iters", list, "meta.")
        if len(iters) != 2 or not all(isinstance(i, int) for i in iters):
            raise ModelFormatError("model document: meta.iters must be two integers")
        meta = TrainingMeta(_need(m, "n", int, "meta."), _need(m, "p", int, "meta."),
                            _num(m, "objective_final", "meta."), _need(m, "converged", bool, "meta."),
                            tuple(iters), _need(m, "seed", int, "meta."))
    except ModelFormatError:
        raise
    except (DataError, KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model document violates the schema: {exc}") from None
    if meta.p != len(coefs):
        raise ModelFormatError(f"model document lists {len(coefs)} coefficients but meta.p = {meta.p}")
    n_feat = len(coefs) - (1 if has_intercept else 0)
    if std is not None and (std.center.shape != (n_feat,) or std.scale.shape != (n_feat,)):
        raise ModelFormatError("model document: standardization length does not match the features")
    return ModelDocument(family, prior, has_intercept, std, coefs, meta, response_name, version)


def save_model(model, path) -> ModelDocument:
    """Write a FitResult or ModelDocument; returns the document written."""
    doc = model if isinstance(model, ModelDocument) else ModelDocument.from_fit(model)
    Path(path).write_bytes(dumps_model(doc).encode("utf-8"))
    return doc


def load_model(path) -> ModelDocument:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
    except UnicodeDecodeError:
        raise ModelFormatError(f"{path}: model document is not UTF-8 text") from None
    return loads_model(text)
