"""File formats: feature tables, score matrices, curves, partitions and models.

All floats are written with 17 significant digits so every value reads
back to the same double. JSON documents are emitted by a small writer
(rather than :mod:`json`) to control that float format; they are read back
with :func:`json.loads`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    Dataset,
    InvalidInputError,
    LabeledFeature,
    OpenSetError,
    ScoreMatrix,
    ValidationError,
    validate_dataset,
)
from .evm import EvmConfig, EvmGalleryModel, SubjectModel
from .evt import WeibullFit
from .evaluation import CurvePoint
from .protocol import ProtocolPartition
from .subspace import LdaModel, PcaModel, SubspaceModel


class ParseError(OpenSetError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def fmt(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInputError(f"cannot serialize non-finite value {x}")
    return format(x, ".17g")


# -- JSON -------------------------------------------------------------------


def _scalar(obj) -> str | None:
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    return None


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with 17-significant-digit floats; scalar lists stay on one line."""
    s = _scalar(obj)
    if s is not None:
        return s
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {dumps(v, indent, _level + 1)}"
            for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        scalars = [_scalar(v) for v in obj]
        if all(v is not None for v in scalars):
            return "[" + ", ".join(scalars) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc.msg}", exc.lineno) from exc


# -- feature tables -----------------------------------------------------------


def parse_feature_table(text: str, check: bool = True) -> Dataset:
    """Parse a feature CSV; with ``check`` the dataset must also pass validation."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file", 1) from None
    if len(header) < 3 or header[:2] != ["identity", "image"]:
        raise ParseError("header must be 'identity,image,f0,...'", 1)
    dim = len(header) - 2
    records = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != dim + 2:
            raise ParseError(f"expected {dim + 2} columns, found {len(row)}", line)
        identity, image = row[0], row[1]
        if not identity:
            raise ParseError("empty identity", line)
        try:
            index = int(image)
        except ValueError:
            raise ParseError(f"image index {image!r} is not an integer", line) from None
        try:
            values = np.array([float(v) for v in row[2:]], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"bad feature value: {exc}", line) from None
        values.flags.writeable = False
        records.append((line, LabeledFeature(identity, index, values)))
    if not records:
        raise ParseError("no records")
    problems = validate_dataset([r for _, r in records]) if check else []
    if problems:
        raise ValidationError(f"{len(problems)} violation(s); first: {problems[0]}")
    return Dataset.from_records(r for _, r in records)


def read_feature_table(path) -> Dataset:
    return parse_feature_table(Path(path).read_text(encoding="utf-8"))


def format_feature_table(d: Dataset) -> str:
    out = io.StringIO()
    out.write(",".join(["identity", "image"] + [f"f{i}" for i in range(d.dimension)]) + "\n")
    for r in d:
        if any(c in r.identity for c in ',\n\r"'):
            raise InvalidInputError(f"identity {r.identity!r} cannot be written to a feature table")
        out.write(f"{r.identity},{r.image_index}," + ",".join(fmt(v) for v in r.feature) + "\n")
    return out.getvalue()


def write_feature_table(path, d: Dataset) -> None:
    Path(path).write_text(format_feature_table(d), encoding="utf-8")


# -- score matrices and curves ------------------------------------------------


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def write_score_matrix(path, m: ScoreMatrix) -> None:
    rows = (
        [ident, str(idx)] + [fmt(v) for v in row]
        for (ident, idx), row in zip(m.probe_keys, m.scores)
    )
    Path(path).write_text(
        _csv_text(["identity", "image", *m.gallery_subjects], rows), encoding="utf-8"
    )


def read_score_matrix(path) -> ScoreMatrix:
    reader = csv.reader(io.StringIO(Path(path).read_text(encoding="utf-8")))
    header = next(reader, None)
    if not header or header[:2] != ["identity", "image"] or len(header) < 3:
        raise ParseError("score header must be 'identity,image,<subject>,...'", 1)
    keys, values = [], []
    for row in reader:
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, found {len(row)}", reader.line_num)
        try:
            keys.append((row[0], int(row[1])))
            values.append([float(v) for v in row[2:]])
        except ValueError as exc:
            raise ParseError(str(exc), reader.line_num) from None
    return ScoreMatrix(tuple(keys), tuple(header[2:]), np.array(values).reshape(len(keys), -1))


def write_cmc(path, curve: Sequence[CurvePoint]) -> None:
    Path(path).write_text(
        _csv_text(["rank", "cmc"], ([str(int(p.x)), fmt(p.y)] for p in curve)), encoding="utf-8"
    )


def write_dir(path, curve: Sequence[CurvePoint]) -> None:
    Path(path).write_text(
        _csv_text(["far", "dir"], ([fmt(p.x), fmt(p.y)] for p in curve)), encoding="utf-8"
    )


def write_roc(path, curve: Sequence[CurvePoint]) -> None:
    rows = ([fmt(p.x), fmt(p.y), fmt(p.threshold)] for p in curve)
    Path(path).write_text(_csv_text(["fmr", "tmr", "threshold"], rows), encoding="utf-8")


# -- partition and models -----------------------------------------------------


def write_partition(path, p: ProtocolPartition) -> None:
    write_json(path, p.to_dict())


def read_partition(path) -> ProtocolPartition:
    return ProtocolPartition.from_dict(read_json(path))


def subspace_to_dict(m: SubspaceModel) -> dict:
    doc = {
        "kind": "pca+lda",
        "input_dim": m.input_dim,
        "output_dim": m.output_dim,
        "retention": m.retention,
        "mean": m.mean,
        "matrix": m.matrix,
    }
    if m.pca is not None:
        doc["pca"] = {
            "components": m.pca.components,
            "explained_variance": m.pca.explained_variance,
            "total_variance": m.pca.total_variance,
        }
    if m.lda is not None:
        doc["lda"] = {
            "projection": m.lda.projection,
            "eigenvalues": m.lda.eigenvalues,
            "class_count": m.lda.class_count,
        }
    return doc


def subspace_from_dict(doc: dict) -> SubspaceModel:
    try:
        mean = np.array(doc["mean"], dtype=np.float64)
        matrix = np.array(doc["matrix"], dtype=np.float64).reshape(doc["input_dim"], doc["output_dim"])
        retention = float(doc["retention"])
        pca = lda = None
        if "pca" in doc:
            p = doc["pca"]
            pca = PcaModel(
                mean,
                np.array(p["components"], dtype=np.float64).reshape(-1, mean.size),
                np.array(p["explained_variance"], dtype=np.float64),
                float(p["total_variance"]),
                retention,
            )
        if "lda" in doc:
            d = doc["lda"]
            lda = LdaModel(
                np.array(d["projection"], dtype=np.float64).reshape(-1, matrix.shape[1]),
                np.array(d["eigenvalues"], dtype=np.float64),
                int(d["class_count"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed subspace model: {exc}") from exc
    return SubspaceModel(mean, matrix, retention, pca, lda)


def evm_to_dict(m: EvmGalleryModel) -> dict:
    cfg = m.config
    return {
        "config": {
            "alpha": cfg.alpha,
            "tail_size": int(cfg.tail_size),
            "fusion": cfg.fusion.value,
            "scale_query": cfg.scale_query,
        },
        "subjects": {
            s.identity: [
                {
                    "feature": anchor,
                    "shape": f.shape,
                    "scale": f.scale,
                    "tail_size_used": f.tail_size_used,
                    "clamped": f.clamped,
                }
                for anchor, f in zip(s.anchors, s.fits)
            ]
            for s in m.subjects
        },
    }


def evm_from_dict(doc: dict) -> EvmGalleryModel:
    try:
        c = doc["config"]
        cfg = EvmConfig(float(c["alpha"]), int(c["tail_size"]), c["fusion"], bool(c["scale_query"]))
        subjects = []
        for identity, entries in doc["subjects"].items():
            fits = tuple(
                WeibullFit(float(e["shape"]), float(e["scale"]), int(e["tail_size_used"]), bool(e["clamped"]))
                for e in entries
            )
            anchors = np.array([e["feature"] for e in entries], dtype=np.float64)
            subjects.append(SubjectModel(identity, anchors, fits))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed EVM model: {exc}") from exc
    if not subjects:
        raise ParseError("EVM model has no subjects")
    return EvmGalleryModel(cfg, tuple(subjects))


def write_subspace(path, m: SubspaceModel) -> None:
    write_json(path, subspace_to_dict(m))


def read_subspace(path) -> SubspaceModel:
    return subspace_from_dict(read_json(path))


def write_evm(path, m: EvmGalleryModel) -> None:
    write_json(path, evm_to_dict(m))


def read_evm(path) -> EvmGalleryModel:
    return evm_from_dict(read_json(path))
