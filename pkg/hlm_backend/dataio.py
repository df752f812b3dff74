"""CSV ingestion, dataset export and trace/report files."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DataValidationError, ParameterValidationError
from .models import Dataset
from .sampler import Chain

logger = logging.getLogger(__name__)

DEFAULT_SENTINELS = ("", "NA")
TRACE_PATTERN = re.compile(r"^chain_(\d+)\.csv$")


@dataclass(frozen=True)
class ColumnSchema:
    """Maps file columns onto the roles of a two-level dataset."""

    outcome: str
    cluster: str
    level1: Tuple[str, ...] = ()
    level2: Tuple[str, ...] = ()
    partial: Tuple[str, ...] = ()
    missing: Tuple[str, ...] = DEFAULT_SENTINELS
    center: Tuple[str, ...] = ()
    delimiter: str = ","

    def __post_init__(self) -> None:
        for name in ("level1", "level2", "partial", "missing", "center"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        columns = self.columns
        duplicates = sorted({c for c in columns if columns.count(c) > 1})
        if duplicates:
            raise DataValidationError(f"columns declared more than once: {', '.join(duplicates)}")
        if not self.partial:
            raise DataValidationError("schema must declare at least one partially observed covariate")
        covariates = set(self.level1) | set(self.level2) | set(self.partial)
        unknown = [c for c in self.center if c not in covariates]
        if unknown:
            raise DataValidationError(f"only covariates can be centered, not: {', '.join(unknown)}")

    @property
    def columns(self) -> List[str]:
        return [self.outcome, self.cluster, *self.level1, *self.level2, *self.partial]


def _split(value: Optional[str]) -> Tuple[str, ...]:
    if value is None:
        return ()
    return tuple(item.strip() for item in str(value).split(",") if item.strip())


SCHEMA_KEYS = ("OUTCOME", "CLUSTER", "LEVEL1", "LEVEL2", "PARTIAL", "MISSING", "CENTER", "DELIMITER")


def schema_from(raw: Mapping[str, str]) -> ColumnSchema:
    """ColumnSchema from key-value settings (``outcome``, ``cluster``, ``level1`` …)."""
    raw = {str(key).upper(): value for key, value in raw.items()}
    errors: Dict[str, str] = {}
    for key in ("OUTCOME", "CLUSTER", "PARTIAL"):
        if not str(raw.get(key, "")).strip():
            errors[key] = f"Schema must name the {key.lower()} column(s)."
    extra = sorted(key for key in raw if key not in SCHEMA_KEYS)
    if extra:
        errors["__all__"] = f"Unsupported parameters provided: {', '.join(extra)}."
    if errors:
        raise ParameterValidationError(errors)
    missing = DEFAULT_SENTINELS
    if "MISSING" in raw:
        # An explicit list still treats empty fields as missing.
        missing = tuple(dict.fromkeys(("",) + _split(raw["MISSING"])))
    center = _split(raw.get("CENTER"))
    if center == ("all",):
        center = _split(raw.get("LEVEL1")) + _split(raw.get("LEVEL2")) + _split(raw.get("PARTIAL"))
    return ColumnSchema(
        outcome=str(raw["OUTCOME"]).strip(),
        cluster=str(raw["CLUSTER"]).strip(),
        level1=_split(raw.get("LEVEL1")),
        level2=_split(raw.get("LEVEL2")),
        partial=_split(raw.get("PARTIAL")),
        missing=missing,
        center=center,
        delimiter=str(raw.get("DELIMITER", ",")) or ",",
    )


def _to_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return np.nan


def _parse_column(frame: pd.DataFrame, column: str, sentinels: Iterable[str]) -> Tuple[np.ndarray, np.ndarray]:
    # float() per cell reads repr-written values back bit for bit
    raw = frame[column].astype(str).str.strip()
    is_sentinel = raw.isin(list(sentinels))
    missing = is_sentinel.to_numpy()
    values = raw.mask(is_sentinel).map(_to_float, na_action="ignore").to_numpy(dtype=float)
    bad = ~missing & ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataValidationError(
            f"column {column}, data row {row + 1}: cannot parse {frame[column].iloc[row]!r} as a number"
        )
    return values, missing


def _cluster_level(
    values: np.ndarray, missing: np.ndarray, codes: np.ndarray, ids: Sequence[object], column: str
) -> Tuple[np.ndarray, np.ndarray]:
    n_clusters = len(ids)
    level_values = np.full(n_clusters, np.nan)
    level_missing = np.zeros(n_clusters, dtype=bool)
    for j in range(n_clusters):
        rows = codes == j
        cell_missing = missing[rows]
        if cell_missing.any() and not cell_missing.all():
            raise DataValidationError(
                f"column {column} is missing in only some rows of cluster {ids[j]}"
            )
        if cell_missing.all():
            level_missing[j] = True
            continue
        cell_values = values[rows]
        if not np.all(cell_values == cell_values[0]):
            raise DataValidationError(f"column {column} varies within cluster {ids[j]}")
        level_values[j] = cell_values[0]
    return level_values, level_missing


def load_dataset(path: Path, schema: ColumnSchema) -> Dataset:
    """Read a long-format delimited file into a Dataset.

    Rows are grouped by cluster in order of first appearance. Sentinel cells
    become mask entries. Centered covariates have their observed-sample mean
    subtracted (each cluster counted once for cluster-level columns); the
    centers are kept on the dataset.
    """
    try:
        frame = pd.read_csv(path, sep=schema.delimiter, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise DataValidationError(f"{path} is empty") from exc
    except pd.errors.ParserError as exc:
        raise DataValidationError(f"{path} is not a well-formed delimited file: {exc}") from exc
    if frame.empty:
        raise DataValidationError(f"{path} has a header but no data rows")
    if len(set(frame.columns)) != len(frame.columns):
        raise DataValidationError(f"{path} has duplicate column names")
    absent = [c for c in schema.columns if c not in frame.columns]
    if absent:
        raise DataValidationError(f"{path} lacks declared columns: {', '.join(absent)}")

    cluster_raw = frame[schema.cluster].astype(str).str.strip()
    if cluster_raw.isin([s for s in schema.missing]).any():
        raise DataValidationError(f"cluster id column {schema.cluster} has missing cells")
    codes, ids = pd.factorize(cluster_raw)
    order = np.argsort(codes, kind="stable")
    frame = frame.iloc[order].reset_index(drop=True)
    codes = codes[order]
    ids = [str(i) for i in ids]

    y, y_missing = _parse_column(frame, schema.outcome, schema.missing)
    x1 = np.zeros((len(frame), len(schema.level1)))
    for k, column in enumerate(schema.level1):
        values, missing = _parse_column(frame, column, schema.missing)
        if missing.any():
            row = int(np.flatnonzero(missing)[0])
            raise DataValidationError(f"known covariate {column} is missing in data row {row + 1}")
        x1[:, k] = values

    x2 = np.zeros((len(ids), len(schema.level2)))
    for k, column in enumerate(schema.level2):
        values, missing = _parse_column(frame, column, schema.missing)
        x2[:, k], level_missing = _cluster_level(values, missing, codes, ids, column)
        if level_missing.any():
            j = int(np.flatnonzero(level_missing)[0])
            raise DataValidationError(f"known covariate {column} is missing in cluster {ids[j]}")

    c = np.zeros((len(ids), len(schema.partial)))
    c_missing = np.zeros_like(c, dtype=bool)
    for k, column in enumerate(schema.partial):
        values, missing = _parse_column(frame, column, schema.missing)
        c[:, k], c_missing[:, k] = _cluster_level(values, missing, codes, ids, column)

    centers: Dict[str, float] = {}
    for column in schema.center:
        if column in schema.level1:
            k = schema.level1.index(column)
            centers[column] = float(x1[:, k].mean())
            x1[:, k] -= centers[column]
        elif column in schema.level2:
            k = schema.level2.index(column)
            centers[column] = float(x2[:, k].mean())
            x2[:, k] -= centers[column]
        else:
            k = schema.partial.index(column)
            observed = ~c_missing[:, k]
            if not observed.any():
                raise DataValidationError(f"cannot center {column}: no observed values")
            centers[column] = float(c[observed, k].mean())
            c[observed, k] -= centers[column]

    dataset = Dataset(
        cluster=codes,
        y=y,
        y_missing=y_missing,
        x1=x1,
        x2=x2,
        c=c,
        c_missing=c_missing,
        y_name=schema.outcome,
        x1_names=schema.level1,
        x2_names=schema.level2,
        c_names=schema.partial,
        cluster_ids=tuple(ids),
        centers=centers,
    )
    logger.info(
        "Loaded %s: %d rows, %d clusters, %d missing outcome cells, %d missing covariate cells",
        path, dataset.N, dataset.J, int(y_missing.sum()), int(c_missing.sum()),
    )
    return dataset


def dataset_frame(dataset: Dataset, cluster_column: str = "cluster", sentinel: str = "NA") -> pd.DataFrame:
    """Long-format table of a dataset with masked cells replaced by ``sentinel``."""
    frame = pd.DataFrame({cluster_column: [dataset.cluster_ids[j] for j in dataset.cluster]})
    y = pd.Series(dataset.y, dtype=object)
    y[dataset.y_missing] = sentinel
    frame[dataset.y_name] = y
    for k, name in enumerate(dataset.x1_names):
        frame[name] = dataset.x1[:, k]
    for k, name in enumerate(dataset.x2_names):
        frame[name] = dataset.x2[dataset.cluster, k]
    for k, name in enumerate(dataset.c_names):
        column = pd.Series(dataset.c[dataset.cluster, k], dtype=object)
        column[dataset.c_missing[dataset.cluster, k]] = sentinel
        frame[name] = column
    return frame


def export_dataset(dataset: Dataset, path: Path, cluster_column: str = "cluster") -> ColumnSchema:
    """Write the dataset in long format and return the schema that reads it back."""
    frame = dataset_frame(dataset, cluster_column)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info("Wrote dataset to %s", path)
    return ColumnSchema(
        outcome=dataset.y_name,
        cluster=cluster_column,
        level1=dataset.x1_names,
        level2=dataset.x2_names,
        partial=dataset.c_names,
    )


def _safe_label(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", label)


def write_traces(chains: Sequence[Chain], out_dir: Path, split: bool = False) -> List[Path]:
    """One ``chain_<k>.csv`` per chain (k from 1); with ``split``, one file per parameter too."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for chain in chains:
        number = chain.chain_id + 1
        path = out_dir / f"chain_{number}.csv"
        chain.to_frame().to_csv(path, index=False)
        written.append(path)
        if split:
            trace_dir = out_dir / "traces"
            trace_dir.mkdir(exist_ok=True)
            for label in chain.labels:
                single = trace_dir / f"{_safe_label(label)}_chain_{number}.csv"
                pd.DataFrame({label: chain.series(label)}).to_csv(single, index=False)
                written.append(single)
    logger.info("Wrote %d trace files to %s", len(written), out_dir)
    return written


def read_traces(directory: Path) -> List[Chain]:
    """Chains recorded by ``write_traces``, ordered by chain number."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataValidationError(f"{directory} is not a directory")
    found = []
    for path in directory.iterdir():
        match = TRACE_PATTERN.match(path.name)
        if match:
            found.append((int(match.group(1)), path))
    if not found:
        raise DataValidationError(f"no chain_<k>.csv trace files in {directory}")
    chains = []
    for number, path in sorted(found):
        try:
            frame = pd.read_csv(path)
        except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
            raise DataValidationError(f"cannot read trace file {path}: {exc}") from exc
        if frame.empty:
            raise DataValidationError(f"trace file {path} has no draws")
        try:
            draws = frame.to_numpy(dtype=float)
        except ValueError as exc:
            raise DataValidationError(f"trace file {path} has non-numeric draws") from exc
        chains.append(Chain(labels=tuple(frame.columns), draws=draws, chain_id=number - 1))
    first = chains[0]
    for chain in chains[1:]:
        if chain.labels != first.labels or chain.kept != first.kept:
            raise DataValidationError("trace files disagree on parameters or length")
    return chains


def write_table(frame: pd.DataFrame, path: Path) -> Path:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info("Wrote %s", path)
    return Path(path)


def write_text(text: str, path: Path) -> Path:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
    logger.info("Wrote %s", path)
    return Path(path)


__all__ = [
    "ColumnSchema",
    "DEFAULT_SENTINELS",
    "dataset_frame",
    "export_dataset",
    "load_dataset",
    "read_traces",
    "schema_from",
    "write_table",
    "write_text",
    "write_traces",
]
