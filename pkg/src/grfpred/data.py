"""Dataset model and CSV ingestion for field-trial genomic prediction.

A dataset couples phenotypes with three sources of structure: marker
genotypes per line, subpopulation membership, and plot coordinates on a
rectangular field lattice. Ingestion validates everything up front so the
numerical layers never see missing or inconsistent records.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np


class DataFormatError(ValueError):
    """An input file is missing required content or violates its format."""


@dataclass(frozen=True)
class GenotypeMatrix:
    """Marker dosages, one row per line (or per observation once expanded).

    ``values`` is an n x p real matrix; dosages are typically {0,1} or
    {0,1,2} but any finite real coding is accepted. Duplicate rows are
    allowed (replicated lines); missing entries are not.
    """

    values: np.ndarray
    line_ids: tuple[str, ...]
    marker_ids: tuple[str, ...]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise DataFormatError("genotype matrix must be 2-dimensional")
        n, p = vals.shape
        if n < 1 or p < 1:
            raise DataFormatError(f"genotype matrix too small ({n} x {p})")
        if not np.all(np.isfinite(vals)):
            raise DataFormatError("missing genotype value (non-finite entry in dosage matrix)")
        if len(self.line_ids) != n:
            raise DataFormatError("line_ids length does not match genotype rows")
        if len(self.marker_ids) != p:
            raise DataFormatError("marker_ids length does not match genotype columns")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FieldLayout:
    """Plot coordinates of each observation on an m1 x m2 lattice.

    Coordinates are 1-based. Not every lattice cell needs to be observed
    (fields may be irregular); each observed cell holds at most one
    observation.
    """

    m1: int
    m2: int
    rows: np.ndarray
    cols: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=int)
        cols = np.asarray(self.cols, dtype=int)
        if self.m1 < 1 or self.m2 < 1:
            raise DataFormatError("lattice dimensions must be positive")
        if rows.shape != cols.shape or rows.ndim != 1:
            raise DataFormatError("rows/cols must be equal-length 1-d arrays")
        if rows.size and (rows.min() < 1 or rows.max() > self.m1):
            raise DataFormatError(f"plot row out of range [1, {self.m1}]")
        if cols.size and (cols.min() < 1 or cols.max() > self.m2):
            raise DataFormatError(f"plot col out of range [1, {self.m2}]")
        seen = set()
        for r, c in zip(rows.tolist(), cols.tolist()):
            if (r, c) in seen:
                raise DataFormatError(f"duplicate plot assignment at ({r}, {c})")
            seen.add((r, c))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)

    @property
    def n_obs(self) -> int:
        return self.rows.size

    def plot_of(self, i: int) -> tuple[int, int]:
        return int(self.rows[i]), int(self.cols[i])

    def subset(self, idx: Sequence[int]) -> "FieldLayout":
        idx = np.asarray(idx, dtype=int)
        return FieldLayout(self.m1, self.m2, self.rows[idx], self.cols[idx])


@dataclass(frozen=True)
class Dataset:
    """Aligned observation-level view of a field trial.

    All per-observation components have length n and share ordering with
    ``y``. ``genotype_group`` carries the line identifier of each
    observation, used for genotype-grouped train/test splitting.
    """

    y: np.ndarray
    genotypes: GenotypeMatrix
    subpop: Optional[tuple[str, ...]]
    layout: Optional[FieldLayout]
    genotype_group: Optional[tuple[str, ...]]
    obs_ids: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1:
            raise DataFormatError("phenotype vector must be 1-dimensional")
        if not np.all(np.isfinite(y)):
            raise DataFormatError("missing phenotype (non-finite value)")
        n = y.size
        if self.genotypes.n != n:
            raise DataFormatError("length mismatch: genotypes vs phenotypes")
        if self.subpop is not None and len(self.subpop) != n:
            raise DataFormatError("length mismatch: subpopulation labels vs phenotypes")
        if self.layout is not None and self.layout.n_obs != n:
            raise DataFormatError("length mismatch: layout vs phenotypes")
        if self.genotype_group is not None and len(self.genotype_group) != n:
            raise DataFormatError("length mismatch: genotype groups vs phenotypes")
        if self.obs_ids and len(self.obs_ids) != n:
            raise DataFormatError("length mismatch: obs ids vs phenotypes")
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    def subset(self, idx: Sequence[int]) -> "Dataset":
        """Row-subset every component; the lattice dimensions are kept."""
        idx = np.asarray(idx, dtype=int)
        geno = GenotypeMatrix(
            self.genotypes.values[idx],
            tuple(self.genotypes.line_ids[i] for i in idx),
            self.genotypes.marker_ids,
        )
        return Dataset(
            y=self.y[idx],
            genotypes=geno,
            subpop=None if self.subpop is None else tuple(self.subpop[i] for i in idx),
            layout=None if self.layout is None else self.layout.subset(idx),
            genotype_group=None
            if self.genotype_group is None
            else tuple(self.genotype_group[i] for i in idx),
            obs_ids=tuple(self.obs_ids[i] for i in idx) if self.obs_ids else (),
        )


def _read_rows(path, expected_header=None):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if expected_header is not None and [h.lower() for h in header[: len(expected_header)]] != list(
            expected_header
        ):
            raise DataFormatError(
                f"{path}: expected header columns {expected_header}, found {header}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((lineno, [c.strip() for c in row]))
    return header, rows


_MISSING_TOKENS = {"", "na", "nan", "n/a", "null", "."}


def _parse_float(token, path, lineno, what):
    if token.lower() in _MISSING_TOKENS:
        raise DataFormatError(f"{path}:{lineno}: missing {what}")
    try:
        return float(token)
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: malformed row ({what} {token!r} not numeric)") from None


def load_genotypes(path) -> GenotypeMatrix:
    """Read a genotype CSV: header of marker ids, first column the line id."""
    header, rows = _read_rows(path)
    if len(header) < 2:
        raise DataFormatError(f"{path}: genotype file needs a line id column and >= 1 marker column")
    marker_ids = tuple(header[1:])
    line_ids, data = [], []
    for lineno, row in rows:
        if len(row) != len(header):
            raise DataFormatError(f"{path}:{lineno}: malformed row (expected {len(header)} fields)")
        line_ids.append(row[0])
        data.append([_parse_float(tok, path, lineno, "genotype value") for tok in row[1:]])
    if len(set(line_ids)) != len(line_ids):
        dup = sorted({l for l in line_ids if line_ids.count(l) > 1})[0]
        raise DataFormatError(f"{path}: duplicate line id {dup!r}")
    if len(line_ids) < 2:
        raise DataFormatError(f"{path}: need at least 2 lines")
    return GenotypeMatrix(np.asarray(data, dtype=float), tuple(line_ids), marker_ids)


def load_dataset(
    genotype_path,
    phenotype_path,
    layout_path,
    subpop_path=None,
    center_y: bool = False,
) -> Dataset:
    """Assemble a validated :class:`Dataset` from the four CSV inputs.

    Observation order follows the phenotype file. Genotypes are expanded
    to one row per observation by line-id lookup; the layout and
    subpopulation files must cover exactly the phenotype's obs ids. With
    ``center_y`` the phenotype is mean-centered (the model carries an
    explicit mean, so this is off by default).
    """
    lines = load_genotypes(genotype_path)
    line_index = {lid: i for i, lid in enumerate(lines.line_ids)}

    _, pheno_rows = _read_rows(phenotype_path, expected_header=("obs_id", "line_id", "value"))
    obs_ids, line_of_obs, y = [], [], []
    seen_obs = set()
    for lineno, row in pheno_rows:
        if len(row) < 3:
            raise DataFormatError(f"{phenotype_path}:{lineno}: malformed row (need obs_id,line_id,value)")
        obs_id, line_id, val = row[0], row[1], row[2]
        if obs_id in seen_obs:
            raise DataFormatError(f"{phenotype_path}:{lineno}: duplicate obs_id {obs_id!r}")
        seen_obs.add(obs_id)
        if line_id not in line_index:
            raise DataFormatError(f"{phenotype_path}:{lineno}: unknown line id {line_id!r}")
        obs_ids.append(obs_id)
        line_of_obs.append(line_id)
        y.append(_parse_float(val, phenotype_path, lineno, "phenotype"))
    if len(obs_ids) < 2:
        raise DataFormatError(f"{phenotype_path}: need at least 2 observations")

    _, layout_rows = _read_rows(layout_path, expected_header=("obs_id", "row", "col"))
    coord_of = {}
    for lineno, row in layout_rows:
        if len(row) < 3:
            raise DataFormatError(f"{layout_path}:{lineno}: malformed row (need obs_id,row,col)")
        if row[0] in coord_of:
            raise DataFormatError(f"{layout_path}:{lineno}: duplicate obs_id {row[0]!r}")
        try:
            coord_of[row[0]] = (int(row[1]), int(row[2]))
        except ValueError:
            raise DataFormatError(f"{layout_path}:{lineno}: malformed row (coordinates not integer)") from None
    missing = [o for o in obs_ids if o not in coord_of]
    if missing:
        raise DataFormatError(f"{layout_path}: missing layout for observation {missing[0]!r}")
    extra = [o for o in coord_of if o not in set(obs_ids)]
    if extra:
        raise DataFormatError(f"{layout_path}: unknown obs_id {extra[0]!r} (length mismatch)")
    rows = np.array([coord_of[o][0] for o in obs_ids], dtype=int)
    cols = np.array([coord_of[o][1] for o in obs_ids], dtype=int)
    layout = FieldLayout(int(rows.max()), int(cols.max()), rows, cols)

    subpop = None
    if subpop_path is not None:
        _, sub_rows = _read_rows(subpop_path, expected_header=("obs_id", "subpop_label"))
        label_of = {}
        for lineno, row in sub_rows:
            if len(row) < 2:
                raise DataFormatError(f"{subpop_path}:{lineno}: malformed row (need obs_id,subpop_label)")
            if row[1].lower() in _MISSING_TOKENS:
                raise DataFormatError(f"{subpop_path}:{lineno}: missing subpopulation label")
            label_of[row[0]] = row[1]
        missing = [o for o in obs_ids if o not in label_of]
        if missing:
            raise DataFormatError(f"{subpop_path}: missing subpopulation for observation {missing[0]!r}")
        subpop = tuple(label_of[o] for o in obs_ids)

    values = lines.values[[line_index[l] for l in line_of_obs]]
    genotypes = GenotypeMatrix(values, tuple(line_of_obs), lines.marker_ids)
    yv = np.asarray(y, dtype=float)
    if center_y:
        yv = yv - yv.mean()
    return Dataset(
        y=yv,
        genotypes=genotypes,
        subpop=subpop,
        layout=layout,
        genotype_group=tuple(line_of_obs),
        obs_ids=tuple(obs_ids),
    )


def pairwise_sq_dists(g) -> np.ndarray:
    """Squared Euclidean distances between all genotype rows.

    Computed once per dataset and reused across marker-kernel bandwidths.
    The result is symmetric with an exact zero diagonal.
    """
    x = g.values if isinstance(g, GenotypeMatrix) else np.asarray(g, dtype=float)
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    return d2


def cross_sq_dists(a, b) -> np.ndarray:
    """Squared Euclidean distances between rows of two genotype sets."""
    xa = a.values if isinstance(a, GenotypeMatrix) else np.asarray(a, dtype=float)
    xb = b.values if isinstance(b, GenotypeMatrix) else np.asarray(b, dtype=float)
    d2 = (
        np.einsum("ij,ij->i", xa, xa)[:, None]
        + np.einsum("ij,ij->i", xb, xb)[None, :]
        - 2.0 * (xa @ xb.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2
