"""From raw mortality inputs to the model's outcome and covariate matrices."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

__all__ = [
    "Dataset",
    "expected_deaths",
    "log_smr",
    "age_adjusted_rate",
    "log_relative_risk",
    "impute_missing",
    "read_area_table",
    "write_area_table",
    "load_dataset",
]


@dataclass
class Dataset:
    """Outcomes ``Y`` (n, d) and optional covariates ``X`` (n, p) bound to a graph.

    Row ``i`` of every matrix refers to ``graph.area_ids[i]``.  ``X`` is
    stored as an (n, 0) array when there are no covariates.
    """

    Y: np.ndarray
    graph: object
    X: np.ndarray = None
    outcome_names: list = None
    covariate_names: list = field(default_factory=list)

    def __post_init__(self):
        self.Y = np.ascontiguousarray(self.Y, dtype=np.float64)
        if self.Y.ndim != 2:
            raise ValidationError("Y must be a 2-d matrix")
        n, d = self.Y.shape
        if n != self.graph.n:
            raise ValidationError(f"Y has {n} rows but the graph has {self.graph.n} areas")
        bad = np.argwhere(~np.isfinite(self.Y))
        if bad.size:
            cells = ", ".join(f"({self.graph.area_ids[i]}, {j})" for i, j in bad[:10])
            raise ValidationError(f"Y has non-finite cells: {cells}")
        if self.X is None:
            self.X = np.zeros((n, 0))
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise ValidationError(f"X must have {n} rows")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("X has non-finite entries")
        if self.outcome_names is None:
            self.outcome_names = [f"y{j + 1}" for j in range(d)]
        if len(self.outcome_names) != d:
            raise ValidationError("outcome_names length does not match Y")
        if not self.covariate_names and self.X.shape[1]:
            self.covariate_names = [f"x{l + 1}" for l in range(self.X.shape[1])]
        if len(self.covariate_names) != self.X.shape[1]:
            raise ValidationError("covariate_names length does not match X")

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def d(self):
        return self.Y.shape[1]

    @property
    def p(self):
        return self.X.shape[1]


def expected_deaths(pop_by_age, rates_by_age):
    """Expected counts E_ij = sum_t pop_it * rate_jt.

    Parameters
    ----------
    pop_by_age : array_like, shape (n, T)
        Area population by age class.
    rates_by_age : array_like, shape (d, T)
        Reference death rates per person by cause and age class.
    """
    pop = np.asarray(pop_by_age, dtype=np.float64)
    rates = np.asarray(rates_by_age, dtype=np.float64)
    if pop.ndim != 2 or rates.ndim != 2 or pop.shape[1] != rates.shape[1] or pop.shape[1] < 1:
        raise ValidationError(f"dimension mismatch: populations {pop.shape}, rates {rates.shape}")
    if np.any(pop < 0) or np.any(rates < 0):
        raise ValidationError("populations and rates must be nonnegative")
    return pop @ rates.T


def _cells(mask):
    return [tuple(int(v) for v in ij) for ij in np.argwhere(mask)]


def log_smr(observed, expected):
    """Log standardised mortality ratios log(O / E)."""
    o = np.asarray(observed, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    if o.shape != e.shape:
        raise ValidationError(f"observed {o.shape} and expected {e.shape} differ in shape")
    bad_e = ~(e > 0)
    if np.any(bad_e):
        raise ValidationError(f"expected counts must be positive; offending cells {_cells(bad_e)[:20]}")
    bad_o = ~(o > 0)
    if np.any(bad_o):
        raise ValidationError(f"observed counts must be positive (impute zeros first); offending cells {_cells(bad_o)[:20]}")
    return np.log(o) - np.log(e)


def age_adjusted_rate(rates_by_age, std_pop_by_age, std_pop_total, rtol=1e-9):
    """Directly standardised rate sum_t rate_t * P_t / P.

    ``rates_by_age`` may carry leading dimensions; the age axis is last.
    """
    r = np.asarray(rates_by_age, dtype=np.float64)
    w = np.asarray(std_pop_by_age, dtype=np.float64)
    total = float(std_pop_total)
    if w.ndim != 1 or r.shape[-1] != w.shape[0]:
        raise ValidationError(f"rates have {r.shape[-1]} age classes but weights have {w.shape}")
    if np.any(w < 0) or total <= 0:
        raise ValidationError("standard population must be nonnegative with positive total")
    if abs(w.sum() - total) > rtol * total:
        raise ValidationError(f"standard population classes sum to {w.sum()}, not {total}")
    return r @ (w / total)


def log_relative_risk(area_rate, national_rate):
    """Log relative risks log(MR_ij / MR_j)."""
    a = np.asarray(area_rate, dtype=np.float64)
    nat = np.asarray(national_rate, dtype=np.float64)
    if a.ndim != 2 or nat.shape != (a.shape[1],):
        raise ValidationError(f"area rates {a.shape} do not match national rates {nat.shape}")
    bad_nat = np.flatnonzero(~(nat > 0))
    if bad_nat.size:
        raise ValidationError(f"national rates must be positive; offending columns {bad_nat.tolist()}")
    bad = ~(a > 0)
    if np.any(bad):
        raise ValidationError(f"area rates must be positive; offending cells {_cells(bad)[:20]}")
    return np.log(a) - np.log(nat)[None, :]


def impute_missing(values, graph):
    """Fill NaN cells with the mean of the observed neighbour values.

    Only originally observed neighbours contribute, so imputed values never
    feed other imputations.
    """
    v = np.array(values, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != graph.n:
        raise ValidationError(f"values must have {graph.n} rows")
    missing = np.isnan(v)
    if not missing.any():
        return v
    observed = ~missing
    filled = np.where(observed, v, 0.0)
    n_obs = np.zeros_like(v)
    sums = np.zeros_like(v)
    for i, nb in enumerate(graph.neighbors):
        idx = list(nb)
        sums[i] = filled[idx].sum(axis=0)
        n_obs[i] = observed[idx].sum(axis=0)
    stuck = missing & (n_obs == 0)
    if stuck.any():
        cells = [(graph.area_ids[i], j) for i, j in np.argwhere(stuck)]
        raise ValidationError(f"cannot impute cells whose neighbours are all missing: {cells[:20]}")
    out = v.copy()
    out[missing] = sums[missing] / n_obs[missing]
    return out


def read_area_table(path):
    """Read ``area_id,<col_1>,...`` into (ids, column names, matrix).

    Empty fields become NaN.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "area_id" or len(header) < 2:
            raise ValidationError(f"{path}: header must start with 'area_id' followed by at least one column")
        names = [h.strip() for h in header[1:]]
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
            ids.append(row[0].strip())
            vals = []
            for c in row[1:]:
                c = c.strip()
                if c == "":
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(c))
                except ValueError:
                    raise ValidationError(f"{path}: line {lineno}: not a number: {c!r}") from None
            rows.append(vals)
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate area ids")
    return ids, names, np.array(rows, dtype=np.float64).reshape(len(ids), len(names))


def write_area_table(path, ids, names, values, fmt="%.17g"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["area_id", *names])
        for a, row in zip(ids, np.asarray(values)):
            w.writerow([a, *("" if np.isnan(x) else fmt % x for x in row)])


def _align(ids, values, graph, path):
    pos = {a: i for i, a in enumerate(ids)}
    missing = [a for a in graph.area_ids if a not in pos]
    extra = [a for a in ids if a not in set(graph.area_ids)]
    if missing or extra:
        raise ValidationError(f"{path}: area ids do not match the graph (missing {missing[:5]}, unknown {extra[:5]})")
    return values[[pos[a] for a in graph.area_ids]]


def load_dataset(outcome_path, graph, covariate_path=None, impute=False, standardize_covariates=False):
    """Assemble a :class:`Dataset` from outcome/covariate files aligned to ``graph``."""
    ids, names, y = read_area_table(outcome_path)
    y = _align(ids, y, graph, outcome_path)
    if np.isnan(y).any():
        if not impute:
            cells = [(graph.area_ids[i], names[j]) for i, j in np.argwhere(np.isnan(y))]
            raise ValidationError(f"{outcome_path}: missing outcome cells {cells[:10]} (enable imputation to fill them)")
        y = impute_missing(y, graph)
    x, xnames = None, []
    if covariate_path is not None:
        xids, xnames, x = read_area_table(covariate_path)
        x = _align(xids, x, graph, covariate_path)
        if np.isnan(x).any():
            if not impute:
                raise ValidationError(f"{covariate_path}: missing covariate cells")
            x = impute_missing(x, graph)
        if standardize_covariates:
            sd = x.std(axis=0)
            sd[sd == 0] = 1.0
            x = (x - x.mean(axis=0)) / sd
    return Dataset(Y=y, graph=graph, X=x, outcome_names=names, covariate_names=xnames)
