"""Similarity and privacy metrics for a (real train, real test, synthetic) triple.

Marginal: KS statistic and 1-Wasserstein distance per continuous column.
Joint: correlation-matrix difference (PCD), log-cluster, and machine
learning utility (MAPE / macro-F1 of one-vs-rest forests trained on the
synthetic table and scored on the real test table).
Privacy: distance to closest record and k-NN attribute disclosure.

Continuous values are standardized with the real training statistics before
any distance is taken; discrete columns enter PCD and log-cluster one-hot.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor
from sklearn.metrics import f1_score

from .data import DataError, TabularEncoder, TabularSchema, coerce_table

LOG_CLUSTER_FLOOR = 1e-12
MAPE_FLOOR = 1e-8
DCR_PERCENTILE = 5.0
AD_NEIGHBOURS = (1, 10, 100)

METRICS = ("ks", "w1", "pcd", "log_cluster", "mape", "f1",
           "dcr_rs", "dcr_ss", "ad_f1_1", "ad_f1_10", "ad_f1_100")
HIGHER_IS_BETTER = {"f1", "dcr_rs", "dcr_ss"}
SIMILARITY = ("ks", "w1", "pcd", "log_cluster", "mape", "f1")
PRIVACY = ("dcr_rs", "ad_f1_1", "ad_f1_10", "ad_f1_100")


def _sample(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError(f"{name} needs non-empty samples")
    return a


def ks_statistic(a, b) -> float:
    """sup_t |F_a(t) - F_b(t)| for the two empirical CDFs."""
    return float(stats.ks_2samp(_sample(a, "ks"), _sample(b, "ks")).statistic)


def w1_distance(a, b) -> float:
    """Integral of |F_a^-1(u) - F_b^-1(u)| over u in [0, 1]."""
    return float(stats.wasserstein_distance(_sample(a, "w1"), _sample(b, "w1")))


def correlation(M) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation matrix and the mask of constant columns.

    Constant columns get zero correlation with everything else and a unit
    diagonal.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 2:
        raise ValueError("correlation needs a 2-D table with at least two rows")
    c = M - M.mean(axis=0)
    sd = np.sqrt((c * c).mean(axis=0))
    const = ~(sd > 0)
    z = c / np.where(const, 1.0, sd)
    C = z.T @ z / M.shape[0]
    C[const, :] = 0.0
    C[:, const] = 0.0
    np.fill_diagonal(C, 1.0)
    return C, const


def pcd(real, synth) -> float:
    """Frobenius norm of the difference of the two correlation matrices."""
    real, synth = np.asarray(real, dtype=np.float64), np.asarray(synth, dtype=np.float64)
    if real.ndim != 2 or real.shape[1] != synth.shape[1]:
        raise ValueError("pcd needs two tables with the same columns")
    return float(np.linalg.norm(correlation(real)[0] - correlation(synth)[0]))


def kmeans_labels(X, n_clusters: int, seed: int = 0) -> np.ndarray:
    """Lloyd iterations from a k-means++ start (300 iterations max, tol 1e-6)."""
    km = KMeans(n_clusters=n_clusters, init="k-means++", n_init=1, max_iter=300, tol=1e-6,
                algorithm="lloyd", random_state=seed)
    return km.fit_predict(np.asarray(X, dtype=np.float64))


def log_cluster(real, synth, n_clusters: int = 20, seed: int = 0, c: float = 0.5) -> float:
    """log of the mean squared deviation of per-cluster real fractions from ``c``."""
    real, synth = np.asarray(real, dtype=np.float64), np.asarray(synth, dtype=np.float64)
    if len(real) == 0 or len(synth) == 0:
        raise ValueError("log_cluster needs non-empty samples")
    merged = np.vstack([real, synth])
    if len(merged) < n_clusters:
        raise ValueError(f"{len(merged)} merged rows cannot form {n_clusters} clusters")
    # cluster in lexicographic row order so the result cannot depend on which table came first
    order = np.lexsort(merged.T[::-1])
    labels = np.empty(len(merged), dtype=np.int64)
    labels[order] = kmeans_labels(merged[order], n_clusters, seed)
    is_real = np.arange(len(merged)) < len(real)
    sizes = np.bincount(labels, minlength=n_clusters)
    n_real = np.bincount(labels[is_real], minlength=n_clusters)
    used = sizes > 0
    dev = (n_real[used] / sizes[used] - c) ** 2
    return float(np.log(max(dev.mean(), LOG_CLUSTER_FLOOR)))


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")

    def regressor(self) -> RandomForestRegressor:
        return RandomForestRegressor(n_estimators=self.n_trees, max_depth=self.max_depth,
                                     min_samples_split=self.min_samples_split, max_features=1 / 3,
                                     bootstrap=self.bootstrap, random_state=self.seed)

    def classifier(self) -> RandomForestClassifier:
        return RandomForestClassifier(n_estimators=self.n_trees, max_depth=self.max_depth,
                                      min_samples_split=self.min_samples_split, max_features="sqrt",
                                      bootstrap=self.bootstrap, random_state=self.seed)


def _design(df: pd.DataFrame, schema: TabularSchema, exclude: str) -> np.ndarray:
    parts = []
    for col in schema.columns:
        if col.name == exclude:
            continue
        if col.is_discrete:
            codes = pd.Categorical(df[col.name], categories=col.levels).codes
            parts.append(np.eye(len(col.levels))[codes])
        else:
            parts.append(df[col.name].to_numpy(dtype=np.float64)[:, None])
    return np.hstack(parts)


def mape(y_true, y_pred) -> tuple[float, int]:
    """Mean |y - yhat| / |y| over rows with |y| >= 1e-8, and the number of skipped rows."""
    y_true, y_pred = np.asarray(y_true, dtype=np.float64), np.asarray(y_pred, dtype=np.float64)
    keep = np.abs(y_true) >= MAPE_FLOOR
    if not keep.any():
        return math.nan, int(y_true.size)
    return float(np.mean(np.abs(y_true[keep] - y_pred[keep]) / np.abs(y_true[keep]))), int((~keep).sum())


@dataclass
class UtilityResult:
    mape: float | None
    f1: float | None
    per_column: dict[str, float]
    skipped: dict[str, int]
    notes: list[str]


def mlu(synth: pd.DataFrame, test: pd.DataFrame, schema: TabularSchema,
        cfg: ForestConfig | None = None) -> UtilityResult:
    """One-vs-rest utility: fit on the synthetic table, score every column on the real test table."""
    cfg = cfg or ForestConfig()
    per, skipped, notes = {}, {}, []
    if len(schema.columns) < 2:
        return UtilityResult(None, None, per, skipped, ["utility needs at least two columns"])
    for col in schema.columns:
        X_tr, X_te = _design(synth, schema, col.name), _design(test, schema, col.name)
        if col.is_discrete:
            y_tr = synth[col.name].to_numpy(dtype=str)
            if len(np.unique(y_tr)) < 2:
                notes.append(f"{col.name}: single level in the synthetic table, constant predictor")
            pred = cfg.classifier().fit(X_tr, y_tr).predict(X_te)
            per[col.name] = float(f1_score(test[col.name].to_numpy(dtype=str), pred,
                                           average="macro", zero_division=0))
        else:
            y_tr = synth[col.name].to_numpy(dtype=np.float64)
            pred = cfg.regressor().fit(X_tr, y_tr).predict(X_te)
            per[col.name], skipped[col.name] = mape(test[col.name].to_numpy(dtype=np.float64), pred)
            if skipped[col.name]:
                notes.append(f"{col.name}: {skipped[col.name]} test rows with |y| < 1e-8 skipped in MAPE")
    cont = [per[c.name] for c in schema.continuous if not math.isnan(per[c.name])]
    disc = [per[c.name] for c in schema.discrete]
    return UtilityResult(float(np.mean(cont)) if cont else None, float(np.mean(disc)) if disc else None,
                         per, skipped, notes)


def _pairwise_distances(A: np.ndarray, B: np.ndarray, chunk: int = 2048):
    for start in range(0, len(A), chunk):
        yield cdist(A[start:start + chunk], B)


def dcr(real, synth, all_pairs: bool = False) -> tuple[float, float | None]:
    """5th percentiles of nearest-record distances: (real vs synthetic, synthetic vs itself).

    With ``all_pairs`` every real/synthetic (resp. synthetic/synthetic) pair
    enters the percentile instead of only nearest neighbours.
    """
    real = np.asarray(real, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    if real.ndim != 2 or synth.ndim != 2 or len(real) == 0 or len(synth) == 0:
        raise ValueError("dcr needs two non-empty 2-D samples")
    if all_pairs:
        rs = np.concatenate([d.ravel() for d in _pairwise_distances(synth, real)])
        ss = None
        if len(synth) >= 2:
            iu = []
            for start, d in zip(range(0, len(synth), 2048), _pairwise_distances(synth, synth)):
                rows = np.arange(start, start + len(d))[:, None]
                iu.append(d[np.arange(len(synth))[None, :] > rows])
            ss = float(np.percentile(np.concatenate(iu), DCR_PERCENTILE))
        return float(np.percentile(rs, DCR_PERCENTILE)), ss
    d_rs, _ = cKDTree(real).query(synth, k=1)
    ss = None
    if len(synth) >= 2:
        d_ss, _ = cKDTree(synth).query(synth, k=2)
        ss = float(np.percentile(d_ss[:, 1], DCR_PERCENTILE))
    return float(np.percentile(d_rs, DCR_PERCENTILE)), ss


def attribute_disclosure(real_cont, real_codes, synth_cont, synth_codes,
                         n_levels: Sequence[int], k: int) -> float | None:
    """Macro-F1 of a k-NN attacker recovering discrete codes from continuous attributes.

    ``*_codes`` hold integer level indices, one column per discrete
    attribute. Votes are tallied per level; ties go to the lowest index.
    Returns None when the metric does not apply.
    """
    real_cont, synth_cont = np.asarray(real_cont, dtype=np.float64), np.asarray(synth_cont, dtype=np.float64)
    real_codes = np.asarray(real_codes, dtype=np.int64).reshape(len(real_cont), -1)
    synth_codes = np.asarray(synth_codes, dtype=np.int64).reshape(len(synth_cont), -1)
    if real_cont.shape[1] == 0 or real_codes.shape[1] == 0 or len(synth_cont) < k or k < 1:
        return None
    _, idx = cKDTree(synth_cont).query(real_cont, k=k)
    idx = np.asarray(idx).reshape(len(real_cont), k)
    scores = []
    rows = np.repeat(np.arange(len(real_cont)), k)
    for j, T in enumerate(n_levels):
        votes = np.zeros((len(real_cont), T))
        np.add.at(votes, (rows, synth_codes[idx.ravel(), j]), 1.0)
        pred = np.argmax(votes, axis=1)
        scores.append(f1_score(real_codes[:, j], pred, average="macro", zero_division=0))
    return float(np.mean(scores))


@dataclass
class EvalReport:
    values: dict[str, float | None]
    per_column: pd.DataFrame = field(default_factory=pd.DataFrame)
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        unknown = set(self.values) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}")
        self.values = {m: self.values.get(m) for m in METRICS}

    def present(self) -> tuple[str, ...]:
        return tuple(m for m in METRICS if self.values[m] is not None)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for m in METRICS:
                v = self.values[m]
                w.writerow([m, "NA" if v is None else format(v, ".17g")])

    def per_column_to_csv(self, path) -> None:
        self.per_column.to_csv(path, index=False, na_rep="NA", float_format="%.17g", lineterminator="\n")

    @classmethod
    def from_csv(cls, path) -> "EvalReport":
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
        if list(df.columns) != ["metric", "value"]:
            raise DataError(f"{path}: not an evaluation report")
        values = {r.metric: None if r.value == "NA" else float(r.value) for r in df.itertuples()}
        return cls(values)

    def to_text(self) -> str:
        lines = [f"{m:<12} {'NA' if self.values[m] is None else format(self.values[m], '.6g')}" for m in METRICS]
        return "\n".join(lines + [f"note: {n}" for n in self.notes]) + "\n"


def _standardized(df: pd.DataFrame, enc: TabularEncoder) -> np.ndarray:
    cols = [c.name for c in enc.schema_.continuous]
    return (df[cols].to_numpy(dtype=np.float64) - enc.mean_) / enc.scale_


def _codes(df: pd.DataFrame, schema: TabularSchema) -> np.ndarray:
    return np.column_stack([pd.Categorical(df[c.name], categories=c.levels).codes for c in schema.discrete]) \
        if schema.discrete else np.zeros((len(df), 0), dtype=np.int64)


def evaluate(real_train: pd.DataFrame, real_test: pd.DataFrame, synth: pd.DataFrame,
             schema: TabularSchema, seed: int = 0, forest: ForestConfig | None = None,
             dcr_all_pairs: bool = False, n_clusters: int = 20) -> EvalReport:
    """Every metric for one synthetic table; inapplicable metrics are None."""
    frames = {}
    for name, df in (("real train", real_train), ("real test", real_test), ("synthetic", synth)):
        extra = [c for c in df.columns if c not in schema.names]
        if extra:
            raise DataError(f"{name} table has columns outside the schema: {extra}")
        frames[name] = coerce_table(df, schema)
    real_train, real_test, synth = frames["real train"], frames["real test"], frames["synthetic"]
    enc = TabularEncoder(schema).fit(real_train)
    values: dict[str, float | None] = {}
    notes: list[str] = []
    rows = []
    cont = schema.continuous
    rc, sc = _standardized(real_train, enc), _standardized(synth, enc)
    ks_vals, w1_vals = [], []
    for i, col in enumerate(cont):
        ks_vals.append(ks_statistic(real_train[col.name], synth[col.name]))
        w1_vals.append(w1_distance(rc[:, i], sc[:, i]))
    if cont:
        values["ks"], values["w1"] = float(np.mean(ks_vals)), float(np.mean(w1_vals))
    R, S = enc.transform(real_train), enc.transform(synth)
    if len(R) >= 2 and len(S) >= 2:
        values["pcd"] = pcd(R, S)
        for label, M in (("real train", R), ("synthetic", S)):
            const = np.asarray(enc.get_feature_names_out())[correlation(M)[1]]
            if const.size:
                notes.append(f"{label}: constant encoded columns {list(const)} have zero correlation")
    if len(R) + len(S) >= n_clusters and len(S) > 0:
        values["log_cluster"] = log_cluster(R, S, n_clusters, seed)
    util = mlu(synth, real_test, schema, forest or ForestConfig(seed=seed)) if len(synth) else None
    if util is not None:
        values["mape"], values["f1"] = util.mape, util.f1
        notes.extend(util.notes)
    if cont and len(synth):
        values["dcr_rs"], values["dcr_ss"] = dcr(rc, sc, dcr_all_pairs)
    rcodes, scodes = _codes(real_train, schema), _codes(synth, schema)
    for k in AD_NEIGHBOURS:
        values[f"ad_f1_{k}"] = attribute_disclosure(rc, rcodes, sc, scodes,
                                                    [len(c.levels) for c in schema.discrete], k)
    for i, col in enumerate(schema.columns):
        row = {"column": col.name, "kind": col.kind, "ks": None, "w1": None, "mape": None,
               "mape_skipped": None, "f1": None}
        if not col.is_discrete:
            j = [c.name for c in cont].index(col.name)
            row["ks"], row["w1"] = ks_vals[j], w1_vals[j]
        if util is not None and col.name in util.per_column:
            key = "f1" if col.is_discrete else "mape"
            row[key] = util.per_column[col.name]
            if not col.is_discrete:
                row["mape_skipped"] = util.skipped[col.name]
        rows.append(row)
    return EvalReport(values, pd.DataFrame(rows), notes)


def compare(reports: Mapping[str, EvalReport]) -> pd.DataFrame:
    """Per-metric ranks (1 = best, ties averaged) and mean ranks.

    ``similarity_rank`` averages the similarity metrics, ``privacy_rank`` the
    privacy metrics except DCR(S,S), which measures diversity rather than
    privacy; ``mean_rank`` averages both groups together.
    """
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    names = list(reports)
    present = {reports[n].present() for n in names}
    if len(present) != 1:
        raise ValueError("reports carry different metric sets")
    metrics = present.pop()
    table = pd.DataFrame(index=pd.Index(names, name="run"))
    for m in metrics:
        v = np.array([reports[n].values[m] for n in names])
        table[m] = stats.rankdata(-v if m in HIGHER_IS_BETTER else v, method="average")
    sim = [m for m in SIMILARITY if m in metrics]
    priv = [m for m in PRIVACY if m in metrics]
    table["similarity_rank"] = table[sim].mean(axis=1) if sim else np.nan
    table["privacy_rank"] = table[priv].mean(axis=1) if priv else np.nan
    table["mean_rank"] = table[sim + priv].mean(axis=1) if sim + priv else np.nan
    return table
