"""Market data preparation.

Daily prices are turned into monthly log returns and rolling covariances,
uninteresting assets are filtered out, the remaining ones are grouped by the
Euclidean distance between their smoothed trends, and optimized cluster
holdings are later unfolded back onto the member assets.

The functional API works on the panel types below, which store data as
``[asset x period]``.  The estimator classes at the bottom follow the
scikit-learn convention instead: ``X`` is ``[n_periods, n_assets]``, so
assets are *features* and filtering/clustering them is feature selection and
feature agglomeration.
"""

import csv
import datetime as _dt
import io
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.cluster import hierarchy
from scipy.linalg import solveh_banded
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError, DataError, ParseError, PreprocessingWarning
from .problem.spec import HoldingsTrajectory

DEFAULT_HP_SMOOTHING = 129600.0
DEFAULT_COV_WINDOW = 20


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PricePanel:
    """Daily prices, ``prices[n, d]`` for asset ``asset_ids[n]`` on ``dates[d]``."""

    asset_ids: tuple
    dates: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "asset_ids", tuple(str(a) for a in self.asset_ids))
        object.__setattr__(self, "dates", _frozen(self.dates, "datetime64[D]"))
        object.__setattr__(self, "prices", _frozen(self.prices))
        if self.prices.shape != (len(self.asset_ids), len(self.dates)):
            raise DataError(
                f"price matrix has shape {self.prices.shape}, expected "
                f"({len(self.asset_ids)}, {len(self.dates)})"
            )
        if len(set(self.asset_ids)) != len(self.asset_ids):
            raise DataError("duplicate asset ids")
        if len(self.dates) > 1 and np.any(np.diff(self.dates).astype(int) <= 0):
            raise DataError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.prices)) or np.any(self.prices <= 0):
            n, d = np.argwhere(~(self.prices > 0))[0]
            raise DataError(
                f"non-positive price for asset {self.asset_ids[n]!r} on {self.dates[d]}"
            )

    @property
    def n_assets(self):
        return len(self.asset_ids)

    def select(self, asset_ids=None, start=None, end=None):
        """Sub-panel restricted to ``asset_ids`` and the inclusive date range."""
        rows = (
            np.arange(self.n_assets)
            if asset_ids is None
            else np.array([self.asset_ids.index(a) for a in asset_ids], dtype=int)
        )
        mask = np.ones(len(self.dates), dtype=bool)
        if start is not None:
            mask &= self.dates >= np.datetime64(start, "D")
        if end is not None:
            mask &= self.dates <= np.datetime64(end, "D")
        return PricePanel(
            [self.asset_ids[i] for i in rows], self.dates[mask], self.prices[rows][:, mask]
        )


@dataclass(frozen=True)
class ReturnsPanel:
    """Log returns ``values[n, t]``; ``periods`` are daily dates or months."""

    asset_ids: tuple
    periods: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "asset_ids", tuple(str(a) for a in self.asset_ids))
        object.__setattr__(self, "periods", _frozen(self.periods, self.periods.dtype))
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.shape != (len(self.asset_ids), len(self.periods)):
            raise DataError(
                f"returns matrix has shape {self.values.shape}, expected "
                f"({len(self.asset_ids)}, {len(self.periods)})"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("returns contain NaN or Inf")

    def select(self, asset_ids):
        rows = [self.asset_ids.index(a) for a in asset_ids]
        return ReturnsPanel(list(asset_ids), self.periods, self.values[rows])


@dataclass(frozen=True)
class CovariancePanel:
    """One symmetric PSD covariance ``matrices[t]`` per rebalancing period."""

    asset_ids: tuple
    periods: np.ndarray
    matrices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "asset_ids", tuple(str(a) for a in self.asset_ids))
        object.__setattr__(self, "periods", _frozen(self.periods, self.periods.dtype))
        m = np.array(self.matrices, dtype=float).reshape(
            len(self.periods), len(self.asset_ids), len(self.asset_ids)
        )
        m = 0.5 * (m + np.swapaxes(m, 1, 2))
        m.setflags(write=False)
        object.__setattr__(self, "matrices", m)

    def select(self, asset_ids):
        idx = [self.asset_ids.index(a) for a in asset_ids]
        return CovariancePanel(
            list(asset_ids), self.periods, self.matrices[:, idx][:, :, idx]
        )

    def at(self, period):
        """Matrix for ``period``; raises ``KeyError`` if it was dropped."""
        hits = np.nonzero(self.periods == period)[0]
        if not len(hits):
            raise KeyError(period)
        return self.matrices[hits[0]]


@dataclass(frozen=True)
class Clustering:
    """Result of agglomerative clustering of assets.

    ``merge_tree`` uses scipy's convention: ids below the asset count are
    assets, id ``n + i`` is the cluster formed by the ``i``-th merge.
    ``mean_variance_curve[k - 1]`` is the mean intra-cluster variance when the
    tree is cut into ``k`` clusters.
    """

    asset_ids: tuple
    k: int
    assignment: np.ndarray
    merge_tree: tuple = ()
    mean_variance_curve: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "asset_ids", tuple(str(a) for a in self.asset_ids))
        object.__setattr__(self, "assignment", _frozen(self.assignment, int))
        object.__setattr__(self, "mean_variance_curve", _frozen(self.mean_variance_curve))
        object.__setattr__(
            self, "merge_tree", tuple((int(a), int(b), float(d)) for a, b, d in self.merge_tree)
        )
        if len(self.assignment) != len(self.asset_ids):
            raise ConfigError("assignment must cover every asset")
        if sorted(set(self.assignment.tolist())) != list(range(self.k)):
            raise ConfigError(f"assignment must be onto 0..{self.k - 1}")

    @classmethod
    def identity(cls, asset_ids):
        n = len(asset_ids)
        return cls(asset_ids, n, np.arange(n))

    @property
    def sizes(self):
        return np.bincount(self.assignment, minlength=self.k)

    def members(self, c):
        return [a for a, lab in zip(self.asset_ids, self.assignment) if lab == c]

    def cluster_ids(self):
        return [f"cluster{c}" for c in range(self.k)]

    def membership_matrix(self):
        """``[k, n_assets]`` matrix whose rows average over cluster members."""
        m = np.zeros((self.k, len(self.asset_ids)))
        m[self.assignment, np.arange(len(self.asset_ids))] = 1.0
        return m / m.sum(axis=1, keepdims=True)

    def to_json(self):
        return {
            "k": self.k,
            "assignment": {a: int(c) for a, c in zip(self.asset_ids, self.assignment)},
            "merges": [[a, b, d] for a, b, d in self.merge_tree],
            "mean_variance_curve": [float(v) for v in self.mean_variance_curve],
        }

    @classmethod
    def from_json(cls, data):
        ids = list(data["assignment"])
        return cls(
            ids,
            int(data["k"]),
            [data["assignment"][a] for a in ids],
            [tuple(m) for m in data.get("merges", [])],
            data.get("mean_variance_curve", []),
        )


# ---------------------------------------------------------------------------
# ingest


def _parse_date(text, line):
    try:
        return np.datetime64(_dt.date.fromisoformat(text.strip()), "D")
    except ValueError:
        raise ParseError(f"invalid ISO-8601 date {text!r}", line) from None


def load_prices(source):
    """Read a price CSV into a :class:`PricePanel`.

    ``source`` is a path or a text stream.  The first column is the ISO date,
    every other column one asset; an empty cell is a missing price.  Missing
    cells are forward-filled from the previous price of the same asset and
    leading gaps back-filled from the first available price.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return load_prices(fh)
    if isinstance(source, bytes):
        source = io.StringIO(source.decode("utf-8"))

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input, header row missing", 1) from None
    header = [h.strip() for h in header]
    if not header or header[0].lower() != "date":
        raise ParseError("first header column must be 'date'", 1)
    asset_ids = header[1:]
    if not asset_ids:
        raise DataError("no asset columns in header")
    if len(set(asset_ids)) != len(asset_ids) or any(not a for a in asset_ids):
        raise ParseError("asset ids in header must be non-empty and unique", 1)

    dates, rows = [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
        date = _parse_date(row[0], line)
        if dates and date <= dates[-1]:
            raise ParseError(f"date {date} is not after previous date {dates[-1]}", line)
        values = []
        for asset, cell in zip(asset_ids, row[1:]):
            cell = cell.strip()
            if not cell:
                values.append(np.nan)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"invalid price {cell!r} for asset {asset!r}", line) from None
            if not np.isfinite(v) or v <= 0:
                raise DataError(
                    f"non-positive price {cell} for asset {asset!r} on {date} (line {line})"
                )
            values.append(v)
        dates.append(date)
        rows.append(values)

    if len(dates) < 2:
        raise DataError("at least 2 dates are required")
    prices = np.array(rows, dtype=float).T
    for n, asset in enumerate(asset_ids):
        series = prices[n]
        seen = np.nonzero(~np.isnan(series))[0]
        if not len(seen):
            raise DataError(f"asset {asset!r} has no observations")
        # forward fill, then back fill the leading gap
        idx = np.where(~np.isnan(series), np.arange(len(series)), 0)
        np.maximum.accumulate(idx, out=idx)
        filled = series[idx]
        filled[: seen[0]] = series[seen[0]]
        prices[n] = filled
    return PricePanel(asset_ids, np.array(dates), prices)


def write_prices(panel, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.asset_ids])
        for d, col in zip(panel.dates, panel.prices.T):
            w.writerow([str(d), *(repr(float(v)) for v in col)])


# ---------------------------------------------------------------------------
# returns and covariances


def log_returns(panel):
    """Daily log returns ``ln(P_t / P_{t-1})``; one period fewer than dates."""
    if len(panel.dates) < 2:
        raise DataError("log returns need at least 2 dates")
    values = np.diff(np.log(panel.prices), axis=1)
    return ReturnsPanel(panel.asset_ids, panel.dates[1:], values)


def _months(periods):
    return np.asarray(periods).astype("datetime64[M]")


def aggregate_monthly(daily):
    """Sum daily log returns within each calendar month.

    Months inside the covered range that contain no observation are skipped
    with a :class:`PreprocessingWarning`.
    """
    months = _months(daily.periods)
    labels, starts = np.unique(months, return_index=True)
    if len(labels):
        full = np.arange(labels[0], labels[-1] + 1)
        missing = np.setdiff1d(full, labels)
        for m in missing:
            warnings.warn(f"no daily data in month {m}; month excluded", PreprocessingWarning)
    sums = np.add.reduceat(daily.values, starts, axis=1) if len(labels) else daily.values[:, :0]
    return ReturnsPanel(daily.asset_ids, labels, sums)


def rolling_covariance(daily, window=DEFAULT_COV_WINDOW, frequency="monthly"):
    """Sample covariance of the ``window`` daily returns ending at each rebalancing date.

    With ``frequency="monthly"`` the rebalancing date of a month is its last
    business day in ``daily`` and the output is labelled by that month.  With
    ``frequency="daily"`` every daily period is a rebalancing date.  Dates with
    fewer than ``window`` observations up to and including them are dropped
    with a warning.
    """
    if window < 2:
        raise ConfigError("covariance window must be >= 2")
    if len(daily.periods) < window:
        raise DataError(
            f"need at least {window} daily returns for the covariance window, "
            f"got {len(daily.periods)}"
        )
    if frequency == "monthly":
        months = _months(daily.periods)
        labels, inverse = np.unique(months, return_inverse=True)
        ends = np.array([np.nonzero(inverse == i)[0][-1] for i in range(len(labels))])
    elif frequency == "daily":
        labels = daily.periods
        ends = np.arange(len(labels))
    else:
        raise ConfigError(f"unknown frequency {frequency!r}")

    keep, mats = [], []
    x = daily.values
    for label, end in zip(labels, ends):
        start = end - window + 1
        if start < 0:
            if frequency == "monthly":
                warnings.warn(
                    f"only {end + 1} observations before {label}, need {window}; period dropped",
                    PreprocessingWarning,
                )
            continue
        # shift by the first observation first: exact zeros for constant series
        block = x[:, start : end + 1] - x[:, start : start + 1]
        centered = block - block.mean(axis=1, keepdims=True)
        mats.append(centered @ centered.T / (window - 1))
        keep.append(label)
    n = len(daily.asset_ids)
    return CovariancePanel(
        daily.asset_ids,
        np.array(keep, dtype=labels.dtype),
        np.array(mats).reshape(len(keep), n, n),
    )


# ---------------------------------------------------------------------------
# smoothing, filtering, clustering


def hp_filter(series, smoothing=DEFAULT_HP_SMOOTHING):
    """Hodrick-Prescott trend of a 1-d series.

    Minimizes ``sum((y - tau)**2) + smoothing * sum(diff(tau, 2)**2)`` by
    solving the symmetric pentadiagonal system ``(I + smoothing D'D) tau = y``.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or len(y) < 3:
        raise ConfigError("hp_filter needs a 1-d series of length >= 3")
    if smoothing < 0:
        raise ConfigError("smoothing must be >= 0")
    if smoothing == 0:
        return y.copy()
    n = len(y)
    # linear parts pass through unchanged, so only the detrended residual is solved;
    # this keeps the result accurate for very large smoothing
    grid = np.arange(n, dtype=float)
    slope, intercept = np.polyfit(grid, y, 1)
    line = intercept + slope * grid
    d = sparse.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n - 2, n))
    dtd = (d.T @ d).todia()
    bands = np.zeros((3, n))
    for off in range(3):
        diag = dtd.diagonal(off)
        bands[2 - off, off:] = smoothing * diag
    bands[2] += 1.0
    return line + solveh_banded(bands, y - line)


def filter_assets(returns):
    """Asset ids left after dropping low-variance, low-return assets.

    An asset is discarded only when its return variance is strictly below the
    cross-asset mean variance *and* its mean return strictly below the
    cross-asset mean of mean returns.
    """
    if len(returns.asset_ids) < 2:
        raise DataError("filter_assets needs at least 2 assets")
    keep = _sub_average_support(returns.values.T)
    return [a for a, k in zip(returns.asset_ids, keep) if k]


def _sub_average_support(x):
    ddof = 1 if x.shape[0] > 1 else 0
    var = x.var(axis=0, ddof=ddof)
    mean = x.mean(axis=0)
    return ~((var < var.mean()) & (mean < mean.mean()))


def _mean_intra_cluster_variance(trends, labels):
    """Member-weighted mean squared distance to the cluster centroid, per period."""
    total = 0.0
    for c in np.unique(labels):
        block = trends[labels == c]
        total += ((block - block.mean(axis=0)) ** 2).sum()
    return total / (trends.shape[0] * trends.shape[1])


def _relabel(labels):
    """Renumber clusters in order of first appearance."""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse]


def choose_k(curve, threshold=0.1, k_min=2, k_max=8):
    """Elbow rule on a mean-variance curve (``curve[k-1]`` for ``k`` clusters).

    The smallest ``k`` whose relative decrease to ``k + 1`` is below
    ``threshold``, clipped to ``[k_min, k_max]`` and the number of points.
    """
    n = len(curve)
    chosen = n
    for k in range(1, n):
        v, nxt = curve[k - 1], curve[k]
        if v <= 0 or (v - nxt) / v < threshold:
            chosen = k
            break
    return int(min(max(chosen, k_min), k_max, n))


def _cut_levels(z, n):
    """Labels for every cut of the linkage ``z``; row ``k - 1`` has ``k`` clusters."""
    parent = list(range(2 * n - 1))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    levels = np.zeros((n, n), dtype=int)
    levels[n - 1] = np.arange(n)
    for m, (a, b, _, _) in enumerate(z):
        parent[int(a)] = parent[int(b)] = n + m
        levels[n - 2 - m] = [root(i) for i in range(n)]
    return levels


def cluster_assets(trends, k="auto", *, asset_ids=None, threshold=0.1, k_min=2, k_max=8):
    """Average-linkage agglomerative clustering of asset trend series.

    ``trends`` is ``[asset x period]`` (or a :class:`ReturnsPanel`).  The
    ``merge_tree`` distances are Euclidean distances between trend series.
    With ``k="auto"`` the number of clusters is picked by :func:`choose_k`.
    """
    if isinstance(trends, ReturnsPanel):
        asset_ids = trends.asset_ids if asset_ids is None else asset_ids
        trends = trends.values
    x = np.asarray(trends, dtype=float)
    n = x.shape[0]
    if asset_ids is None:
        asset_ids = [str(i) for i in range(n)]
    if n < 2:
        raise DataError("cluster_assets needs at least 2 assets")
    if k != "auto" and (int(k) < 1 or int(k) > n):
        raise ConfigError(f"k={k} must lie in [1, {n}] (number of assets)")

    z = hierarchy.linkage(x, method="average", metric="euclidean")
    cuts = _cut_levels(z, n)
    curve = np.array([_mean_intra_cluster_variance(x, cuts[k - 1]) for k in range(1, n + 1)])
    if k == "auto":
        k = choose_k(curve, threshold, k_min, k_max)
    k = int(k)
    labels = _relabel(cuts[k - 1])
    merges = [(int(a), int(b), float(d)) for a, b, d, _ in z]
    return Clustering(asset_ids, k, labels, merges, curve)


def clusterize(returns, cov, clustering):
    """Replace assets by cluster aggregates.

    Cluster returns are member means; cluster covariance blocks are means of
    the member-pair covariance entries.
    """
    ids = list(clustering.asset_ids)
    missing = [a for a in ids if a not in returns.asset_ids or a not in cov.asset_ids]
    if missing:
        raise DataError(f"assets {missing} are clustered but absent from the panels")
    extra = [a for a in returns.asset_ids if a not in ids]
    if extra:
        raise DataError(f"clustering does not cover assets {extra}")
    p = clustering.membership_matrix()
    r = returns.select(ids)
    c = cov.select(ids)
    names = clustering.cluster_ids()
    out_r = ReturnsPanel(names, r.periods, p @ r.values)
    out_c = CovariancePanel(names, c.periods, np.einsum("ai,tij,bj->tab", p, c.matrices, p))
    return out_r, out_c


def unfold(clustered, clustering):
    """Split each cluster holding equally among its member assets.

    Shares are snapped to a binary grid about ``2**-50`` of the largest
    period total, and each cluster's last member takes the remainder.  Every
    partial sum is then exactly representable, so per-period totals are
    conserved exactly whatever the summation order.
    """
    h = np.asarray(clustered.holdings, dtype=float)
    if h.shape[0] != clustering.k:
        raise ConfigError(
            f"trajectory has {h.shape[0]} rows but clustering has {clustering.k} clusters"
        )
    sizes = clustering.sizes
    labels = clustering.assignment
    span = float(np.abs(h).sum(axis=0).max()) if h.size else 0.0
    quantum = 2.0 ** (np.ceil(np.log2(span)) - 50) if span > 0 else 1.0
    share = np.round(h / sizes[:, None] / quantum) * quantum
    per_asset = share[labels].copy()
    for c in range(clustering.k):
        last = np.flatnonzero(labels == c)[-1]
        per_asset[last] = h[c] - (sizes[c] - 1) * share[c]
    return HoldingsTrajectory(per_asset, normalized=clustered.normalized, K=clustered.K,
                              allow_short=clustered.allow_short)


# ---------------------------------------------------------------------------
# scikit-learn style estimators ([n_periods, n_assets] orientation)


class HPTrend(TransformerMixin, BaseEstimator):
    """Column-wise Hodrick-Prescott trend extraction."""

    def __init__(self, smoothing=DEFAULT_HP_SMOOTHING):
        self.smoothing = smoothing

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=3)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X, ensure_min_samples=3)
        return np.column_stack([hp_filter(col, self.smoothing) for col in X.T])


class SubAverageFilter(SelectorMixin, BaseEstimator):
    """Drop assets (columns) that are both below-average in variance and in mean.

    Parameters
    ----------
    None.

    Attributes
    ----------
    variances_, means_ : ndarray
        Per-asset return variance and mean seen during ``fit``.
    support_ : ndarray of bool
        True for retained assets.
    """

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2)
        self.n_features_in_ = X.shape[1]
        ddof = 1 if X.shape[0] > 1 else 0
        self.variances_ = X.var(axis=0, ddof=ddof)
        self.means_ = X.mean(axis=0)
        self.support_ = _sub_average_support(X)
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_


class AssetAgglomeration(TransformerMixin, BaseEstimator):
    """Agglomerate assets (columns) into clusters of similar trend.

    ``fit`` clusters the columns of a trend matrix; ``transform`` pools any
    ``[n_periods, n_assets]`` matrix into per-cluster means, and
    ``inverse_transform`` splits cluster holdings equally over members.
    """

    def __init__(self, n_clusters="auto", threshold=0.1, k_min=2, k_max=8):
        self.n_clusters = n_clusters
        self.threshold = threshold
        self.k_min = k_min
        self.k_max = k_max

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2)
        self.n_features_in_ = X.shape[1]
        self.clustering_ = cluster_assets(
            X.T, self.n_clusters, threshold=self.threshold, k_min=self.k_min, k_max=self.k_max
        )
        self.labels_ = np.asarray(self.clustering_.assignment)
        self.n_clusters_ = self.clustering_.k
        return self

    def transform(self, X):
        check_is_fitted(self, "clustering_")
        X = check_array(X)
        return X @ self.clustering_.membership_matrix().T

    def transform_covariance(self, matrices):
        check_is_fitted(self, "clustering_")
        p = self.clustering_.membership_matrix()
        return np.einsum("ai,...ij,bj->...ab", p, np.asarray(matrices, dtype=float), p)

    def inverse_transform(self, Xc):
        check_is_fitted(self, "clustering_")
        Xc = check_array(Xc)
        sizes = self.clustering_.sizes
        return Xc[:, self.labels_] / sizes[self.labels_]
