"""Limit-order-book data model, CSV ingestion, normalization, synthetic generator.

CSV layout (header required, UTF-8, '.' decimal):

    ts, bid_px_1..10, bid_sz_1..10, ask_px_1..10, ask_sz_1..10

`ts` is integer nanoseconds. Prices are real tick multiples, bid prices
strictly decreasing by level, ask prices strictly increasing, best ask above
best bid, sizes positive.

The 20-dim feature vector is a configurable column selection; the default view
is the bid side, prices first then sizes:

    bid_px_1..10, bid_sz_1..10

Label files carry one integer row index per line (confirmed anomalies, y=-1).
The generator's ground-truth sidecar is a CSV `row_index,archetype,labeled`.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, SchemaError

log = logging.getLogger("lobsad.data")

N_LEVELS = 10

BOOK_COLUMNS = (
    [f"bid_px_{i}" for i in range(1, N_LEVELS + 1)]
    + [f"bid_sz_{i}" for i in range(1, N_LEVELS + 1)]
    + [f"ask_px_{i}" for i in range(1, N_LEVELS + 1)]
    + [f"ask_sz_{i}" for i in range(1, N_LEVELS + 1)]
)
CSV_COLUMNS = ["ts"] + BOOK_COLUMNS

DEFAULT_FEATURES = tuple(
    [f"bid_px_{i}" for i in range(1, N_LEVELS + 1)]
    + [f"bid_sz_{i}" for i in range(1, N_LEVELS + 1)]
)

ARCHETYPES = ("spoof", "layering", "flash")

# Test-visible hook: called as hook(kind, row_indices) whenever statistics are
# fitted, so leakage checks can observe exactly which rows reach the fitter.
fit_hook = None


@dataclass(frozen=True)
class SchemaConfig:
    feature_columns: tuple[str, ...] = DEFAULT_FEATURES

    def __post_init__(self):
        unknown = [c for c in self.feature_columns if c not in BOOK_COLUMNS]
        if unknown:
            raise ConfigError(f"unknown feature columns: {unknown}")


@dataclass(frozen=True)
class LobSnapshot:
    timestamp: int  # nanoseconds
    bids: tuple[tuple[float, int], ...]  # 10 x (price, size), best first
    asks: tuple[tuple[float, int], ...]

    def validate(self) -> None:
        bid_px = [p for p, _ in self.bids]
        ask_px = [p for p, _ in self.asks]
        if any(b2 >= b1 for b1, b2 in zip(bid_px, bid_px[1:])):
            raise DataError("bid prices not strictly decreasing")
        if any(a2 <= a1 for a1, a2 in zip(ask_px, ask_px[1:])):
            raise DataError("ask prices not strictly increasing")
        if ask_px[0] <= bid_px[0]:
            raise DataError("crossed book: best ask <= best bid")
        if any(s <= 0 for _, s in self.bids + self.asks):
            raise DataError("non-positive size")


@dataclass
class Dataset:
    features: np.ndarray  # (N, d) float64
    timestamps: np.ndarray  # (N,) int64, nondecreasing
    labeled_idx: np.ndarray  # row indices of labeled anomalies (y = -1)
    provenance: str = "real_csv"  # or "synthetic"

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_labeled(self) -> int:
        return self.labeled_idx.size

    def validate(self) -> None:
        if self.labeled_idx.size:
            if self.labeled_idx.min() < 0 or self.labeled_idx.max() >= self.n_rows:
                raise DataError("label index out of range")
        if np.any(np.diff(self.timestamps) < 0):
            raise DataError("timestamps not nondecreasing")


@dataclass
class Normalizer:
    mean: np.ndarray  # (d,)
    std: np.ndarray  # (d,), > 0 everywhere (degenerate features forced to 1)
    degenerate: np.ndarray  # bool flags for features whose std was forced
    fitted_on: str = ""  # fold id / provenance marker


def _validate_book_row(row: np.ndarray, row_no: int) -> None:
    """`row` holds the 40 book columns in BOOK_COLUMNS order."""
    if not np.isfinite(row).all():
        raise DataError(f"row {row_no}: non-finite value")
    bid_px = row[0:N_LEVELS]
    bid_sz = row[N_LEVELS:2 * N_LEVELS]
    ask_px = row[2 * N_LEVELS:3 * N_LEVELS]
    ask_sz = row[3 * N_LEVELS:4 * N_LEVELS]
    if np.any(np.diff(bid_px) >= 0):
        raise DataError(f"row {row_no}: bid prices not strictly decreasing")
    if np.any(np.diff(ask_px) <= 0):
        raise DataError(f"row {row_no}: ask prices not strictly increasing")
    if ask_px[0] <= bid_px[0]:
        raise DataError(f"row {row_no}: crossed book (best bid {bid_px[0]} >= best ask {ask_px[0]})")
    if np.any(bid_sz <= 0) or np.any(ask_sz <= 0):
        raise DataError(f"row {row_no}: non-positive size")


def load_lob_csv(path, schema: SchemaConfig | None = None) -> Dataset:
    """Parse a LOB CSV into a Dataset; bad rows raise with their 1-based row number."""
    schema = schema or SchemaConfig()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        col_of = {c: header.index(c) for c in CSV_COLUMNS}
        ts_list, book_rows = [], []
        for row_no, raw in enumerate(reader, start=1):
            try:
                ts = int(raw[col_of["ts"]])
                vals = np.array([float(raw[col_of[c]]) for c in BOOK_COLUMNS])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: row {row_no}: unparsable cell ({exc})") from None
            _validate_book_row(vals, row_no)
            ts_list.append(ts)
            book_rows.append(vals)
    book = np.array(book_rows).reshape(len(book_rows), len(BOOK_COLUMNS))
    ts = np.array(ts_list, dtype=np.int64)
    feat_cols = [BOOK_COLUMNS.index(c) for c in schema.feature_columns]
    ds = Dataset(features=book[:, feat_cols], timestamps=ts,
                 labeled_idx=np.array([], dtype=np.int64))
    ds.validate()
    return ds


def write_lob_csv(path, timestamps: np.ndarray, book: np.ndarray) -> None:
    """Write a full (N, 40) book table plus timestamps in the canonical layout."""
    if book.shape[1] != len(BOOK_COLUMNS):
        raise DataError(f"book must have {len(BOOK_COLUMNS)} columns, got {book.shape[1]}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for ts, row in zip(timestamps, book):
            writer.writerow([int(ts)] + [repr(float(v)) for v in row])


def load_labels(path, dataset: Dataset, by_timestamp: bool = False) -> Dataset:
    """Attach labeled-anomaly row indices (or timestamps, with the flag) to a dataset."""
    raw = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                raw.append(int(line))
            except ValueError:
                raise DataError(f"{path}: line {line_no}: expected an integer") from None
    if by_timestamp:
        ts_to_row = {int(t): i for i, t in enumerate(dataset.timestamps)}
        try:
            idx = [ts_to_row[t] for t in raw]
        except KeyError as exc:
            raise DataError(f"{path}: timestamp {exc.args[0]} not in dataset") from None
    else:
        idx = raw
        bad = [i for i in idx if i < 0 or i >= dataset.n_rows]
        if bad:
            raise DataError(f"{path}: label index out of range: {bad[:5]}")
    uniq = np.unique(np.array(idx, dtype=np.int64))
    if uniq.size < len(idx):
        log.warning("%s: %d duplicate label indices dropped", path, len(idx) - uniq.size)
    return Dataset(features=dataset.features, timestamps=dataset.timestamps,
                   labeled_idx=uniq, provenance=dataset.provenance)


def fit_normalizer(features: np.ndarray, rows: np.ndarray,
                   fitted_on: str = "") -> Normalizer:
    """Per-feature z-score statistics over `rows` only (never test rows)."""
    rows = np.asarray(rows)
    if rows.size == 0:
        raise DataError("fit_normalizer needs a nonempty row range")
    if fit_hook is not None:
        fit_hook("normalizer", rows)
    sub = features[rows]
    mean = sub.mean(axis=0)
    std = sub.std(axis=0)
    degenerate = std <= 0
    if degenerate.any():
        log.warning("constant features %s: std forced to 1", np.nonzero(degenerate)[0])
    std = np.where(degenerate, 1.0, std)
    return Normalizer(mean=mean, std=std, degenerate=degenerate, fitted_on=fitted_on)


def apply_normalizer(norm: Normalizer, features: np.ndarray) -> np.ndarray:
    if features.shape[1] != norm.mean.shape[0]:
        raise DataError(
            f"feature dim {features.shape[1]} != normalizer dim {norm.mean.shape[0]}")
    return (features - norm.mean) / norm.std


# --- synthetic generator ------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_rows: int = 60_000
    anomaly_rate: float = 0.002  # expected fraction of anomalous rows
    n_labeled: int = 30
    seed: int = 0
    tick_size: float = 0.25
    start_price: float = 135.0
    mid_vol_ticks: float = 0.2  # std of per-step mid move, in ticks
    # flash jumps must clear the walk's own range to be anomalous row-wise
    flash_jump_ticks: tuple[int, int] = (150, 400)
    size_log_mean: float = np.log(50.0)
    size_log_sigma: float = 0.6
    archetype_mix: tuple[float, float, float] = (0.4, 0.3, 0.3)  # spoof, layering, flash
    spoof_side: str = "bid"  # side carrying size anomalies; must be in the feature view
    schema: SchemaConfig = field(default_factory=SchemaConfig)

    def __post_init__(self):
        if not (0 <= self.anomaly_rate < 1):
            raise ConfigError(f"anomaly_rate must be in [0, 1), got {self.anomaly_rate}")
        if self.n_rows < 1:
            raise ConfigError("n_rows must be >= 1")
        if self.n_labeled < 0:
            raise ConfigError("n_labeled must be >= 0")
        if self.spoof_side not in ("bid", "ask"):
            raise ConfigError(f"spoof_side must be bid or ask, got {self.spoof_side}")


@dataclass
class GroundTruth:
    """All injected anomaly rows, for evaluation only; training sees just the labels."""

    rows: np.ndarray  # (K,) row indices
    archetypes: list[str]  # (K,)
    labeled: np.ndarray  # (K,) bool


@dataclass
class SynthResult:
    dataset: Dataset
    timestamps: np.ndarray
    book: np.ndarray  # (N, 40) full book, BOOK_COLUMNS order
    ground_truth: GroundTruth


def _episode_plan(rng: np.random.Generator, cfg: SynthConfig) -> list[tuple[int, int, str]]:
    """Plan non-overlapping (start, length, archetype) episodes.

    Total anomalous row count is drawn once as Binomial(n_rows, anomaly_rate),
    then carved into short contiguous episodes placed uniformly.
    """
    target = int(rng.binomial(cfg.n_rows, cfg.anomaly_rate))
    occupied = np.zeros(cfg.n_rows, dtype=bool)
    episodes, assigned, attempts = [], 0, 0
    while assigned < target and attempts < 100 * max(target, 1):
        attempts += 1
        length = min(int(rng.integers(2, 7)), target - assigned)
        length = max(length, 1)
        start = int(rng.integers(0, cfg.n_rows - length + 1))
        if occupied[start:start + length].any():
            continue
        arch = ARCHETYPES[rng.choice(3, p=np.asarray(cfg.archetype_mix) / sum(cfg.archetype_mix))]
        occupied[start:start + length] = True
        episodes.append((start, length, arch))
        assigned += length
    return episodes


def generate_synthetic(cfg: SynthConfig) -> SynthResult:
    """Tick-rounded mid-price random walk with 10 levels per side and injected
    spoof / layering / flash-move episodes; deterministic for a fixed seed."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_rows

    steps = np.rint(rng.normal(0.0, cfg.mid_vol_ticks, size=n)).astype(np.int64)
    mid0 = int(round(cfg.start_price / cfg.tick_size))
    mid = mid0 + np.concatenate(([0], np.cumsum(steps[1:])))
    mid = np.maximum(mid, N_LEVELS + 2)  # keep all bid levels positive

    bid_sz = np.maximum(
        np.rint(rng.lognormal(cfg.size_log_mean, cfg.size_log_sigma, size=(n, N_LEVELS))), 1.0)
    ask_sz = np.maximum(
        np.rint(rng.lognormal(cfg.size_log_mean, cfg.size_log_sigma, size=(n, N_LEVELS))), 1.0)

    episodes = _episode_plan(rng, cfg)
    gt_rows, gt_arch = [], []
    spoof_sz = bid_sz if cfg.spoof_side == "bid" else ask_sz
    for start, length, arch in episodes:
        sl = slice(start, start + length)
        if arch == "spoof":
            level = int(rng.integers(2, N_LEVELS))  # levels 3..10, 0-based 2..9
            factor = rng.uniform(10.0, 50.0)
            spoof_sz[sl, level] = np.rint(spoof_sz[sl, level] * factor)
        elif arch == "layering":
            # monotone ladder, modestly above the expected total depth: per-level
            # sizes stay near the normal marginal range, the joint shape is off
            mean_size = float(np.exp(cfg.size_log_mean + 0.5 * cfg.size_log_sigma ** 2))
            base = mean_size * N_LEVELS / np.arange(1, N_LEVELS + 1).sum()
            ladder = np.rint(base * rng.uniform(1.6, 2.4)
                             * np.arange(1, N_LEVELS + 1))
            spoof_sz[sl, :] = np.maximum(ladder, 1.0)
        else:  # flash move: > 8 tick jump in one step, reverted after the episode
            jlo, jhi = cfg.flash_jump_ticks
            jump = int(rng.integers(jlo, jhi + 1)) * int(rng.choice((-1, 1)))
            mid[sl] = np.maximum(mid[sl] + jump, N_LEVELS + 2)
        gt_rows.extend(range(start, start + length))
        gt_arch.extend([arch] * length)

    gt_rows = np.array(gt_rows, dtype=np.int64)
    order = np.argsort(gt_rows, kind="stable")
    gt_rows = gt_rows[order]
    gt_arch = [gt_arch[i] for i in order]

    if cfg.n_labeled > gt_rows.size:
        raise ConfigError(
            f"n_labeled={cfg.n_labeled} exceeds injected anomaly rows ({gt_rows.size})")
    labeled_rows = np.sort(rng.choice(gt_rows, size=cfg.n_labeled, replace=False)) \
        if cfg.n_labeled else np.array([], dtype=np.int64)
    labeled_mask = np.isin(gt_rows, labeled_rows)

    levels = np.arange(1, N_LEVELS + 1)
    bid_px = (mid[:, None] - levels[None, :]) * cfg.tick_size
    ask_px = (mid[:, None] + levels[None, :]) * cfg.tick_size
    book = np.hstack([bid_px, bid_sz, ask_px, ask_sz])

    cadence_ns = 10_000_000  # 10 ms
    jitter = rng.integers(0, cadence_ns // 2, size=n)
    ts = np.int64(1_700_000_000_000_000_000) + np.arange(n, dtype=np.int64) * cadence_ns + jitter

    feat_cols = [BOOK_COLUMNS.index(c) for c in cfg.schema.feature_columns]
    ds = Dataset(features=book[:, feat_cols], timestamps=ts,
                 labeled_idx=labeled_rows.astype(np.int64), provenance="synthetic")
    ds.validate()
    gt = GroundTruth(rows=gt_rows, archetypes=gt_arch, labeled=labeled_mask)
    return SynthResult(dataset=ds, timestamps=ts, book=book, ground_truth=gt)


def write_labels(path, labeled_idx: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in labeled_idx:
            fh.write(f"{int(i)}\n")


def write_ground_truth(path, gt: GroundTruth) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_index", "archetype", "labeled"])
        for row, arch, lab in zip(gt.rows, gt.archetypes, gt.labeled):
            writer.writerow([int(row), arch, int(lab)])


def load_ground_truth(path) -> GroundTruth:
    rows, archs, labeled = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["row_index", "archetype", "labeled"]:
            raise SchemaError(f"{path}: unexpected ground-truth header {header}")
        for raw in reader:
            rows.append(int(raw[0]))
            archs.append(raw[1])
            labeled.append(bool(int(raw[2])))
    return GroundTruth(rows=np.array(rows, dtype=np.int64), archetypes=archs,
                       labeled=np.array(labeled, dtype=bool))
