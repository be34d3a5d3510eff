"""Loading, validation, windowing, splitting, and synthesis of epidemic data.

Two CSV schemas are ingested:

* cases:    ``date,region_id,new_cases``  (one row per day and region)
* mobility: ``date,src_region,dst_region,weight``  (absent pairs = zero flow)

``build_dataset`` turns the two tables into aligned dense tensors: per-day
feature rows holding the last ``w`` daily counts, per-day mobility matrices,
and the adjacency derived from them by thresholding.  ``synth_sir`` generates
a fully deterministic SIR-on-a-mobility-graph dataset for testing.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(Exception):
    """Base class for dataset validation failures."""


class MalformedRowError(DataError):
    pass


class DateFormatError(DataError):
    pass


class DateGapError(DataError):
    pass


class DuplicateRowError(DataError):
    pass


class NegativeCountError(DataError):
    pass


class NegativeWeightError(DataError):
    pass


class RegionMismatchError(DataError):
    pass


class EmptyOverlapError(DataError):
    pass


class InvalidSplitError(DataError):
    pass


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise DateFormatError(f"{where}: bad date {text!r} (expected ISO-8601)") from exc


# -- tables ---------------------------------------------------------------------


@dataclass
class CaseTable:
    """Daily new-case counts per region on a gapless, strictly increasing date axis."""

    dates: list[dt.date]
    regions: list[str]
    counts: np.ndarray  # (T, N) int64, >= 0

    def __post_init__(self):
        T, N = len(self.dates), len(self.regions)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (T, N):
            raise MalformedRowError(f"counts shape {self.counts.shape} != ({T}, {N})")
        if np.any(self.counts < 0):
            raise NegativeCountError("case counts must be nonnegative")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise DateGapError(f"date gap between {a} and {b}")

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def n_days(self) -> int:
        return len(self.dates)


@dataclass
class MobilityTable:
    """Per-day directed flows (src, dst, weight); pairs not listed are zero."""

    dates: list[dt.date]
    flows: list[list[tuple[str, str, float]]]  # one list of triples per date

    def __post_init__(self):
        if len(self.flows) != len(self.dates):
            raise MalformedRowError("one flow list per date required")
        for day in self.flows:
            for src, dst, wgt in day:
                if not np.isfinite(wgt) or wgt < 0:
                    raise NegativeWeightError(f"flow {src}->{dst} has weight {wgt}")

    def region_ids(self) -> set[str]:
        out: set[str] = set()
        for day in self.flows:
            for src, dst, _ in day:
                out.add(src)
                out.add(dst)
        return out


def load_cases(path) -> CaseTable:
    """Parse a case CSV; raises a named DataError per kind of defect."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"case file not found: {path}")
    per_date: dict[dt.date, dict[str, int]] = {}
    regions: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "region_id", "new_cases"]:
            raise MalformedRowError(f"{path}: expected header 'date,region_id,new_cases'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRowError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            day = _parse_date(row[0], f"{path}:{lineno}")
            region = row[1].strip()
            if not region:
                raise MalformedRowError(f"{path}:{lineno}: empty region id")
            try:
                count = int(row[2])
            except ValueError as exc:
                raise MalformedRowError(f"{path}:{lineno}: bad count {row[2]!r}") from exc
            if count < 0:
                raise NegativeCountError(f"{path}:{lineno}: negative count {count}")
            bucket = per_date.setdefault(day, {})
            if region in bucket:
                raise DuplicateRowError(f"{path}:{lineno}: duplicate entry for ({day}, {region})")
            bucket[region] = count
            regions.add(region)
    if not per_date:
        raise MalformedRowError(f"{path}: no data rows")
    dates = sorted(per_date)
    region_list = sorted(regions)
    counts = np.zeros((len(dates), len(region_list)), dtype=np.int64)
    for t, day in enumerate(dates):
        bucket = per_date[day]
        missing = set(region_list) - set(bucket)
        if missing:
            raise MalformedRowError(f"{path}: day {day} missing regions {sorted(missing)[:3]}")
        for i, region in enumerate(region_list):
            counts[t, i] = bucket[region]
    return CaseTable(dates=dates, regions=region_list, counts=counts)


def load_mobility(path, dates: list[dt.date] | None = None) -> MobilityTable:
    """Parse a mobility CSV.

    When `dates` is given it fixes the date axis (so an empty file yields
    all-zero flows over those dates); otherwise the axis is the sorted set of
    dates present in the file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mobility file not found: {path}")
    rows: dict[dt.date, list[tuple[str, str, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["date", "src_region", "dst_region", "weight"]
        if header is None or [h.strip() for h in header] != expected:
            raise MalformedRowError(f"{path}: expected header 'date,src_region,dst_region,weight'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedRowError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            day = _parse_date(row[0], f"{path}:{lineno}")
            src, dst = row[1].strip(), row[2].strip()
            try:
                wgt = float(row[3])
            except ValueError as exc:
                raise MalformedRowError(f"{path}:{lineno}: bad weight {row[3]!r}") from exc
            if not np.isfinite(wgt) or wgt < 0:
                raise NegativeWeightError(f"{path}:{lineno}: negative or non-finite weight {wgt}")
            rows.setdefault(day, []).append((src, dst, wgt))
    if dates is None:
        dates = sorted(rows)
    else:
        outside = set(rows) - set(dates)
        if outside:
            raise MalformedRowError(f"{path}: rows on dates outside the expected axis: {sorted(outside)[:3]}")
    flows = [rows.get(day, []) for day in dates]
    return MobilityTable(dates=list(dates), flows=flows)


# -- dense dataset -----------------------------------------------------------------


def window_features(counts: np.ndarray, w: int) -> np.ndarray:
    """(T, N) daily values -> (T, N, w) rows of the last w values, newest last.

    Days before the series start are zero-padded, so row t is exactly
    counts[t-w+1 .. t] with missing history as zeros.
    """
    counts = np.asarray(counts, dtype=np.float64)
    T, N = counts.shape
    X = np.zeros((T, N, w), dtype=np.float64)
    for k in range(w):
        # feature column k holds the value from (w-1-k) days back
        lag = w - 1 - k
        if lag < T:
            X[lag:, :, k] = counts[: T - lag]
    return X


@dataclass
class EpidemicDataset:
    """Aligned per-day case features and mobility/adjacency tensors."""

    N: int
    T: int
    w: int
    X: np.ndarray  # (T, N, F) feature rows, F == w, model space
    M: np.ndarray  # (T, N, N) mobility, model space
    A: np.ndarray  # (T, N, N) thresholded mobility, model space
    region_names: list[str]
    dates: list[dt.date]
    counts: np.ndarray  # (T, N) raw integer daily new cases
    case_scale: np.ndarray  # (N,) divide raw counts by this to enter model space
    mob_scale: float  # divide raw flows by this to enter model space
    epsilon: float  # adjacency threshold, raw flow units

    @property
    def F(self) -> int:
        return self.w

    def counts_model(self) -> np.ndarray:
        """Raw counts mapped into model space (float)."""
        return self.counts.astype(np.float64) / self.case_scale[None, :]


def build_dataset(
    cases: CaseTable,
    mobility: MobilityTable,
    w: int,
    epsilon: float = 0.0,
    scale: bool = False,
) -> EpidemicDataset:
    """Join the two tables over their date overlap and window the features.

    With ``scale`` on, counts are divided by each region's series maximum and
    flows by the global flow maximum; forecasts are mapped back to raw units
    on output.  Scaling uses the whole series (the toggle conditions the
    optimization, it is not a fitted preprocessing step).
    """
    if w < 1:
        raise ValueError(f"window length must be >= 1, got {w}")
    if not mobility.dates:
        raise EmptyOverlapError("mobility table has no dates")
    start = max(cases.dates[0], mobility.dates[0])
    end = min(cases.dates[-1], mobility.dates[-1])
    if start > end:
        raise EmptyOverlapError(f"case dates end {cases.dates[-1]}, mobility starts {mobility.dates[0]}")
    unknown = mobility.region_ids() - set(cases.regions)
    if unknown:
        raise RegionMismatchError(f"mobility references unknown regions: {sorted(unknown)[:3]}")

    c0 = cases.dates.index(start)
    c1 = cases.dates.index(end)
    dates = cases.dates[c0 : c1 + 1]
    counts = cases.counts[c0 : c1 + 1]
    T, N = counts.shape
    region_index = {r: i for i, r in enumerate(cases.regions)}

    M_raw = np.zeros((T, N, N), dtype=np.float64)
    mob_by_date = dict(zip(mobility.dates, mobility.flows))
    for t, day in enumerate(dates):
        for src, dst, wgt in mob_by_date.get(day, []):
            M_raw[t, region_index[src], region_index[dst]] += wgt

    if scale:
        case_scale = counts.max(axis=0).astype(np.float64)
        case_scale[case_scale <= 0] = 1.0
        mob_scale = float(M_raw.max())
        if mob_scale <= 0:
            mob_scale = 1.0
    else:
        case_scale = np.ones(N, dtype=np.float64)
        mob_scale = 1.0

    counts_model = counts.astype(np.float64) / case_scale[None, :]
    M = M_raw / mob_scale
    A = np.where(M_raw > epsilon, M, 0.0)
    X = window_features(counts_model, w)
    return EpidemicDataset(
        N=N,
        T=T,
        w=w,
        X=X,
        M=M,
        A=A,
        region_names=list(cases.regions),
        dates=dates,
        counts=counts,
        case_scale=case_scale,
        mob_scale=mob_scale,
        epsilon=epsilon,
    )


@dataclass(frozen=True)
class SplitSpec:
    test_len: int
    val_len: int

    def __post_init__(self):
        if self.test_len < 1 or self.val_len < 1:
            raise InvalidSplitError("test_len and val_len must both be positive")


@dataclass(frozen=True)
class Splits:
    train: range
    val: range
    test: range


def split_dataset(ds_or_T, spec: SplitSpec) -> Splits:
    """Temporally ordered split: test = last days, val right before it."""
    T = ds_or_T if isinstance(ds_or_T, int) else ds_or_T.T
    held = spec.test_len + spec.val_len
    if held >= T:
        raise InvalidSplitError(f"test+val = {held} must be < T = {T}")
    train_end = T - held
    val_end = T - spec.test_len
    return Splits(train=range(0, train_end), val=range(train_end, val_end), test=range(val_end, T))


# -- synthetic SIR-on-a-graph data ---------------------------------------------------


@dataclass(frozen=True)
class SirParams:
    beta: float = 0.4  # daily transmission rate
    gamma_rec: float = 0.2  # daily recovery probability
    seed_region: int = 0
    population: int = 5000  # per region

    def __post_init__(self):
        if self.beta < 0 or not np.isfinite(self.beta):
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not (0 < self.gamma_rec < 1):
            raise ValueError(f"gamma_rec must lie in (0, 1), got {self.gamma_rec}")
        if self.population <= 0:
            raise ValueError(f"population must be positive, got {self.population}")


@dataclass
class SirSimulation:
    """Full state history of a synthetic run (for inspection and testing)."""

    counts: np.ndarray  # (T, N) daily S->I transitions
    susceptible: np.ndarray  # (T, N)
    infected: np.ndarray  # (T, N)
    recovered: np.ndarray  # (T, N)
    mobility: np.ndarray  # (T, N, N)
    population: np.ndarray  # (N,)


def simulate_sir(
    n_regions: int,
    n_days: int,
    sir_params: SirParams | None = None,
    rng_seed: int = 0,
) -> SirSimulation:
    """Discrete-day SIR over a random directed mobility graph.

    Daily new cases are the integer S->I transitions; S+I+R stays exactly
    equal to the population in every region.  Mobility is a seeded stationary
    base graph with mild multiplicative daily noise.  Bitwise deterministic
    for a given rng_seed.
    """
    p = sir_params or SirParams()
    if n_regions < 1 or n_days < 1:
        raise ValueError("need at least one region and one day")
    if not (0 <= p.seed_region < n_regions):
        raise ValueError(f"seed_region {p.seed_region} outside 0..{n_regions - 1}")
    rng = np.random.default_rng(rng_seed)

    pop = np.full(n_regions, p.population, dtype=np.int64)
    # stationary flow graph: sparse off-diagonal travel plus heavy stay-at-home diagonal
    base = rng.uniform(0.0, 0.02 * p.population, size=(n_regions, n_regions))
    base *= rng.random((n_regions, n_regions)) < 0.5
    np.fill_diagonal(base, rng.uniform(0.2, 0.4, size=n_regions) * p.population)
    noise = rng.uniform(-0.1, 0.1, size=(n_days, n_regions, n_regions))
    M = np.maximum(base[None] * (1.0 + noise), 0.0)

    S = pop.copy()
    I = np.zeros(n_regions, dtype=np.int64)
    R = np.zeros(n_regions, dtype=np.int64)
    seeds = max(1, p.population // 100)
    counts = np.zeros((n_days, n_regions), dtype=np.int64)
    S_hist = np.zeros((n_days, n_regions), dtype=np.int64)
    I_hist = np.zeros((n_days, n_regions), dtype=np.int64)
    R_hist = np.zeros((n_days, n_regions), dtype=np.int64)
    S[p.seed_region] -= seeds
    I[p.seed_region] += seeds
    counts[0, p.seed_region] = seeds
    S_hist[0], I_hist[0], R_hist[0] = S, I, R

    for t in range(1, n_days):
        # contact weights at region i: inflows from j (people j brings to i)
        contact = M[t].T.copy()
        contact /= contact.sum(axis=1, keepdims=True) + 1e-12
        pressure = contact @ (I / pop)
        new_inf = np.rint(p.beta * S * pressure).astype(np.int64)
        new_inf = np.minimum(new_inf, S)
        new_rec = np.minimum(np.rint(p.gamma_rec * I).astype(np.int64), I)
        S = S - new_inf
        I = I + new_inf - new_rec
        R = R + new_rec
        counts[t] = new_inf
        S_hist[t], I_hist[t], R_hist[t] = S, I, R

    return SirSimulation(
        counts=counts,
        susceptible=S_hist,
        infected=I_hist,
        recovered=R_hist,
        mobility=M,
        population=pop,
    )


def synth_sir_tables(
    n_regions: int,
    n_days: int,
    sir_params: SirParams | None = None,
    rng_seed: int = 0,
) -> tuple[CaseTable, MobilityTable]:
    sim = simulate_sir(n_regions, n_days, sir_params, rng_seed)
    start = dt.date(2021, 1, 1)
    dates = [start + dt.timedelta(days=t) for t in range(n_days)]
    regions = [f"R{i:03d}" for i in range(n_regions)]
    flows: list[list[tuple[str, str, float]]] = []
    for t in range(n_days):
        day = []
        for i in range(n_regions):
            for j in range(n_regions):
                if sim.mobility[t, i, j] > 0:
                    day.append((regions[i], regions[j], float(sim.mobility[t, i, j])))
        flows.append(day)
    cases = CaseTable(dates=dates, regions=regions, counts=sim.counts)
    mobility = MobilityTable(dates=list(dates), flows=flows)
    return cases, mobility


def synth_sir(
    n_regions: int,
    n_days: int,
    sir_params: SirParams | None = None,
    rng_seed: int = 0,
    w: int = 3,
    epsilon: float = 0.0,
    scale: bool = False,
) -> EpidemicDataset:
    cases, mobility = synth_sir_tables(n_regions, n_days, sir_params, rng_seed)
    return build_dataset(cases, mobility, w=w, epsilon=epsilon, scale=scale)


# -- CSV emission ---------------------------------------------------------------------


def write_cases_csv(cases: CaseTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "region_id", "new_cases"])
        for t, day in enumerate(cases.dates):
            for i, region in enumerate(cases.regions):
                writer.writerow([day.isoformat(), region, int(cases.counts[t, i])])


def write_mobility_csv(mobility: MobilityTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "src_region", "dst_region", "weight"])
        for day, triples in zip(mobility.dates, mobility.flows):
            for src, dst, wgt in triples:
                writer.writerow([day.isoformat(), src, dst, f"{wgt:.10g}"])
