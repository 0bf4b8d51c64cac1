import logging
import re
import warnings
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from factor.algebra import center, standardize
from factor.errors import UsageError
from factor.model import Dataset, PatternMatrix
from sampler.diagnostics import loading_name
from sampler.gibbs import Chain

FLOAT_FORMAT = "%.10g"
HISTOGRAM_BINS = 50

_LOADING = re.compile(r"L\[(\d+),(\d+)\]")


def read_csv(file_path: str) -> pd.DataFrame:
    """
    Read a CSV file into a DataFrame, turning reader failures into usage errors.
    """
    try:
        with warnings.catch_warnings():
            # rows longer than the header are dropped silently otherwise
            warnings.simplefilter("error", pd.errors.ParserWarning)
            return pd.read_csv(file_path, index_col=False)
    except FileNotFoundError:
        raise UsageError(f"no such file: {file_path}")
    except (pd.errors.ParserError, pd.errors.ParserWarning, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise UsageError(f"{file_path}: {exc}")


def write_csv(df: pd.DataFrame, file_path: str):
    Path(file_path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(file_path, index=False, float_format=FLOAT_FORMAT)


def load_dataset(file_path: str, standardize_data: bool = True) -> Dataset:
    """
    Read a comma-separated dataset: one header row of item names, one row per
    observation. Missing or ragged entries are rejected with their line number.
    """
    df = read_csv(file_path)
    if df.shape[1] < 1:
        raise UsageError(f"{file_path}: no item columns")
    bad = df.columns[[not pd.api.types.is_numeric_dtype(t) for t in df.dtypes]].tolist()
    if bad:
        raise UsageError(f"{file_path}: non-numeric entries in item(s) {', '.join(map(str, bad))}")
    missing = np.flatnonzero(df.isna().any(axis=1).to_numpy())
    if len(missing):
        # header is line 1
        raise UsageError(f"{file_path}: missing or ragged entries on line {int(missing[0]) + 2}")
    if len(df) < 2:
        raise UsageError(f"{file_path}: at least two observations are needed, found {len(df)}")
    data = Dataset(df.to_numpy(dtype=float), tuple(str(c) for c in df.columns))
    logging.info(f"Loaded {data.n} observations on {data.p} items from {file_path}")
    return standardize(data) if standardize_data else center(data)


def save_dataset(data: Dataset, file_path: str):
    write_csv(pd.DataFrame(data.values, columns=list(data.item_names)), file_path)


def draws_frame(chains: List[Chain]) -> pd.DataFrame:
    """One row per retained draw: chain, draw, every loading, psi, Phi off-diagonals and the log kernel."""
    frames = []
    for chain in chains:
        p, m = chain.p, chain.m
        columns = {"chain": np.full(chain.n_draws, chain.chain_index), "draw": np.arange(chain.n_draws)}
        for i in range(p):
            for j in range(m):
                columns[loading_name(i, j)] = chain.loadings[:, i, j]
        for i in range(p):
            columns[f"psi[{i + 1}]"] = chain.psi[:, i]
        for a in range(m):
            for b in range(a + 1, m):
                columns[f"phi[{a + 1},{b + 1}]"] = chain.phi[:, a, b]
        columns["logkernel"] = chain.log_kernel
        frames.append(pd.DataFrame(columns))
    return pd.concat(frames, ignore_index=True)


def export_draws(chains: List[Chain], file_path: str):
    write_csv(draws_frame(chains), file_path)
    logging.info(f"Wrote {sum(c.n_draws for c in chains)} draws to {file_path}")


def import_draws(file_path: str, pattern: PatternMatrix) -> List[Chain]:
    """Chains from a draw export, for offline mass evaluation."""
    df = read_csv(file_path)
    p, m = pattern.shape
    cells = [(int(a) - 1, int(b) - 1) for a, b in (_LOADING.fullmatch(c).groups() for c in df.columns if _LOADING.fullmatch(c))]
    if sorted(cells) != [(i, j) for i in range(p) for j in range(m)]:
        raise UsageError(f"{file_path}: loading columns do not match the {p}x{m} pattern")
    if "chain" not in df.columns:
        df["chain"] = 0
    chains = []
    for index, part in df.groupby("chain", sort=True):
        g = len(part)
        loadings = np.zeros((g, p, m))
        for i in range(p):
            for j in range(m):
                loadings[:, i, j] = part[loading_name(i, j)].to_numpy()
        psi = np.stack([part[f"psi[{i + 1}]"].to_numpy() for i in range(p)], axis=1) if f"psi[{p}]" in part else None
        phi = np.broadcast_to(np.eye(m), (g, m, m)).copy()
        for a in range(m):
            for b in range(a + 1, m):
                name = f"phi[{a + 1},{b + 1}]"
                if name in part:
                    phi[:, a, b] = phi[:, b, a] = part[name].to_numpy()
        kernel = part["logkernel"].to_numpy() if "logkernel" in part else None
        chains.append(Chain.from_arrays(loadings, psi, phi, kernel, pattern=pattern, chain_index=int(index)))
    for chain in chains:
        if not all(pattern.admits(chain.loadings[g]) for g in range(chain.n_draws)):
            raise UsageError(f"{file_path}: draws of chain {chain.chain_index} violate the base pattern")
    return chains


def loading_histograms(chains: List[Chain], bins: int = HISTOGRAM_BINS) -> pd.DataFrame:
    """
    Bin edges and counts of every free loading over the pooled draws; the
    counts of each parameter add up to the number of retained draws.
    """
    pattern = chains[0].pattern
    pooled = np.concatenate([c.loadings for c in chains], axis=0)
    rows = []
    for i, j in zip(*np.nonzero(pattern.free_mask)):
        counts, edges = np.histogram(pooled[:, i, j], bins=bins)
        for k in range(bins):
            rows.append({"parameter": loading_name(i, j), "bin_left": edges[k], "bin_right": edges[k + 1], "count": int(counts[k])})
    return pd.DataFrame(rows, columns=["parameter", "bin_left", "bin_right", "count"])


def write_histograms(chains: List[Chain], file_path: str, bins: Optional[int] = None):
    if not chains or chains[0].m == 0:
        return
    write_csv(loading_histograms(chains, bins or HISTOGRAM_BINS), file_path)
