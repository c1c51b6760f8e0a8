"""Synthetic crash-report corpora with a controllable near-duplicate structure.

Reports are generated hierarchically: families of related clusters share
a backbone frame sequence, each cluster perturbs the backbone into its
own prototype, and members perturb the prototype.  A shared outer call
tail adds a base level of cross-family similarity.  The result is a
graded similarity continuum (same-cluster pairs score high, same-family
pairs mid-range, far pairs low), which mirrors a real crash database
where one bug yields near-duplicates and related bugs share module
frames.
"""

from __future__ import annotations

import numpy as np

from .traces import CrashReport, StackFrame, StackTrace

_ERROR_TYPES = (
    "com.app.exceptions.StateException",
    "com.app.exceptions.LookupException",
    "java.lang.NullPointerException",
    "java.lang.IllegalArgumentException",
)

_TAIL_FUNCTIONS = (
    "com.app.boot.Dispatcher.dispatch",
    "com.app.boot.Runtime.invoke",
    "com.app.boot.Main.main",
)


def _function_pool(
    n_packages: int,
    classes_per_package: int,
    methods_per_class: int,
) -> list[list[str]]:
    """Function names grouped by package."""
    pools = []
    for p in range(n_packages):
        package = f"com.app.mod{p:02d}" if p % 3 else f"org.lib.ext{p:02d}"
        pools.append(
            [
                f"{package}.Class{c}.method{m}"
                for c in range(classes_per_package)
                for m in range(methods_per_class)
            ]
        )
    return pools


def _frame(rng: np.random.Generator, function: str) -> StackFrame:
    cls = function.rsplit(".", 2)[-2]
    return StackFrame(
        function=function,
        source_file=f"{cls}.java",
        line=int(rng.integers(10, 900)),
    )


def synthetic_reports(
    n: int,
    *,
    cluster_size: int = 10,
    clusters_per_family: int = 3,
    seed: int = 0,
    min_len: int = 6,
    max_len: int = 13,
    member_mutation: float = 0.12,
    cluster_mutation: float = 0.45,
    n_packages: int = 14,
    classes_per_package: int = 5,
    methods_per_class: int = 6,
    ensure_unique: bool = True,
    id_prefix: str = "synth-",
) -> list[CrashReport]:
    """Generate ``n`` crash reports with family/cluster/member structure.

    ``member_mutation`` controls how far members drift from their cluster
    prototype (within-cluster similarity), ``cluster_mutation`` how far
    prototypes drift from the family backbone (cross-cluster similarity
    inside a family).  With ``ensure_unique`` every frame sequence is
    distinct, so n reports yield n * (n - 1) / 2 distinct trace pairs.
    Deterministic for a fixed seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pools = _function_pool(n_packages, classes_per_package, methods_per_class)
    all_functions = [fn for pool in pools for fn in pool]

    n_clusters = (n + cluster_size - 1) // cluster_size
    n_families = (n_clusters + clusters_per_family - 1) // clusters_per_family

    backbones: list[list[str]] = []
    home_pools: list[list[str]] = []
    for _ in range(n_families):
        home = pools[rng.integers(len(pools))]
        length = int(rng.integers(min_len, max_len + 1))
        backbones.append(
            [
                home[rng.integers(len(home))]
                if rng.random() < 0.75
                else all_functions[rng.integers(len(all_functions))]
                for _ in range(length)
            ]
        )
        home_pools.append(home)

    def perturb(base: list[str], rate: float, home: list[str]) -> list[str]:
        frames = []
        for fn in base:
            r = rng.random()
            if r < rate * 0.25 and len(base) > 4:
                continue  # drop this frame
            if r < rate:
                fn = (
                    home[rng.integers(len(home))]
                    if rng.random() < 0.5
                    else all_functions[rng.integers(len(all_functions))]
                )
            frames.append(fn)
            if rng.random() < rate * 0.2:
                frames.append(home[rng.integers(len(home))])
        return frames or [base[0]]

    prototypes: list[list[str]] = []
    tails: list[int] = []
    for c in range(n_clusters):
        family = c // clusters_per_family
        prototypes.append(
            perturb(backbones[family], cluster_mutation, home_pools[family])
        )
        tails.append(int(rng.integers(0, len(_TAIL_FUNCTIONS) + 1)))

    seen: set[tuple[str, ...]] = set()
    reports: list[CrashReport] = []
    for i in range(n):
        cluster = i // cluster_size
        family = cluster // clusters_per_family
        rate = member_mutation
        for _attempt in range(64):
            functions = perturb(prototypes[cluster], rate, home_pools[family])
            if tails[cluster]:
                functions = functions + list(_TAIL_FUNCTIONS[-tails[cluster] :])
            key = tuple(functions)
            if not ensure_unique or key not in seen:
                break
            rate = min(1.0, rate * 1.4)  # press harder until the trace is fresh
        seen.add(tuple(functions))
        trace = StackTrace(tuple(_frame(rng, fn) for fn in functions))
        reports.append(
            CrashReport(
                id=f"{id_prefix}{i:06d}",
                trace=trace,
                error_type=_ERROR_TYPES[cluster % len(_ERROR_TYPES)],
                message=f"failure in cluster {cluster}",
            )
        )
    return reports
