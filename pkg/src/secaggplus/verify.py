"""Oracle checks run by ``secaggplus verify``.

Each check compares the protocol against an independent plaintext
computation and returns :class:`CheckResult` objects carrying a
reproduction seed.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import random
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import crypto, masking
from .config import SecAggConfig, min_clients_limit, validate
from .errors import AbortReason, RoundAborted, SecAggError
from .modfield import FieldVector, vec_sub_mod
from .transport import DropoutSchedule, plaintext_weighted_average, run_round


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seed: int | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        repro = f" (seed={self.seed})" if self.seed is not None and not self.passed else ""
        return f"{status} {self.name}{': ' + self.detail if self.detail else ''}{repro}"


def tolerance(config: SecAggConfig) -> float:
    return 2 * config.clipping_range / (config.target_range - 1)


def random_inputs(config: SecAggConfig, rng: np.random.Generator) -> list[tuple[np.ndarray, int]]:
    """Vectors spread over twice the clipping range so clipping is exercised."""
    c = config.clipping_range
    return [
        (rng.uniform(-2 * c, 2 * c, config.l), int(rng.integers(1, 2 * config.max_weights_factor + 1)))
        for _ in range(config.n)
    ]


def _check_outcome(
    config: SecAggConfig,
    inputs: list[tuple[np.ndarray, int]],
    schedule: DropoutSchedule,
    seed: int,
    expect_success: bool,
    allow_share_shortage: bool,
) -> str | None:
    """Run one round; return a failure description or None."""
    try:
        result = run_round(config, inputs, schedule, master_seed=seed, keep_transcript=False)
    except RoundAborted as exc:
        if not expect_success:
            stages = exc.report.client_stages
            dropped = set(exc.report.dropped)
            stuck = [cid for cid, st in stages.items() if cid not in dropped and st.name != "ABORTED"]
            if stuck:
                return f"clients {stuck} not in ABORTED state after abort"
            return None
        # sparse graphs can starve a client of neighbors even with enough survivors overall
        if allow_share_shortage and (exc.reason == AbortReason.INSUFFICIENT_SHARES or exc.report.refusals):
            return None
        return f"unexpected abort: {exc}"
    except SecAggError as exc:
        return f"error: {type(exc).__name__}: {exc}"
    if not expect_success:
        return f"round produced output with only {result.survivor_count} survivors"
    expected = plaintext_weighted_average(config, inputs, result.survivors)
    err = float(np.max(np.abs(result.aggregate - expected)))
    if err > tolerance(config):
        return f"residue {err:.3g} exceeds {tolerance(config):.3g}; survivors {list(result.survivors)}"
    return None


def _small_configs(max_n: int) -> Iterator[tuple[SecAggConfig, bool]]:
    """(config, is_ring) pairs covering complete graphs and small rings."""
    for n in range(1, max_n + 1):
        thresholds = sorted({1, max(1, math.ceil(n / 2)), n})
        for t in thresholds:
            yield validate({"share_num": n, "threshold": t, "min_num": 1, "max_weights_factor": 4}, n, 3), False
    for n, k, t in ((5, 3, 2), (6, 3, 2)):
        if n <= max_n:
            yield validate({"share_num": k, "threshold": t, "min_num": 1, "max_weights_factor": 4}, n, 3), True


def check_exhaustive_dropouts(max_n: int = 6, seed: int = 0, rings: bool = True) -> list[CheckResult]:
    """Every dropout subset at every stage 0-3 for every small configuration."""
    results = []
    for config, is_ring in _small_configs(max_n):
        if is_ring and not rings:
            continue
        limit = min_clients_limit(config)
        rng = np.random.default_rng([seed, config.n, config.share_num, config.threshold])
        inputs = random_inputs(config, rng)
        name = f"exhaustive n={config.n} k={config.share_num} t={config.threshold}"
        failure = None
        cases = 0
        for stage in range(4):
            for size in range(config.n + 1):
                for dropped in itertools.combinations(range(config.n), size):
                    cases += 1
                    run_seed = seed * 1_000_003 + cases
                    problem = _check_outcome(
                        config,
                        inputs,
                        DropoutSchedule.after_stage(dropped, stage),
                        run_seed,
                        expect_success=config.n - size >= limit,
                        allow_share_shortage=is_ring,
                    )
                    if problem:
                        failure = f"drop {list(dropped)} after stage {stage}: {problem}"
                        results.append(CheckResult(name, False, failure, run_seed))
                        break
                if failure:
                    break
            if failure:
                break
        if not failure:
            results.append(CheckResult(name, True, f"{cases} schedules"))
    return results


def check_mask_cancellation(instances: int = 200, seed: int = 0) -> list[CheckResult]:
    """Pairwise masks summed over a full survivor set vanish mod m."""
    rng = random.Random(seed)
    for case in range(instances):
        n = rng.randint(1, 8)
        options = [n] + [k for k in range(1, n, 2)]
        k = rng.choice(options)
        m = rng.choice([2**16, 2**24, 2**40, 1_000_003])
        length = rng.randint(1, 16)
        graph = masking.build_neighbor_graph(n, k)
        pair_seeds = {}
        for i in range(n):
            for j in graph.peers(i):
                if i < j:
                    pair_seeds[(i, j)] = rng.randbytes(16)
        total = FieldVector.zeros(length, m)
        for i in range(n):
            self_seed = rng.randbytes(16)
            seeds = {j: pair_seeds[(min(i, j), max(i, j))] for j in graph.peers(i)}
            y = masking.compute_masked_vector(FieldVector.zeros(length, m), self_seed, seeds, i, graph)
            pairwise_only = vec_sub_mod(y, crypto.prg_expand(self_seed, length, m))
            total = FieldVector((total.values + pairwise_only.values) % np.uint64(m), m)
        if np.any(total.values):
            residue = total.tolist()[:4]
            return [
                CheckResult(
                    "mask cancellation",
                    False,
                    f"instance {case} (n={n}, k={k}, m={m}) leaves residue {residue}...",
                    seed,
                )
            ]
    return [CheckResult("mask cancellation", True, f"{instances} instances")]


def check_shamir(seed: int = 0) -> list[CheckResult]:
    rng = crypto.SeededRandomness(seed)
    out = []
    secret = rng.token_bytes(32)
    shares = crypto.shamir_split(secret, 5, 3, rng)
    ok = all(crypto.shamir_reconstruct(list(sub), 3) == secret for sub in itertools.combinations(shares, 3))
    out.append(CheckResult("shamir 3-of-5 all subsets", ok, "" if ok else "a subset failed", seed))
    try:
        crypto.shamir_reconstruct(shares[:2], 3)
        out.append(CheckResult("shamir below threshold", False, "2 shares accepted", seed))
    except crypto.ShareError:
        out.append(CheckResult("shamir below threshold", True))
    big = crypto.shamir_split(secret, 51, 26, rng)
    ok = crypto.shamir_reconstruct(big[25:], 26) == secret
    out.append(CheckResult("shamir 26-of-51", ok, "" if ok else "reconstruction mismatch", seed))
    return out


def check_single_client(seed: int = 0) -> list[CheckResult]:
    config = validate({"share_num": 1, "threshold": 1}, 1, 5)
    vector = np.array([-4.0, -1.5, 0.0, 0.25, 7.0])
    result = run_round(config, [(vector, 1)], master_seed=seed)
    expected = np.clip(vector, -config.clipping_range, config.clipping_range)
    err = float(np.max(np.abs(result.aggregate - expected)))
    ok = err <= tolerance(config)
    return [CheckResult("single client", ok, f"max error {err:.3g}", seed)]


def run_all(seed: int = 0, max_n: int = 6, instances: int = 200) -> list[CheckResult]:
    checks: list[tuple[str, Callable[[], list[CheckResult]]]] = [
        ("shamir", lambda: check_shamir(seed)),
        ("mask cancellation", lambda: check_mask_cancellation(instances, seed)),
        ("single client", lambda: check_single_client(seed)),
        ("exhaustive dropouts", lambda: check_exhaustive_dropouts(max_n, seed)),
    ]
    results: list[CheckResult] = []
    for name, check in checks:
        try:
            results.extend(check())
        except (SecAggError, ValueError) as exc:
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}", seed))
    return results


FAULTS = ("sign-flip",)


@contextlib.contextmanager
def inject_fault(name: str) -> Iterator[None]:
    """Temporarily break the protocol to confirm the checks notice."""
    if name != "sign-flip":
        raise ValueError(f"unknown fault {name!r}; choose from {FAULTS}")
    original = masking.pairwise_sign

    def broken(i: int, j: int) -> int:
        original(i, j)
        return 1

    masking.pairwise_sign = broken
    try:
        yield
    finally:
        masking.pairwise_sign = original
