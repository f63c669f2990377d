"""Command-line harness: single rounds, parameter sweeps and oracle verification.

Exit codes: 0 success, 2 config error, 3 protocol abort, 4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import verify
from .config import load_params_file, validate
from .errors import ConfigError, RoundAborted
from .kernels import BACKEND
from .transport import DropoutSchedule, byte_counts, op_counts, plaintext_weighted_average, run_round

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_VERIFY = 4

CSV_COLUMNS = [
    "axis",
    "axis_value",
    "clients",
    "vector_size",
    "share_num",
    "threshold",
    "dropout_frac",
    "dropout_stage",
    "seed",
    "repetition",
    "status",
    "abort_reason",
    "survivors",
    "dropped_ids",
    "checksum",
    "max_abs_error",
    "client_bytes",
    "server_bytes",
    "prg_elements_client",
    "prg_elements_server",
    "reconstructions",
    "server_time",
    "client_time",
]
WALL_CLOCK_COLUMNS = ("server_time", "client_time")

_PARAM_FLAGS = {
    "share_num": "share_num",
    "threshold": "threshold",
    "clipping_range": "clipping_range",
    "target_range": "target_range",
    "max_weights_factor": "max_weights_factor",
    "mod_range": "mod_range",
    "min_num": "min_num",
    "min_frac": "min_frac",
}


def _int(text: str) -> int:
    return int(text.replace("_", ""), 0)


def _frac_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _int_list(text: str) -> list[int]:
    return [_int(part) for part in text.split(",") if part.strip()]


def _protocol_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("protocol parameters")
    g.add_argument("--clients", type=int, default=20, help="number of sampled clients n")
    g.add_argument("--vector-size", type=int, default=1000, help="model vector length l")
    g.add_argument("--share-num", type=int, help="shares per secret, also the neighborhood size k")
    g.add_argument("--threshold", type=int, help="shares needed to reconstruct")
    g.add_argument("--clipping-range", type=float)
    g.add_argument("--target-range", type=_int)
    g.add_argument("--max-weights-factor", type=int)
    g.add_argument("--mod-range", type=_int)
    g.add_argument("--min-num", type=int)
    g.add_argument("--min-frac", type=float)
    g.add_argument("--config", type=Path, help="key=value parameter file; flags override it")
    s = p.add_argument_group("simulation")
    s.add_argument("--dropout-frac", type=_frac_list, default=[0.0], help="fraction of clients that drop out")
    s.add_argument("--dropout-stage", type=int, default=2, choices=range(4), help="stage after which they drop")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--csv", type=Path, help="append result rows to this CSV file")
    return p


def _params_from_args(args: argparse.Namespace) -> dict[str, Any]:
    params: dict[str, Any] = dict(load_params_file(args.config)) if args.config else {}
    for attr, key in _PARAM_FLAGS.items():
        value = getattr(args, attr)
        if value is not None:
            params[key] = value
    return params


def make_inputs(n: int, l: int, clipping_range: float, max_weights_factor: int, seed: int):
    rng = np.random.default_rng([seed, n, l])
    return [
        (rng.normal(0.0, clipping_range / 2, l), int(rng.integers(1, 2 * max_weights_factor + 1)))
        for _ in range(n)
    ]


def run_experiment(
    params: dict[str, Any],
    n: int,
    l: int,
    dropout_frac: float,
    dropout_stage: int,
    seed: int,
    axis: str = "",
    axis_value: int | str = "",
    repetition: int = 0,
) -> dict[str, Any]:
    """Run one seeded round and flatten its outcome into a CSV row."""
    return _experiment(params, n, l, dropout_frac, dropout_stage, seed, axis, axis_value, repetition)[0]


def _experiment(params, n, l, dropout_frac, dropout_stage, seed, axis="", axis_value="", repetition=0):
    row: dict[str, Any] = {col: "" for col in CSV_COLUMNS}
    row.update(
        axis=axis,
        axis_value=axis_value,
        clients=n,
        vector_size=l,
        dropout_frac=dropout_frac,
        dropout_stage=dropout_stage,
        seed=seed,
        repetition=repetition,
    )
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            config = validate(params, n, l)
    except ConfigError as exc:
        row.update(status="config_error", abort_reason=str(exc))
        return row, None
    row.update(share_num=config.share_num, threshold=config.threshold)
    inputs = make_inputs(n, l, config.clipping_range, config.max_weights_factor, seed)
    schedule = DropoutSchedule.random(n, dropout_frac, dropout_stage, seed)
    row["dropped_ids"] = " ".join(map(str, schedule.dropped_ids))
    try:
        result = run_round(config, inputs, schedule, master_seed=seed)
    except RoundAborted as exc:
        meter = exc.report.meter
        row.update(status="aborted", abort_reason=f"{exc.reason.name} at stage {exc.stage}")
        _fill_metrics(row, meter, alive=None)
        return row, meter
    expected = plaintext_weighted_average(config, inputs, result.survivors)
    completed = sorted(result.survivor_sets[4])
    row.update(
        status="ok",
        survivors=result.survivor_count,
        checksum=hashlib.sha256(result.aggregate.astype("<f8").tobytes()).hexdigest()[:16],
        max_abs_error=f"{float(np.max(np.abs(result.aggregate - expected))):.3e}",
    )
    _fill_metrics(row, result.metrics, alive=completed)
    return row, result.metrics


def _fill_metrics(row: dict[str, Any], meter, alive: list[int] | None) -> None:
    bytes_ = byte_counts(meter)
    ops = op_counts(meter)
    ids = alive if alive is not None else list(bytes_["per_client"])
    row["client_bytes"] = max((bytes_["per_client"].get(i, 0) for i in ids), default=0)
    row["server_bytes"] = bytes_["server"]["total"]
    row["prg_elements_client"] = max((ops["prg_elements_client"].get(i, 0) for i in ids), default=0)
    row["prg_elements_server"] = ops["prg_elements_server"]
    row["reconstructions"] = ops["reconstructions"]
    row["server_time"] = f"{meter.server_time:.6f}"
    times = [meter.client_time[i] for i in ids if i in meter.client_time]
    row["client_time"] = f"{(sum(times) / len(times)) if times else 0.0:.6f}"


def write_rows(path: Path | None, rows: list[dict[str, Any]], stream=None) -> None:
    if path is None:
        if stream is not None:
            writer = csv.DictWriter(stream, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        return
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if new:
            writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    if len(args.dropout_frac) != 1:
        print("simulate takes a single --dropout-frac", file=sys.stderr)
        return EXIT_CONFIG
    params = _params_from_args(args)
    n, l = args.clients, args.vector_size
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            config = validate(params, n, l)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    frac = args.dropout_frac[0]
    row, meter = _experiment(params, n, l, frac, args.dropout_stage, args.seed)
    print(f"kernels: {BACKEND}")
    print(
        f"clients={n} vector_size={l} share_num={config.share_num} threshold={config.threshold} "
        f"mod_range={config.mod_range} min_clients={config.min_clients}"
    )
    print(f"dropped after stage {args.dropout_stage}: [{row['dropped_ids']}]")
    print(f"status: {row['status']} {row['abort_reason']}".rstrip())
    if row["status"] == "ok":
        print(f"survivors: {row['survivors']}")
        print(f"aggregate checksum: {row['checksum']}  max |error| vs plaintext: {row['max_abs_error']}")
    print(f"client bytes (max): {row['client_bytes']}  server bytes: {row['server_bytes']}")
    print(
        f"prg elements client/server: {row['prg_elements_client']}/{row['prg_elements_server']}  "
        f"reconstructions: {row['reconstructions']}"
    )
    print(f"time server/client(mean): {row['server_time']}s/{row['client_time']}s")
    _print_stage_table(meter)
    write_rows(args.csv, [row])
    return EXIT_OK if row["status"] == "ok" else EXIT_ABORT


def _print_stage_table(meter) -> None:
    print("stage  server_sent  server_recv  client0_sent  client0_recv")
    for s in (0, 1, 2, 3, 4, 255):
        sent, recv = meter.server_sent.get(s, 0), meter.server_received.get(s, 0)
        if not (sent or recv):
            continue
        c_sent = meter.client_sent.get(0, {}).get(s, 0)
        c_recv = meter.client_received.get(0, {}).get(s, 0)
        label = "abort" if s == 255 else str(s)
        print(f"{label:>5}  {sent:>11}  {recv:>11}  {c_sent:>12}  {c_recv:>12}")


def cmd_sweep(args: argparse.Namespace) -> int:
    values = args.values
    if not values or any(v <= 0 for v in values) or any(b <= a for a, b in zip(values, values[1:])):
        print("--values must be positive and strictly increasing", file=sys.stderr)
        return EXIT_CONFIG
    try:
        params = _params_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    jobs = []
    for value in values:
        n = value if args.axis == "clients" else args.clients
        l = value if args.axis == "vector_size" else args.vector_size
        for frac in args.dropout_frac:
            for rep in range(args.repetitions):
                jobs.append((params, n, l, frac, args.dropout_stage, args.seed + rep, args.axis, value, rep))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_run_job, jobs))
    else:
        rows = [_run_job(job) for job in jobs]
    write_rows(args.csv, rows, stream=None if args.csv else sys.stdout)
    if args.csv:
        for row in rows:
            print(
                f"{args.axis}={row['axis_value']} dropout={row['dropout_frac']} rep={row['repetition']}: "
                f"{row['status']} client_bytes={row['client_bytes']} prg_server={row['prg_elements_server']}"
            )
    return EXIT_OK


def _run_job(job: tuple) -> dict[str, Any]:
    return run_experiment(*job)


def cmd_verify(args: argparse.Namespace) -> int:
    if args.inject_fault:
        with verify.inject_fault(args.inject_fault):
            results = verify.run_all(args.seed, args.max_n, args.instances)
    else:
        results = verify.run_all(args.seed, args.max_n, args.instances)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        first = failed[0]
        print(f"first failure: {first.name}: {first.detail} (reproduce with --seed {first.seed})", file=sys.stderr)
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secaggplus", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _protocol_flags()

    p = sub.add_parser("simulate", parents=[common], help="run one simulated round")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="sweep clients or vector size, emit CSV")
    p.add_argument("--axis", choices=["clients", "vector_size"], required=True)
    p.add_argument("--values", type=_int_list, required=True, help="comma-separated, increasing")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the oracle and invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-n", type=int, default=6, help="largest n for the exhaustive dropout suite")
    p.add_argument("--instances", type=int, default=200, help="random mask-cancellation instances")
    p.add_argument("--inject-fault", choices=verify.FAULTS, help="deliberately break masking (self-test)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
