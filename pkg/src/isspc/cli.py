"""Command-line entry point: ``isspc simulate | cluster | evaluate | bench``.

Exit codes: 0 success (zero clusters included), 2 configuration error,
3 I/O or parse error, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .driver import ConfigError, IsspcConfig, cluster_summary, run_isspc
from .evaluate import report
from .model import DataMatrix, Partition
from .simulate import InfeasibleSpecError, SimSpec, generate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INTERNAL = 4

SCHEMA_VERSION = 1


class ParseError(Exception):
    """Malformed input file."""


class InvariantError(Exception):
    """Output failed a post-run consistency check."""


# ---------------------------------------------------------------- file I/O


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_matrix(path: str) -> DataMatrix:
    """Read a numeric CSV; a non-numeric first row is taken as the header.

    A leading ``row_id`` column, when named in the header, supplies the row
    identifiers instead of the default 0..n-1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    while rows and not any(tok.strip() for tok in rows[-1]):
        rows.pop()
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = None
    start = 0
    if not all(_is_number(tok) for tok in rows[0]):
        header = [tok.strip() for tok in rows[0]]
        start = 1
    id_col = header is not None and header[0].lower() == "row_id"
    width = len(rows[0])
    ids, data = [], []
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise ParseError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
        if id_col:
            ids.append(row[0].strip())
            row = row[1:]
        try:
            vals = [float(tok) for tok in row]
        except ValueError:
            raise ParseError(f"{path}: row {lineno} has a non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(f"{path}: row {lineno} has a NaN or infinite value")
        data.append(vals)
    if not data or not data[0]:
        raise ParseError(f"{path}: no data rows")
    try:
        return DataMatrix(np.array(data), ids if id_col else None)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def read_labels(path: str) -> tuple[list[str] | None, np.ndarray]:
    """Read ``row_id,label`` (or a single label column). Returns (ids, labels)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(tok.strip() for tok in r)]
    if not rows:
        raise ParseError(f"{path}: empty file")
    start = 0 if all(_is_number(tok) for tok in rows[0]) else 1
    width = len(rows[0])
    if width not in (1, 2):
        raise ParseError(f"{path}: expected 1 or 2 columns, found {width}")
    ids, labels = [], []
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise ParseError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
        try:
            lab = int(row[-1])
        except ValueError:
            raise ParseError(f"{path}: row {lineno} has a non-integer label") from None
        if lab < 0:
            raise ParseError(f"{path}: row {lineno} has a negative label")
        labels.append(lab)
        if width == 2:
            ids.append(row[0].strip())
    return (ids if width == 2 else None), np.array(labels, dtype=np.int64)


def write_matrix(path: str, values: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(f"x{m + 1}" for m in range(values.shape[1])) + "\n")
        for row in values:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def write_labels(path: str, row_ids, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("row_id,label\n")
        for rid, lab in zip(row_ids, labels):
            fh.write(f"{rid},{int(lab)}\n")


# ---------------------------------------------------------------- summary


@dataclass
class RunSummary:
    """Everything recorded about one ``cluster`` run."""

    config: dict
    n: int
    p: int
    nu: int
    seed: int
    K: int
    noise_count: int
    clusters: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunSummary":
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ParseError(f"unsupported schema_version {doc.get('schema_version')!r}")
        return cls(**doc)


# ---------------------------------------------------------------- helpers


def parse_eta(text: str, p: int) -> int:
    """``10`` is taken as is; ``0.25`` or ``0.25p`` means ceil(0.25 * p)."""
    s = text.strip().lower()
    frac = s.endswith("p")
    if frac:
        s = s[:-1]
    try:
        val = float(s)
    except ValueError:
        raise ConfigError(f"cannot parse --eta {text!r}") from None
    if frac or val < 1:
        if not 0 < val < 1:
            raise ConfigError(f"fractional --eta must lie in (0, 1), got {text!r}")
        return int(math.ceil(val * p))
    if val != int(val):
        raise ConfigError(f"--eta must be an integer or a fraction of p, got {text!r}")
    return int(val)


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None


def _fmt(x) -> str:
    return "NA" if x is None else f"{x:.6f}"


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    spec = SimSpec(
        n=args.n, p=args.p, K=args.k, noise_fraction=args.noise, variant=args.variant,
        box_halfwidth=args.box, cluster_sd=args.sd, seed=args.seed,
    )
    sim = generate(spec)
    write_matrix(f"{args.out}.data.csv", sim.data.values)
    write_labels(f"{args.out}.truth.csv", range(spec.n), sim.truth.labels)
    print(f"wrote {args.out}.data.csv and {args.out}.truth.csv ({spec.n} rows)")
    return EXIT_OK


def _config_from_args(args, p: int) -> IsspcConfig:
    return IsspcConfig(
        eta=parse_eta(args.eta, p), omega1=args.omega1, omega_later=args.omega_later,
        nu=args.nu, a=args.a, beta=args.beta, c=args.c, n0=args.n0,
        trim_fraction=args.trim, seed=args.seed, max_outer_iters=args.max_iters,
    )


def cmd_cluster(args) -> int:
    t0 = time.perf_counter()
    data = read_matrix(args.data)
    t_read = time.perf_counter() - t0
    cfg = _config_from_args(args, data.p)
    t1 = time.perf_counter()
    result = run_isspc(data, cfg)
    t_run = time.perf_counter() - t1
    labels = result.partition.labels
    if labels.size != data.n or labels.min(initial=0) < 0:
        raise InvariantError("label vector does not cover the input")
    t2 = time.perf_counter()
    write_labels(f"{args.out}.labels.csv", data.row_ids, labels)
    summary = RunSummary(
        config=asdict(cfg), n=data.n, p=data.p, nu=result.nu, seed=cfg.seed,
        K=result.K, noise_count=int(result.partition.noise.size),
        clusters=cluster_summary(data, result.partition),
        traces=[t.to_dict() for t in result.traces],
    )
    summary.timings = {
        "read": t_read,
        "run": t_run,
        "spc": sum(t.seconds_spc for t in result.traces),
        "validate": sum(t.seconds_validate for t in result.traces),
        "assign": sum(t.seconds_assign for t in result.traces),
        "write": time.perf_counter() - t2,
    }
    with open(f"{args.out}.summary.json", "w", encoding="utf-8") as fh:
        fh.write(summary.to_json() + "\n")
    print(f"K = {result.K}, noise = {summary.noise_count}, iterations = {len(result.traces)}")
    return EXIT_OK


def _aligned_labels(truth_path: str, est_path: str):
    tid, t = read_labels(truth_path)
    eid, e = read_labels(est_path)
    if t.size != e.size:
        raise ParseError(f"row counts differ: {t.size} vs {e.size}")
    if tid is not None and eid is not None and tid != eid:
        pos = {rid: i for i, rid in enumerate(eid)}
        if len(pos) != len(eid) or set(pos) != set(tid):
            raise ParseError("row_id sets differ between truth and estimate")
        e = e[[pos[rid] for rid in tid]]
    return t, e


def _as_partition(labels: np.ndarray) -> Partition:
    try:
        return Partition(labels)
    except ValueError:  # gaps in the label set
        return Partition.relabel(labels)


def cmd_evaluate(args) -> int:
    t, e = _aligned_labels(args.truth, args.est)
    rep = report(_as_partition(t), _as_partition(e))
    if args.json:
        print(json.dumps(rep, sort_keys=True))
        return EXIT_OK
    print(f"ARI   {_fmt(rep['ari'])}")
    print(f"ARI_c {_fmt(rep['ari_c'])}")
    print(f"ARI_n {_fmt(rep['ari_n'])}")
    print(f"K     {rep['k_est']} (true {rep['k_true']})")
    print("contingency (rows: estimated clusters then noise; cols: true clusters then noise)")
    for row in rep["contingency"]:
        print(" ".join(f"{v:6d}" for v in row))
    return EXIT_OK


BENCH_FIELDS = ["n", "noise", "a", "nu", "reps", "status"] + [
    f"{m}_{q}" for m in ("ari_c", "ari_n", "k", "seconds") for q in ("q1", "median", "q3")
]


def bench_cell(n: int, noise: float, a: float, reps: int, seed: int, p: int, K: int) -> dict:
    """Run ``reps`` seeded replicates on one design cell."""
    row = {"n": n, "noise": noise, "a": a, "nu": int(math.ceil(a * math.sqrt(n))), "reps": reps}
    try:
        sim = generate(SimSpec(n=n, p=p, K=K, noise_fraction=noise, seed=seed))
        stats = {"ari_c": [], "ari_n": [], "k": [], "seconds": []}
        for r in range(reps):
            t = time.perf_counter()
            res = run_isspc(sim.data, IsspcConfig(a=a, seed=seed + r))
            stats["seconds"].append(time.perf_counter() - t)
            rep = report(sim.truth, res.partition)
            stats["ari_c"].append(np.nan if rep["ari_c"] is None else rep["ari_c"])
            stats["ari_n"].append(rep["ari_n"])
            stats["k"].append(rep["k_est"])
        for key, vals in stats.items():
            vals = np.asarray(vals, dtype=float)
            if np.all(np.isnan(vals)):
                q = (np.nan,) * 3
            else:
                q = np.nanpercentile(vals, [25, 50, 75])
            for name, v in zip(("q1", "median", "q3"), q):
                row[f"{key}_{name}"] = float(v)
        row["status"] = "ok"
    except Exception as exc:  # a failed cell is reported, not fatal
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
    return row


def bench_workers(n_cells: int) -> int:
    env = os.environ.get("ISSPC_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"ISSPC_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError("ISSPC_THREADS must be >= 1")
    return max(1, min(cap, n_cells))


def cmd_bench(args) -> int:
    ns = [int(v) for v in _csv_floats(args.n)]
    noises = _csv_floats(args.noise)
    a_vals = _csv_floats(args.a)
    if args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    cells = [(n, nf, a) for n in ns for nf in noises for a in a_vals]
    jobs = [(n, nf, a, args.reps, args.seed, args.p, args.k) for n, nf, a in cells]
    workers = bench_workers(len(jobs))
    if workers == 1:
        rows = [bench_cell(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(bench_cell, *zip(*jobs)))
    fields = [f for f in BENCH_FIELDS if not (args.no_timings and f.startswith("seconds"))]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", restval="")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
    n_failed = sum(r["status"] != "ok" for r in rows)
    print(f"wrote {len(rows)} cells to {args.out} ({n_failed} failed)")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isspc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a synthetic data set")
    sp.add_argument("--n", type=int, default=10_000)
    sp.add_argument("--p", type=int, default=20)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--noise", type=float, default=0.1, help="noise fraction of n")
    sp.add_argument("--variant", choices=("spherical", "correlated"), default="spherical")
    sp.add_argument("--box", type=float, default=5.0, help="noise box half-width")
    sp.add_argument("--sd", type=float, default=0.5, help="cluster standard deviation")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output prefix")
    sp.set_defaults(func=cmd_simulate)

    d = IsspcConfig()
    cp = sub.add_parser("cluster", help="cluster a CSV data file")
    cp.add_argument("data")
    cp.add_argument("--out", required=True, help="output prefix")
    cp.add_argument("--omega1", type=float, default=d.omega1)
    cp.add_argument("--omega-later", type=float, default=d.omega_later)
    grp = cp.add_mutually_exclusive_group()
    grp.add_argument("--nu", type=int, default=None, help="subsample size")
    grp.add_argument("--a", type=float, default=d.a, help="nu = ceil(a sqrt(n))")
    cp.add_argument("--eta", default=str(d.eta), help="integer, or fraction of p such as 0.25p")
    cp.add_argument("--beta", type=float, default=d.beta)
    cp.add_argument("--c", type=float, default=d.c)
    cp.add_argument("--n0", type=int, default=d.n0)
    cp.add_argument("--trim", type=float, default=d.trim_fraction)
    cp.add_argument("--seed", type=int, default=d.seed)
    cp.add_argument("--max-iters", type=int, default=d.max_outer_iters)
    cp.set_defaults(func=cmd_cluster)

    ep = sub.add_parser("evaluate", help="score an estimated labelling")
    ep.add_argument("truth")
    ep.add_argument("est")
    ep.add_argument("--json", action="store_true", help="print a JSON report")
    ep.set_defaults(func=cmd_evaluate)

    bp = sub.add_parser("bench", help="replicate runs over a design grid")
    bp.add_argument("--n", default="10000", help="comma-separated sizes")
    bp.add_argument("--noise", default="0.1", help="comma-separated noise fractions")
    bp.add_argument("--a", default="2", help="comma-separated subsample multipliers")
    bp.add_argument("--reps", type=int, default=5)
    bp.add_argument("--p", type=int, default=20)
    bp.add_argument("--k", type=int, default=10)
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--no-timings", action="store_true", help="omit wall-clock columns")
    bp.add_argument("--out", required=True, help="output CSV path")
    bp.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InfeasibleSpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, OSError) as exc:
        print(f"input/output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
