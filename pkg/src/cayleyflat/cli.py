"""Command-line front end: ``python -m cayleyflat <command> ...``.

Tables are named ``family:params``; a comma list or ``lo..hi`` range in the
params expands to several tables (``cyclic:6,8,10``, ``cyclic:3..16``).
Families: ``cyclic:N``, ``dihedral:M``, ``product:N1xN2[x...]`` (cyclic
factors), ``random-latin:N``, ``nonassoc:N`` (both seeded by ``--seed``) and
``file:PATH``.

Exit codes: 0 success / exact recovery, 1 usage error, 2 run failure or
inexact recovery, 3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import algebra, baseline, engine, model, numerics, verify

EXIT_OK, EXIT_USAGE, EXIT_RUN, EXIT_VERIFY = 0, 1, 2, 3

TRAIN_KEYS = {f.name for f in fields(engine.TrainConfig)}
RUN_KEYS = {
    "m", "fraction", "seed", "seeds", "k", "m_grid", "encodings", "ranks",
    "weight_decay", "jobs", "threshold",
}


class UsageError(Exception):
    pass


# table specs

def _expand(params):
    out = []
    for part in params.split(","):
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(str(i) for i in range(int(lo), int(hi) + 1))
        elif part:
            out.append(part)
    return out


def parse_tables(tokens, seed=0):
    """Turn positional tokens into ``[(table_id, CayleyTable), ...]``."""
    specs = []
    tokens = [tok for tok in tokens if tok != "vs"]
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if ":" not in tok and i + 1 < len(tokens) and ":" not in tokens[i + 1]:
            tok = f"{tok}:{tokens[i + 1]}"
            i += 1
        specs.append(tok)
        i += 1
    tables = []
    for spec in specs:
        family, _, params = spec.partition(":")
        if not params:
            raise UsageError(f"table spec {spec!r} needs parameters, e.g. cyclic:6")
        if family == "file":
            tables.append((Path(params).stem, algebra.load_table(params)))
            continue
        for p in _expand(params):
            tables.append(_one_table(family, p, seed))
    if not tables:
        raise UsageError("no table given")
    return tables


def _one_table(family, p, seed):
    try:
        if family == "cyclic":
            return f"cyclic-{p}", algebra.cyclic_group(int(p))
        if family == "dihedral":
            return f"dihedral-{p}", algebra.dihedral_group(int(p))
        if family == "product":
            factors = [int(x) for x in p.split("x")]
            t = algebra.cyclic_group(factors[0])
            for k in factors[1:]:
                t = algebra.direct_product(t, algebra.cyclic_group(k))
            return f"product-{p}", t
        if family == "random-latin":
            return f"random-latin-{p}-s{seed}", algebra.random_latin_square(int(p), seed)
        if family == "nonassoc":
            return f"nonassoc-{p}-s{seed}", algebra.find_nonassociative_quasigroup(int(p), seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    raise UsageError(f"unknown table family {family!r}")


# config handling

def read_config_file(path):
    """``key = value`` lines; ``#`` starts a comment."""
    cfg = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg[key] = value
    return cfg


def resolve_config(args):
    raw = {}
    if getattr(args, "config", None):
        raw.update(read_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    for key in RUN_KEYS | TRAIN_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    unknown = set(raw) - TRAIN_KEYS - RUN_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = engine.TrainConfig.from_dict({k: v for k, v in raw.items() if k in TRAIN_KEYS})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    run = {k: v for k, v in raw.items() if k in RUN_KEYS}
    return cfg, run


def _int_list(v):
    return [int(x) for x in _expand(str(v))] if not isinstance(v, list) else v


def _grid(v):
    vals = []
    for x in str(v).split(","):
        vals.append(float(x) if "." in x or "e" in x else int(x))
    return vals


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# commands

def cmd_gen(args):
    (table_id, t), *rest = parse_tables(args.table, args.seed or 0)
    if rest:
        raise UsageError("gen writes a single table")
    text = algebra.table_to_json(t) if (args.format == "json") else algebra.table_to_text(t)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text + ("\n" if args.format == "json" else ""))
    summary = {"table_id": table_id, "n": t.n, "latin": algebra.is_latin(t),
               "associative": algebra.is_associative(t)}
    if t.n <= 5 and summary["latin"]:
        summary["isotopic_to_group"] = algebra.is_isotopic_to_group(t)
    print(json.dumps(summary), file=sys.stderr)
    return EXIT_OK


def _observation(run, n, seed):
    if "m" in run and "fraction" in run:
        raise UsageError("give m or fraction, not both")
    if "m" in run:
        m = int(run["m"])
    elif "fraction" in run:
        m = int(round(float(run["fraction"]) * n * n))
    else:
        return model.ObservationSet.full(n)
    try:
        return engine.sample_mask(n, m, engine.mask_rng(seed, n, m))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args):
    cfg, run = resolve_config(args)
    seed = int(run.get("seed", 0))
    (table_id, t), *rest = parse_tables(args.table, seed)
    if rest:
        raise UsageError("train takes a single table")
    omega = _observation(run, t.n, seed)
    try:
        res = engine.train(t, omega, cfg, seed)
    except engine.TrainDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN
    rep = engine.evaluate(res.decoded, t, omega, res.flatness_final, res.margin_min)
    out = {
        "table_id": table_id,
        "n": t.n,
        "m": len(omega),
        "config": {**asdict(cfg), **run},
        "result": res.summary(),
        "report": asdict(rep),
        "decoded": res.decoded.cells.tolist(),
        "trajectory": [list(row) for row in res.trajectory],
    }
    _write(args.out, _dump(out))
    if args.checkpoint:
        Path(args.checkpoint).write_text(model.params_to_json(res.theta))
    return EXIT_OK if rep.exact else EXIT_RUN


def read_rows(path):
    path = Path(path)
    if not path.exists() or path.stat().st_size == 0:
        return []
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_rows(path, rows):
    rows = sorted((engine.format_row(r) for r in rows), key=engine.row_key)
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=engine.SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)


class _Appender:
    """Single writer that appends rows as runs finish; sorted on close."""

    def __init__(self, path, existing):
        self.path = Path(path)
        self.rows = list(existing)
        new = not self.path.exists() or self.path.stat().st_size == 0
        self.fh = self.path.open("a", newline="")
        self.writer = csv.DictWriter(self.fh, fieldnames=engine.SWEEP_COLUMNS)
        if new:
            self.writer.writeheader()

    def __call__(self, row):
        self.rows.append(row)
        self.writer.writerow(engine.format_row(row))
        self.fh.flush()

    def close(self):
        self.fh.close()
        write_rows(self.path, self.rows)


def _rows_typed(rows):
    # csv rows are strings; aggregate() only needs these fields
    out = []
    for r in rows:
        r = dict(r)
        r["m"] = int(r["m"])
        r["n"] = int(r["n"])
        out.append(r)
    return out


def cmd_sweep(args):
    cfg, run = resolve_config(args)
    tables = parse_tables(args.table, int(run.get("seed", 0)))
    grid = _grid(run.get("m_grid", "0.2,0.3,0.4,0.5,0.6,0.7,0.8,1.0"))
    seeds = int(run.get("seeds", 10))
    threshold = float(run.get("threshold", 0.9))
    if args.out is None:
        raise UsageError("sweep needs --out")
    existing = read_rows(args.out)
    done = {engine.row_key(r) for r in existing}
    app = _Appender(args.out, existing)
    try:
        engine.sweep_sample_complexity(tables, grid, seeds, cfg, jobs=int(run.get("jobs", 1)),
                                       done=done, on_row=app, threshold=threshold)
    finally:
        app.close()
    rows = [r for r in _rows_typed(read_rows(args.out)) if r["method"] == "tensor"]
    aggregates, m_star = engine.aggregate(rows, threshold)
    footer = {
        "config": {**asdict(cfg), **run},
        "threshold": threshold,
        "m_star": m_star,
        "m_star_over_n2": {tid: (m / aggregates[(tid, m)]["n"] ** 2 if m is not None else None)
                           for tid, m in m_star.items()},
        "rates": [{"table_id": tid, "m": m, **agg} for (tid, m), agg in aggregates.items()],
    }
    sizes = {}
    for (tid, _), agg in aggregates.items():
        sizes[tid] = agg["n"]
    if len(set(sizes.values())) == len(sizes):
        c, rel = engine.nlogn_fit({sizes[tid]: m for tid, m in m_star.items()})
        footer["nlogn_fit"] = {"c": c, "rel_rms": rel} if np.isfinite(c) else None
    Path(str(args.out) + ".summary.json").write_text(_dump(footer))
    print(json.dumps(footer["m_star"]))
    return EXIT_OK


def cmd_landscape(args):
    cfg, run = resolve_config(args)
    seed = int(run.get("seed", 0))
    k = int(run.get("k", 10))
    outs = []
    status = EXIT_OK
    for table_id, t in parse_tables(args.table, seed):
        try:
            summary = engine.landscape_probe(t, cfg, k, base_seed=seed, table_id=table_id)
            outs.append({**summary.to_json_dict(), "config": {**asdict(cfg), **run}})
        except (engine.ProbeFailed, engine.TrainDiverged, ValueError) as exc:
            print(f"error: {table_id}: {exc}", file=sys.stderr)
            status = EXIT_RUN
    _write(args.out, _dump(outs[0] if len(outs) == 1 else outs))
    return status


def cmd_baseline(args):
    cfg, run = resolve_config(args)
    tables = parse_tables(args.table, int(run.get("seed", 0)))
    if args.out is None:
        raise UsageError("baseline needs --out")
    if "m" not in run:
        raise UsageError("baseline needs --m")
    seeds = int(run.get("seeds", 10))
    encodings = str(run.get("encodings", "ordinal,onehot")).split(",")
    wd = float(run.get("weight_decay", 1e-3))
    existing = read_rows(args.out)
    done = {engine.row_key(r) for r in existing}
    app = _Appender(args.out, existing)
    try:
        for table_id, t in tables:
            ranks = _int_list(run["ranks"]) if "ranks" in run else None
            baseline.separation_rows(table_id, t, int(run["m"]), seeds, cfg, ranks, encodings, wd,
                                     done=done, on_row=app)
    finally:
        app.close()
    return EXIT_OK


def cmd_rank(args):
    encoding = args.encoding
    rows = []
    for table_id, t in parse_tables(args.table, args.seed or 0):
        M = baseline.encode_table(t, encoding)
        r = numerics.matrix_rank(M)
        r_exact = numerics.rank_exact(M)
        rows.append({"table_id": table_id, "n": t.n, "encoding": encoding, "rank": r,
                     "rank_exact": r_exact, "full_rank": r == r_exact == min(M.shape)})
    _write(args.out, _dump(rows))
    return EXIT_OK


def cmd_verify(args):
    checks = verify.run_all()
    report = {"passed": all(c.passed for c in checks), "checks": [c.as_dict() for c in checks]}
    _write(args.out, _dump(report))
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.measured:.3g} (tol {c.tolerance:g})",
              file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def build_parser():
    p = argparse.ArgumentParser(prog="cayleyflat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, table=True):
        if table:
            sp.add_argument("table", nargs="+", help="table spec(s), e.g. cyclic:6 or 'cyclic 6'")
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        return sp

    def train_flags(sp):
        sp.add_argument("--steps-max", dest="steps_max", type=int)
        sp.add_argument("--lam", type=float)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--m", type=int)
        sp.add_argument("--fraction", type=float)
        sp.add_argument("--seeds", type=int)
        sp.add_argument("--jobs", type=int)
        return sp

    g = common(sub.add_parser("gen", help="write a table"))
    g.add_argument("--format", choices=["json", "text"], default="json")
    g.set_defaults(func=cmd_gen)

    t = train_flags(common(sub.add_parser("train", help="fit one table")))
    t.add_argument("--checkpoint", help="write final parameters here")
    t.set_defaults(func=cmd_train)

    s = train_flags(common(sub.add_parser("sweep", help="sample-complexity sweep (CSV, resumable)")))
    s.add_argument("--m-grid", dest="m_grid", help="counts or fractions of n², comma separated")
    s.set_defaults(func=cmd_sweep)

    ls = train_flags(common(sub.add_parser("landscape", help="best flatness over restarts vs 3n²")))
    ls.add_argument("--k", type=int)
    ls.set_defaults(func=cmd_landscape)

    b = train_flags(common(sub.add_parser("baseline", help="matrix-completion runs (CSV, resumable)")))
    b.add_argument("--ranks")
    b.add_argument("--encodings")
    b.add_argument("--weight-decay", dest="weight_decay", type=float)
    b.set_defaults(func=cmd_baseline)

    r = common(sub.add_parser("rank", help="linear rank of encoded tables"))
    r.add_argument("--encoding", choices=list(baseline.ENCODINGS), default="ordinal")
    r.set_defaults(func=cmd_rank)

    v = common(sub.add_parser("verify", help="oracle cross-check suite"), table=False)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
