"""Command-line entry point: ``ceo run | oracle | table | trace-plot-data``.

Exit status is 0 on success, 1 when a run aborts and 2 for usage or config
errors. Outputs go to ``--out``, else to ``$CEO_OUTPUT_DIR``, else to
``./ceo-output``. Every file is written to a temporary name and renamed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as cfgmod
from . import engine
from .acquisition import AcquisitionSettings
from .benchmarks import BUNDLED, Benchmark, OptimumRecord, make_benchmark, parse_benchmark
from .errors import CeoError, ConfigError, UnknownBenchmark
from .surrogate import SurrogateSettings

log = logging.getLogger("ceo")

OUTPUT_ENV = "CEO_OUTPUT_DIR"
EXIT_OK, EXIT_ABORT, EXIT_USAGE = 0, 1, 2
MANIFEST_FORMAT = 1


class UsageError(Exception):
    """Bad input that is not a config file problem (missing files and the like)."""


# files ------------------------------------------------------------------------


def atomic_write(path, text: str) -> Path:
    """Write ``text`` next to ``path`` under a temporary name, then rename it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return repr(v) if np.isfinite(v) else ("nan" if np.isnan(v) else ("inf" if v > 0 else "-inf"))


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or "ceo-output")


# experiment configs -------------------------------------------------------------

_ACQ_FIELDS = {f.name: f.type for f in fields(AcquisitionSettings)}
_SUR_FIELDS = {f.name: f.type for f in fields(SurrogateSettings)}
_SCALARS = {
    "replicates": int,
    "seed": int,
    "budget": float,
    "iterations": int,
    "n_initial": int,
    "n_observational": int,
    "posterior_uses_observational": bool,
    "cd_threshold": float,
    "cd_stage1_budget": float,
    "mc_samples": int,
    "rebuild_tv": float,
    "samples_per_round": int,
    "fit_restarts": int,
    "oracle_mc": int,
}
_KEYS = set(_SCALARS) | {"benchmark", "methods", "cost_table", "acquisition", "surrogate", "prior_grid"}


@dataclass(frozen=True)
class Cell:
    """One (method, wrong graph, replicate) run of an experiment."""

    label: str
    method: str
    wrong_index: Optional[int]
    replicate: int

    @property
    def stem(self) -> str:
        return f"{self.label}_rep{self.replicate:02d}"


@dataclass
class Experiment:
    raw: dict
    bench_source: str
    benchmark: Benchmark
    methods: tuple
    replicates: int
    base: engine.RunConfig

    def cells(self) -> list[Cell]:
        out = []
        for label, method, wrong in self.methods:
            for r in range(self.replicates):
                out.append(Cell(label, method, wrong, r))
        return out

    def config_for(self, cell: Cell) -> engine.RunConfig:
        return replace(self.base, method=cell.method, wrong_index=cell.wrong_index, replicate=cell.replicate)


def _coerce(doc: cfgmod.Located, value, kind, *path):
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is int:
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind is tuple:
            return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        pass
    name = getattr(kind, "__name__", str(kind))
    raise doc.error(f"{'.'.join(str(p) for p in path)} must be of type {name}, got {value!r}", *path)


def _settings(doc, section: str, cls, types):
    values = doc.data.get(section) or {}
    if not isinstance(values, dict):
        raise doc.error(f"{section} must be a mapping", section)
    kw = {}
    for k, v in values.items():
        if k not in types:
            raise doc.error(f"unknown {section} setting {k!r}; valid: {', '.join(sorted(types))}", section, k)
        t = types[k]
        kind = {"int": int, "float": float, "bool": bool, "str": str, "tuple": tuple}.get(t if isinstance(t, str) else t.__name__)
        kw[k] = _coerce(doc, v, kind, section, k)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise doc.error(str(exc), section) from None


def _resolve_benchmark(doc: cfgmod.Located, out_dir: Optional[Path]) -> tuple[str, Benchmark]:
    b = doc.data.get("benchmark")
    if b is None:
        raise doc.error("missing required key 'benchmark'")
    if isinstance(b, dict):
        # inline definition: line numbers stay relative to the experiment file
        sub = cfgmod.Located(b, {k[1:]: v for k, v in doc._lines.items() if k[:1] == ("benchmark",)}, doc.source)
        bench = parse_benchmark(sub)
        if out_dir is None:
            return f"inline:{bench.name}", bench
        import yaml

        path = atomic_write(Path(out_dir) / "benchmark.yaml", yaml.safe_dump(b, sort_keys=False))
        return str(path), parse_benchmark(cfgmod.load(path), path)
    if not isinstance(b, str):
        raise doc.error("benchmark must be a name, a path or a mapping", "benchmark")
    src = b
    if not Path(b).suffix and b not in BUNDLED:
        raise doc.error(f"unknown benchmark {b!r}; valid names: {', '.join(BUNDLED)}", "benchmark")
    if Path(b).suffix and not Path(b).is_absolute():
        base = Path(doc.source).parent if doc.source and not doc.source.startswith("<") else Path(".")
        src = str((base / b).resolve())
    try:
        return src, make_benchmark(src)
    except UnknownBenchmark as exc:
        raise doc.error(str(exc.args[0]), "benchmark") from None


def _methods(doc: cfgmod.Located, bench: Benchmark) -> tuple:
    spec = doc.data.get("methods", ["ceo"])
    if isinstance(spec, str):
        spec = [spec]
    if not isinstance(spec, list) or not spec:
        raise doc.error("methods must be a non-empty list", "methods")
    out = []
    for i, m in enumerate(spec):
        m = str(m)
        name, _, arg = m.partition(":")
        if name not in engine.METHODS:
            raise doc.error(f"unknown method {m!r}; valid: {', '.join(engine.METHODS)} (cbo_wrong:INDEX picks one wrong graph)", "methods", i)
        if name == "cbo_wrong":
            if arg:
                try:
                    g = int(arg)
                except ValueError:
                    raise doc.error(f"bad graph index in {m!r}", "methods", i) from None
                if g not in bench.wrong_indices:
                    raise doc.error(f"graph {g} is not a wrong graph; choose from {list(bench.wrong_indices)}", "methods", i)
                out.append((f"cbo_wrong_g{g}", name, g))
            else:
                out.extend((f"cbo_wrong_g{g}", name, g) for g in bench.wrong_indices)
        elif arg:
            raise doc.error(f"method {name} takes no argument", "methods", i)
        else:
            out.append((name, name, None))
    labels = [o[0] for o in out]
    if len(set(labels)) != len(labels):
        raise doc.error("methods are listed more than once", "methods")
    return tuple(out)


def parse_experiment(doc: cfgmod.Located, seed: Optional[int] = None, out_dir: Optional[Path] = None) -> Experiment:
    """Validate an experiment config; errors carry the offending line."""
    d = doc.data
    if isinstance(d, dict) and "config" in d and "manifest_format" in d:
        # a run manifest: re-run its config echo
        sub = cfgmod.Located(d["config"], {k[1:]: v for k, v in doc._lines.items() if k[:1] == ("config",)}, doc.source)
        return parse_experiment(sub, seed, out_dir)
    if not isinstance(d, dict):
        raise doc.error("an experiment config must be a mapping")
    for k in d:
        if k not in _KEYS:
            raise doc.error(f"unknown key {k!r}; valid keys: {', '.join(sorted(_KEYS))}", k)
    src, bench = _resolve_benchmark(doc, out_dir)
    methods = _methods(doc, bench)
    kw = {k: _coerce(doc, d[k], t, k) for k, t in _SCALARS.items() if k in d and d[k] is not None}
    replicates = kw.pop("replicates", 12)
    if replicates < 1:
        raise doc.error("replicates must be at least 1", "replicates")
    if seed is not None:
        kw["seed"] = seed
    if "prior_grid" in d:
        pg = d["prior_grid"]
        if not (isinstance(pg, list) and len(pg) == 2 and all(isinstance(v, int) and v >= 2 for v in pg)):
            raise doc.error("prior_grid must be [points per dim in 1D, points per dim in 2D]", "prior_grid")
        kw["prior_grid"] = tuple(pg)
    if "cost_table" in d and d["cost_table"] is not None:
        ct = d["cost_table"]
        names = {s.name for s in bench.exploration_sets}
        if not isinstance(ct, dict):
            raise doc.error("cost_table must map set names to costs", "cost_table")
        for k, v in ct.items():
            if k not in names:
                raise doc.error(f"cost_table names unknown set {k!r}; sets: {', '.join(sorted(names))}", "cost_table", k)
            if _coerce(doc, v, float, "cost_table", k) <= 0:
                raise doc.error("costs must be positive", "cost_table", k)
        kw["cost_table"] = {str(k): float(v) for k, v in ct.items()}
    kw["acquisition"] = _settings(doc, "acquisition", AcquisitionSettings, _ACQ_FIELDS)
    kw["surrogate"] = _settings(doc, "surrogate", SurrogateSettings, _SUR_FIELDS)
    try:
        base = engine.RunConfig(benchmark=src, **kw)
    except ValueError as exc:
        raise doc.error(str(exc)) from None
    raw = dict(d)
    raw["seed"] = base.seed
    if not isinstance(d["benchmark"], dict):
        raw["benchmark"] = src
    return Experiment(raw, src, bench, methods, replicates, base)


# output rows ---------------------------------------------------------------------


def _x_columns(bench: Benchmark) -> list[str]:
    seen = []
    for s in bench.exploration_sets:
        for t in s.targets:
            if t not in seen:
                seen.append(t)
    return seen


def trace_csv(trace: engine.RunTrace, bench: Benchmark) -> str:
    cols = _x_columns(bench)
    header = ["phase", "iteration", "set", *[f"x_{c}" for c in cols], "y", "cost", "cumulative_cost",
              "best_observed", "oracle_value", "best_oracle", "branch", "score", "wall_time"]
    rows = []
    target = bench.scm.target
    for rec in trace.initial:
        vals = dict(zip(rec.iset.targets, rec.values))
        rows.append(["init", "", rec.iset.name, *[_num(vals.get(c)) for c in cols], _num(rec.sample[target]),
                     "0.0", "0.0", "", "", "", "", "", ""])
    rows.append(["start", "", "", *["" for _ in cols], "", "0.0", "0.0", _num(trace.init_best_observed), "",
                 _num(trace.init_best_oracle), "", "", ""])
    for r in trace.records:
        vals = dict(zip(r.set_name.split("+"), r.x))
        rows.append(["loop", r.iteration, r.set_name, *[_num(vals.get(c)) for c in cols], _num(r.y), _num(r.cost),
                     _num(r.cumulative_cost), _num(r.best_observed), _num(r.oracle_value), _num(r.best_oracle),
                     r.branch, _num(r.score), f"{r.wall_time:.4f}"])
    return _csv_text(header, rows)


def posterior_csv(trace: engine.RunTrace, bench: Benchmark) -> str:
    """Long format: one row per (iteration, graph)."""
    names = list(bench.space.names)
    steps = []
    if trace.initial_probs:
        steps.append(("init", 0.0, trace.initial_probs))
    steps.extend((r.iteration, r.cumulative_cost, r.probs) for r in trace.records)
    rows = [[it, _num(cost), i, names[i], _num(p)] for it, cost, probs in steps for i, p in enumerate(probs)]
    return _csv_text(["iteration", "cumulative_cost", "graph_index", "graph", "probability"], rows)


def acquisition_csv(trace: engine.RunTrace) -> str:
    rows = [[a.iteration, a.set_name, ";".join(_num(v) for v in a.x), _num(a.score), a.branch, _num(a.h_before), _num(a.h_after)]
            for a in trace.acquisition]
    return _csv_text(["iteration", "set", "x", "score", "branch", "h_before", "h_after_mean"], rows)


AGGREGATE_HEADER = ["method", "benchmark", "replicates", "failures", "mean_gap", "stderr", "mean_gap_observed",
                    "stderr_observed", "mean_cumulative_cost"]


def aggregate_rows(bench_name: str, results: list, y_star: float, direction: str) -> tuple[list, list]:
    """Per-replicate gap rows and per-method aggregate rows.

    ``results`` holds (Cell, RunTrace) pairs in cell order. Wrong-graph CBO
    cells are also pooled into one ``cbo_wrong`` row.
    """
    per_rep = []
    groups: dict = {}
    for cell, tr in results:
        if tr.error is not None:
            per_rep.append([cell.label, cell.replicate, "", "", "", tr.error])
            groups.setdefault(cell.label, []).append(None)
            if cell.method == "cbo_wrong":
                groups.setdefault("cbo_wrong", []).append(None)
            continue
        g = engine.gap_value(tr.best_oracle, y_star, tr.init_best_oracle, direction)
        go = engine.gap_value(tr.best_observed, y_star, tr.init_best_observed, direction)
        per_rep.append([cell.label, cell.replicate, _num(g), _num(go), _num(tr.cumulative_cost), ""])
        groups.setdefault(cell.label, []).append((g, go, tr.cumulative_cost))
        if cell.method == "cbo_wrong":
            groups.setdefault("cbo_wrong", []).append((g, go, tr.cumulative_cost))
    pooled = groups.pop("cbo_wrong", None)
    if len({c.label for c, _ in results if c.method == "cbo_wrong"}) >= 2:
        groups["cbo_wrong"] = pooled
    agg = []
    for label, vals in groups.items():
        ok = [v for v in vals if v is not None]
        if ok:
            a = engine.GapResult.from_gaps([v[0] for v in ok])
            b = engine.GapResult.from_gaps([v[1] for v in ok])
            cost = float(np.mean([v[2] for v in ok]))
            agg.append([label, bench_name, len(ok), len(vals) - len(ok), _num(a.mean), _num(a.stderr), _num(b.mean), _num(b.stderr), _num(cost)])
        else:
            agg.append([label, bench_name, 0, len(vals), "nan", "nan", "nan", "nan", "nan"])
    return per_rep, agg


def _versions() -> dict:
    import scipy
    import yaml

    try:
        from importlib.metadata import version

        pkg = version("artifact")
    except Exception:  # not installed, e.g. run from a source checkout
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__, "artifact": pkg}


# workers ---------------------------------------------------------------------------


def _run_cell(payload):
    source, cfg = payload
    bench = make_benchmark(source)
    ctx = engine.build_context(cfg, bench)
    return engine.run_method(cfg, ctx)


def _ensure_optimum(exp: Experiment) -> OptimumRecord:
    if exp.benchmark.optimum is not None:
        return exp.benchmark.optimum
    log.warning("benchmark %s has no recorded optimum; running the oracle", exp.benchmark.name)
    return engine.true_optimum_oracle(exp.benchmark, mc_samples=exp.base.oracle_mc, seed=exp.base.seed)


# subcommands ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    out = Path(args.out) if args.out else default_output_dir()
    doc = cfgmod.load(args.config)
    exp = parse_experiment(doc, seed=args.seed, out_dir=out)
    if isinstance(doc.data, dict) and "manifest_format" in doc.data:
        args.acq_trace = args.acq_trace or bool((doc.data.get("options") or {}).get("acq_trace"))
    optimum = _ensure_optimum(exp)
    cells = exp.cells()
    cfgs = [replace(exp.config_for(c), record_acquisition=bool(args.acq_trace)) for c in cells]
    log.info("running %d cells of %s on %s", len(cells), ", ".join(m[0] for m in exp.methods), exp.benchmark.name)
    if args.parallel > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            traces = list(pool.map(_run_cell, [(exp.bench_source, c) for c in cfgs]))
    else:
        ctx = engine.build_context(exp.base, exp.benchmark)
        traces = []
        for cell, c in zip(cells, cfgs):
            log.info("cell %s", cell.stem)
            traces.append(engine.run_method(c, ctx))
    results = list(zip(cells, traces))

    files = []
    for cell, tr in results:
        files.append(atomic_write(out / "traces" / f"{cell.stem}.csv", trace_csv(tr, exp.benchmark)))
        files.append(atomic_write(out / "posterior" / f"{cell.stem}.csv", posterior_csv(tr, exp.benchmark)))
        if args.acq_trace:
            files.append(atomic_write(out / "acquisition" / f"{cell.stem}.csv", acquisition_csv(tr)))
    per_rep, agg = aggregate_rows(exp.benchmark.name, results, optimum.y_star, exp.benchmark.direction)
    files.append(atomic_write(out / "gaps.csv", _csv_text(["method", "replicate", "gap", "gap_observed", "cumulative_cost", "error"], per_rep)))
    files.append(atomic_write(out / "aggregate.csv", _csv_text(AGGREGATE_HEADER, agg)))
    manifest = {
        "manifest_format": MANIFEST_FORMAT,
        "config": exp.raw,
        "options": {"acq_trace": bool(args.acq_trace)},
        "benchmark": {"name": exp.benchmark.name, "source": exp.bench_source, "optimum": optimum.to_dict()},
        "cells": [{"label": c.label, "method": c.method, "wrong_index": c.wrong_index, "replicate": c.replicate, "seed": exp.base.seed} for c in cells],
        "failures": [{"cell": c.stem, "error": t.error} for c, t in results if t.error],
        "versions": _versions(),
        "files": sorted(str(f.relative_to(out)) for f in files),
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    failures = [c.stem for c, t in results if t.error]
    for c, t in results:
        if t.error:
            print(f"replicate {c.stem} aborted: {t.error}", file=sys.stderr)
    print(f"wrote {len(files) + 1} files to {out}")
    if failures and not args.keep_going:
        return EXIT_ABORT
    return EXIT_OK


def cmd_oracle(args) -> int:
    bench = make_benchmark(args.benchmark)
    rec = engine.true_optimum_oracle(bench, grid_per_dim=args.grid, mc_samples=args.mc, seed=args.seed, grid_2d=args.grid_2d)
    out = Path(args.out) if args.out else default_output_dir() / f"oracle_{bench.name}.json"
    atomic_write(out, json.dumps(rec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(rec.to_dict(), sort_keys=True))
    return EXIT_OK


def read_optimum(path) -> OptimumRecord:
    with open(path, encoding="utf-8") as fh:
        return OptimumRecord.from_dict(json.load(fh))


def _aggregate_paths(inputs) -> list[Path]:
    paths = []
    for p in inputs:
        p = Path(p)
        if p.is_dir():
            p = p / "aggregate.csv"
        if not p.is_file():
            raise UsageError(f"missing aggregate CSV: {p}")
        paths.append(p)
    return paths


def gap_table(rows: list[dict]) -> tuple[list, list, dict]:
    """Methods, benchmarks and {(method, benchmark): (mean, stderr)} from aggregate rows."""
    methods, benches, cells = [], [], {}
    for r in rows:
        m, b = r["method"], r["benchmark"]
        if m not in methods:
            methods.append(m)
        if b not in benches:
            benches.append(b)
        cells[(m, b)] = (float(r["mean_gap"]), float(r["stderr"]))
    return methods, benches, cells


def render_table(methods, benches, cells, fmt: str = "markdown") -> str:
    best = {}
    for b in benches:
        vals = [cells[(m, b)][0] for m in methods if (m, b) in cells and np.isfinite(cells[(m, b)][0])]
        best[b] = max(vals) if vals else None
    if fmt == "csv":
        rows = []
        for m in methods:
            row = [m]
            for b in benches:
                if (m, b) in cells:
                    mean, se = cells[(m, b)]
                    row += [_num(mean), _num(se), "1" if best[b] is not None and mean == best[b] else "0"]
                else:
                    row += ["", "", ""]
            rows.append(row)
        header = ["method"] + [f"{b}_{k}" for b in benches for k in ("mean", "stderr", "best")]
        return _csv_text(header, rows)
    lines = ["| Method | " + " | ".join(benches) + " |", "|---|" + "---|" * len(benches)]
    for m in methods:
        cols = []
        for b in benches:
            if (m, b) not in cells:
                cols.append("")
                continue
            mean, se = cells[(m, b)]
            text = f"{mean:.2f} ± {se:.2f}"
            cols.append(f"**{text}**" if best[b] is not None and mean == best[b] else text)
        lines.append(f"| {m} | " + " | ".join(cols) + " |")
    return "\n".join(lines) + "\n"


def cmd_table(args) -> int:
    rows = []
    for p in _aggregate_paths(args.inputs):
        with open(p, encoding="utf-8", newline="") as fh:
            rows.extend(csv.DictReader(fh))
    if not rows:
        raise UsageError("the aggregate CSVs hold no rows")
    text = render_table(*gap_table(rows), fmt=args.format)
    if args.out:
        atomic_write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_trace_plot_data(args) -> int:
    rows = []
    for run_dir in args.runs:
        run_dir = Path(run_dir)
        man = run_dir / "manifest.json"
        if not man.is_file():
            raise UsageError(f"missing run manifest: {man}")
        with open(man, encoding="utf-8") as fh:
            manifest = json.load(fh)
        bench = manifest["benchmark"]["name"]
        y_star = manifest["benchmark"]["optimum"]["y_star"]
        for cell in manifest["cells"]:
            stem = f"{cell['label']}_rep{cell['replicate']:02d}"
            path = run_dir / "traces" / f"{stem}.csv"
            if not path.is_file():
                raise UsageError(f"missing trace file: {path}")
            with open(path, encoding="utf-8", newline="") as fh:
                recs = list(csv.DictReader(fh))
            start = [r for r in recs if r["phase"] == "start"]
            loop = [r for r in recs if r["phase"] == "loop"]
            for r in start:
                rows.append([bench, cell["label"], cell["replicate"], 0, "0.0", r["best_observed"], r["best_oracle"], _num(y_star)])
            for r in loop:
                rows.append([bench, cell["label"], cell["replicate"], int(r["iteration"]) + 1, r["cumulative_cost"],
                             r["best_observed"], r["best_oracle"], _num(y_star)])
    text = _csv_text(["benchmark", "method", "replicate", "step", "cumulative_cost", "best_observed", "best_oracle", "y_star"], rows)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# entry point --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ceo", description="Causal entropy optimization experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every (method, replicate) cell of an experiment config")
    r.add_argument("config", help="experiment YAML, or a manifest.json from an earlier run")
    r.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./ceo-output)")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--parallel", type=int, default=1, help="worker processes for replicates")
    r.add_argument("--keep-going", action="store_true", help="exit 0 even if some replicates abort")
    r.add_argument("--acq-trace", action="store_true", help="also write per-candidate acquisition scores")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="brute-force the optimum of a benchmark")
    o.add_argument("benchmark", help="bundled benchmark name or definition file")
    o.add_argument("--grid", type=int, default=500, help="grid points per dimension")
    o.add_argument("--grid-2d", type=int, default=None, help="points per dimension for sets of two or more variables")
    o.add_argument("--mc", type=int, default=10_000, help="Monte Carlo draws per grid point")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", help="output JSON path")
    o.set_defaults(func=cmd_oracle)

    t = sub.add_parser("table", help="method x benchmark GAP table from aggregate CSVs")
    t.add_argument("inputs", nargs="+", help="aggregate.csv files or run directories")
    t.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    t.add_argument("--out", help="also write the table to this file")
    t.set_defaults(func=cmd_table)

    d = sub.add_parser("trace-plot-data", help="long-format convergence data from run directories")
    d.add_argument("runs", nargs="+", help="run output directories")
    d.add_argument("--out", help="output CSV (default stdout)")
    d.set_defaults(func=cmd_trace_plot_data)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "parallel", 1) < 1:
        print("error: --parallel must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {getattr(args, 'config', '')}: {exc}" if getattr(args, "config", None) else f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnknownBenchmark, UsageError) as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except CeoError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
