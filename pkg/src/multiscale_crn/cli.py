"""Command line: analyze, simulate, compare, absorb, plot and rerun.

Exit codes: 0 ok, 1 parse error, 2 pipeline rejection, 3 I/O error,
4 usage or grid error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .ensemble import (METHODS, EnsembleError, EnsembleSummary, GridMismatchError, MethodConfig,
                       absorption_probability, compare_report, run_ensemble)
from .network import NetworkError, ParseError, parse_network, with_initial_counts
from .networks import BUILTINS, builtin_text
from .pipeline import MultiscaleModel
from .scales import PipelineError
from .ssa import SimulationError
from .svg import Series, render_svg

EXIT_OK, EXIT_PARSE, EXIT_PIPELINE, EXIT_IO, EXIT_USAGE = 0, 1, 2, 3, 4
DEFAULT_T_END = 1.0
DEFAULT_SEED = 0


class UsageError(Exception):
    pass


# --- helpers ------------------------------------------------------------------------------------

def git_blob_hash(data: bytes) -> str:
    """Content hash in git's blob format (sha1 over "blob <len>\\0" + data)."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_grid(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise UsageError(f"grid must be lo:hi:n, got {text!r}") from None
    if n < 2 or not hi > lo or not np.isfinite(lo) or not np.isfinite(hi):
        raise UsageError(f"grid needs n >= 2 and hi > lo, got {text!r}")
    return np.linspace(lo, hi, n)


def load_source(args):
    if args.file:
        try:
            text = Path(args.file).read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot read {args.file}: {exc.strerror}") from exc
        origin = str(args.file)
    else:
        text = builtin_text(args.builtin)
        origin = f"builtin:{args.builtin}"
    net, spec, defaults = parse_network(text)
    return text, origin, net, spec, defaults


def _resolved(args, defaults):
    t_end = args.t_end if args.t_end is not None else (defaults.t_end or DEFAULT_T_END)
    seed = args.seed if args.seed is not None else (defaults.seed if defaults.seed is not None else DEFAULT_SEED)
    if not t_end > 0:
        raise UsageError("--t-end must be positive")
    return t_end, seed


def _time_grid(args, t_end):
    if args.grid is None:
        return np.linspace(0.0, t_end, 200)
    g = parse_grid(args.grid)
    if g[0] < 0:
        raise UsageError("time grid must start at t >= 0")
    if g[0] != 0.0:
        raise UsageError("time grid must start at t = 0")
    return g


def _x0(args, net):
    if not args.x0:
        return None
    try:
        counts = [int(c) for c in args.x0.split(",")]
    except ValueError:
        raise UsageError(f"--x0 must be comma-separated integers, got {args.x0!r}") from None
    if len(counts) != net.n_species or min(counts) < 0:
        raise UsageError(f"--x0 needs {net.n_species} non-negative counts")
    return np.array(counts, dtype=np.int64)


def _config(args, method, net, spec, t_end, grid, model) -> MethodConfig:
    return MethodConfig(method, net, spec, t_end, grid=grid, dt=args.dt, x0=_x0(args, net),
                        normalized=args.normalized, aggregate=getattr(args, "aggregate", None),
                        filter_survivors=args.filter_survivors, threshold=args.threshold, model=model)


def _summary_csv(s: EnsembleSummary) -> str:
    text = s.to_csv()
    if not s.extra:
        return text
    # append analytic columns (LNA variance band, companion ODE mean)
    rows = list(csv.reader(io.StringIO(text)))
    for key in sorted(s.extra):
        arr = s.extra[key]
        rows[0] += [f"{key}_{c}" for c in s.names]
        for g in range(len(s.times)):
            rows[g + 1] += [repr(float(v)) for v in arr[g]]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _manifest(args, command, text, origin, outputs: dict) -> str:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "threads", "out", "manifest")}
    doc = {"tool": "mscrn", "version": __version__, "command": command, "config": cfg,
           "network": {"origin": origin, "hash": git_blob_hash(text.encode()), "text": text},
           "outputs": {name: git_blob_hash(body.encode()) for name, body in sorted(outputs.items())}}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(args, command, text, origin, outputs: dict, primary: str):
    """Write outputs (atomically) next to --out, plus a manifest; print the primary one without --out."""
    if not args.out:
        sys.stdout.write(outputs[primary])
        return
    out = Path(args.out)
    for name, body in outputs.items():
        atomic_write(out if name == primary else out.with_name(f"{out.stem}_{name}{out.suffix or '.csv'}"), body)
    if not args.no_manifest:
        atomic_write(out.with_name(out.name + ".manifest.json"), _manifest(args, command, text, origin, outputs))


# --- commands -----------------------------------------------------------------------------------

def cmd_analyze(args):
    text, origin, net, spec, _ = load_source(args)
    model = MultiscaleModel(net, spec)
    grid = None
    if args.grid:
        g = parse_grid(args.grid)
        grid = np.repeat(g[:, None], model.d0, axis=1)
    rep = model.report(grid)
    outputs = {"report": rep.text}
    for name in rep.tables:
        outputs[name] = rep.table_csv(name)
    if args.out:
        out = Path(args.out)
        atomic_write(out, rep.text)
        for name in rep.tables:
            atomic_write(out.with_name(f"{out.stem}_{name}.csv"), rep.table_csv(name))
        if not args.no_manifest:
            atomic_write(out.with_name(out.name + ".manifest.json"), _manifest(args, "analyze", text, origin, outputs))
    else:
        sys.stdout.write(rep.text)
    return EXIT_OK


def cmd_simulate(args):
    text, origin, net, spec, defaults = load_source(args)
    t_end, seed = _resolved(args, defaults)
    grid = _time_grid(args, t_end)
    model = None if args.method == "ssa" and not args.filter_survivors else MultiscaleModel(net, spec)
    cfg = _config(args, args.method, net, spec, t_end, grid, model)
    s = run_ensemble(cfg, args.runs, seed=seed, threads=args.threads)
    if s.failures or s.discarded:
        print(f"note: {s.failures} failed, {s.discarded} filtered of {args.runs} runs", file=sys.stderr)
    _emit(args, "simulate", text, origin, {"summary": _summary_csv(s)}, "summary")
    return EXIT_OK


def read_summary_csv(path) -> EnsembleSummary:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if header[0] != "t":
        raise UsageError(f"{path}: not a summary file")
    names = tuple(h[5:] for h in header if h.startswith("mean_"))
    mean = np.stack([body[:, header.index(f"mean_{c}")] for c in names], axis=1)
    std = np.stack([body[:, header.index(f"std_{c}")] for c in names], axis=1)
    se_col = header.index(f"se_{names[0]}")
    se = body[:, se_col]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = std[:, 0] / se
    runs = int(round(float(np.nanmedian(ratio[np.isfinite(ratio)]) ** 2))) if np.any(np.isfinite(ratio)) else 1
    return EnsembleSummary(Path(path).stem, runs, body[:, 0], names, mean, std)


def cmd_compare(args):
    text, origin, net, spec, defaults = load_source(args)
    if args.inputs:
        summaries = [read_summary_csv(p) for p in args.inputs]
    else:
        t_end, seed = _resolved(args, defaults)
        grid = _time_grid(args, t_end)
        model = MultiscaleModel(net, spec)
        summaries = []
        for meth in args.methods.split(","):
            if meth not in ("ssa", "ode", "lna", "diffusion"):
                raise UsageError(f"compare supports ssa, ode, lna, diffusion; got {meth!r}")
            cfg = _config(args, meth, net, spec, t_end, grid, model)
            summaries.append(run_ensemble(cfg, 1 if meth == "ode" else args.runs, seed=seed, threads=args.threads))
    table = compare_report(summaries)
    outputs = {"comparison": table.to_csv(), "deviation": table.deviation_csv()}
    _emit(args, "compare", text, origin, outputs, "comparison")
    if args.out:
        sys.stdout.write(table.deviation_csv())
    return EXIT_OK


def cmd_absorb(args):
    text, origin, net, spec, defaults = load_source(args)
    _, seed = _resolved(args, defaults)
    if args.method not in ("ssa", "diffusion"):
        raise UsageError("absorb supports --method ssa or diffusion")
    if args.k < 0:
        raise UsageError("--k must be >= 0")
    model = MultiscaleModel(net, spec)
    cfg = _config(args, args.method, net, spec, defaults.t_end or DEFAULT_T_END, None, model)
    res = absorption_probability(cfg, args.k, args.runs, seed=seed, threshold=args.threshold)
    body = json.dumps(res.record(), indent=2, sort_keys=True) + "\n"
    _emit(args, "absorb", text, origin, {"absorption": body}, "absorption")
    return EXIT_OK


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise UsageError(f"{path}: expected a CSV with a leading t column")
    return rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))


def series_from_csv(path, component: Optional[str] = None) -> list:
    """Summary files give mean +/- std bands; comparison files give one band per method;
    trajectory files give one polyline per column."""
    header, body = _read_table(path)
    t = body[:, 0]
    label = Path(path).stem
    out = []
    means = [(i, h) for i, h in enumerate(header) if h.startswith("mean_")]
    if means:
        for i, h in means:
            key = h[5:]
            if component and not (key == component or key.startswith(component + "_")):
                continue
            j = header.index("std_" + key)
            out.append(Series(f"{label}:{key}" if key != component else label, t, body[:, i],
                              body[:, i] - body[:, j], body[:, i] + body[:, j]))
        return out
    for i, h in enumerate(header[1:], start=1):
        if component and h != component:
            continue
        out.append(Series(f"{label}:{h}", t, body[:, i]))
    return out


def cmd_plot(args):
    series = []
    for p in args.inputs:
        series += series_from_csv(p, args.component)
    if not series:
        raise UsageError("no matching columns to plot")
    if args.same_grid:
        for s in series[1:]:
            if len(s.x) != len(series[0].x) or not np.allclose(s.x, series[0].x):
                raise GridMismatchError("inputs do not share a time grid")
    svg = render_svg(series, title=args.title or "", xlabel="t", ylabel=args.component or "")
    if args.out:
        atomic_write(args.out, svg)
    else:
        sys.stdout.write(svg)
    return EXIT_OK


def cmd_rerun(args):
    try:
        doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.manifest}: not a manifest ({exc})") from None
    cfg = dict(doc["config"])
    text = doc["network"]["text"]
    if git_blob_hash(text.encode()) != doc["network"]["hash"]:
        raise UsageError("manifest network text does not match its hash")
    with tempfile.TemporaryDirectory() as tmp:
        src = Path(tmp) / "network.net"
        src.write_text(text, encoding="utf-8")
        argv = [doc["command"], "--file", str(src)]
        parser = build_parser()
        ns = parser.parse_args(argv)
        for k, v in cfg.items():
            if k not in ("file", "builtin", "command"):
                setattr(ns, k, v)
        ns.out = args.out
        ns.threads = args.threads
        ns.no_manifest = True
        return ns.func(ns)


# --- parser -------------------------------------------------------------------------------------

def _common(p, sim=True):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", choices=sorted(BUILTINS))
    src.add_argument("--file", help="network specification file")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--grid", help="lo:hi:n (time grid; slow-state grid for analyze)")
    p.add_argument("--no-manifest", action="store_true", help="skip the manifest next to --out")
    if sim:
        p.add_argument("--seed", type=int)
        p.add_argument("--runs", type=int, default=500)
        p.add_argument("--t-end", dest="t_end", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--normalized", action="store_true", help="report normalized instead of molecule counts")
        p.add_argument("--filter-survivors", action="store_true",
                       help="keep only runs reaching --threshold before extinction")
        p.add_argument("--threshold", type=float, default=1.0, help="normalized level for filters and absorption")
        p.add_argument("--x0", help="initial counts, comma separated")
        p.add_argument("--aggregate", help="SSA: species whose fast birth-death events are sampled in aggregate")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mscrn", description="Multiscale analysis and simulation of reaction networks.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("analyze", help="scale decomposition, averaging and fluctuation report")
    _common(p, sim=False)
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("simulate", help="ensemble mean/std on a time grid")
    _common(p)
    p.add_argument("--method", choices=METHODS, default="ssa")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("compare", help="SSA against the ODE, LNA and diffusion approximations")
    _common(p)
    p.add_argument("--methods", default="ssa,ode,lna,diffusion")
    p.add_argument("--inputs", nargs="+", help="compare existing summary CSVs instead of simulating")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("absorb", help="probability of extinction before reaching the threshold")
    _common(p)
    p.add_argument("--method", choices=("ssa", "diffusion"), default="ssa")
    p.add_argument("--k", type=int, default=1, help="initial molecules of the slow species")
    p.set_defaults(func=cmd_absorb, runs=5000)
    p = sub.add_parser("plot", help="SVG of summary, comparison or trajectory CSVs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out")
    p.add_argument("--component", help="plot only this component")
    p.add_argument("--title")
    p.add_argument("--same-grid", action="store_true", help="require all inputs to share a time grid")
    p.set_defaults(func=cmd_plot)
    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_rerun)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if getattr(args, "runs", 1) is not None and getattr(args, "runs", 1) < 1:
            raise UsageError("--runs must be >= 1")
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (UsageError, GridMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, NetworkError, EnsembleError, SimulationError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
