"""``ddmcert`` command line: presets, config files, CSV/markdown artifacts.

Subcommands either run one configured pipeline (``run``) or reproduce a
preset experiment (``table1`` .. ``table4``, ``check``).  Artifacts land in
``--out``: ``history.csv`` with full-precision per-row data (RFC 4180),
``table.md`` with the 3-significant-digit summary, and optional
``fields_sweep<N>.vtk``.  Exit codes: 0 ok, 1 config error, 2 solver
failure, 3 guarantee violation (a bug trap -- the bound fell below the true
error, which the theory excludes).
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from .linalg import SolverError
from .mesh import MeshError
from .pipeline import (ConfigError, RunConfig, RunResult, SweepRow,
                       TABLE1_H, TABLE2_COARSE, TABLE3_SWEEPS, TABLE4_SWEEPS,
                       run_case, run_checks, table1_rows, table2_rows,
                       table34_result)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_GUARANTEE = 3

CSV_HEADER = ["sweep", "M1_sq", "M2_sq", "M3_sq", "M_sq", "error", "I_eff"]

CONFIG_KEYS = ("preset", "h", "H", "sweeps", "mode", "eps", "out",
               "emit_fields")
_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


def _ratio(text: str) -> float:
    """Grid spacings as plain floats or 'p/q' fractions."""
    s = text.strip()
    if "/" in s:
        num, den = s.split("/", 1)
        return float(num) / float(den)
    return float(s)


def parse_config_file(path) -> dict:
    """Flat key=value options; '#' starts a comment; unknown keys rejected."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    opts = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, "
                              f"got {raw.strip()!r}")
        key, _, value = (p.strip() for p in line.partition("="))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        opts[key] = value
    return opts


def _coerce(key: str, value):
    if isinstance(value, str):
        try:
            if key in ("h", "H"):
                return _ratio(value)
            if key == "sweeps":
                return int(value)
            if key == "emit_fields":
                return _BOOL[value.lower()]
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def build_config(args) -> RunConfig:
    """Merge config file and flags (flags win) into a validated RunConfig."""
    opts = parse_config_file(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            opts[key] = flag
    kwargs = {}
    for key, value in opts.items():
        value = _coerce(key, value)
        kwargs["eps_policy" if key == "eps" else key] = value
    policy = kwargs.get("eps_policy")
    if policy == "optimized":
        kwargs["eps_policy"] = "opt"
    elif policy not in (None, "fixed", "opt"):
        raise ConfigError(f"unknown eps policy {policy!r}")
    return RunConfig(**kwargs).validated()


# ---------------------------------------------------------------------------
# Formatting
# ---------------------------------------------------------------------------


def sci3(x: float) -> str:
    """3 significant digits, compact exponent: 0.0828 -> '8.28e-2'."""
    if x == 0:
        return "0.00e0"
    mant, exp = f"{x:.2e}".split("e")
    return f"{mant}e{int(exp)}"


def fmt_ieff(x: float) -> str:
    return f"{x:.2f}" if 1.0 <= x < 10.0 else sci3(x)


def frac(value: float) -> str:
    inv = 1.0 / value
    return f"1/{round(inv)}" if abs(inv - round(inv)) < 1e-9 else f"{value:g}"


def markdown_table(headers, rows) -> str:
    lines = ["| " + " | ".join(headers) + " |",
             "|" + "|".join(" --- " for _ in headers) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _std_cells(row: SweepRow) -> list:
    rep = row.report
    return [sci3(rep.M1_sq), sci3(rep.M2_sq), sci3(rep.M3_sq),
            sci3(rep.total_sq), fmt_ieff(rep.efficiency)]


def _csv_cells(row: SweepRow) -> list:
    rep = row.report
    return [row.sweep] + [repr(float(x)) for x in
                          (rep.M1_sq, rep.M2_sq, rep.M3_sq, rep.total_sq,
                           row.error, rep.efficiency)]


def write_history_csv(path: Path, rows, label: str | None = None) -> None:
    """rows: (label_value, SweepRow) pairs; label column only when named."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    header = ([label] if label else []) + CSV_HEADER
    writer.writerow(header)
    for key, row in rows:
        prefix = [key] if label else []
        writer.writerow(prefix + _csv_cells(row))
    path.write_text(buf.getvalue())


def _emit(out: Path | None, name: str, text: str) -> None:
    print(text, end="" if text.endswith("\n") else "\n")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = build_config(args)
    res = run_case(cfg)
    out = Path(cfg.out) if cfg.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_history_csv(out / "history.csv",
                          [(None, r) for r in res.rows])
    headers = ["n", "M1^2", "M2^2", "M3^2", "M^2", "I_eff", "error"]
    body = [[str(r.sweep)] + _std_cells(r) + [sci3(r.error)]
            for r in res.rows]
    _emit(out, "table.md", markdown_table(headers, body))
    return EXIT_GUARANTEE if res.violation else EXIT_OK


def cmd_table1(args) -> int:
    finest = args.h if args.h is not None else TABLE1_H[-1]
    hs = [h for h in TABLE1_H if h >= finest - 1e-12]
    sweeps = args.sweeps or 16
    rows = table1_rows(hs=hs, sweeps=sweeps)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_history_csv(out / "history.csv",
                          [(frac(h), row) for h, row, _ in rows], label="h")
    headers = ["h", "M1^2", "M2^2", "M3^2", "M^2", "I_eff"]
    body = [[frac(h)] + _std_cells(row) for h, row, _ in rows]
    _emit(out, "table.md", markdown_table(headers, body))
    return EXIT_GUARANTEE if any(
        row.violates_guarantee() for _, row, _ in rows) else EXIT_OK


def cmd_table2(args) -> int:
    h = args.h if args.h is not None else 1 / 64
    coarse = [H for H in TABLE2_COARSE if H >= h - 1e-12]
    if not coarse:
        raise ConfigError(f"no coarse sizes >= h={h} available")
    sweeps = args.sweeps or 16
    rows = table2_rows(h=h, coarse_sizes=coarse, sweeps=sweeps)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_history_csv(out / "history.csv",
                          [(frac(H), row) for H, row in rows], label="H")
    headers = ["H", "M1^2", "M2^2", "M3^2", "M^2", "I_eff"]
    body = [[frac(H)] + _std_cells(row) for H, row in rows]
    _emit(out, "table.md", markdown_table(headers, body))
    return EXIT_GUARANTEE if any(
        row.violates_guarantee() for _, row in rows) else EXIT_OK


def _table34_run(args) -> RunResult:
    h = args.h if args.h is not None else 1 / 64
    sweeps = args.sweeps or 8
    return table34_result(h=h, sweeps=sweeps)


def cmd_table3(args) -> int:
    res = _table34_run(args)
    wanted = [r for r in res.rows if r.sweep in TABLE3_SWEEPS]
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_history_csv(out / "history.csv", [(None, r) for r in wanted])
    headers = ["n", "M1^2", "M2^2", "M3^2", "M^2", "I_eff"]
    body = [[str(r.sweep)] + _std_cells(r) for r in wanted]
    _emit(out, "table.md", markdown_table(headers, body))
    return EXIT_GUARANTEE if res.violation else EXIT_OK


def cmd_table4(args) -> int:
    res = _table34_run(args)
    wanted = [r for r in res.rows if r.sweep in TABLE4_SWEEPS]
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_history_csv(out / "history.csv", [(None, r) for r in wanted])
    n_sub = len(res.decomp.basic)
    headers = (["n"] + [f"M1^2 w{k + 1}" for k in range(n_sub)]
               + [f"M2^2 w{k + 1}" for k in range(n_sub)])
    body = []
    for r in wanted:
        rep = r.report
        parts = ([sci3(rep.alphas[0] * s) for s in rep.S1]
                 + [sci3(rep.alphas[1] * s) for s in rep.S2])
        body.append([str(r.sweep)] + parts)
    _emit(out, "table.md", markdown_table(headers, body))
    return EXIT_GUARANTEE if res.violation else EXIT_OK


def cmd_check(args) -> int:
    h = args.h if args.h is not None else 0.25
    results = run_checks(h=h)
    width = max(len(name) for name, _, _ in results)
    guarantee_failed = False
    any_failed = False
    for name, ok, detail in results:
        tag = "PASS" if ok else "FAIL"
        print(f"{tag}  {name:<{width}}  {detail}".rstrip())
        if not ok:
            any_failed = True
            if "guarantee" in name:
                guarantee_failed = True
    if guarantee_failed:
        return EXIT_GUARANTEE
    return EXIT_SOLVER if any_failed else EXIT_OK


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors carry the config exit code."""

    def error(self, message):
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_common(sub) -> None:
    sub.add_argument("--config", metavar="FILE",
                     help="flat key=value config file")
    sub.add_argument("--preset", choices=("lshape", "rect"))
    sub.add_argument("--h", type=_ratio, metavar="R",
                     help="fine mesh size (e.g. 0.25 or 1/4)")
    sub.add_argument("--H", type=_ratio, metavar="R",
                     help="corrector mesh size (default: h)")
    sub.add_argument("--sweeps", type=int, metavar="N")
    sub.add_argument("--mode", choices=("multiplicative", "additive"))
    sub.add_argument("--eps", choices=("fixed", "opt"),
                     help="weight policy for the majorant")
    sub.add_argument("--out", metavar="DIR",
                     help="artifact directory (history.csv, table.md)")
    sub.add_argument("--emit-fields", dest="emit_fields",
                     action="store_true", default=False,
                     help="write per-sweep VTK field dumps")


def build_parser() -> _Parser:
    parser = _Parser(prog="ddmcert",
                     description="Overlapping Schwarz iteration with "
                                 "guaranteed a posteriori error bounds.")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)
    handlers = {"run": cmd_run, "table1": cmd_table1, "table2": cmd_table2,
                "table3": cmd_table3, "table4": cmd_table4,
                "check": cmd_check}
    descriptions = {
        "run": "one configured pipeline with per-sweep certification",
        "table1": "refinement study, corrector on the fine mesh (H=h)",
        "table2": "fixed fine mesh, corrector on coarser meshes (H>h)",
        "table3": "majorant parts along the iteration (H=h)",
        "table4": "per-subdomain volume terms along the iteration",
        "check": "invariant suite on a small preset",
    }
    for name, handler in handlers.items():
        sub = subs.add_parser(name, help=descriptions[name])
        _add_common(sub)
        sub.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except ConfigError as exc:
        print(f"ddmcert: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeshError, SolverError) as exc:
        print(f"ddmcert: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
