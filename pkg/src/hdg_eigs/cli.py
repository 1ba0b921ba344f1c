"""
Experiment runner.

Configs are flat ``key = value`` files (``#`` starts a comment); every key
can be overridden on the command line::

    hdg-eigs run --config bounds.cfg --levels 8,16,32 --out bounds.csv
    hdg-eigs table t2.csv

Exit codes: 0 success, 1 configuration error, 2 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assembly import DIVERGENCE, GRADIENT, MethodConfig, assemble, condense, write_coo
from .eigensolver import DEFAULT_TOL, DENSE_THRESHOLD, ConvergenceError, solve_pencil
from .mesh import build_structured_mesh, write_mesh
from .spectra import bound_verdict, combine_bounds, convergence_ratio, exact_eigenvalues

log = logging.getLogger("hdg_eigs")

LAPLACE = "laplace_square"
CHECKERBOARD = "checkerboard"
PROBLEMS = (LAPLACE, CHECKERBOARD)
CHECKERBOARD_ALPHA = {1: 1.0, 2: 1e8, 3: 1e8, 4: 1.0}

COLUMNS = ["problem", "family", "k", "gamma", "level", "n", "h", "eig_index",
           "lambda", "ratio", "verdict", "rho"]
COMBINED = "combined"

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str = LAPLACE
    family: str = GRADIENT
    k: int = 1
    gamma_list: List[float] = field(default_factory=lambda: [1.0, 10.0])
    levels: List[int] = field(default_factory=lambda: [8, 16, 32])
    num_eigs: int = 1
    postprocess: bool = False
    post_gammas: Optional[Tuple[float, float]] = None
    out: str = "results.csv"
    dense_threshold: int = DENSE_THRESHOLD
    tol: float = DEFAULT_TOL
    maxiter: Optional[int] = None

    def validate(self) -> "ExperimentConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.family not in (GRADIENT, DIVERGENCE):
            raise ConfigError(f"family must be {GRADIENT!r} or {DIVERGENCE!r}")
        if not self.levels:
            raise ConfigError("levels must not be empty")
        if any(n < 1 for n in self.levels):
            raise ConfigError("levels must be positive cell counts")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ConfigError("levels must be strictly ascending")
        if self.problem == CHECKERBOARD and any(n % 2 for n in self.levels):
            raise ConfigError("checkerboard problem needs even levels")
        if self.num_eigs < 1:
            raise ConfigError("eigs must be >= 1")
        if self.postprocess:
            if self.post_gammas is None or len(self.post_gammas) != 2:
                raise ConfigError("postprocess needs exactly two gamma values")
            if len(self.levels) < 2:
                raise ConfigError("postprocess needs at least two levels")
        for g in self.all_gammas():
            try:
                self.method(g)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return self

    @property
    def side_length(self) -> float:
        return math.pi if self.problem == LAPLACE else 1.0

    def all_gammas(self) -> List[float]:
        gammas = list(self.gamma_list)
        if self.postprocess and self.post_gammas:
            gammas += [g for g in self.post_gammas if g not in gammas]
        return gammas

    def method(self, gamma: float) -> MethodConfig:
        alpha = CHECKERBOARD_ALPHA if self.problem == CHECKERBOARD else None
        k = self.k if self.family == GRADIENT else 1
        return MethodConfig(self.family, k, float(gamma), alpha=alpha,
                            side_length=self.side_length)


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.replace(" ", "").split(",") if t]


def _ints(text: str) -> List[int]:
    out = []
    for t in text.replace(" ", "").split(","):
        if not t:
            continue
        if t.startswith("2^"):
            out.append(2 ** int(t[2:]))
        else:
            out.append(int(t))
    return out


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


_PARSERS = {
    "problem": str,
    "family": str,
    "k": int,
    "gamma": _floats,
    "levels": _ints,
    "eigs": int,
    "post": _floats,
    "postprocess": _bool,
    "out": str,
    "dense_threshold": int,
    "tol": float,
    "maxiter": int,
}


def _apply(cfg: ExperimentConfig, key: str, raw: str) -> None:
    key = key.strip().replace("-", "_")
    aliases = {"gamma_list": "gamma", "num_eigs": "eigs", "post_gammas": "post"}
    key = aliases.get(key, key)
    if key not in _PARSERS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        value = _PARSERS[key](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    if key == "gamma":
        cfg.gamma_list = value
    elif key == "eigs":
        cfg.num_eigs = value
    elif key == "post":
        if len(value) != 2:
            raise ConfigError("post needs exactly two gamma values")
        cfg.post_gammas = (value[0], value[1])
        cfg.postprocess = True
    else:
        setattr(cfg, key, value)


def parse_config(text: str, cfg: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Parse ``key = value`` lines into an :class:`ExperimentConfig`."""
    cfg = cfg or ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        _apply(cfg, key, value)
    return cfg


def _workers() -> int:
    raw = os.environ.get("HDG_EIGS_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer HDG_EIGS_THREADS=%r", raw)
    return 1


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _compute(cfg: ExperimentConfig, gamma: float, n: int) -> np.ndarray:
    mesh = build_structured_mesh(cfg.side_length, n)
    system, _ = assemble(mesh, cfg.method(gamma))
    pencil = condense(system)
    m = min(cfg.num_eigs, pencil.size)
    res = solve_pencil(pencil, m, dense_threshold=cfg.dense_threshold, tol=cfg.tol,
                       maxiter=cfg.maxiter)
    log.info("%s n=%d: path=%s lambda_1=%.12g", cfg.method(gamma).label(), n, res.path,
             res.eigenvalues[0])
    return res.eigenvalues


def compute_rows(cfg: ExperimentConfig) -> List[Dict[str, str]]:
    """Solve every (gamma, level) and build CSV rows in output order."""
    gammas = cfg.all_gammas()
    tasks = [(g, n) for g in gammas for n in cfg.levels]
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        results = list(pool.map(lambda t: _compute(cfg, *t), tasks))
    eigs = {t: r for t, r in zip(tasks, results)}

    exact = exact_eigenvalues(cfg.num_eigs) if cfg.problem == LAPLACE else None
    k = cfg.k if cfg.family == GRADIENT else 1
    L = cfg.side_length
    base = {"problem": cfg.problem, "family": cfg.family, "k": str(k)}

    def row(gamma_label, n, idx, lam, ratio, verdict, rho=None):
        return dict(base, gamma=gamma_label, level=str(int(round(math.log2(n)))), n=str(n),
                    h=_fmt(L / n), eig_index=str(idx + 1), **{"lambda": _fmt(lam)},
                    ratio=_fmt(ratio), verdict=verdict or "", rho=_fmt(rho))

    rows = []
    for g in gammas:
        for idx in range(cfg.num_eigs):
            seq = [float(eigs[(g, n)][idx]) for n in cfg.levels]
            ex = float(exact[idx]) if exact else None
            ratios = convergence_ratio(seq, ex)
            verdicts = bound_verdict(seq, [ex] * len(seq)) if exact else [None] * len(seq)
            for j, n in enumerate(cfg.levels):
                rows.append((g, n, idx, row(_fmt(float(g)), n, idx, seq[j], ratios[j], verdicts[j])))
    rows.sort(key=lambda r: (gammas.index(r[0]), r[1], r[2]))
    out = [r[3] for r in rows]

    if cfg.postprocess:
        g1, g2 = cfg.post_gammas
        combined = []
        for idx in range(cfg.num_eigs):
            lower = [float(eigs[(g1, n)][idx]) for n in cfg.levels]
            upper = [float(eigs[(g2, n)][idx]) for n in cfg.levels]
            rho, hat = combine_bounds(lower, upper)
            ex = float(exact[idx]) if exact else None
            defined = [h for h in hat if h is not None]
            ratios = [None] * (len(hat) - len(defined)) + convergence_ratio(defined, ex)
            for j, n in enumerate(cfg.levels):
                verdict = None
                if exact and hat[j] is not None:
                    verdict = bound_verdict([hat[j]], [ex])[0]
                combined.append((n, idx, row(COMBINED, n, idx, hat[j], ratios[j], verdict, rho[j])))
        combined.sort(key=lambda r: (r[0], r[1]))
        out += [r[2] for r in combined]
    return out


def render_csv(rows: Sequence[Dict[str, str]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def run(cfg: ExperimentConfig) -> int:
    """Run an experiment and write its CSV; returns the exit code."""
    try:
        cfg.validate()
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    out = Path(cfg.out)
    try:
        text = render_csv(compute_rows(cfg))
    except ConvergenceError as exc:
        log.error("solver did not converge: %s", exc)
        return EXIT_SOLVER
    except (ValueError, ConfigError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    # write atomically so a failure never leaves a partial file
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=out.name, suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return EXIT_OK


def read_csv(text: str) -> List[Dict[str, str]]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise ValueError("empty CSV")
    missing = [c for c in COLUMNS if c not in reader.fieldnames]
    if missing:
        raise ValueError(f"malformed CSV, missing columns {missing}")
    rows = list(reader)
    for r in rows:
        if None in r.values() or None in r:
            raise ValueError("malformed CSV row")
        try:
            int(r["n"])
            int(r["eig_index"])
            if r["lambda"]:
                float(r["lambda"])
        except ValueError as exc:
            raise ValueError(f"malformed CSV row: {r}") from exc
    return rows


def _level_label(n: int) -> str:
    lev = math.log2(n)
    return f"2^-{int(lev)}" if lev == int(lev) else f"1/{n}"


def print_table(text: str) -> str:
    """Fixed-width text rendering of a CSV produced by :func:`run`.

    One block per eigenvalue index; for each gamma (and the combined
    sequence) a value column and a ratio column. Values carry 10 decimals
    (12 for k = 2), ratios 4; undefined entries print as ``-``.
    """
    rows = read_csv(text)
    if not rows:
        return "h      lambda      Ratio\n"
    k = int(rows[0]["k"])
    dec = 12 if k == 2 else 10
    gammas: List[str] = []
    for r in rows:
        if r["gamma"] not in gammas:
            gammas.append(r["gamma"])
    levels = sorted({int(r["n"]) for r in rows})
    indices = sorted({int(r["eig_index"]) for r in rows})
    cell = {(r["gamma"], int(r["n"]), int(r["eig_index"])): r for r in rows}

    def value(s):
        return f"{float(s):.{dec}f}" if s else "-"

    def ratio(s):
        return f"{float(s):.4f}" if s else "-"

    vw = dec + 5
    lines = []
    for idx in indices:
        header = f"{'h/L':<8}"
        for g in gammas:
            name = "lambda_hat" if g == COMBINED else f"gamma={g}"
            header += f" {name:>{vw}} {'Ratio':>7}"
        lines.append(f"eig {idx}")
        lines.append(header)
        for n in levels:
            line = f"{_level_label(n):<8}"
            for g in gammas:
                r = cell.get((g, n, idx))
                line += f" {value(r['lambda']) if r else '-':>{vw}} {ratio(r['ratio']) if r else '-':>7}"
            lines.append(line)
        lines.append("")
    return "\n".join(lines)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log per-solve progress")
    ap = argparse.ArgumentParser(prog="hdg-eigs", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="compute eigenvalue tables")
    r.add_argument("--config", help="key = value config file")
    r.add_argument("--problem", choices=PROBLEMS)
    r.add_argument("--family", choices=(GRADIENT, DIVERGENCE))
    r.add_argument("--k", type=int)
    r.add_argument("--gamma", help="comma-separated gamma values")
    r.add_argument("--levels", help="comma-separated n values (or 2^l)")
    r.add_argument("--eigs", type=int)
    r.add_argument("--post", metavar="GAMMA1,GAMMA2", help="combine lower/upper sequences")
    r.add_argument("--out")
    r.add_argument("--dense-threshold", type=int)
    r.add_argument("--tol", type=float)
    r.add_argument("--maxiter", type=int)
    r.add_argument("--print", action="store_true", help="print the formatted table")

    t = sub.add_parser("table", parents=[common], help="format a result CSV")
    t.add_argument("csv")

    d = sub.add_parser("dump", parents=[common], help="write mesh and matrices for cross-checking")
    d.add_argument("--problem", choices=PROBLEMS, default=LAPLACE)
    d.add_argument("--family", choices=(GRADIENT, DIVERGENCE), default=GRADIENT)
    d.add_argument("--k", type=int, default=1)
    d.add_argument("--gamma", type=float, default=1.0)
    d.add_argument("--n", type=int, default=2)
    d.add_argument("--dir", default=".")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "table":
        try:
            print(print_table(Path(args.csv).read_text()))
        except (OSError, ValueError) as exc:
            log.error("%s", exc)
            return EXIT_CONFIG
        return EXIT_OK

    if args.command == "dump":
        cfg = ExperimentConfig(problem=args.problem, family=args.family, k=args.k,
                               gamma_list=[args.gamma], levels=[args.n])
        try:
            cfg.validate()
        except ConfigError as exc:
            log.error("config error: %s", exc)
            return EXIT_CONFIG
        mesh = build_structured_mesh(cfg.side_length, args.n)
        system, _ = assemble(mesh, cfg.method(args.gamma))
        out = Path(args.dir)
        out.mkdir(parents=True, exist_ok=True)
        write_mesh(mesh, out / "mesh.txt")
        write_coo(system.full_matrix(), out / "K.coo")
        write_coo(system.full_mass(), out / "M.coo")
        return EXIT_OK

    cfg = ExperimentConfig()
    try:
        if args.config:
            cfg = parse_config(Path(args.config).read_text(), cfg)
        for key in ("problem", "family", "k", "gamma", "levels", "eigs", "post", "out",
                    "dense_threshold", "tol", "maxiter"):
            val = getattr(args, key)
            if val is not None:
                _apply(cfg, key, str(val))
    except (ConfigError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    code = run(cfg)
    if code == EXIT_OK and args.print:
        print(print_table(Path(cfg.out).read_text()))
    return code


if __name__ == "__main__":
    sys.exit(main())
