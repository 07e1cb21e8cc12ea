"""Command-line experiment runner.

    flagifs <command> --config PATH [--seed N] [--out DIR] [--threads N]
            [--format json|csv|both] [--set section.key=value ...]

Commands: check, exponents, prescribe, zero-orbit, tour, bootstrap.
``--config`` takes a file path or the name of a bundled instance
(``linear_d2`` or ``bimaneuver_d2``).  Exit status is 0 on
success, 1 when a condition or contract fails (reports are still
written) and 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import copy
import datetime
import itertools
import os
import platform
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import ImproveParams, run_bootstrap
from .cocycle import furstenberg_estimate, lyapunov_vector_of_periodic
from .errors import ConfigError, FlagIFSError, NotInCone, NotManeuverable
from .flags import Flag
from .ifs import SkewPoint, _loads, _guess_format, ifs_from_dict, parse_word, word_str
from .maneuver import (
    certify_maneuverability,
    de_bruijn_binary,
    entropy_block_coverage,
    prescribe_word,
    zero_exponent_orbit,
)
from .minimality import Ball, check_minimality_criterion, default_cover, group_tour, tour_and_go_home
from .report import SCHEMA_VERSION, config_hash, write_csv, write_json, write_jsonl

COMMANDS = ("check", "exponents", "prescribe", "zero-orbit", "tour", "bootstrap")
RNG_NAME = "numpy.Philox(SeedSequence(seed))"
DEFAULT_SEED = 0


class Failed(Exception):
    """Raised inside a command to report exit status 1 after writing reports."""


# -- configuration ---------------------------------------------------------------


def bundled_names():
    return sorted(p.name[:-5] for p in resources.files("flagifs.instances").iterdir() if p.name.endswith(".toml"))


def read_config(source):
    """(document, text, format, label) from a path or bundled instance name."""
    path = Path(source)
    if path.exists():
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e}") from None
        label = str(path)
    else:
        name = source[:-5] if source.endswith(".toml") else source
        if name not in bundled_names():
            raise ConfigError(f"no such config file or bundled instance: {source!r}")
        text = (resources.files("flagifs.instances") / f"{name}.toml").read_text()
        label = f"bundled:{name}"
        path = None
    fmt = _guess_format(text, path if path is not None else "x.toml")
    return _loads(text, fmt), text, fmt, label


def _literal(value):
    try:
        return _loads(f"v = {value}", "toml")["v"]
    except ConfigError:
        return value


def apply_overrides(doc, sets):
    """Apply ``section.key=value`` overrides (values parsed as TOML literals)."""
    doc = copy.deepcopy(doc)
    for item in sets or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value", where="--set")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-table {p!r}", where="--set")
        node[parts[-1]] = _literal(value.strip())
    return doc


def section_line(text, section, key, overridden=()):
    """Line of ``key`` inside ``[section]`` (1-based), if the text has it."""
    if text is None or f"{section}.{key}" in overridden:
        return None
    current = None
    for i, ln in enumerate(text.splitlines()):
        s = ln.strip()
        if s.startswith("[") and not s.startswith("[["):
            current = s.strip("[]").strip()
        elif current == section and (s.startswith(key + " ") or s.startswith(key + "=")):
            return i + 1
    return None


def make_rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


class Context:
    """Everything a command needs: parsed config, IFS, seed, output settings."""

    def __init__(self, command, doc, text, fmt, label, seed, out, formats, threads):
        self.command = command
        self.doc = doc
        self.text = text
        self.label = label
        self.seed = seed
        self.out = Path(out)
        self.formats = formats
        self.threads = threads
        self.ifs = ifs_from_dict(doc, text, fmt)
        self.hash = config_hash(doc)
        self.rng = make_rng(seed)
        self.used = {}
        self.overridden = set()

    def section(self, name):
        sec = self.doc.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table", where=name)
        return sec

    def param(self, section, key, default=None, kind=None, check=None, message=None):
        sec = self.section(section)
        value = sec.get(key, default)
        where = f"{section}.{key}"
        line = section_line(self.text, section, key, self.overridden) if key in sec else None
        try:
            if kind is not None and value is not None:
                value = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"cannot read {value!r} as {kind.__name__}", where=where, line=line) from None
        if check is not None and not check(value):
            raise ConfigError(message or f"invalid value {value!r}", where=where, line=line)
        self.used.setdefault(section, {})[key] = value
        return value

    def error(self, section, key, message):
        where = f"{section}.{key}"
        if where in self.overridden:
            where = f"--set {where}"
        return ConfigError(message, where=where, line=section_line(self.text, section, key, self.overridden))

    def header(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "config": self.label,
            "config_hash": self.hash,
            "seed": self.seed,
            "rng": RNG_NAME,
            "ifs": {"name": self.ifs.name, "mode": self.ifs.mode, "dim": self.ifs.dim,
                    "ell": self.ifs.ell, "C": self.ifs.C},
            "params": self.used,
        }

    def want(self, kind):
        return kind in self.formats

    def path(self, name):
        return self.out / name


def _int(v):
    if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
        raise ValueError
    return int(v)


def _vector(d):
    def conv(v):
        arr = [float(x) for x in v]
        if len(arr) != d:
            raise ValueError
        return arr

    conv.__name__ = f"list of {d} numbers"
    return conv


def _floats(v):
    return [float(x) for x in v]


_floats.__name__ = "list of numbers"


def _start_state(ctx):
    return ctx.ifs.origin(), Flag.canonical(ctx.ifs.dim)


def _random_state(ctx):
    x = ctx.rng.uniform(0, 1, ctx.ifs.base_dim)
    return x, Flag.random(ctx.ifs.dim, ctx.rng)


def _certify(ctx, ifs=None):
    try:
        return certify_maneuverability(ifs or ctx.ifs)
    except NotManeuverable as e:
        raise Failed(f"not maneuverable: {e}") from None


# -- commands ---------------------------------------------------------------------


def cmd_check(ctx):
    L = ctx.param("check", "cone_word_max_length", 2, _int, lambda v: 1 <= v <= 4, "must be between 1 and 4")
    leb = ctx.param("check", "lebesgue", 0.1, float, lambda v: v > 0, "must be positive")
    horizon = ctx.param("check", "horizon", 6, _int, lambda v: v >= 1, "must be at least 1")
    ifs = ctx.ifs
    out = {}
    try:
        cert = certify_maneuverability(ifs)
        out["maneuverability"] = {"verified": True, "c": cert.c, "c_raw": cert.c_raw, "C": cert.C,
                                  "mesh": cert.mesh.spec()}
    except NotManeuverable as e:
        out["maneuverability"] = {"verified": False, "message": str(e), "cell": e.cell,
                                  "signs": list(e.signs) if e.signs else None}

    records, skipped = [], []
    for n in range(1, L + 1):
        for w in itertools.product(range(ifs.ell), repeat=n):
            try:
                records.append(lyapunov_vector_of_periodic(ifs, w))
            except FlagIFSError as e:
                skipped.append({"word": word_str(w), "reason": type(e).__name__})
    cone = [r for r in records if r.in_cone() and r.attracting]
    out["periodic"] = {
        "verified": bool(cone),
        "words_scanned": len(records) + len(skipped),
        "skipped": len(skipped),
        "in_cone": [{"word": word_str(r.word), "lambda": list(r.lam.values), "gamma": r.gamma} for r in cone],
    }

    attracting = [r for r in records if r.attracting]
    if attracting:
        cover = default_cover(ifs, leb, attracting, seed=ctx.seed)
        verdict = check_minimality_criterion(ifs, cover, horizon, seed=ctx.seed)
        out["minimality"] = dict(verdict.to_dict(), verified=verdict.positive, cover_size=len(cover.elements),
                                 cover_radius=cover.elements[0].radius)
    else:
        out["minimality"] = {"verified": False, "failing": ["contraction"],
                             "message": "no attracting periodic orbit to build a cover from"}
    ok = all(v["verified"] for v in out.values())
    payload = dict(ctx.header(), conditions=out, verified=ok)
    if ctx.want("json"):
        write_json(ctx.path("check.json"), payload)
    if ctx.want("csv"):
        write_csv(ctx.path("check.csv"), ["condition", "verified"], [[k, v["verified"]] for k, v in out.items()])
    return payload, ok


def cmd_exponents(ctx):
    ifs = ctx.ifs
    n = ctx.param("exponents", "length", 10000, _int, lambda v: v >= 1, "length must be at least 1")
    word = ctx.param("exponents", "word", None, str)
    start_kind = ctx.param("exponents", "start", "stable" if word else "canonical", str,
                           lambda v: v in ("canonical", "stable", "random"),
                           "start must be 'canonical', 'stable' or 'random'")
    rec = None
    if word is not None:
        try:
            w = parse_word(word)
            if not w or any(not 0 <= s < ifs.ell for s in w):
                raise ValueError
        except ValueError:
            raise ctx.error("exponents", "word", f"not a word over 0..{ifs.ell - 1}: {word!r}") from None
        symbols = itertools.cycle(w)
        rec = lyapunov_vector_of_periodic(ifs, w)
    else:
        if start_kind == "stable":
            raise ctx.error("exponents", "start", "start = 'stable' needs a periodic word")
        symbols = (int(s) for s in ctx.rng.integers(0, ifs.ell, n))
    if start_kind == "stable":
        x, F = rec.base, rec.flag
    elif start_kind == "random":
        x, F = _random_state(ctx)
    else:
        x, F = _start_state(ctx)
    fv, _, run = furstenberg_estimate(ifs, symbols, SkewPoint((), (), x, F), n, running=True)
    result = {"furstenberg": list(fv.values), "samples": n, "spectrum": sorted(fv.values, reverse=True)}
    if rec is not None:
        result["periodic"] = rec.to_dict()
        result["max_abs_difference"] = float(np.max(np.abs(np.array(fv.values) - rec.lam.as_array())))
    payload = dict(ctx.header(), result=result)
    if ctx.want("json"):
        write_json(ctx.path("exponents.json"), payload)
    if ctx.want("csv"):
        header = ["step"] + [f"lambda_{i + 1}" for i in range(ifs.dim)]
        write_csv(ctx.path("exponents.csv"), header, ([t + 1, *row] for t, row in enumerate(run.tolist())))
    return payload, True


def cmd_prescribe(ctx):
    ifs = ctx.ifs
    d = ifs.dim
    chi = ctx.param("prescribe", "chi", [0.0] * d, _vector(d))
    eta = ctx.param("prescribe", "eta", 0.1, float, lambda v: v > 0, "eta must be positive")
    count = ctx.param("prescribe", "count", 1, _int, lambda v: v >= 1, "count must be at least 1")
    cert = _certify(ctx)
    if any(abs(v) > cert.c for v in chi):
        raise ctx.error("prescribe", "chi", f"every |chi_i| must be at most c = {cert.c:.6g}")
    x, F = _start_state(ctx)
    blocks, rows = [], []
    ok = True
    for b in range(count):
        tr = prescribe_word(ifs, cert, (x, F), chi, eta)
        x, F = tr.end
        s = tr.summary()
        s["max_deviation_ok"] = bool(s["max_abs_deviation"] <= cert.C)
        s["average_ok"] = bool(np.all(np.abs(tr.average - np.array(chi)) < eta))
        ok = ok and s["max_deviation_ok"] and s["average_ok"]
        blocks.append(s)
        rows.extend([b, *r] for r in tr.rows())
    payload = dict(ctx.header(), certificate={"c": cert.c, "c_raw": cert.c_raw, "C": cert.C}, blocks=blocks, ok=ok)
    if ctx.want("json"):
        write_json(ctx.path("prescribe.json"), payload)
    if ctx.want("csv"):
        header = (["block", "step", "symbol"] + [f"logdiag_{i + 1}" for i in range(d)]
                  + [f"running_{i + 1}" for i in range(d)])
        write_csv(ctx.path("prescribe.csv"), header, rows)
    return payload, ok


def cmd_zero_orbit(ctx):
    ifs = ctx.ifs
    if ifs.ell % 2:
        raise ConfigError(f"zero-orbit needs an even number of generators, got {ifs.ell}", where="ifs.generators",
                          line=section_line(ctx.text, "ifs", "mode"))
    n = ctx.param("zero_orbit", "length", 100000, _int, lambda v: v >= 1, "length must be at least 1")
    kind = ctx.param("zero_orbit", "theta", "debruijn", str, lambda v: v in ("debruijn", "random"),
                     "theta must be 'debruijn' or 'random'")
    k = ctx.param("zero_orbit", "block", 8, _int, lambda v: 1 <= v <= 12, "block must be between 1 and 12")
    certs = [_certify(ctx, ifs.half(0)), _certify(ctx, ifs.half(1))]
    if kind == "debruijn":
        base = de_bruijn_binary(k)
        theta = [base[i % len(base)] for i in range(n)]
    else:
        theta = ctx.rng.integers(0, 2, n).tolist()
    orbit = zero_exponent_orbit(ifs, certs, theta, _start_state(ctx))
    cov = entropy_block_coverage([orbit.symbols], k, ifs.ell)
    summary = orbit.summary(ifs.C)
    summary["running_sum_ok"] = bool(orbit.max_running <= 2 * ifs.C)
    summary["norm_bound"] = 2 * ifs.C * np.sqrt(ifs.dim) / n
    summary["norm_ok"] = bool(summary["furstenberg_norm"] <= summary["norm_bound"])
    ok = summary["running_sum_ok"] and summary["norm_ok"] and (cov.complete or kind == "random")
    payload = dict(ctx.header(), summary=summary, coverage=cov.to_dict(),
                   certificates=[{"c": c.c, "c_raw": c.c_raw} for c in certs], ok=ok)
    if ctx.want("json"):
        write_json(ctx.path("zero_orbit.json"), payload)
    if ctx.want("csv"):
        d = ifs.dim
        header = (["step", "symbol", "theta"] + [f"logdiag_{i + 1}" for i in range(d)]
                  + [f"running_{i + 1}" for i in range(d)])
        write_csv(ctx.path("zero_orbit.csv"), header, orbit.rows())
    return payload, ok


def _home(ctx, radius):
    """Attracting state of the first single-letter word, else the canonical state."""
    for s in range(ctx.ifs.ell):
        try:
            rec = lyapunov_vector_of_periodic(ctx.ifs, (s,))
        except FlagIFSError:
            continue
        if rec.attracting:
            return Ball(rec.base, rec.flag.frame, radius), word_str((s,))
    x, F = _start_state(ctx)
    return Ball(x, F.frame, radius), None


def cmd_tour(ctx):
    ifs = ctx.ifs
    delta = ctx.param("tour", "delta", 0.3, float, lambda v: v > 0, "delta must be positive")
    radius = ctx.param("tour", "home_radius", 0.1, float, lambda v: v > 0, "home_radius must be positive")
    kmax = ctx.param("tour", "kmax", 12, _int, lambda v: v >= 1, "kmax must be at least 1")
    ball = ctx.param("tour", "ball_radius", 0.0, float, lambda v: v >= 0, "ball_radius must be non-negative")
    start_kind = ctx.param("tour", "start", "random", str, lambda v: v in ("canonical", "random"),
                           "start must be 'canonical' or 'random'")
    home, home_word = _home(ctx, radius)
    x, F = _random_state(ctx) if start_kind == "random" else _start_state(ctx)
    result = {"home": home.to_dict(), "home_word": home_word, "start": {"base": list(x), "flag": F.tolist()}}
    if ball > 0:
        gt = group_tour(ifs, delta, home, Ball(x, F.frame, ball), seed=ctx.seed, kmax=kmax)
        rep = gt.report
        result["group"] = gt.to_dict()
    else:
        rep = tour_and_go_home(ifs, delta, home, (x, F), seed=ctx.seed, kmax=kmax)
        result["tour"] = rep.to_dict()
    ok = rep.dense and rep.endpoint_in_target
    payload = dict(ctx.header(), result=result, ok=ok)
    if ctx.want("json"):
        write_json(ctx.path("tour.json"), payload)
    if ctx.want("csv"):
        write_csv(ctx.path("tour.csv"), ["pair", "orbit_index", "distance"], rep.witnesses)
    return payload, ok


def cmd_bootstrap(ctx):
    ifs = ctx.ifs
    steps = ctx.param("bootstrap", "steps", 3, _int, lambda v: v >= 0, "steps must be non-negative")
    seed_word = ctx.param("bootstrap", "seed_word", "0", str)
    thetas = ctx.param("bootstrap", "theta", [0.2] * steps, _floats, lambda v: len(v) >= steps and min(v + [1]) > 0,
                       f"need {steps} positive entries")
    epss = ctx.param("bootstrap", "eps", [0.25] * steps, _floats, lambda v: len(v) >= steps and min(v + [1]) > 0,
                     f"need {steps} positive entries")
    deltas = ctx.param("bootstrap", "delta", [0.3] * steps, _floats, lambda v: len(v) >= steps and min(v + [1]) > 0,
                       f"need {steps} positive entries")
    budget = ImproveParams(seed=ctx.seed)
    for key, kind in (("eta", float), ("n", _int), ("m", _int), ("tour_fraction", float),
                      ("samples", _int), ("kmax", _int), ("retries", _int)):
        if key in ctx.section("bootstrap"):
            setattr(budget, key, ctx.param("bootstrap", key, None, kind))
    try:
        w = parse_word(seed_word)
        if not w or any(not 0 <= s < ifs.ell for s in w):
            raise ValueError
    except ValueError:
        raise ctx.error("bootstrap", "seed_word", f"not a word over 0..{ifs.ell - 1}: {seed_word!r}") from None
    try:
        seed_rec = lyapunov_vector_of_periodic(ifs, w, require_cone=True)
    except (NotInCone, FlagIFSError) as e:
        raise ctx.error("bootstrap", "seed_word", f"seed orbit unusable: {e}") from None
    cert = _certify(ctx)
    log = run_bootstrap(ifs, cert, seed_rec, thetas, epss, deltas, steps, budget)
    contracts = all(all(r.get("contracts", {}).values()) for r in log.records)
    ok = not log.failed and contracts and (steps == 0 or log.summary["strictly_decreasing"])
    payload = dict(ctx.header(), budget=budget.to_dict(), summary=log.summary, ok=ok)
    if ctx.want("json"):
        write_jsonl(ctx.path("bootstrap.jsonl"), [dict(r, config_hash=ctx.hash, seed=ctx.seed) for r in log.records])
        write_json(ctx.path("bootstrap.json"), payload)
        with open(ctx.path("bootstrap_words.txt"), "w") as fh:
            fh.write(word_str(seed_rec.word) + "\n")
            for st in log.steps:
                fh.write(word_str(st.record.word) + "\n")
    if ctx.want("csv"):
        header = ["step", "period", "norm", "ratio", "tau_bound", "angle", "shadow_proportion", "kappa",
                  "kappa_bound", "dense"]
        rows = []
        for r in log.records:
            if "error" in r:
                continue
            shadow = r.get("shadow", {})
            kappa_bound = r.get("kappa_bound", r.get("constants", {}).get("kappa_bound", ""))
            rows.append([r["step"], r["period"], r["norm"], r.get("ratio", ""), r.get("tau_bound", ""),
                         r.get("angle", ""), shadow.get("proportion", ""), shadow.get("kappa", ""),
                         kappa_bound, r.get("tour", {}).get("dense", "")])
        write_csv(ctx.path("bootstrap.csv"), header, rows)
    return payload, ok


HANDLERS = {
    "check": cmd_check,
    "exponents": cmd_exponents,
    "prescribe": cmd_prescribe,
    "zero-orbit": cmd_zero_orbit,
    "tour": cmd_tour,
    "bootstrap": cmd_bootstrap,
}


# -- entry point ---------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="flagifs", description="Flag-bundle IFS experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="config file, or a bundled instance name")
        sp.add_argument("--seed", type=int, default=None, help="64-bit RNG seed (overrides the config)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="worker count (recorded; runs are sequential)")
        sp.add_argument("--format", choices=("json", "csv", "both"), default="both")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value; may repeat")
    return p


def _sidecar(ctx, status, message=None):
    meta = {
        "command": ctx.command,
        "config_hash": ctx.hash,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "status": status,
        "threads": ctx.threads,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "flagifs": __version__,
    }
    if message:
        meta["message"] = message
    write_json(ctx.path(f"{ctx.command.replace('-', '_')}.meta.json"), meta)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    formats = ("json", "csv") if args.format == "both" else (args.format,)
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    try:
        doc, text, fmt, label = read_config(args.config)
        doc = apply_overrides(doc, args.set)
        seed = args.seed if args.seed is not None else doc.get("seed", DEFAULT_SEED)
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}", where="seed")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1", where="--threads")
        doc["seed"] = seed
        Path(args.out).mkdir(parents=True, exist_ok=True)
        ctx = Context(args.command, doc, text, fmt, label, seed, args.out, formats, threads)
        ctx.overridden = {item.split("=", 1)[0].strip() for item in args.set}
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        _, ok = HANDLERS[args.command](ctx)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Failed as e:
        write_json(ctx.path(f"{ctx.command.replace('-', '_')}.json"), dict(ctx.header(), ok=False, error=str(e)))
        _sidecar(ctx, "failed", str(e))
        print(f"failed: {e}", file=sys.stderr)
        return 1
    except FlagIFSError as e:
        write_json(ctx.path(f"{ctx.command.replace('-', '_')}.json"),
                   dict(ctx.header(), ok=False, error=f"{type(e).__name__}: {e}"))
        _sidecar(ctx, "failed", str(e))
        print(f"failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    _sidecar(ctx, "ok" if ok else "failed")
    print(f"{args.command}: {'ok' if ok else 'FAILED'} (reports in {ctx.out})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
