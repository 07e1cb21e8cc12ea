"""Iterated function systems on R^d (linear mode) or the flat torus.

Linear mode acts on flags only: the base is a single abstract point,
stored as an empty array.  Torus mode generators are

    g(x) = A x + b + sum_k eps_k sin(2 pi (<m_k, x> + phi_k)) v_k   (mod 1)

with derivative Dg(x) = A + sum_k 2 pi eps_k cos(...) v_k m_k^T.
"""

from __future__ import annotations

import json
import math
import re
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .errors import ConfigError, DimensionMismatch, ExhaustedFuture
from .flags import Flag, canonical_signs, qr_positive

LINEAR = "linear"
TORUS = "torus"
MAX_TORUS_DIM = 3


def verification_mesh(d):
    """Regular grid on [0,1)^d used to certify torus generators."""
    n = {1: 1024, 2: 64, 3: 32}.get(d)
    if n is None:
        raise ConfigError(f"torus mode supports dim <= {MAX_TORUS_DIM}, got {d}", where="dim")
    axes = [np.arange(n) / n] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return grid.reshape(-1, d), 1.0 / n


@dataclass(frozen=True)
class Perturbation:
    amplitude: float
    freq: tuple
    phase: float
    direction: tuple


class GeneratorMap:
    """One generator.  Use :meth:`linear` or :meth:`torus` to build it."""

    def __init__(self, mode, matrix, translation=None, terms=()):
        self.mode = mode
        A = np.array(matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise ConfigError(f"matrix must be square, got shape {A.shape}", where="matrix")
        if not np.all(np.isfinite(A)):
            raise ConfigError("matrix has non-finite entries", where="matrix")
        d = A.shape[0]
        self.dim = d
        A.setflags(write=False)
        self.matrix = A
        self.terms = tuple(terms)
        if mode == LINEAR:
            if self.terms or translation is not None:
                raise ConfigError("linear generators take no translation or terms", where="mode")
            det = abs(np.linalg.det(A))
            if not det > 1e-12:
                raise ConfigError(f"|det A| = {det:.3e} must exceed 1e-12", where="matrix")
            self.translation = None
            self.slack = 0.0
        elif mode == TORUS:
            if d > MAX_TORUS_DIM:
                raise ConfigError(f"torus mode supports dim <= {MAX_TORUS_DIM}", where="dim")
            if not np.array_equal(A, np.round(A)):
                raise ConfigError("torus matrix must have integer entries", where="matrix")
            if abs(abs(round(np.linalg.det(A))) - 1) != 0:
                raise ConfigError("torus matrix must have determinant +-1", where="matrix")
            b = np.zeros(d) if translation is None else np.array(translation, dtype=float)
            if b.shape != (d,):
                raise ConfigError(f"translation must have length {d}", where="translation")
            b = np.mod(b, 1.0)
            b.setflags(write=False)
            self.translation = b
            for k, t in enumerate(self.terms):
                where = f"terms[{k}]"
                if len(t.freq) != d or any(int(f) != f for f in t.freq):
                    raise ConfigError(f"freq must be {d} integers", where=where + ".freq")
                if len(t.direction) != d:
                    raise ConfigError(f"direction must have length {d}", where=where + ".direction")
                if abs(np.linalg.norm(t.direction) - 1.0) > 1e-9:
                    raise ConfigError("direction must be a unit vector", where=where + ".direction")
            self._freqs = np.array([t.freq for t in self.terms], dtype=float).reshape(-1, d)
            self._dirs = np.array([t.direction for t in self.terms], dtype=float).reshape(-1, d)
            self._amps = np.array([t.amplitude for t in self.terms], dtype=float)
            self._phases = np.array([t.phase for t in self.terms], dtype=float)
            self._certify_torus()
        else:
            raise ConfigError(f"unknown mode {mode!r}", where="mode")

    @classmethod
    def linear(cls, matrix):
        return cls(LINEAR, matrix)

    @classmethod
    def torus(cls, matrix, translation=None, terms=()):
        terms = [t if isinstance(t, Perturbation) else Perturbation(**t) for t in terms]
        return cls(TORUS, matrix, translation, terms)

    def _certify_torus(self):
        # sup ||Dg - A|| on the mesh, plus a Lipschitz slack covering the
        # gaps between mesh points
        mesh, h = verification_mesh(self.dim)
        lip = sum(
            (2 * math.pi) ** 2 * abs(t.amplitude) * float(np.dot(t.freq, t.freq))
            for t in self.terms
        )
        self.slack = lip * math.sqrt(self.dim) * h / 2
        dev = self.jacobian(mesh) - self.matrix
        sup = float(np.max(np.linalg.norm(dev, ord=2, axis=(-2, -1)))) if self.terms else 0.0
        bound = 1.0 / np.linalg.norm(np.linalg.inv(self.matrix), 2)
        self.perturbation_sup = sup + self.slack
        if not sup + self.slack < bound:
            raise ConfigError(
                f"perturbation too large: sup||Dg - A|| + slack = {sup + self.slack:.4g} "
                f"must be below 1/||A^-1|| = {bound:.4g}",
                where="terms",
            )

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == LINEAR:
            return x
        y = x @ self.matrix.T + self.translation
        if self.terms:
            phase = 2 * math.pi * (x @ self._freqs.T + self._phases)
            y = y + (self._amps * np.sin(phase)) @ self._dirs
        y = np.mod(y, 1.0)
        return np.where(y >= 1.0, y - 1.0, y)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and (self.mode == LINEAR or not self.terms):
            return self.matrix
        shape = x.shape[:-1] + (self.dim, self.dim)
        if self.mode == LINEAR or not self.terms:
            return np.broadcast_to(self.matrix, shape)
        phase = 2 * math.pi * (x @ self._freqs.T + self._phases)
        coef = 2 * math.pi * self._amps * np.cos(phase)
        # sum_k coef_k v_k m_k^T
        return self.matrix + np.einsum("...k,ki,kj->...ij", coef, self._dirs, self._freqs)

    def to_dict(self):
        out = {"matrix": self.matrix.tolist()}
        if self.mode == TORUS:
            out["translation"] = self.translation.tolist()
            out["terms"] = [
                {
                    "amplitude": t.amplitude,
                    "freq": list(t.freq),
                    "phase": t.phase,
                    "direction": list(t.direction),
                }
                for t in self.terms
            ]
        return out


class IFS:
    """Finite list of generators sharing a mode and dimension.

    ``C`` is the derivative bound: every singular value of every Dg_s lies
    in [e^-C, e^C] (mesh maximum plus slack in torus mode).
    """

    def __init__(self, generators, name=None):
        gens = tuple(generators)
        if not gens:
            raise ConfigError("an IFS needs at least one generator", where="generators")
        modes = {g.mode for g in gens}
        dims = {g.dim for g in gens}
        if len(modes) != 1 or len(dims) != 1:
            raise ConfigError("generators must share mode and dimension", where="generators")
        self.generators = gens
        self.mode = gens[0].mode
        self.dim = gens[0].dim
        self.name = name
        self.C = self._derivative_bound()

    def _derivative_bound(self):
        if self.mode == LINEAR:
            pts = np.zeros((1, 0))
        else:
            pts = verification_mesh(self.dim)[0]
        C = 0.0
        for g in self.generators:
            sv = np.linalg.svd(g.jacobian(pts), compute_uv=False)
            hi = float(np.max(sv[..., 0])) + g.slack
            lo = float(np.min(sv[..., -1])) - g.slack
            C = max(C, math.log(hi), -math.log(lo))
        return max(C, 1e-12)

    @property
    def ell(self):
        return len(self.generators)

    @property
    def base_dim(self):
        return self.dim if self.mode == TORUS else 0

    def origin(self):
        return np.zeros(self.base_dim)

    def half(self, k):
        """Sub-IFS of the first (k=0) or second (k=1) half of the generators."""
        if self.ell % 2:
            raise ConfigError(f"cannot split an odd number of generators ({self.ell})", where="generators")
        h = self.ell // 2
        return IFS(self.generators[k * h:(k + 1) * h], name=f"{self.name}[half {k}]")

    def step(self, s, x, frame):
        """One step of symbol s on a base point and canonical frame (single or stacked).

        Returns (new base, new canonical frame, R, canonical signs of Q).
        """
        g = self.generators[s]
        q, r = qr_positive(g.jacobian(x) @ frame)
        sg = canonical_signs(q)
        return g.apply(x), q * sg[..., None, :] + 0.0, r, sg

    def to_dict(self):
        out = {"mode": self.mode, "dim": self.dim, "generators": [g.to_dict() for g in self.generators]}
        if self.name:
            out["name"] = self.name
        return out

    def __repr__(self):
        return f"IFS(name={self.name!r}, mode={self.mode}, dim={self.dim}, ell={self.ell}, C={self.C:.4g})"


def check_word(ifs, w):
    w = tuple(int(s) for s in w)
    for s in w:
        if not 0 <= s < ifs.ell:
            raise ValueError(f"symbol {s} outside alphabet 0..{ifs.ell - 1}")
    return w


def word_str(w):
    """Digit string for a word (comma-separated when the alphabet exceeds 10)."""
    w = list(w)
    if all(s < 10 for s in w):
        return "".join(str(s) for s in w)
    return ",".join(str(s) for s in w)


def parse_word(text):
    text = text.strip()
    if "," in text:
        return tuple(int(t) for t in text.split(",") if t.strip())
    return tuple(int(ch) for ch in text)


def eval_word(ifs, w, x):
    """Base point after applying g_{w_0}, then g_{w_1}, and so on."""
    x = np.asarray(x, dtype=float)
    for s in check_word(ifs, w):
        x = ifs.generators[s].apply(x)
    return x


def derivative_along(ifs, w, x, F: Flag):
    """(final flag, triangular M(Dg_[w](x), F), summed log-diagonal).

    The product is accumulated with the sign conjugations between the
    canonical intermediate frames and the raw step frames, then its
    diagonal signs are normalised so it is the positive-diagonal R of the
    composed derivative.  For long words the matrix may overflow; the
    log-diagonal is accumulated separately and stays exact.
    """
    w = check_word(ifs, w)
    d = F.dim
    x = np.asarray(x, dtype=float)
    frame = F.frame
    P = np.eye(d)
    logd = np.zeros(d)
    with np.errstate(over="ignore", invalid="ignore"):
        for s in w:
            x, frame, r, sg = ifs.step(s, x, frame)
            logd += np.log(np.diag(r))
            P = (sg[:, None] * r) @ P
        sigma = np.sign(np.diag(P))
        sigma[sigma == 0] = 1.0
        P = sigma[:, None] * P
    return Flag._trusted(frame), np.triu(P), logd


class SkewPoint:
    """Point of the skew product: finite symbol window, base point, flag.

    ``past[-1]`` is the symbol at time -1 and ``future[0]`` the symbol at
    time 0, which drives the next step.
    """

    __slots__ = ("past", "future", "base", "flag")

    def __init__(self, past, future, base, flag: Flag):
        self.past = tuple(int(s) for s in past)
        self.future = tuple(int(s) for s in future)
        b = np.array(base, dtype=float).reshape(-1)
        if b.size and (np.any(b < 0) or np.any(b >= 1)):
            raise ValueError("base coordinates must lie in [0, 1)")
        b.setflags(write=False)
        self.base = b
        self.flag = flag

    @property
    def depth(self):
        """Symmetric window depth: symbols at |n| <= depth are stored."""
        return min(len(self.past), len(self.future) - 1)

    def __repr__(self):
        return (
            f"SkewPoint(past={word_str(self.past)!r}, future={word_str(self.future)!r}, "
            f"base={self.base.tolist()}, flag={self.flag.tolist()})"
        )


def skew_step(ifs, p: SkewPoint, refill=None, keep_depth=False):
    """Advance by the first future symbol.

    ``refill`` (a zero-argument callable) appends a new symbol at the far
    end of the future; ``keep_depth`` drops the oldest past symbol.
    """
    if not p.future:
        raise ExhaustedFuture("skew point has no future symbols left")
    s = p.future[0]
    x, frame, _, _ = ifs.step(s, p.base, p.flag.frame)
    future = p.future[1:]
    if refill is not None:
        future = future + (int(refill()),)
    past = p.past + (s,)
    if keep_depth and p.past:
        past = past[1:]
    return SkewPoint(past, future, x, Flag._trusted(frame))


def torus_distance(x, y):
    """Max-coordinate circle distance; broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] == 0:
        return np.zeros(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))
    diff = np.abs(x - y) % 1.0
    return np.max(np.minimum(diff, 1.0 - diff), axis=-1)


def flag_distance(a, b):
    """Frobenius frame distance minimised over column signs.

    ``a`` and ``b`` are frames (or stacks of frames).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dp = np.sum((a - b) ** 2, axis=-2)
    dm = np.sum((a + b) ** 2, axis=-2)
    return np.sqrt(np.sum(np.minimum(dp, dm), axis=-1))


def state_distance(xa, fa, xb, fb):
    """Flag-bundle surrogate distance: max of torus and flag distances."""
    return np.maximum(torus_distance(xa, xb), flag_distance(fa, fb))


def symbolic_distance(p: SkewPoint, q: SkewPoint):
    D = min(p.depth, q.depth)
    if D < 0:
        return 1.0
    for n in range(D + 1):
        # n = 0 compares the current symbol; then +-n outward
        if p.future[n] != q.future[n]:
            return 2.0 ** (-n)
        if n > 0 and p.past[-n] != q.past[-n]:
            return 2.0 ** (-n)
    return 2.0 ** (-(D + 1))


def skew_distance(p: SkewPoint, q: SkewPoint):
    if p.base.shape != q.base.shape or p.flag.dim != q.flag.dim:
        raise DimensionMismatch("skew points differ in base or flag dimension")
    return max(
        symbolic_distance(p, q),
        float(torus_distance(p.base, q.base)),
        float(flag_distance(p.flag.frame, q.flag.frame)),
    )


# -- loading ---------------------------------------------------------------


def _loads(text, fmt):
    if fmt == "json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(e.msg, line=e.lineno) from None
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        msg = str(e)
        line = None
        m = re.search(r"line (\d+)", msg)
        if m:
            line = int(m.group(1))
        raise ConfigError(msg, line=line) from None


def _guess_format(text, path=None):
    if path is not None:
        p = str(path).lower()
        if p.endswith(".json"):
            return "json"
        if p.endswith(".toml"):
            return "toml"
    return "json" if text.lstrip().startswith("{") else "toml"


def _locate(text, fmt, gen_index, field, prefix="generators"):
    """Best-effort source line of ``field`` inside generator ``gen_index``."""
    if text is None or gen_index is None:
        return None
    lines = text.splitlines()
    if fmt == "toml":
        count = -1
        start = None
        for i, ln in enumerate(lines):
            if ln.strip().replace(" ", "") == f"[[{prefix}]]":
                count += 1
                if count == gen_index:
                    start = i
                elif start is not None:
                    break
        if start is None:
            return None
        end = next(
            (j for j in range(start + 1, len(lines)) if lines[j].strip().replace(" ", "") == f"[[{prefix}]]"),
            len(lines),
        )
        for j in range(start, end):
            if field and lines[j].strip().startswith(field):
                return j + 1
        return start + 1
    key = f'"{field or "matrix"}"'
    hits = [i for i, ln in enumerate(lines) if key in ln]
    if gen_index < len(hits):
        return hits[gen_index] + 1
    return None


def ifs_from_dict(doc, text=None, fmt="toml"):
    """Build an IFS from a parsed document (an ``ifs`` table is accepted)."""
    prefix = "generators"
    if "ifs" in doc and isinstance(doc["ifs"], dict):
        doc = doc["ifs"]
        prefix = "ifs.generators"
    if not isinstance(doc, dict):
        raise ConfigError("IFS definition must be a table", where="ifs")
    mode = str(doc.get("mode", "")).lower()
    if mode not in (LINEAR, TORUS):
        raise ConfigError(f"mode must be 'linear' or 'torus', got {doc.get('mode')!r}", where="mode",
                          line=_line_of_key(text, "mode"))
    dim = doc.get("dim")
    if not isinstance(dim, int) or dim < 1:
        raise ConfigError(f"dim must be a positive integer, got {dim!r}", where="dim",
                          line=_line_of_key(text, "dim"))
    gens_doc = doc.get("generators")
    if not isinstance(gens_doc, list) or not gens_doc:
        raise ConfigError("generators must be a non-empty list", where="generators",
                          line=_line_of_key(text, "generators"))
    gens = []
    for k, gd in enumerate(gens_doc):
        try:
            if not isinstance(gd, dict):
                raise ConfigError("generator must be a table")
            unknown = set(gd) - {"matrix", "translation", "terms"}
            if unknown:
                raise ConfigError(f"unknown fields {sorted(unknown)}", where=sorted(unknown)[0])
            if "matrix" not in gd:
                raise ConfigError("missing matrix", where="matrix")
            A = np.array(gd["matrix"], dtype=float)
            if A.shape != (dim, dim):
                raise ConfigError(f"matrix must be {dim}x{dim}, got shape {A.shape}", where="matrix")
            if mode == LINEAR:
                if "translation" in gd or "terms" in gd:
                    raise ConfigError("linear generators take only a matrix", where="translation")
                gens.append(GeneratorMap.linear(A))
            else:
                terms = []
                for j, td in enumerate(gd.get("terms", [])):
                    missing = {"amplitude", "freq", "phase", "direction"} - set(td)
                    if missing:
                        raise ConfigError(f"missing {sorted(missing)}", where=f"terms[{j}]")
                    terms.append(Perturbation(float(td["amplitude"]), tuple(td["freq"]),
                                              float(td["phase"]), tuple(float(v) for v in td["direction"])))
                gens.append(GeneratorMap.torus(A, gd.get("translation"), terms))
        except ConfigError as e:
            field = (e.where or "").split("[")[0].split(".")[0] or None
            path = f"{prefix}[{k}]" + (f".{e.where}" if e.where else "")
            raise ConfigError(e.message, where=path,
                              line=_locate(text, fmt, k, field, prefix=prefix)) from None
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e), where=f"{prefix}[{k}]",
                              line=_locate(text, fmt, k, None, prefix=prefix)) from None
    return IFS(gens, name=doc.get("name"))


def _line_of_key(text, key):
    if text is None:
        return None
    for i, ln in enumerate(text.splitlines()):
        s = ln.strip()
        if s.startswith(key) or s.startswith(f'"{key}"'):
            return i + 1
    return None


def load_document(source):
    """Parse a TOML/JSON file path or literal text into (dict, text, format)."""
    from pathlib import Path

    path = None
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e}") from None
    else:
        text = str(source)
    fmt = _guess_format(text, path)
    return _loads(text, fmt), text, fmt


def load_ifs(source):
    doc, text, fmt = load_document(source)
    return ifs_from_dict(doc, text, fmt)
