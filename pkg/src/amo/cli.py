"""Command line entry point: experiment configs, the band cache, emitters and verification suites."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import random
import sys
import threading
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .arithmetic import (GOLDEN, beta_estimate, classify_resonance, expand,
                         from_partial_quotients, parse_real, theta_membership_scan)
from .cocycle import (OperatorParams, herman_bound_check, lyapunov_sweep, rotation_sweep,
                      thouless_residual)
from .duality import build_dual, duality_report, spectra_duality_check
from .errors import (AmoError, CacheCorrupt, ConfigInvalid, NearSingularWindow,
                     NoDecayDetected, UnknownCommand, ValidationError)
from .localization import (TruncatedOperator, decay_rate, formal_solution, green_matrix,
                           middle_states, poisson_residual, regularity_classify)
from .mfunction import (decay_exponent_a, m_iterate, reducibility_probe, rotation_angle_phi)
from .rational_spectrum import (BandList, band_edges, butterfly, dos_atoms, gap_bound_check,
                                gap_catalog, hausdorff_distance, periodic_eigenvalues,
                                reduced_fractions)
from .trig_estimates import log_sin_sum_rational, rat0_identity

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
DEFAULT_CACHE = Path.home() / ".cache" / "amo"
SVG_WIDTH, SVG_HEIGHT, SVG_PAD = 1200, 900, 40


# ── number formatting ───────────────────────────────────────────────

def fmt(value) -> str:
    """Text form of a scalar; floats carry 17 significant digits."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        text = format(float(value), ".17g")
        return text + ".0" if text.lstrip("-").isdigit() else text
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    return str(value)


def to_json_text(obj) -> str:
    """JSON with every float written at 17 significant digits; non-finite floats become null."""
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, complex):
        return to_json_text({"re": obj.real, "im": obj.imag})
    if isinstance(obj, (str, Fraction)):
        return json.dumps(fmt(obj))
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json_text(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(to_json_text(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    lines += [",".join(fmt(row.get(c)) for c in columns) for row in rows]
    return "\n".join(lines) + "\n"


# ── band cache ──────────────────────────────────────────────────────

class BandCache:
    """One JSON file per (λ at 12 significant digits, p, q, version), named by its sha256.

    Unreadable or mismatching entries are ignored and rewritten. A fraction
    ``spot_check_rate`` of hits is recomputed and compared.
    """

    def __init__(self, directory, version: str = __version__, spot_check_rate: float = 0.01,
                 seed: int | None = None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.version = version
        self.spot_check_rate = spot_check_rate
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self.stats = {"hits": 0, "misses": 0, "corrupt": 0, "spot_checks": 0}

    def key(self, lam: float, p: int, q: int) -> dict:
        return {"command": "bands", "lambda": f"{float(lam):.11e}", "p": int(p), "q": int(q),
                "version": self.version}

    def path(self, key: dict) -> Path:
        digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()
        return self.directory / f"{digest}.json"

    def load(self, lam, p, q) -> BandList | None:
        key = self.key(lam, p, q)
        path = self.path(key)
        if not path.exists():
            return None
        try:
            entry = json.loads(path.read_text())
            if entry["key"] != key:
                raise CacheCorrupt(f"key mismatch in {path.name}")
            bands = BandList.from_json(entry["bands"])
            if bands.p != p or bands.q != q or len(bands.bands) != q:
                raise CacheCorrupt(f"inconsistent entry {path.name}")
            return bands
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CacheCorrupt(f"unreadable entry {path.name}: {exc}") from exc

    def store(self, bands: BandList):
        key = self.key(bands.lam, bands.p, bands.q)
        path = self.path(key)
        tmp = path.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(json.dumps({"key": key, "bands": bands.to_json()}, sort_keys=True))
        os.replace(tmp, path)

    def _count(self, name):
        with self._lock:
            self.stats[name] += 1

    def bands(self, lam: float, p: int, q: int) -> BandList:
        try:
            hit = self.load(lam, p, q)
        except CacheCorrupt:
            self._count("corrupt")
            hit = None
        if hit is not None:
            self._count("hits")
            with self._lock:
                check = self._rng.random() < self.spot_check_rate
            if not check:
                return hit
            self._count("spot_checks")
            fresh = band_edges(lam, p, q)
            if hausdorff_distance(hit.edges, fresh.edges) <= 1e-9:
                return hit
            self._count("corrupt")
            self.store(fresh)
            return fresh
        self._count("misses")
        fresh = band_edges(lam, p, q)
        self.store(fresh)
        return fresh


def cache_from_env(cache_dir=None, seed=None) -> BandCache:
    directory = cache_dir or os.environ.get("AMO_CACHE_DIR") or DEFAULT_CACHE
    return BandCache(directory, seed=seed)


def worker_count() -> int:
    raw = os.environ.get("AMO_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"AMO_THREADS must be an integer, got {raw!r}") from exc
    return max(1, min(n, os.cpu_count() or 1))


# ── SVG butterfly ───────────────────────────────────────────────────

def butterfly_svg(lam: float, tiles) -> str:
    """One vertical segment per band at x = p/q; fixed viewport and E range."""
    e_max = 2.0 + 2.0 * abs(lam)
    inner_w, inner_h = SVG_WIDTH - 2 * SVG_PAD, SVG_HEIGHT - 2 * SVG_PAD

    def y_of(e):
        return SVG_PAD + (e_max - e) / (2.0 * e_max) * inner_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
           f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
           f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
           '<g stroke="black" stroke-linecap="butt">']
    for tile in tiles:
        x = SVG_PAD + tile.p / tile.q * inner_w
        width = 4.0 / tile.q
        for lo, hi in tile.bands:
            out.append(f'<line x1="{fmt(x)}" y1="{fmt(y_of(hi))}" x2="{fmt(x)}" '
                       f'y2="{fmt(y_of(lo))}" stroke-width="{fmt(width)}"/>')
    out += ["</g>", "</svg>"]
    return "\n".join(out) + "\n"


# ── configuration ───────────────────────────────────────────────────

@dataclass(frozen=True)
class Param:
    name: str
    kind: str          # float, int, str, floats, ints, alpha, complex, bool
    default: object = None
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def _coerce(param: Param, value):
    """Canonical JSON-able value for a parameter."""
    if value is None:
        return None
    kind = param.kind
    try:
        if kind == "float":
            return float(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("not an integer")
            return int(value)
        if kind == "bool":
            if isinstance(value, str):
                return value.lower() in ("1", "true", "yes")
            return bool(value)
        if kind == "str":
            return str(value)
        if kind in ("floats", "ints"):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            cast = float if kind == "floats" else int
            return [cast(v) for v in value]
        if kind == "complex":
            complex(str(value).replace(" ", ""))
            return str(value).replace(" ", "")
        if kind == "alpha":
            if isinstance(value, dict):
                if set(value) not in ({"p", "q"}, {"cf_terms"}):
                    raise ValueError("alpha object needs {p, q} or {cf_terms}")
                return {k: (list(map(int, v)) if k == "cf_terms" else int(v)) for k, v in value.items()}
            return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{param.name}: {exc}") from exc
    raise ConfigInvalid(f"unknown parameter kind {kind}")


GLOBAL_KEYS = ("precision_bits", "cache_dir", "output_path", "format", "seed")
FORMATS = ("json", "csv")


@dataclass
class ExperimentConfig:
    command: str
    params: dict = field(default_factory=dict)
    precision_bits: int = 256
    cache_dir: str | None = None
    output_path: str | None = None
    format: str | None = None
    seed: int = 0

    def to_json(self) -> dict:
        out = {"command": self.command}
        out.update({k: self.params[k] for k in sorted(self.params)})
        out.update({k: getattr(self, k) for k in GLOBAL_KEYS})
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict) or "command" not in data:
            raise ConfigInvalid("config needs a top-level 'command'")
        name = data["command"]
        if name not in COMMANDS:
            raise UnknownCommand(f"unknown command {name!r}")
        known = {p.name: p for p in COMMANDS[name].params}
        params, glob = {}, {}
        for key, value in data.items():
            if key == "command":
                continue
            if key in GLOBAL_KEYS:
                glob[key] = value
            elif key in known:
                params[key] = _coerce(known[key], value)
            else:
                raise ConfigInvalid(f"unknown key {key!r} for command {name!r}")
        cfg = cls(name, params, **glob)
        cfg.validate()
        return cfg

    def validate(self):
        if self.format is not None and self.format not in FORMATS:
            raise ConfigInvalid(f"format must be one of {FORMATS}")
        if not isinstance(self.precision_bits, int) or self.precision_bits < 53:
            raise ConfigInvalid("precision_bits must be an integer >= 53")
        if not isinstance(self.seed, int):
            raise ConfigInvalid("seed must be an integer")

    def get(self, name):
        """Parameter value with the command default filled in."""
        if self.params.get(name) is not None:
            return self.params[name]
        for p in COMMANDS[self.command].params:
            if p.name == name:
                return p.default
        raise KeyError(name)


# ── command helpers ─────────────────────────────────────────────────

@dataclass
class Output:
    document: dict | None = None
    columns: tuple | None = None
    rows: list | None = None
    passed: bool = True
    extra_files: dict = field(default_factory=dict)   # path -> text


def _expansion(value, precision: int, terms: int = 40):
    if isinstance(value, dict):
        if "cf_terms" in value:
            return from_partial_quotients(value["cf_terms"], 0, precision)
        return expand(Fraction(value["p"], value["q"]), terms, precision)
    text = str(value).strip()
    if text == "golden":
        return expand(GOLDEN, terms, precision)
    return expand(parse_real(text), terms, precision)


def _alpha(cfg) -> float:
    value = cfg.get("alpha")
    if isinstance(value, dict) and "p" in value:
        return value["p"] / value["q"]
    return _expansion(value, cfg.precision_bits).alpha


def _energies(cfg) -> np.ndarray:
    if cfg.get("energies"):
        return np.array(cfg.get("energies"), dtype=float)
    lam = cfg.get("lambda")
    bound = 2.0 + 2.0 * abs(lam)
    lo = cfg.get("e_min") if cfg.get("e_min") is not None else -bound
    hi = cfg.get("e_max") if cfg.get("e_max") is not None else bound
    return np.linspace(lo, hi, cfg.get("n_energies"))


def _params(cfg, energy=None) -> OperatorParams:
    e = cfg.get("energy") if energy is None else energy
    if isinstance(e, str):
        e = complex(e)
        e = e.real if e.imag == 0 else e
    return OperatorParams(cfg.get("lambda"), _alpha(cfg), cfg.get("theta") or 0.0,
                          0.0 if e is None else e)


def _required(cfg, *names):
    for n in names:
        if cfg.get(n) is None:
            raise ConfigInvalid(f"--{n.replace('_', '-')} is required for {cfg.command}")


SWEEP_COLUMNS = ("E", "L", "rho", "ids", "spread")


# ── commands: arithmetic ────────────────────────────────────────────

def cmd_cf(cfg):
    cf = _expansion(cfg.get("x"), cfg.precision_bits, cfg.get("terms"))
    rows = []
    for n, ((p, q), err) in enumerate(zip(cf.convergents, cf.signed_errors)):
        a = cf.integer_part if n == 0 else cf.partial_quotients[n - 1]
        rows.append({"n": n, "a_n": a, "p_n": p, "q_n": q, "error": float(err)})
    doc = dict(cf.to_json(), kind=cf.kind, exhausted=cf.exhausted)
    return Output(doc, ("n", "a_n", "p_n", "q_n", "error"), rows)


def cmd_beta(cfg):
    cf = _expansion(cfg.get("x"), cfg.precision_bits, cfg.get("terms"))
    est = beta_estimate(cf)
    rows = [{"n": n, "ratio": r, "tail_sup": t}
            for n, (r, t) in enumerate(zip(est.ratios, est.running_tail_sup))]
    doc = {"estimate": est.estimate, "defined": est.defined, "ratios": list(est.ratios),
           "running_tail_sup": list(est.running_tail_sup)}
    return Output(doc, ("n", "ratio", "tail_sup"), rows)


def cmd_resonance(cfg):
    _required(cfg, "k")
    cf = _expansion(cfg.get("x"), cfg.precision_bits, cfg.get("terms"))
    rep = classify_resonance(cfg.get("k"), cf)
    return Output(asdict(rep), tuple(asdict(rep)), [asdict(rep)])


def cmd_theta_scan(cfg):
    cf = _expansion(cfg.get("alpha"), cfg.precision_bits, 60)
    scan = theta_membership_scan(cfg.get("theta"), cf, cfg.get("k_max"), cfg.get("s_max"))
    doc = {"theta": cfg.get("theta"), "witnesses": list(scan.witnesses),
           "half_multiple_s": list(scan.half_multiple_s),
           "pi_half_multiple_s": list(scan.pi_half_multiple_s),
           "second_branch": scan.second_branch, "k_max": scan.k_max, "tolerance": scan.tolerance}
    return Output(doc, ("k",), [{"k": k} for k in scan.witnesses])


# ── commands: cocycle ───────────────────────────────────────────────

def cmd_lyapunov(cfg):
    _required(cfg, "lambda")
    energies = _energies(cfg)
    ests = lyapunov_sweep(cfg.get("lambda"), _alpha(cfg), energies, cfg.get("steps"),
                          cfg.get("phases") or 8, cfg.seed)
    rows = [{"E": e, "L": r.value, "spread": r.spread} for e, r in zip(energies, ests)]
    return Output(None, SWEEP_COLUMNS, rows)


def cmd_rotation(cfg):
    _required(cfg, "lambda")
    energies = _energies(cfg)
    reps = rotation_sweep(cfg.get("lambda"), _alpha(cfg), energies, cfg.get("steps"),
                          cfg.get("phases") or 16, cfg.seed)
    rows = [{"E": e, "rho": r.rho, "ids": r.ids} for e, r in zip(energies, reps)]
    return Output(None, SWEEP_COLUMNS, rows)


def cmd_ids(cfg):
    """Rotation sweep together with the Lyapunov exponent at the same energies."""
    _required(cfg, "lambda")
    energies = _energies(cfg)
    alpha = _alpha(cfg)
    reps = rotation_sweep(cfg.get("lambda"), alpha, energies, cfg.get("steps"),
                          cfg.get("phases") or 16, cfg.seed)
    ests = lyapunov_sweep(cfg.get("lambda"), alpha, energies, cfg.get("steps"),
                          cfg.get("phases") or 8, cfg.seed)
    rows = [{"E": e, "L": l.value, "rho": r.rho, "ids": r.ids, "spread": l.spread}
            for e, r, l in zip(energies, reps, ests)]
    return Output(None, SWEEP_COLUMNS, rows)


def cmd_thouless(cfg):
    _required(cfg, "lambda")
    lam = cfg.get("lambda")
    atoms = dos_atoms(band_edges(lam, cfg.get("atoms_p"), cfg.get("atoms_q")))
    energies = _energies(cfg)
    alpha = _alpha(cfg)
    ests = lyapunov_sweep(lam, alpha, energies, cfg.get("steps"), cfg.get("phases") or 8, cfg.seed)
    rows = []
    for e, est in zip(energies, ests):
        rep = thouless_residual(OperatorParams(lam, alpha, 0.0, float(e)), atoms.positions,
                                atoms.weights, lyapunov=est.value)
        rows.append({"E": e, "L": rep.lyapunov, "log_potential": rep.log_potential,
                     "residual": rep.residual, "excluded": len(rep.excluded_atoms)})
    return Output(None, ("E", "L", "log_potential", "residual", "excluded"), rows)


# ── commands: rational spectrum ─────────────────────────────────────

BAND_COLUMNS = ("lambda", "p", "q", "band_index", "E_low", "E_high")
GAP_COLUMNS = ("lambda", "p", "q", "gap_index", "a", "b", "size", "ids_num", "ids_den",
               "label_k", "label_dist")


def _band_rows(bl: BandList):
    return [{"lambda": bl.lam, "p": bl.p, "q": bl.q, "band_index": i + 1, "E_low": lo, "E_high": hi}
            for i, (lo, hi) in enumerate(bl.bands)]


def _fraction(cfg):
    _required(cfg, "lambda", "p", "q")
    return cfg.get("lambda"), cfg.get("p"), cfg.get("q")


def cmd_bands(cfg):
    lam, p, q = _fraction(cfg)
    bl = cache_from_env(cfg.cache_dir, cfg.seed).bands(lam, p, q)
    return Output({"bands": bl.to_json()}, BAND_COLUMNS, _band_rows(bl))


def cmd_gaps(cfg):
    lam, p, q = _fraction(cfg)
    bl = cache_from_env(cfg.cache_dir, cfg.seed).bands(lam, p, q)
    target = cfg.get("alpha_target")
    gaps = gap_catalog(bl, p / q if target is None else target)
    rows = [{"lambda": lam, "p": p, "q": q, "gap_index": g.index, "a": g.a, "b": g.b,
             "size": g.size, "ids_num": g.ids_value.numerator, "ids_den": g.ids_value.denominator,
             "label_k": g.label_k, "label_dist": g.label_dist} for g in gaps]
    return Output(None, GAP_COLUMNS, rows)


def cmd_gap_bound(cfg):
    _required(cfg, "lambda")
    cf = _expansion(cfg.get("alpha"), cfg.precision_bits, cfg.get("n_max") + 2)
    rows = gap_bound_check(cfg.get("lambda"), cf, range(cfg.get("n_min"), cfg.get("n_max") + 1),
                           cfg.get("eps"))
    out = [dict(asdict(r), bound=r.bound) for r in rows]
    cols = ("n", "p", "q", "min_gap", "log_bound", "bound", "passed", "n_gaps")
    return Output(None, cols, out, passed=all(r.passed for r in rows))


def cmd_butterfly(cfg):
    _required(cfg, "lambda")
    lam = cfg.get("lambda")
    cache = cache_from_env(cfg.cache_dir, cfg.seed)
    bf = butterfly(lam, cfg.get("q_max"), workers=worker_count(), cache=cache)
    rows = [row for tile in bf.tiles for row in _band_rows(tile)]
    out = Output({"lambda": lam, "tiles": len(bf.tiles), "failures": [list(f) for f in bf.failures]},
                 BAND_COLUMNS, rows, passed=not bf.failures)
    if cfg.get("svg"):
        out.extra_files[cfg.get("svg")] = butterfly_svg(lam, bf.tiles)
    return out


def cmd_dos(cfg):
    lam, p, q = _fraction(cfg)
    atoms = dos_atoms(cache_from_env(cfg.cache_dir, cfg.seed).bands(lam, p, q))
    rows = [{"E": e, "weight": w} for e, w in zip(atoms.positions, atoms.weights)]
    doc = {"positions": list(atoms.positions), "weights": list(atoms.weights),
           "max_band_length": atoms.max_band_length}
    return Output(doc, ("E", "weight"), rows)


# ── commands: m-function ────────────────────────────────────────────

def cmd_mfun(cfg):
    _required(cfg, "lambda", "energy")
    energy = complex(cfg.get("energy"))
    xs = np.array(cfg.get("x") or [0.0], dtype=float)
    res = m_iterate(cfg.get("lambda"), _alpha(cfg), energy, xs, cfg.get("n"))
    rows = [{"x": x, "re_m": m.real, "im_m": m.imag} for x, m in zip(xs, res.value)]
    doc = {"values": rows, "distances": [list(d) for d in res.distances],
           "invariance_residual": res.invariance_residual, "min_imag": res.min_imag,
           "eventually_decreasing": res.eventually_decreasing}
    return Output(doc, ("x", "re_m", "im_m"), rows)


def cmd_reduce(cfg):
    _required(cfg, "lambda", "energy")
    rep = reducibility_probe(cfg.get("lambda"), _alpha(cfg), float(complex(cfg.get("energy")).real),
                             cfg.get("K"), cfg.get("grid"))
    doc = rep.to_json()
    return Output(doc, tuple(doc), [dict(doc, dropped_modes=" ".join(map(str, rep.dropped_modes)))])


def cmd_adecay(cfg):
    _required(cfg, "lambda", "energy")
    phi = rotation_angle_phi(cfg.get("lambda"), _alpha(cfg), float(complex(cfg.get("energy")).real),
                             cfg.get("grid"), K=cfg.get("K"))
    a_val, k_at = decay_exponent_a(phi.series, _alpha(cfg), cfg.get("k_min"))
    doc = {"E": complex(cfg.get("energy")).real, "a_truncated": a_val, "k": k_at,
           "K": phi.series.K, "theta_E": phi.theta, "phi_residual": phi.residual}
    return Output(doc, tuple(doc), [doc])


# ── commands: localization ──────────────────────────────────────────

def _box(cfg):
    box = cfg.get("box")
    return -(box // 2), box - box // 2 - 1


def cmd_localize(cfg):
    _required(cfg, "lambda")
    op = TruncatedOperator(_params(cfg, 0.0), *_box(cfg))
    rows = []
    for i, pair in enumerate(middle_states(op, cfg.get("n_states"))):
        try:
            fit = decay_rate(pair)
            slope, r2 = fit.slope, fit.r2
        except NoDecayDetected as exc:
            slope, r2 = exc.slope, exc.r2
        rows.append({"state_index": i, "E": pair.energy, "slope": slope, "r2": r2,
                     "center": pair.center})
    return Output(None, ("state_index", "E", "slope", "r2", "center"), rows)


def cmd_green(cfg):
    _required(cfg, "lambda", "energy", "x1", "x2")
    window = (cfg.get("x1"), cfg.get("x2"))
    g = green_matrix(_params(cfg), window)
    sites = range(window[0], window[1] + 1)
    rows = [{"x": x, "y": y, "G": g[i, j]} for i, x in enumerate(sites) for j, y in enumerate(sites)]
    return Output({"window": list(window), "G": g.tolist()}, ("x", "y", "G"), rows)


def cmd_regularity(cfg):
    _required(cfg, "lambda", "energy", "y", "k", "m")
    rep = regularity_classify(_params(cfg), cfg.get("y"), cfg.get("k"), cfg.get("m"))
    doc = dict(asdict(rep), regular=rep.regular,
               witness=list(rep.witness) if rep.witness else None)
    row = dict(doc, witness=" ".join(map(str, rep.witness)) if rep.witness else None)
    return Output(doc, tuple(doc), [row])


def cmd_dual(cfg):
    _required(cfg, "lambda")
    lam = cfg.get("lambda")
    params = _params(cfg, 0.0)
    op = TruncatedOperator(params, *_box(cfg))
    states = middle_states(op, cfg.get("state") + 1)
    pair = states[cfg.get("state")]
    dual = build_dual(pair, params.theta, lam, params.alpha, pair.energy, cfg.get("K"))
    doc = duality_report(dual, cfg.get("grid"))
    return Output(doc, tuple(doc), [doc])


# ── verification suites ─────────────────────────────────────────────

def _tally(values, limit):
    values = [float(v) for v in values]
    return {"count": len(values), "passed": sum(v <= limit for v in values),
            "worst": max(values, default=0.0), "limit": limit}


def suite_trig(cfg):
    rng = np.random.default_rng(cfg.seed)
    q_max = cfg.get("q_max") or 500
    devs, bounds = [], []
    for q in range(1, q_max + 1):
        coprime = [p for p in range(1, q) if math.gcd(p, q) == 1] or [1]
        for p in rng.choice(coprime, size=min(5, len(coprime)), replace=False):
            devs.append(rat0_identity(int(p), q).deviation / q)
            rep = log_sin_sum_rational(float(rng.random()), int(p), q)
            bounds.append(0.0 if rep.passed else 1.0)
    checks = {"rat0": _tally(devs, 1e-9), "rat-1": _tally(bounds, 0.5)}
    return {"q_max": q_max}, checks


def suite_chambers(cfg):
    lams = cfg.get("lambdas") or [0.5, 1.0, 2.0]
    q_max = cfg.get("q_max") or 40
    probes = np.arange(64) / 64.0
    counts, overlaps, touch, outside = [], [], [], []
    for lam in lams:
        for p, q in reduced_fractions(q_max):
            e = band_edges(lam, p, q).edges
            counts.append(abs(len(e) - q))
            overlaps.append(max([e[j, 1] - e[j + 1, 0] for j in range(q - 1)], default=-1.0))
            if q % 2 == 0:
                touch.append(max(abs(e[q // 2 - 1, 1]), abs(e[q // 2, 0])))
            eig = periodic_eigenvalues(lam, p, q, probes).ravel()
            inside = (eig[:, None] >= e[None, :, 0] - 1e-8) & (eig[:, None] <= e[None, :, 1] + 1e-8)
            outside.append(int(np.sum(~inside.any(axis=1))))
    checks = {"band_count": _tally(counts, 0), "interior_overlap": _tally(overlaps, 1e-8),
              "even_touching": _tally(touch, 1e-8), "probe_outside": _tally(outside, 0)}
    return {"lambdas": lams, "q_max": q_max}, checks


def suite_cramer(cfg):
    rng = np.random.default_rng(cfg.seed)
    n = cfg.get("n_instances") or 200
    errs = []
    while len(errs) < n:
        lam = rng.uniform(0.1, 3.0)
        bound = 2 + 2 * lam
        params = OperatorParams(lam, rng.random(), rng.random(), rng.uniform(-bound, bound))
        x1 = int(rng.integers(-50, 50))
        window = (x1, x1 + int(rng.integers(0, 30)))
        try:
            g = green_matrix(params, window)
        except NearSingularWindow:
            continue
        dense = np.linalg.inv(TruncatedOperator(params, *window).dense()
                              - params.energy * np.eye(window[1] - window[0] + 1))
        errs.append(np.max(np.abs(g - dense)) / np.max(np.abs(dense)))
    return {"n_instances": n}, {"green_vs_dense": _tally(errs, 1e-8)}


def suite_poi(cfg):
    rng = np.random.default_rng(cfg.seed)
    n = cfg.get("n_instances") or 50
    res = []
    while len(res) < n:
        lam = rng.uniform(0.1, 3.0)
        bound = 2 + 2 * lam
        params = OperatorParams(lam, rng.random(), rng.random(), rng.uniform(-bound, bound))
        x1 = int(rng.integers(-50, 50))
        x2 = x1 + int(rng.integers(0, 30))
        psi = formal_solution(params, x1, rng.normal(), rng.normal(), x2 - x1 + 2)
        try:
            res.append(poisson_residual(params, (x1, x2), psi))
        except NearSingularWindow:
            continue
    return {"n_instances": n}, {"poisson": _tally(res, 1e-8)}


def suite_duality(cfg):
    lams = cfg.get("lambdas") or [2.0, 3.0]
    q_max = cfg.get("q_max") or 20
    dists = [spectra_duality_check(lam, p, q) for lam in lams for p, q in reduced_fractions(q_max)]
    return {"lambdas": lams, "q_max": q_max}, {"hausdorff": _tally(dists, 1e-8)}


def suite_herman(cfg):
    rng = np.random.default_rng(cfg.seed)
    lams = cfg.get("lambdas") or [2.0, 3.0]
    ks = cfg.get("ks") or [10, 20, 50]
    alpha = _expansion("golden", cfg.precision_bits).alpha
    shortfalls = []
    for lam in lams:
        for e in rng.uniform(-(2 + 2 * lam), 2 + 2 * lam, size=cfg.get("n_instances") or 10):
            for k in ks:
                rep = herman_bound_check(OperatorParams(lam, alpha, 0.0, float(e)), k)
                shortfalls.append((rep.bound - rep.integral_estimate) / k)
    return {"lambdas": lams, "ks": ks}, {"herman": _tally(shortfalls, 0.05)}


SUITES: dict[str, Callable] = {"trig": suite_trig, "chambers": suite_chambers,
                               "cramer": suite_cramer, "duality": suite_duality,
                               "herman": suite_herman, "poi": suite_poi}


def cmd_verify(cfg):
    _required(cfg, "suite")
    name = cfg.get("suite")
    if name not in SUITES:
        raise ConfigInvalid(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    parameters, checks = SUITES[name](cfg)
    passed = all(c["passed"] == c["count"] for c in checks.values())
    doc = {"suite": name, "passed": passed, "parameters": dict(parameters, seed=cfg.seed),
           "checks": checks}
    rows = [dict(c, check=k) for k, c in checks.items()]
    return Output(doc, ("check", "count", "passed", "worst", "limit"), rows, passed=passed)


# ── command table ───────────────────────────────────────────────────

@dataclass(frozen=True)
class Command:
    handler: Callable
    params: tuple
    default_format: str = "json"
    help: str = ""


def _p(*args, **kw):
    return Param(*args, **kw)


LAM = _p("lambda", "float", None, "coupling")
ALPHA = _p("alpha", "alpha", "golden", "frequency: expression such as golden, 13/21 or sqrt(2)-1")
THETA = _p("theta", "float", 0.0, "phase")
ENERGY = _p("energy", "complex", None, "energy")
SWEEP = (_p("energies", "floats", None, "comma-separated energies"),
         _p("e_min", "float", None), _p("e_max", "float", None),
         _p("n_energies", "int", 21), _p("steps", "int", 100_000), _p("phases", "int", None))
FRACTION = (LAM, _p("p", "int", None), _p("q", "int", None))

COMMANDS: dict[str, Command] = {
    "cf": Command(cmd_cf, (_p("x", "alpha", "golden"), _p("terms", "int", 20)),
                  help="continued fraction convergents"),
    "beta": Command(cmd_beta, (_p("x", "alpha", "golden"), _p("terms", "int", 20)),
                    help="Liouville exponent estimate"),
    "resonance": Command(cmd_resonance, (_p("x", "alpha", "golden"), _p("terms", "int", 30),
                                         _p("k", "int", None)), help="resonance classification of k"),
    "theta-scan": Command(cmd_theta_scan, (ALPHA, _p("theta", "float", 0.0),
                                           _p("k_max", "int", 1000), _p("s_max", "int", 1000)),
                          help="phase resonance census"),
    "lyapunov": Command(cmd_lyapunov, (LAM, ALPHA) + SWEEP, "csv", "Lyapunov exponent sweep"),
    "rotation": Command(cmd_rotation, (LAM, ALPHA) + SWEEP, "csv", "rotation number sweep"),
    "ids": Command(cmd_ids, (LAM, ALPHA) + SWEEP, "csv", "density of states sweep"),
    "thouless": Command(cmd_thouless, (LAM, ALPHA) + SWEEP + (_p("atoms_p", "int", 55),
                                                             _p("atoms_q", "int", 89)),
                        "csv", "Thouless residual against rational atoms"),
    "bands": Command(cmd_bands, FRACTION, "csv", "bands of a rational frequency"),
    "gaps": Command(cmd_gaps, FRACTION + (_p("alpha_target", "float", None),), "csv",
                    "gap catalog with labels"),
    "gap-bound": Command(cmd_gap_bound, (LAM, ALPHA, _p("n_min", "int", 3), _p("n_max", "int", 8),
                                         _p("eps", "float", 0.1)), "csv", "gap lower bounds"),
    "butterfly": Command(cmd_butterfly, (LAM, _p("q_max", "int", 20), _p("svg", "str", None)),
                         "csv", "all bands up to q_max, optionally as SVG"),
    "dos": Command(cmd_dos, FRACTION, "csv", "density of states atoms"),
    "mfun": Command(cmd_mfun, (LAM, ALPHA, ENERGY, _p("x", "floats", None), _p("n", "int", 500)),
                    help="m-function by Mobius contraction"),
    "reduce": Command(cmd_reduce, (LAM, ALPHA, ENERGY, _p("K", "int", 128), _p("grid", "int", 1024)),
                      help="reducibility probe"),
    "adecay": Command(cmd_adecay, (LAM, ALPHA, ENERGY, _p("K", "int", 256), _p("grid", "int", 1024),
                                   _p("k_min", "int", 8)), help="truncated decay exponent"),
    "localize": Command(cmd_localize, (LAM, ALPHA, THETA, _p("box", "int", 1500),
                                       _p("n_states", "int", 20)), "csv",
                        "eigenvector decay in a box"),
    "green": Command(cmd_green, (LAM, ALPHA, THETA, ENERGY, _p("x1", "int", None),
                                 _p("x2", "int", None)), "csv", "Green function on a window"),
    "regularity": Command(cmd_regularity, (LAM, ALPHA, THETA, ENERGY, _p("y", "int", None),
                                           _p("k", "int", None), _p("m", "float", None)),
                          help="(m,k)-regularity of a site"),
    "verify": Command(cmd_verify, (_p("suite", "str", None, ", ".join(sorted(SUITES))),
                                   _p("q_max", "int", None), _p("n_instances", "int", None),
                                   _p("lambdas", "floats", None), _p("ks", "ints", None)),
                      help="verification suites"),
    "dual": Command(cmd_dual, (LAM, ALPHA, THETA, _p("box", "int", 1500), _p("state", "int", 0),
                               _p("K", "int", 400), _p("grid", "int", 1024)),
                    help="dual cocycle relation for a box eigenvector"),
}


# ── argument parsing ────────────────────────────────────────────────

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigInvalid(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="amo", description="Almost Mathieu operator experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, cmd in COMMANDS.items():
        sp = sub.add_parser(name, help=cmd.help, description=cmd.help)
        sp.add_argument("--config", help="JSON config file; flags override its values")
        sp.add_argument("--out", dest="output_path")
        sp.add_argument("--format", choices=FORMATS)
        sp.add_argument("--precision-bits", dest="precision_bits", type=int)
        sp.add_argument("--cache-dir", dest="cache_dir")
        sp.add_argument("--seed", type=int)
        for p in cmd.params:
            compact = "--" + p.name.replace("_", "")
            flags = (p.flag, compact) if compact != p.flag else (p.flag,)
            sp.add_argument(*flags, dest=p.name, default=None, help=p.help)
    return parser


def parse_config(argv) -> ExperimentConfig:
    argv = list(argv)
    if argv and argv[0] == "--config" and len(argv) >= 2:
        data = _read_config(argv[1])
        argv = [data.get("command", "")] + argv
    if not argv or argv[0].startswith("-") and argv[0] not in ("-h", "--help", "--version"):
        raise UnknownCommand("missing command")
    if argv[0] not in COMMANDS and not argv[0].startswith("-"):
        raise UnknownCommand(f"unknown command {argv[0]!r}")
    ns = vars(build_parser().parse_args(argv))
    name = ns.pop("command")
    if name is None:
        raise UnknownCommand("missing command")
    data = _read_config(ns.pop("config")) if ns.get("config") else {"command": name}
    ns.pop("config", None)
    if data.get("command") != name:
        raise ConfigInvalid(f"config command {data.get('command')!r} does not match {name!r}")
    data.update({k: v for k, v in ns.items() if v is not None})
    return ExperimentConfig.from_json(data)


def _read_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid("config must be a JSON object")
    return data


# ── running ─────────────────────────────────────────────────────────

def render(out: Output, fmt_name: str) -> str:
    if fmt_name == "csv":
        if out.columns is None:
            raise ConfigInvalid("this command has no CSV form")
        return to_csv_text(out.columns, out.rows or [])
    doc = out.document if out.document is not None else {"rows": out.rows}
    return to_json_text(doc) + "\n"


def execute(cfg: ExperimentConfig) -> Output:
    return COMMANDS[cfg.command].handler(cfg)


def run(argv=None, stdout=None) -> int:
    """Run one command; 0 on success, 1 on invalid input, 2 on numerical failure."""
    stdout = sys.stdout if stdout is None else stdout
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
        out = execute(cfg)
        text = render(out, cfg.format or COMMANDS[cfg.command].default_format)
        if cfg.output_path:
            Path(cfg.output_path).write_text(text)
        else:
            stdout.write(text)
        for path, content in out.extra_files.items():
            Path(path).write_text(content)
        return EXIT_OK if out.passed else EXIT_NUMERIC
    except SystemExit as exc:   # --help and --version
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"amo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except AmoError as exc:
        print(f"amo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run())
