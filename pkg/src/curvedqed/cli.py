"""Command-line front end: job configs, module pipelines and table output."""
from __future__ import annotations

import argparse
import configparser
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import krein, ope, parametrix, quantization, schwinger, wick
from .errors import ConfigError, CurvedQEDError
from .expr import parse_sigma
from .geometry import ConformalGeometry, GridSigma, world_function

SCHEMA_VERSION = 1
JOB_KINDS = ("propagator", "ope", "wick", "krein", "schwinger", "verify")
FORMATS = ("csv", "json")

__all__ = ["JobConfig", "parse_config", "parse_sigma", "run", "main"]

# job-specific keys and their defaults, all kept as text
JOB_DEFAULTS = {
    "propagator": {"route": "hankel", "order": "4", "radii": "", "points": ""},
    "ope": {"order": "4", "points": "0.2 0.05 0.0 0.0", "normalization": "sigma"},
    "wick": {"left": "x:2", "right": "y:2", "ordering": "omega"},
    "krein": {"n_basis": "12", "width": "0.5", "sign": "1", "nodes": "257", "lo": "-4", "hi": "4"},
    "schwinger": {"k": "1.0", "eps_ladder": "0.0625 0.03125 0.015625 0.0078125 0.00390625",
                  "rho": "1 2 4 8 16", "theta": "0.0", "n_max": "3"},
    "verify": {},
}


# ----------------------------------------------------------------------
# configuration


@dataclass
class JobConfig:
    kind: str
    sigma: str = "0"
    grid: str = ""
    m: float = 1.0
    xi: float = 0.0
    M2: float = 1.0
    eps: float = 1e-10
    output: str = ""
    format: str = "csv"
    knobs: dict = field(default_factory=dict)

    def geometry(self) -> ConformalGeometry:
        if self.grid:
            return ConformalGeometry(GridSigma.from_file(self.grid))
        return ConformalGeometry.from_expression(self.sigma)

    def params(self) -> parametrix.ModelParameters:
        return parametrix.ModelParameters(m=self.m, xi=self.xi, M2=self.M2, eps=self.eps)

    def to_sections(self) -> dict:
        """Config echo; ``parse_sections`` of this dict reproduces the config."""
        return {
            "job": {"schema": str(SCHEMA_VERSION), "kind": self.kind},
            "geometry": {"sigma": self.sigma, "grid": self.grid},
            "model": {"m": repr(self.m), "xi": repr(self.xi), "M2": repr(self.M2), "eps": repr(self.eps)},
            "output": {"path": self.output, "format": self.format},
            self.kind: dict(self.knobs),
        }


def _float(sections, section, key, default):
    text = sections.get(section, {}).get(key)
    if text is None or text == "":
        return default
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{section}.{key}", f"expected a number, got {text!r}") from None


def parse_sections(sections: dict, kind: str | None = None) -> JobConfig:
    sections = {s: dict(v) for s, v in sections.items()}
    job = sections.get("job", {})
    schema = job.get("schema", str(SCHEMA_VERSION))
    if schema != str(SCHEMA_VERSION):
        raise ConfigError("job.schema", f"unsupported schema version {schema!r}")
    kind = kind or job.get("kind")
    if kind not in JOB_KINDS:
        raise ConfigError("job.kind", f"expected one of {', '.join(JOB_KINDS)}, got {kind!r}")
    geo = sections.get("geometry", {})
    sigma, grid = geo.get("sigma", "0"), geo.get("grid", "")
    try:
        parse_sigma(sigma)
    except CurvedQEDError as exc:
        raise ConfigError("geometry.sigma", str(exc)) from None
    if grid and not Path(grid).is_file():
        raise ConfigError("geometry.grid", f"file {grid!r} does not exist")
    out = sections.get("output", {})
    fmt = out.get("format", "csv")
    if fmt not in FORMATS:
        raise ConfigError("output.format", f"expected csv or json, got {fmt!r}")
    known = {"job": {"schema", "kind"}, "geometry": {"sigma", "grid"}, "model": {"m", "xi", "M2", "eps"},
             "output": {"path", "format"}}
    for sec, keys in known.items():
        for key in sections.get(sec, {}):
            if key not in keys:
                raise ConfigError(f"{sec}.{key}", "unknown key")
    knobs = dict(JOB_DEFAULTS[kind])
    for key, value in sections.get(kind, {}).items():
        if key not in knobs:
            raise ConfigError(f"{kind}.{key}", "unknown key")
        knobs[key] = value
    cfg = JobConfig(
        kind=kind, sigma=sigma, grid=grid,
        m=_float(sections, "model", "m", 1.0), xi=_float(sections, "model", "xi", 0.0),
        M2=_float(sections, "model", "M2", 1.0), eps=_float(sections, "model", "eps", 1e-10),
        output=out.get("path", ""), format=fmt, knobs=knobs,
    )
    try:
        cfg.params()
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None
    return cfg


def parse_config(text: str, kind: str | None = None) -> JobConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    return parse_sections({s: dict(parser[s]) for s in parser.sections()}, kind)


def _numbers(cfg, key, count=None):
    text = cfg.knobs.get(key, "")
    try:
        vals = [float(v) for v in text.replace(",", " ").replace(";", " ").split()]
    except ValueError:
        raise ConfigError(f"{cfg.kind}.{key}", f"expected numbers, got {text!r}") from None
    if count and len(vals) % count:
        raise ConfigError(f"{cfg.kind}.{key}", f"expected groups of {count} numbers")
    return vals


def _int(cfg, key):
    try:
        return int(cfg.knobs[key])
    except ValueError:
        raise ConfigError(f"{cfg.kind}.{key}", f"expected an integer, got {cfg.knobs[key]!r}") from None


# ----------------------------------------------------------------------
# output


def format_number(x) -> str:
    return format(float(x), ".17g")


def to_json(obj) -> str:
    """JSON text with every float written at 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, Fraction):
        return json.dumps(str(obj))
    if isinstance(obj, (float, np.floating)):
        return format_number(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, complex):
        return to_json({"re": obj.real, "im": obj.imag})
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(format_number(v) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")
    return buf.getvalue()


@dataclass
class JobResult:
    header: list
    rows: list
    summary: dict
    ok: bool = True


# ----------------------------------------------------------------------
# jobs


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _pairs(cfg):
    pts = _numbers(cfg, "points", 4)
    pairs = [((pts[i], pts[i + 1]), (pts[i + 2], pts[i + 3])) for i in range(0, len(pts), 4)]
    pairs += [((0.0, r), (0.0, 0.0)) for r in _numbers(cfg, "radii")]
    if not pairs:
        pairs = [((0.0, r), (0.0, 0.0)) for r in np.linspace(0.05, 1.0, 20)]
    return pairs


def run_propagator(cfg: JobConfig, threads=1, seed=0) -> JobResult:
    geom, params = cfg.geometry(), cfg.params()
    order = _int(cfg, "order")
    route = cfg.knobs["route"]
    routes = {
        "hankel": lambda x, xp: parametrix.feynman_hankel(geom, params, x, xp, order),
        "mass_derivative": lambda x, xp: parametrix.feynman_mass_derivative(geom, params, x, xp, order),
        "hadamard": lambda x, xp: parametrix.calibrated_kernel(geom, params, x, xp, order),
    }
    if route not in routes:
        raise ConfigError("propagator.route", f"expected one of {', '.join(routes)}, got {route!r}")
    fn = routes[route]

    def row(pair):
        x, xp = pair
        return [x[0], x[1], xp[0], xp[1], world_function(geom, x, xp).value, *_reim(fn(x, xp))]

    rows = _map(row, _pairs(cfg), threads)
    cal = parametrix.anchor_calibration()
    summary = {"N": order, "m": params.m, "M2": params.M2, "route": route,
               "calibration": {"scale": cal.scale, "shift": cal.shift}}
    return JobResult(["x0", "x1", "x0p", "x1p", "sigma_bar", "re", "im"], rows, summary)


def _reim(z):
    z = complex(z)
    return [z.real, z.imag]


def run_ope(cfg: JobConfig, threads=1, seed=0) -> JobResult:
    geom, params = cfg.geometry(), cfg.params()
    kernel = ope.gamma_kernel_for(geom, params, _int(cfg, "order"))
    pts = _numbers(cfg, "points", 4)
    pairs = [((pts[i], pts[i + 1]), (pts[i + 2], pts[i + 3])) for i in range(0, len(pts), 4)]
    norm = cfg.knobs["normalization"]
    factor = ope.normalization_factor(params, 2, 0, norm)

    def rows_for(pair):
        G = kernel(*pair) * factor
        return [[*pair[0], *pair[1], mu, nu, *_reim(G[mu, nu])] for mu in range(2) for nu in range(2)]

    rows = [r for block in _map(rows_for, pairs, threads) for r in block]
    defects = [ope.symmetry_defect(kernel, *pair) for pair in pairs]
    summary = {"normalization": norm, "symmetry_defect": max(defects) if defects else 0.0}
    return JobResult(["x1_0", "x1_1", "x2_0", "x2_1", "mu", "nu", "re", "im"], rows, summary)


def _monomial(cfg, key, ordering):
    slots = []
    for token in cfg.knobs[key].split():
        point, _, power = token.partition(":")
        try:
            slots.append(wick.slot(point, int(power or 1)))
        except ValueError:
            raise ConfigError(f"wick.{key}", f"bad slot {token!r}; expected point:power") from None
    if not slots:
        raise ConfigError(f"wick.{key}", "empty monomial")
    return wick.WickMonomial(tuple(slots), ordering)


def run_wick(cfg: JobConfig, threads=1, seed=0) -> JobResult:
    ordering = cfg.knobs["ordering"]
    if ordering not in ("omega", "H"):
        raise ConfigError("wick.ordering", f"expected omega or H, got {ordering!r}")
    product = wick.wick_product(_monomial(cfg, "left", ordering), _monomial(cfg, "right", ordering))
    rows = []
    for (kernels, mono), coeff in sorted(product.terms.items(), key=lambda t: (str(t[0][1]), str(t[0][0]))):
        pairs = " ".join(f"w({a[0]}({a[1]}),{b[0]}({b[1]}))" for a, b in kernels)
        rows.append([str(coeff), pairs or "1", str(mono) or "1"])
    return JobResult(["coefficient", "contractions", "monomial"], rows, {"text": product.to_text()})


def run_krein(cfg: JobConfig, threads=1, seed=0) -> JobResult:
    try:
        model = krein.massless_model(
            n_basis=_int(cfg, "n_basis"), width=float(cfg.knobs["width"]), sign=_int(cfg, "sign"),
            nodes=_int(cfg, "nodes"), lo=float(cfg.knobs["lo"]), hi=float(cfg.knobs["hi"]), eps=cfg.eps,
        )
    except ValueError as exc:
        raise ConfigError("krein", str(exc)) from None
    G = model.gram("positive")
    rows = [[i, j, *_reim(G[i, j])] for i in range(model.dim) for j in range(model.dim)]
    summary = json.loads(model.to_json())
    return JobResult(["row", "col", "re", "im"], rows, summary)


def _schwinger_checks(cfg: JobConfig, seed=0):
    params = cfg.params()
    if params.m <= 0:
        raise ConfigError("model.m", "the solution needs a positive mass")
    fields = schwinger.assemble(params, cfg.geometry())
    flat = schwinger.assemble(params)
    rec = schwinger.verification_record
    out = []
    waves = [schwinger.plane_wave_sample(k, flat.m2) for k in (1, 2, 3)]
    pr = schwinger.proca_residual(flat, waves).quadratic
    out.append(rec("proca_plane_wave", {"k": [1, 2, 3]}, pr, 1e-8, pr < 1e-8))
    off = schwinger.proca_residual(flat, [schwinger.plane_wave_sample(1, 1.5 * flat.m2)]).quadratic
    out.append(rec("proca_mass_uniqueness", {"mass2_ratio": 1.5}, off, 1e-2, off >= 1e-2))
    rng = np.random.default_rng(seed)
    mode = schwinger.PlaneWaveMode(float(cfg.knobs.get("k", 1.0)), flat.m2)
    worst = 0.0
    for _ in range(5):
        x = tuple(rng.uniform(-1, 1, 2))
        r = schwinger.f_squared_identity(flat, x, mode.value(x))
        worst = max(worst, abs(r["lhs"] - r["rhs"]))
    out.append(rec("f_squared_identity", {"points": 5}, worst, 1e-12, worst < 1e-12))
    sym = all(schwinger.zeta_exponent_symbolic(n, n)[0] == 0 for n in range(1, 4))
    out.append(rec("zeta_exponent_cancellation", {"n_max": 3}, float(not sym), 0.0, sym))
    merge = max(abs(schwinger.zeta_correlator([(0.0, 0.0)], [(0.0, r)]) - 1) for r in 2.0 ** -np.arange(4, 20))
    out.append(rec("zeta_merge_limit", {}, merge, 1e-6, merge < 1e-6))
    eps = _numbers(cfg, "eps_ladder")
    st = schwinger.stress_tensor(flat, mode, (0.0, 0.0), eps)
    T00_oracle = mode.omega / mode.length
    dev = abs(st.value[0, 0] - T00_oracle) / T00_oracle
    out.append(rec("stress_tensor_one_mode", {"k": mode.k, "eps": eps}, dev, 1e-2, dev < 1e-2))
    probe = schwinger.ChargeProbe(rho=tuple(_numbers(cfg, "rho")))
    decay = schwinger.charge_decay(probe, params)
    out.append(rec("charge_decay_exponent", decay.to_dict(), decay.exponent, 0.1, abs(decay.exponent + 2.0) <= 0.1))
    control = schwinger.charge_decay(probe, params, mass=0.0)
    out.append(rec("charge_decay_massless_control", control.to_dict(), control.exponent, -0.5, not control.decays))
    th = schwinger.theta_state(float(cfg.knobs.get("theta", 0.0)), int(cfg.knobs.get("n_max", 3)))
    tdev = float(np.max(np.abs(th.zeta_eigenvalue() - np.exp(-2j * th.theta))))
    out.append(rec("theta_zeta_eigenvalue", {"theta": th.theta}, tdev, 1e-12, tdev < 1e-12))
    if not fields.geom.is_flat:
        try:
            modes = schwinger.static_modes(fields.geom, fields.m2, nodes=128)
        except CurvedQEDError as exc:
            out.append(rec("curved_field_equation", {}, str(exc), None, False))
        else:
            q = schwinger.field_equation_residual(fields, modes)
            p = schwinger.proca_residual(fields, modes)
            # the Proca residual is a first derivative of the field-equation residual
            h = modes[0].spacing
            d1 = float(np.abs(schwinger.central_weights(1, 8)[1]).sum() / h)
            ratio = max(per["proca"] / (math.sqrt(math.pi) / fields.e * float(np.max(np.exp(-2 * m.sigma)))
                                        * max(d1, m.omega) * max(per["quadratic"], 1e-300))
                        for m, per in zip(modes, p.per_mode))
            out.append(rec("curved_proca_tracks_field_equation", q.to_dict(), ratio, 1.0, ratio <= 1.0 + 1e-8))
    return out


def run_schwinger(cfg: JobConfig, threads=1, seed=0) -> JobResult:
    checks = _schwinger_checks(cfg, seed)
    rows = [[c["check"], c["value"] if isinstance(c["value"], float) else str(c["value"]), c["pass"]]
            for c in checks]
    return JobResult(["check", "value", "pass"], rows, {"checks": checks}, all(c["pass"] for c in checks))


def _verify_checks(cfg: JobConfig, seed=0):
    rec = schwinger.verification_record
    rng = np.random.default_rng(seed)
    flat = ConformalGeometry.flat()
    out = []
    cal = parametrix.anchor_calibration()
    out.append(rec("propagator_anchor", {"grid": "10x10"}, cal.max_relative_deviation, 1e-8,
                   cal.max_relative_deviation < 1e-8))
    p1 = parametrix.ModelParameters(m=1.0)
    from scipy.special import hankel2
    dev = max(abs(parametrix.feynman_hankel(flat, p1, (0.0, r), (0.0, 0.0)) - 0.25 * hankel2(0, r))
              / abs(0.25 * hankel2(0, r)) for r in np.linspace(0.1, 2.0, 20))
    out.append(rec("hankel_consistency", {"radii": 20}, dev, 1e-8, dev < 1e-8))
    ds = parametrix.ds_coefficients(flat, p1, 4)
    x, xp = (0.1, 0.3), (0.0, 0.0)
    dsdev = max(abs(ds.Abar[n](x, xp) - (-1.0) ** n / math.factorial(n)) for n in range(5))
    out.append(rec("flat_ds_coefficients", {"m": 1.0}, dsdev, 1e-12, dsdev < 1e-12))
    # Wick products against quasi-free pairings
    distinct = quantization.QuasiFreeState(lambda a, b: 0.0 if a[0] == b[0] else 1.0)
    worst = 0.0
    for n, m in ((1, 1), (2, 2), (3, 1), (2, 4), (3, 3)):
        prod = wick.wick_product(wick.WickMonomial((wick.slot("a", n),)), wick.WickMonomial((wick.slot("b", m),)))
        vev = wick.vacuum_expectation(prod, lambda a, b: 1.0)
        args = [("a", i) for i in range(n)] + [("b", i) for i in range(m)]
        worst = max(worst, abs(vev - quantization.quasifree_npoint(distinct, args)))
    out.append(rec("wick_vev_matches_pairings", {}, worst, 0.0, worst == 0.0))
    zs = rng.normal(size=10) * 0.5
    vdev = 0.0
    for z in zs:
        k = wick.TwoPointKernel(lambda a, b, z=z: z)
        series = wick.vertex_series(1.0, 1.0, k, (0.0,), (1.0,), 12)
        allowed = wick.series_tail_bound(z, 12) + 1e-14 * math.exp(z)
        vdev = max(vdev, abs(series - math.exp(z)) / allowed)
    out.append(rec("vertex_series_within_tail", {}, vdev, 1.0, vdev <= 1.0))
    for sign in (1, -1):
        model = krein.massless_model(sign=sign)
        eta = model.metric_operator()
        gap = float(np.max(np.abs(model.gram("positive") @ eta - model.gram("indefinite"))))
        out.append(rec(f"krein_metric_sign_{sign}", {}, gap, 1e-10, gap < 1e-10
                       and np.allclose(eta @ eta, np.eye(model.dim))))
    space = quantization.transform_mode_space(
        quantization.mode_space_from_split(np.diag(rng.uniform(0.5, 2.0, 3))), np.eye(6) + 0.1 * rng.normal(size=(6, 6)))
    st = quantization.complex_structure(space)
    jdev = float(np.max(np.abs(st.J @ st.J + np.eye(6))))
    out.append(rec("complex_structure_square", {"dim": 6}, jdev, 1e-10, jdev < 1e-10))
    params = cfg.params() if cfg.m > 0 else p1
    kernel = ope.gamma_kernel_for(flat, params, 4)
    sdef = ope.symmetry_defect(kernel, (0.2, 0.05), (0.0, 0.0))
    out.append(rec("ope_symmetry", {}, sdef, 1e-10, sdef < 1e-10))
    out.extend(_schwinger_checks(JobConfig("schwinger", m=params.m, knobs=dict(JOB_DEFAULTS["schwinger"])), seed))
    return out


def run_verify(cfg: JobConfig, threads=1, seed=0) -> JobResult:
    checks = _verify_checks(cfg, seed)
    rows = [[c["check"], c["value"] if isinstance(c["value"], float) else str(c["value"]), c["pass"]]
            for c in checks]
    return JobResult(["check", "value", "pass"], rows, {"checks": checks}, all(c["pass"] for c in checks))


RUNNERS = {"propagator": run_propagator, "ope": run_ope, "wick": run_wick, "krein": run_krein,
           "schwinger": run_schwinger, "verify": run_verify}


def run(cfg: JobConfig, out_path=None, fmt=None, threads=1, seed=0, stdout=None) -> int:
    """Execute a job and write its table; returns the exit status."""
    result = RUNNERS[cfg.kind](cfg, threads, seed)
    fmt = fmt or cfg.format
    if fmt == "csv":
        text = to_csv(result.header, result.rows)
    else:
        text = to_json({"config": cfg.to_sections(), "summary": result.summary,
                        "columns": result.header, "rows": result.rows, "pass": result.ok}) + "\n"
    path = out_path or cfg.output
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        (stdout or sys.stdout).write(text)
    return 0 if result.ok else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="curvedqed", description=__doc__)
    ap.add_argument("kind", choices=JOB_KINDS)
    ap.add_argument("--config", help="INI job file")
    ap.add_argument("--out", help="output path (default: standard output)")
    ap.add_argument("--format", choices=FORMATS)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--sigma", help="conformal factor expression (overrides the config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text, args.kind)
        if args.sigma is not None:
            sections = cfg.to_sections()
            sections["geometry"]["sigma"] = args.sigma
            cfg = parse_sections(sections, args.kind)
    except ConfigError as exc:
        sys.stderr.write(json.dumps({"error": "ConfigError", "key": exc.key, "message": str(exc)}) + "\n")
        return 2
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "ConfigError", "key": "--config", "message": str(exc)}) + "\n")
        return 2
    try:
        return run(cfg, args.out, args.format, args.threads, args.seed)
    except ConfigError as exc:
        sys.stderr.write(json.dumps({"error": "ConfigError", "key": exc.key, "message": str(exc)}) + "\n")
        return 2
    except (CurvedQEDError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
