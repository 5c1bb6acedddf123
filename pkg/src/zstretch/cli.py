"""Command-line front end.

Config files are INI style::

    [optics]   lambda, n1, n2, kappa0, kappa1
    [lens]     R, Z, R1, taper_margin
    [source]   kind, beta0, z0, wavenumber
    [grid]     M, N
    [post]     length, steps
    [output]   snapshot_stride, binary, carrier
    [run]      strict

Exit codes: 0 success, 2 config error, 3 stability violation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
from dataclasses import dataclass, replace
import io
import json
import logging
import math
import os
from pathlib import Path
import re
import struct
import sys
import tempfile
import time
from typing import Optional

import numpy as np

from . import __version__, stability, verify
from .geometry import DEFAULT_TAPER_MARGIN, GeometryError, LensGeometry, derive_aperture
from .physics import GaussianSource, OpticalParameters, wavenumbers
from .pipeline import (
    NumericalFailure,
    SimulationConfig,
    StabilityViolation,
    find_focus,
    on_axis_trace,
    run_simulation,
)

log = logging.getLogger("zstretch")

EXIT_OK, EXIT_CONFIG, EXIT_STABILITY, EXIT_NUMERICAL = 0, 2, 3, 4
SNAPSHOT_MAGIC = b"BPF1"


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    return int(text.strip())


def _str(text: str) -> str:
    return text.strip()


SCHEMA = {
    "optics": {"lambda": float, "n1": float, "n2": float, "kappa0": float, "kappa1": float},
    "lens": {"R": float, "Z": float, "R1": float, "taper_margin": float},
    "source": {"kind": _str, "beta0": float, "z0": float, "wavenumber": _str},
    "grid": {"M": _int, "N": _int},
    "post": {"length": float, "steps": _int},
    "output": {"snapshot_stride": _int, "binary": _bool, "carrier": _bool},
    "run": {"strict": _bool},
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^([^\s=:#;\[][^=:]*?)\s*[=:]")


@dataclass
class RunConfig:
    """Everything a config file resolves to."""

    sim: SimulationConfig
    taper_margin: float = DEFAULT_TAPER_MARGIN
    binary: bool = False
    carrier: bool = False


def _locate(text: str) -> dict:
    """Line numbers of section headers (section, None) and keys (section, key)."""
    where, section = {}, None
    for lineno, line in enumerate(text.splitlines(), 1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), lineno)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip()), lineno)
    return where


def _read_sections(text: str) -> tuple[dict, dict]:
    cp = configparser.ConfigParser(interpolation=None, default_section="\x00none")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("expected a [section] header", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"cannot parse {line.strip()!r}", lineno) from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ConfigError(exc.message.split(": ", 1)[-1], exc.lineno) from None
    where = _locate(text)
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", where.get((section, None)))
        for key, raw in cp.items(section):
            line = where.get((section, key))
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line)
            try:
                values[(section, key)] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}", line) from None
    return values, where


def _optics(values: dict) -> OpticalParameters:
    n1, n2 = values[("optics", "n1")], values[("optics", "n2")]
    lam = values.get(("optics", "lambda"))
    k0, k1 = values.get(("optics", "kappa0")), values.get(("optics", "kappa1"))
    if k0 is not None and k1 is None:
        raise ValueError("kappa0 requires kappa1")
    if k1 is None:
        if lam is None:
            raise ValueError("either lambda or kappa1 is required in [optics]")
        return wavenumbers(lam, n1, n2)
    base = OpticalParameters.from_kappa1(k1, n1, n2)
    if k0 is not None:
        if not k0 > 0 or abs(k1 / k0 - n2 / n1) > 1e-12 * (n2 / n1):
            raise ValueError("kappa1/kappa0 must equal n2/n1")
        base = replace(base, kappa0=k0)
    if lam is not None:
        if not lam > 0:
            raise ValueError("lambda must be positive")
        base = replace(base, wavelength=lam)
    return base


def config_from_text(text: str) -> RunConfig:
    values, where = _read_sections(text)

    def need(section, key):
        if (section, key) not in values:
            raise ConfigError(f"missing required key {key!r} in [{section}]")
        return values[(section, key)]

    def get(section, key, default=None):
        return values.get((section, key), default)

    for key in ("n1", "n2", "R", "Z", "M", "N"):
        need("lens" if key in ("R", "Z") else "grid" if key in ("M", "N") else "optics", key)

    def fail(section, exc):
        raise ConfigError(f"[{section}] {exc}", where.get((section, None))) from None

    try:
        optics = _optics(values)
    except ValueError as exc:
        fail("optics", exc)

    R, Z = need("lens", "R"), need("lens", "Z")
    margin = get("lens", "taper_margin", DEFAULT_TAPER_MARGIN)
    try:
        if not 0 <= margin < 1:
            raise GeometryError("taper_margin must lie in [0, 1)")
        R1 = get("lens", "R1")
        if R1 is None:
            R1 = derive_aperture(R, Z) * (1.0 - margin)
        geom = LensGeometry(R, Z, R1)
    except GeometryError as exc:
        msg = str(exc)
        fail("lens", msg if msg.startswith("LensGeometry") else f"LensGeometry: {msg}")

    try:
        source = GaussianSource(
            beta0=get("source", "beta0", geom.R1 / 4),
            z0=get("source", "z0", math.inf),
            kind=get("source", "kind", "gaussian"),
        )
    except ValueError as exc:
        fail("source", exc)

    try:
        sim = SimulationConfig(
            optics=optics,
            source=source,
            geom=geom,
            M=need("grid", "M"),
            N=need("grid", "N"),
            post_length=get("post", "length"),
            post_steps=get("post", "steps"),
            source_wavenumber=get("source", "wavenumber", "kappa0"),
            snapshot_stride=get("output", "snapshot_stride", 0),
            strict=get("run", "strict", False),
        )
        sim.lens_grid, sim.post_grid
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(
        sim, taper_margin=margin, binary=get("output", "binary", False),
        carrier=get("output", "carrier", False),
    )


def parse_config(path) -> RunConfig:
    """Read and resolve a config file; raises ConfigError."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return config_from_text(text)


def _num(x) -> str:
    return repr(float(x))


def echo_config(cfg: RunConfig) -> str:
    """Fully resolved config as INI text; parsing it back reproduces it exactly."""
    s = cfg.sim
    o, g, src = s.optics, s.geom, s.source
    sections = [
        ("optics", [("lambda", _num(o.wavelength)), ("n1", _num(o.n1)), ("n2", _num(o.n2)),
                    ("kappa0", _num(o.kappa0)), ("kappa1", _num(o.kappa1))]),
        ("lens", [("R", _num(g.R)), ("Z", _num(g.Z)), ("R1", _num(g.R1)),
                  ("taper_margin", _num(cfg.taper_margin))]),
        ("source", [("kind", src.kind), ("beta0", _num(src.beta0)), ("z0", _num(src.z0)),
                    ("wavenumber", s.source_wavenumber)]),
        ("grid", [("M", str(s.M)), ("N", str(s.N))]),
        ("post", [("length", _num(s.post_length)), ("steps", str(s.post_steps))]),
        ("output", [("snapshot_stride", str(s.snapshot_stride)),
                    ("binary", str(cfg.binary).lower()), ("carrier", str(cfg.carrier).lower())]),
        ("run", [("strict", str(s.strict).lower())]),
    ]
    out = io.StringIO()
    for i, (name, items) in enumerate(sections):
        if i:
            out.write("\n")
        out.write(f"[{name}]\n")
        for k, v in items:
            out.write(f"{k} = {v}\n")
    return out.getvalue()


# ------------------------------------------------------------------ writers


def _write_atomic(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header: str, columns) -> bytes:
    buf = io.StringIO()
    np.savetxt(buf, np.column_stack(columns), fmt="%.17g", delimiter=",",
               header=header, comments="")
    return buf.getvalue().encode("ascii")


def snapshot_bytes(r, u, binary: bool) -> bytes:
    u = np.asarray(u, dtype=complex)
    if binary:
        pairs = np.empty(2 * u.size, dtype="<f8")
        pairs[0::2], pairs[1::2] = u.real, u.imag
        return SNAPSHOT_MAGIC + struct.pack("<Q", u.size) + pairs.tobytes()
    return _csv("r,re,im", [r, u.real, u.imag])


def read_snapshot(path) -> np.ndarray:
    """Load a snapshot file written by ``run`` (text or binary)."""
    data = Path(path).read_bytes()
    if data[:4] == SNAPSHOT_MAGIC:
        (n,) = struct.unpack("<Q", data[4:12])
        v = np.frombuffer(data[12:], dtype="<f8")
        if v.size != 2 * n:
            raise ValueError("truncated snapshot file")
        return v[0::2] + 1j * v[1::2]
    a = np.loadtxt(io.StringIO(data.decode("ascii")), delimiter=",", skiprows=1, ndmin=2)
    return a[:, 1] + 1j * a[:, 2]


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def carrier_phase(z, cfg: SimulationConfig) -> np.ndarray:
    """Accumulated on-axis carrier phase: kappa1 inside the lens, kappa0 after."""
    z = np.asarray(z, dtype=float)
    Z = cfg.geom.Z
    return np.where(z <= Z, cfg.optics.kappa1 * z, cfg.optics.kappa1 * Z + cfg.optics.kappa0 * (z - Z))


def cmd_run(cfg: RunConfig, out: Path, initial=None) -> dict:
    """Run the simulation and write trace, snapshots and manifest under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    sim = cfg.sim
    t0 = time.perf_counter()
    rec = run_simulation(sim, initial=initial)
    t_run = time.perf_counter() - t0

    files = {}
    trace = on_axis_trace(rec)
    _write_atomic(out / "trace.csv", _csv("z,re,im,intensity", trace.T))
    files["trace"] = "trace.csv"
    if cfg.carrier:
        full = rec.axis * np.exp(-1j * carrier_phase(rec.z, sim))
        _write_atomic(out / "trace_carrier.csv", _csv("z,re,im", [rec.z, full.real, full.imag]))
        files["trace_carrier"] = "trace_carrier.csv"

    snaps = []
    if rec.lens_snapshots or rec.post_snapshots:
        (out / "snapshots").mkdir(exist_ok=True)
    ext = "bin" if cfg.binary else "csv"
    r = sim.lens_grid.r
    for n, u in rec.lens_snapshots:
        name = f"snapshots/lens_{n:07d}.{ext}"
        _write_atomic(out / name, snapshot_bytes(r, u, cfg.binary))
        snaps.append({"file": name, "segment": "lens", "step": n, "zeta": n * sim.lens_grid.tau})
    for k, (z, u) in enumerate(rec.post_snapshots):
        name = f"snapshots/post_{k:07d}.{ext}"
        _write_atomic(out / name, snapshot_bytes(r, u, cfg.binary))
        snaps.append({"file": name, "segment": "post-lens", "z": z})
    _write_atomic(out / "config.ini", echo_config(cfg).encode("utf-8"))
    files["config"] = "config.ini"

    focus = find_focus(rec.z, rec.intensity)
    manifest = {
        "version": __version__,
        "config": echo_config(cfg),
        "files": files,
        "snapshots": snaps,
        "timings_s": {"simulation": t_run, "total": time.perf_counter() - t0},
        "stability": {
            "h": rec.h,
            "h_min": rec.h_min,
            "M": sim.M,
            "M_max": int(rec.M_max),
            "lens_condition": bool(rec.lens_condition),
        },
        "dropped_term_bound": _finite_or_none(rec.dropped_term_bound),
        "focus": {
            "z_f": focus.z,
            "peak_intensity": focus.peak,
            "entry_intensity": float(rec.intensity[0]),
            "at_endpoint": focus.at_endpoint,
            "geometric_estimate": sim.geometric_focus(),
        },
        "trace_rows": int(rec.z.size),
    }
    _write_atomic(out / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode("utf-8"))
    return manifest


def _report_text(rep: stability.StabilityReport) -> str:
    def fmt(v):
        if isinstance(v, (bool, np.bool_)):
            return str(bool(v)).lower()
        if v is None:
            return "-"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return "%.17g" % v

    return "\t".join(stability.StabilityReport.FIELDS) + "\n" + "\t".join(
        fmt(v) for v in rep.as_row()
    ) + "\n"


def cmd_stability(cfg: RunConfig, homogeneous: bool = False, samples: int = 3, stream=None):
    """Print a stability report; returns the exit code."""
    stream = stream or sys.stdout
    sim = cfg.sim
    lg = sim.lens_grid
    if homogeneous:
        rep = stability.homogeneous_report(sim.optics.kappa0, sim.M, lg.h, sim.post_grid.tau,
                                           max_iter=2000)
    else:
        rep = stability.lens_report(sim.geom, sim.optics.kappa1, sim.M, sim.N, samples=samples,
                                    max_iter=2000)
    stream.write(_report_text(rep))
    if not rep.converged:
        stream.write("# spectral radius from unconverged power iteration (best estimate)\n")
    if not rep.lens_condition:
        stream.write(f"# h = {rep.h:.6g} <= h_min = {rep.h_min:.6g}: in-lens condition fails\n")
    return EXIT_OK if (rep.verdict and rep.lens_condition) else EXIT_STABILITY


def cmd_maxgrid(geom: LensGeometry, kappa: float, stream=None) -> int:
    stream = stream or sys.stdout
    hm = stability.h_min(geom, kappa)
    m = stability.max_M(geom, kappa)
    stream.write("R\tZ\tR1\tkappa\th_min\tM_max\n")
    stream.write(f"{geom.R!r}\t{geom.Z!r}\t{geom.R1!r}\t{kappa!r}\t{hm:.17g}\t{m}\n")
    return m


def cmd_table31(R=1.0, Z_list=stability.TABLE31_Z, k_list=stability.TABLE31_K, margin=1e-6,
                stream=None):
    stream = stream or sys.stdout
    rows = stability.table31(R, Z_list, k_list, margin)
    stream.write("Z\\k\t" + "\t".join(f"{k:g}" for k in k_list) + "\n")
    for Z, row in zip(Z_list, rows):
        stream.write(f"{Z:g}\t" + "\t".join("-" if v is None else str(v) for v in row) + "\n")
    stream.write(
        f"# R = {R:g}; R1 = sqrt(Z*(2R - Z))*(1 - {margin:g}) per cell (taper-radius assumption)\n"
    )
    return rows


def _rows_text(title, rows) -> str:
    lines = [f"# {title}", "h\ttau\terror\torder"]
    for r in rows:
        order = "-" if r.order is None else f"{r.order:.4f}"
        lines.append(f"{r.h:.6g}\t{r.tau:.6g}\t{r.error:.6e}\t{order}")
    return "\n".join(lines) + "\n"


def cmd_convergence(kappa=100.0, beta0=0.15, levels=3, stream=None):
    stream = stream or sys.stdout
    trunc = verify.truncation_order_study(levels=max(levels, 3))
    stream.write(_rows_text("truncation error of the six-point operator, sin(2r)cos(3z)", trunc))
    lv = [(128 * 2**i, 256 * 2**i) for i in range(max(levels, 2))]
    study = verify.free_space_convergence(kappa=kappa, beta0=beta0, levels=lv)
    stream.write(_rows_text(
        f"free-space Gaussian beam, kappa={kappa:g}, beta0={beta0:g}, length={study.length:g}",
        study.rows,
    ))
    stream.write("# error ratios: " + ", ".join(f"{x:.4f}" for x in study.ratios) + "\n")
    return trunc, study


def cmd_maps_check(geom: LensGeometry, points=1000, seed=0, stream=None):
    stream = stream or sys.stdout
    check = verify.map_derivative_oracle(geom, verify.interior_points(geom, points, seed))
    summary = check.summary()
    for k, v in summary.items():
        stream.write(f"{k}\t{v}\n")
    verdict = "consistent" if check.printed_psi_consistent else "INCONSISTENT"
    stream.write(
        f"# printed closed form for psi: {verdict} with finite differences of zeta "
        f"(max rel err {summary['max_rel_err_psi_printed']:.3g}); chain-rule psi is used\n"
    )
    return summary


# --------------------------------------------------------------------- main


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zstretch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="propagate a beam and write trace/snapshots")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--strict", action="store_true", help="fail when h <= h_min")
    run.add_argument("--snapshot-stride", type=int)
    run.add_argument("--binary", action="store_true", help="binary snapshot files")

    st = sub.add_parser("stability", help="stability report for a config")
    st.add_argument("--config", required=True)
    st.add_argument("--homogeneous", action="store_true", help="constant-kappa scheme only")
    st.add_argument("--samples", type=int, default=3, help="lens steps to analyse")

    for name, hlp in (("maxgrid", "h_min and M_max"), ("maps-check", "metric-term oracle")):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--config")
        sp.add_argument("--R", type=float, default=1.969)
        sp.add_argument("--Z", type=float, default=0.7643)
        sp.add_argument("--R1", type=float, help="default: taper radius times (1 - 1e-6)")
        if name == "maxgrid":
            sp.add_argument("--kappa", type=float, default=9975.43)
        else:
            sp.add_argument("--points", type=int, default=1000)
            sp.add_argument("--seed", type=int, default=0)

    tb = sub.add_parser("table31", help="M_max table over (Z, k)")
    tb.add_argument("--R", type=float, default=1.0)
    tb.add_argument("--Z", type=_floats, default=list(stability.TABLE31_Z))
    tb.add_argument("--k", type=_floats, default=list(stability.TABLE31_K))
    tb.add_argument("--margin", type=float, default=1e-6)

    cv = sub.add_parser("convergence", help="truncation and free-space convergence studies")
    cv.add_argument("--kappa", type=float, default=100.0)
    cv.add_argument("--beta0", type=float, default=0.15)
    cv.add_argument("--levels", type=int, default=3)
    return p


def _geometry_args(args):
    if args.config:
        return parse_config(args.config).sim
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            cfg = parse_config(args.config)
            sim = cfg.sim
            if args.strict:
                sim.strict = True
            if args.snapshot_stride is not None:
                if args.snapshot_stride < 0:
                    raise ConfigError("snapshot stride must be >= 0")
                sim.snapshot_stride = args.snapshot_stride
            if args.binary:
                cfg.binary = True
            m = cmd_run(cfg, Path(args.out))
            f = m["focus"]
            print(f"z_f\t{f['z_f']:.17g}\tpeak\t{f['peak_intensity']:.17g}"
                  f"\tgeometric\t{f['geometric_estimate']:.17g}")
            return EXIT_OK
        if args.command == "stability":
            return cmd_stability(parse_config(args.config), args.homogeneous, args.samples)
        if args.command in ("maxgrid", "maps-check"):
            sim = _geometry_args(args)
            if sim:
                geom = sim.geom
            elif args.R1 is None:
                geom = LensGeometry.with_taper_aperture(args.R, args.Z)
            else:
                geom = LensGeometry(args.R, args.Z, args.R1)
            if args.command == "maxgrid":
                cmd_maxgrid(geom, sim.optics.kappa1 if sim else args.kappa)
            else:
                cmd_maps_check(geom, args.points, args.seed)
            return EXIT_OK
        if args.command == "table31":
            cmd_table31(args.R, args.Z, args.k, args.margin)
            return EXIT_OK
        if args.command == "convergence":
            cmd_convergence(args.kappa, args.beta0, args.levels)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as exc:
        print(f"invalid geometry: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StabilityViolation as exc:
        print(f"stability violation: {exc}", file=sys.stderr)
        return EXIT_STABILITY
    except NumericalFailure as exc:
        print(f"numerical failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
