"""Command-line front end: ``gratingstab --config run.toml``.

The config is TOML with the sections [wave], [profile], [numerics],
[stability], [mc] and [output] plus a top-level ``command``.  A JSON run
manifest written by a previous run is also accepted as ``--config``.

Exit codes: 0 ok, 1 parse or validation error, 2 rejection rate exceeded,
3 insufficient data, 4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import platform
import re
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .boundary import efficiencies, incident_trace, rayleigh_amplitudes, source_norm
from .errors import (
    GratingError,
    InsufficientData,
    ParseError,
    RejectionRateExceeded,
    ValidationError,
)
from .harness import (
    GridOverride,
    envelope,
    fit_exponent,
    fitted_constant,
    grid_rule,
    mc_csv,
    monte_carlo,
    solve_configuration,
    sweep,
    sweep_csv,
)
from .modes import PlaneWaveConfig, resonance_distance
from .random_surface import kl_eigenpairs
from .solver import boundary_traces, energy_norms, green_identity
from .transform import GratingProfile

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("gratingstab")

EXIT_OK, EXIT_PARSE, EXIT_REJECTION, EXIT_INSUFFICIENT, EXIT_SOLVER = 0, 1, 2, 3, 4
COMMANDS = ("solve", "sweep", "mc", "efficiency")
PROFILE_KINDS = ("flat", "trig", "samples", "kl")
FORMATS = ("csv", "json")

_SECTIONS = {
    "wave": {"k", "k_grid", "theta", "Lambda", "b"},
    "profile": {"kind", "height", "a0", "a", "b", "values", "sigma", "ell", "J"},
    "numerics": {"N", "M", "P"},
    "stability": {"eps_min", "fit"},
    "mc": {"n_samples", "seed"},
    "output": {"directory", "formats"},
}
_PROFILE_KEYS = {
    "flat": {"kind", "height"},
    "trig": {"kind", "a0", "a", "b"},
    "samples": {"kind", "values"},
    "kl": {"kind", "sigma", "ell", "J", "a0", "a", "b"},
}


@dataclass
class RunConfig:
    command: str
    wave: dict
    profile: dict
    numerics: dict = field(default_factory=lambda: {"N": "auto", "M": "auto", "P": "auto"})
    stability: dict = field(default_factory=lambda: {"eps_min": 0.1, "fit": False})
    mc: dict = field(default_factory=lambda: {"n_samples": 64, "seed": 0})
    output: dict = field(default_factory=lambda: {"directory": "out", "formats": list(FORMATS)})

    def to_dict(self) -> dict:
        return asdict(self)

    def plane_wave(self, k: float | None = None) -> PlaneWaveConfig:
        w = self.wave
        return PlaneWaveConfig(w["k"] if k is None else k, w["theta"], w["Lambda"], w["b"])

    def grating(self) -> GratingProfile:
        p, L = self.profile, self.wave["Lambda"]
        kind = p["kind"]
        if kind == "flat":
            return GratingProfile.flat(L, p.get("height", 0.0))
        if kind == "samples":
            return GratingProfile.from_samples(L, p["values"])
        return GratingProfile.trig(L, p.get("a0", 0.0), p.get("a", []), p.get("b", []))

    def rule(self):
        num = self.numerics
        fixed = {key: num[key] for key in ("M", "P", "N") if num.get(key, "auto") != "auto"}
        return GridOverride(**fixed) if fixed else grid_rule


def _key_lines(text: str) -> dict:
    """(section, key) -> 1-based line for every simple assignment."""
    lines, section = {}, ""
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        header = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", line)
        if header:
            section = header.group(1)
            lines.setdefault((section, None), i)
            continue
        m = re.match(r"^([A-Za-z0-9_-]+)\s*=", line)
        if m:
            lines.setdefault((section, m.group(1)), i)
    return lines


def _parse_length(value, name: str) -> float:
    """Number, or a string such as "2pi" / "0.5*pi"."""
    if isinstance(value, bool):
        raise ValidationError(name, "must be a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = re.fullmatch(r"\s*([0-9.eE+-]*)\s*\*?\s*pi\s*", value)
        if m:
            coef = m.group(1)
            try:
                return (float(coef) if coef else 1.0) * math.pi
            except ValueError:
                pass
    raise ValidationError(name, "must be a number or a multiple of pi like \"2pi\"")


def _number(section: dict, key: str, name: str, default=None, required=False):
    if key not in section:
        if required:
            raise ValidationError(name, "is required")
        return default
    return _parse_length(section[key], name)


def _float_list(value, name: str) -> list:
    if not isinstance(value, list):
        raise ValidationError(name, "must be a list of numbers")
    return [_parse_length(v, name) for v in value]


def _int_or_auto(value, name: str, minimum: int):
    if value == "auto":
        return "auto"
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ValidationError(name, f"must be \"auto\" or an integer >= {minimum}")
    return value


def _validate(raw: dict, lines: dict) -> RunConfig:
    def where(section, key=None):
        return lines.get((section, key)) or lines.get((section, None))

    for key, value in raw.items():
        if key == "command":
            continue
        if key not in _SECTIONS or not isinstance(value, dict):
            raise ParseError(where("", key) or where(key), f"unknown key '{key}'")
    for section, allowed in _SECTIONS.items():
        for key in raw.get(section, {}):
            if key not in allowed:
                raise ParseError(where(section, key), f"unknown key '{key}' in [{section}]")

    command = raw.get("command")
    if command not in COMMANDS:
        raise ValidationError("command", f"one of {', '.join(COMMANDS)}")

    w = raw.get("wave", {})
    wave = {
        "theta": _number(w, "theta", "theta", 0.0),
        "Lambda": _number(w, "Lambda", "Lambda", required=True),
        "b": _number(w, "b", "b", required=True),
    }
    if not abs(wave["theta"]) < math.pi / 2:
        raise ValidationError("theta", "in (−π/2, π/2)")
    for name in ("Lambda", "b"):
        if not wave[name] > 0:
            raise ValidationError(name, "must be positive")
    if command == "sweep":
        if "k" in w or "k_grid" not in w:
            raise ValidationError("k_grid", "sweep needs k_grid and no k")
        grid = _float_list(w["k_grid"], "k_grid")
        if not all(k > 0 for k in grid):
            raise ValidationError("k_grid", "all wavenumbers must be positive")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValidationError("k_grid", "must be strictly ascending")
        wave["k_grid"] = grid
    else:
        if "k_grid" in w or "k" not in w:
            raise ValidationError("k", f"{command} needs k and no k_grid")
        wave["k"] = _number(w, "k", "k")
        if not wave["k"] > 0:
            raise ValidationError("k", "must be positive")

    p = raw.get("profile", {"kind": "flat"})
    kind = p.get("kind", "flat")
    if kind not in PROFILE_KINDS:
        raise ValidationError("profile.kind", f"one of {', '.join(PROFILE_KINDS)}")
    for key in p:
        if key not in _PROFILE_KEYS[kind]:
            raise ParseError(where("profile", key), f"key '{key}' does not apply to kind '{kind}'")
    if (kind == "kl") != (command == "mc"):
        raise ValidationError("profile.kind", "the mc command takes kind = \"kl\" and only it does")
    profile = {"kind": kind}
    if kind == "flat":
        profile["height"] = _number(p, "height", "profile.height", 0.0)
    elif kind == "samples":
        values = _float_list(p.get("values"), "profile.values")
        if len(values) < 2:
            raise ValidationError("profile.values", "need at least two samples")
        profile["values"] = values
    else:
        profile["a0"] = _number(p, "a0", "profile.a0", 0.0)
        profile["a"] = _float_list(p.get("a", []), "profile.a")
        profile["b"] = _float_list(p.get("b", []), "profile.b")
        if len(profile["a"]) != len(profile["b"]):
            raise ValidationError("profile.a", "must have the same length as profile.b")
    if kind == "kl":
        profile["sigma"] = _number(p, "sigma", "profile.sigma", required=True)
        profile["ell"] = _number(p, "ell", "profile.ell", required=True)
        if profile["sigma"] < 0:
            raise ValidationError("profile.sigma", "must be nonnegative")
        if not 0 < profile["ell"] < wave["Lambda"] / 4:
            raise ValidationError("profile.ell", "in (0, Lambda/4)")
        profile["J"] = _int_or_auto(p.get("J", "auto"), "profile.J", 1)

    n = raw.get("numerics", {})
    numerics = {
        "N": _int_or_auto(n.get("N", "auto"), "numerics.N", 1),
        "M": _int_or_auto(n.get("M", "auto"), "numerics.M", 4),
        "P": _int_or_auto(n.get("P", "auto"), "numerics.P", 4),
    }

    s = raw.get("stability", {})
    stability = {
        "eps_min": _number(s, "eps_min", "eps_min", 0.1),
        "fit": s.get("fit", False),
    }
    if not stability["eps_min"] > 0:
        raise ValidationError("eps_min", "must be positive")
    if not isinstance(stability["fit"], bool):
        raise ValidationError("stability.fit", "must be true or false")

    m = raw.get("mc", {})
    mc = {"n_samples": m.get("n_samples", 64), "seed": m.get("seed", 0)}
    for key, low in (("n_samples", 2), ("seed", 0)):
        val = mc[key]
        if isinstance(val, bool) or not isinstance(val, int) or val < low:
            raise ValidationError(f"mc.{key}", f"must be an integer >= {low}")

    o = raw.get("output", {})
    output = {"directory": o.get("directory", "out"), "formats": o.get("formats", list(FORMATS))}
    if not isinstance(output["directory"], str) or not output["directory"]:
        raise ValidationError("output.directory", "must be a non-empty string")
    if not isinstance(output["formats"], list) or not set(output["formats"]) <= set(FORMATS):
        raise ValidationError("output.formats", f"a list drawn from {', '.join(FORMATS)}")

    return RunConfig(command, wave, profile, numerics, stability, mc, output)


def parse_config(path) -> RunConfig:
    """Read and validate a TOML run config or a JSON run manifest.

    Raises:
        ParseError: malformed syntax or an unknown key.
        ValidationError: a value violates its constraint.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(None, f"cannot read {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.lineno, exc.msg) from exc
        if not isinstance(doc, dict):
            raise ParseError(1, "expected a JSON object")
        raw = doc.get("config", doc)
        return _validate(raw, {})
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(int(m.group(1)) if m else None, str(exc)) from exc
    return _validate(raw, _key_lines(text))


def _atomic_write(path: Path, text: str):
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


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _check_admissible(cfg: PlaneWaveConfig, config: RunConfig):
    N = config.rule()(cfg)[2]
    eps = resonance_distance(cfg, N)
    if eps < config.stability["eps_min"]:
        raise ValidationError(
            "k", f"resonance distance {eps:.6g} below eps_min={config.stability['eps_min']}"
        )
    return eps


def _run_solve(config: RunConfig, seed: int):
    cfg = config.plane_wave()
    _check_admissible(cfg, config)
    fld, (M, P, N) = solve_configuration(cfg, config.grating(), config.rule())
    grad, l2 = energy_norms(fld)
    g = source_norm(cfg)
    env = envelope(cfg.k, cfg.b, fld.modes.epsilon)
    dirichlet, neumann = boundary_traces(fld)
    _, _, green = green_identity(fld)
    y1 = fld.grid.y1(cfg.Lambda)
    y2 = fld.grid.y2()
    rows = (
        [repr(float(y1[i])), repr(float(y2[j])), repr(float(fld.values[i, j].real)),
         repr(float(fld.values[i, j].imag))]
        for i in range(M) for j in range(P + 1)
    )
    summary = {
        "k": cfg.k, "theta": cfg.theta, "Lambda": cfg.Lambda, "b": cfg.b,
        "eps": fld.modes.epsilon, "M": M, "P": P, "N": N,
        "g_norm": g, "grad_norm": grad, "l2_norm": l2,
        "quotient": (grad + cfg.k * l2) / g, "envelope": env.value, "branch": env.branch,
        "residual": fld.residual, "green_residual": green,
    }
    return {
        f"field_k{cfg.k!r}_seed{seed}.csv": _csv(["y1", "y2", "re", "im"], rows),
        "dirichlet_trace.csv": dirichlet.to_csv(),
        "neumann_trace.csv": neumann.to_csv(),
        "solve_summary.json": _json(summary),
    }


def _run_efficiency(config: RunConfig, seed: int):
    cfg = config.plane_wave()
    _check_admissible(cfg, config)
    fld, (M, P, N) = solve_configuration(cfg, config.grating(), config.rule())
    dirichlet, _ = boundary_traces(fld)
    amps = rayleigh_amplitudes(dirichlet - incident_trace(fld.modes))
    eff = efficiencies(amps)
    modes = fld.modes
    rows = [[n, repr(float(modes.alpha_n[modes.index(n)])),
             repr(float(modes.beta_n[modes.index(n)].real)), repr(e)] for n, e in eff.items()]
    summary = {
        "k": cfg.k, "theta": cfg.theta, "eps": modes.epsilon, "M": M, "P": P, "N": N,
        "total_efficiency": float(sum(eff.values())),
        "efficiencies": {str(n): e for n, e in eff.items()},
    }
    return {
        "efficiencies.csv": _csv(["n", "alpha_n", "beta_n", "efficiency"], rows),
        "efficiency_summary.json": _json(summary),
    }


def _run_sweep(config: RunConfig, seed: int, workers: int):
    w = config.wave
    template = PlaneWaveConfig(w["k_grid"][0], w["theta"], w["Lambda"], w["b"])
    records = sweep(template, config.grating(), w["k_grid"], config.stability["eps_min"],
                    config.rule(), workers)
    if not records:
        log.warning("no admissible wavenumber in k_grid; sweep is empty")
    summary = {"n_records": len(records)}
    if records:
        ratios = [r.ratio for r in records]
        summary.update(c_fit=fitted_constant(records), ratio_max_over_min=max(ratios) / min(ratios))
    if config.stability["fit"]:
        slope, stderr = fit_exponent(records)
        summary.update(exponent=slope, exponent_stderr=stderr)
    return {"sweep.csv": sweep_csv(records), "sweep_summary.json": _json(summary)}


def _run_mc(config: RunConfig, seed: int, workers: int):
    p = config.profile
    cfg = config.plane_wave()
    _check_admissible(cfg, config)
    mean = GratingProfile.trig(cfg.Lambda, p["a0"], p["a"], p["b"])
    J = None if p["J"] == "auto" else p["J"]
    model = kl_eigenpairs(p["sigma"], p["ell"], cfg.Lambda, J, mean)
    summary = monte_carlo(model, cfg, config.mc["n_samples"], seed, config.rule(), workers)
    data = {
        "n_samples": summary.n_samples, "n_rejected": summary.n_rejected,
        "mean_sq_grad": summary.mean_sq_grad, "mean_sq_l2": summary.mean_sq_l2,
        "stochastic_quotient": summary.stochastic_quotient, "ci95": summary.ci95,
        "seed": summary.seed, "g_norm": summary.g_norm, "envelope": summary.envelope,
        "branch": summary.branch, "J": model.J,
    }
    return {"mc.csv": mc_csv(summary), "mc_summary.json": _json(data)}


def run(config: RunConfig, out_dir=None, threads: int = 1) -> int:
    """Execute a parsed config, write its outputs and print the manifest."""
    start = time.perf_counter()
    seed = config.mc["seed"]
    out = Path(out_dir if out_dir is not None else config.output["directory"])
    try:
        if config.command == "solve":
            files = _run_solve(config, seed)
        elif config.command == "efficiency":
            files = _run_efficiency(config, seed)
        elif config.command == "sweep":
            files = _run_sweep(config, seed, threads)
        else:
            files = _run_mc(config, seed, threads)
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    except RejectionRateExceeded as exc:
        log.error("%s", exc)
        return EXIT_REJECTION
    except InsufficientData as exc:
        log.error("%s", exc)
        return EXIT_INSUFFICIENT
    except GratingError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_SOLVER

    formats = set(config.output["formats"])
    written = []
    for name, text in files.items():
        if name.rsplit(".", 1)[-1] in formats:
            _atomic_write(out / name, text)
            written.append(name)
    manifest = {
        "command": config.command,
        "config": config.to_dict(),
        "seeds": {"master": seed},
        "threads": threads,
        "outputs": written,
        "versions": {
            "gratingstab": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "wall_time_s": time.perf_counter() - start,
    }
    text = _json(manifest)
    _atomic_write(out / "manifest.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gratingstab", description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="TOML config or JSON manifest")
    parser.add_argument("--out-dir", help="output directory (overrides [output].directory)")
    parser.add_argument("--threads", type=int, default=1, help="worker processes")
    parser.add_argument("--seed", type=int, help="master seed (overrides [mc].seed)")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        log.error("--threads must be at least 1")
        return EXIT_PARSE
    try:
        config = parse_config(args.config)
    except (ParseError, ValidationError) as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    if args.seed is not None:
        if args.seed < 0:
            log.error("--seed must be nonnegative")
            return EXIT_PARSE
        config.mc["seed"] = args.seed
    return run(config, args.out_dir, args.threads)


if __name__ == "__main__":
    sys.exit(main())
