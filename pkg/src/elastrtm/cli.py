"""Command line driver: synthesize, image, psf and validate.

Experiments are described by a sectioned key-value file (INI syntax)::

    [medium]
    lam = 0.5
    mu = 0.25
    omega = 2pi, 2.5pi

    [obstacle]
    kind = circle
    radius = 1.0
    center = 0, 10
    bc = dirichlet

    [survey]
    d = 50
    n_src = 101
    n_rcv = 101

    [imaging]
    window = -2, 2, 8, 12
    n1 = 101
    n2 = 101

    [noise]
    sigma = 0.0
    seed = 0

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


_CURVE_KEYS = {
    "circle": {"radius"},
    "kite": {"scale"},
    "leaf": {"p", "amplitude", "scale"},
    "peanut": {"amplitude", "scale"},
    "rounded_square": {"scale"},
}
_SECTIONS = {
    "medium": {"lam", "mu", "omega"},
    "obstacle": {"kind", "center", "bc", "eta"} | set().union(*_CURVE_KEYS.values()),
    "survey": {"d", "n_src", "n_rcv"},
    "imaging": {"window", "n1", "n2", "weights"},
    "noise": {"sigma", "seed"},
    "forward": {"points_per_wavelength"},
    "psf": {"window", "n1", "n2", "d"},
    "output": {"dir"},
}
_REQUIRED = ("medium", "obstacle", "survey")


def _floats(text: str, what: str) -> list:
    out = []
    for tok in text.replace(";", ",").split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        try:
            if tok.endswith("pi"):
                head = tok[:-2].rstrip("*").strip()
                out.append((float(head) if head else 1.0) * np.pi)
            else:
                out.append(float(tok))
        except ValueError:
            raise ConfigError(f"{what}: cannot parse {tok!r} as a number") from None
    return out


def _float(sec, key, default=None):
    if key not in sec:
        if default is None:
            raise ConfigError(f"[{sec.name}] missing required key {key!r}")
        return default
    vals = _floats(sec[key], f"[{sec.name}] {key}")
    if len(vals) != 1:
        raise ConfigError(f"[{sec.name}] {key} must be a single number")
    return vals[0]


def _int(sec, key, default=None):
    v = _float(sec, key, default)
    if v != int(v):
        raise ConfigError(f"[{sec.name}] {key} must be an integer")
    return int(v)


@dataclass
class ObstacleSpec:
    kind: str
    params: dict
    center: tuple
    bc: str
    eta: float

    def build(self):
        from .forward import Obstacle, make_curve

        try:
            return Obstacle(make_curve(self.kind, self.params, self.center), self.bc, self.eta)
        except ValueError as exc:
            raise ConfigError(f"invalid obstacle: {exc}") from None


@dataclass
class ExperimentConfig:
    lam: float
    mu: float
    omegas: list
    obstacles: list
    d: float
    n_src: int
    n_rcv: int
    window: tuple = (-2.0, 2.0, 8.0, 12.0)
    n1: int = 101
    n2: int = 101
    weights: str = "uniform"
    sigma: float = 0.0
    seed: int = 0
    points_per_wavelength: float = 10.0
    psf_window: tuple | None = None
    psf_n: tuple = (41, 41)
    psf_d: float | None = None
    out_dir: str | None = None
    digest: str = ""
    raw: dict = field(default_factory=dict)

    def medium(self, omega):
        from .medium import ElasticMedium

        return ElasticMedium(self.lam, self.mu, omega)


def _parse_obstacle(sec) -> ObstacleSpec:
    kind = sec.get("kind", "").strip()
    if kind not in _CURVE_KEYS:
        raise ConfigError(f"[{sec.name}] kind must be one of {sorted(_CURVE_KEYS)}")
    extra = {k for k in sec if k in set().union(*_CURVE_KEYS.values())} - _CURVE_KEYS[kind]
    if extra:
        raise ConfigError(f"[{sec.name}] keys {sorted(extra)} do not apply to kind {kind!r}")
    params = {}
    for k in _CURVE_KEYS[kind]:
        if k in sec:
            params[k] = _int(sec, k) if k == "p" else _float(sec, k)
    center = tuple(_floats(sec.get("center", "0, 10"), f"[{sec.name}] center"))
    if len(center) != 2:
        raise ConfigError(f"[{sec.name}] center needs two numbers")
    bc = sec.get("bc", "dirichlet").strip().lower()
    eta = _float(sec, "eta", 0.0) if "eta" in sec else (1.0 if bc == "impedance" else 0.0)
    return ObstacleSpec(kind, params, center, bc, eta)


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    """Parse and validate an experiment file; unknown sections or keys are rejected."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    obstacle_sections = []
    for name in cp.sections():
        base = "obstacle" if name.startswith("obstacle") and (name == "obstacle" or name[8:].isdigit()) else name
        if base not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        unknown = set(cp[name]) - _SECTIONS[base]
        if unknown:
            raise ConfigError(f"[{name}] unknown keys {sorted(unknown)}")
        if base == "obstacle":
            obstacle_sections.append(name)
    for name in _REQUIRED:
        if name not in cp:
            raise ConfigError(f"missing required section [{name}]")
    med, sv = cp["medium"], cp["survey"]
    omegas = _floats(med.get("omega", ""), "[medium] omega")
    if not omegas:
        raise ConfigError("[medium] omega: empty frequency list")
    if any(w <= 0 for w in omegas):
        raise ConfigError("[medium] omega values must be positive")
    cfg = ExperimentConfig(
        lam=_float(med, "lam"), mu=_float(med, "mu"), omegas=omegas,
        obstacles=[_parse_obstacle(cp[n]) for n in sorted(obstacle_sections)],
        d=_float(sv, "d"), n_src=_int(sv, "n_src"), n_rcv=_int(sv, "n_rcv"),
    )
    if not (cfg.lam > 0 and cfg.mu > 0):
        raise ConfigError("[medium] lam and mu must be positive")
    if cfg.d <= 0 or cfg.n_src < 1 or cfg.n_rcv < 1:
        raise ConfigError("[survey] needs d > 0 and at least one source and receiver")
    if "imaging" in cp:
        im = cp["imaging"]
        if "window" in im:
            cfg.window = tuple(_floats(im["window"], "[imaging] window"))
        cfg.n1 = _int(im, "n1", cfg.n1)
        cfg.n2 = _int(im, "n2", cfg.n2)
        cfg.weights = im.get("weights", cfg.weights).strip()
        if cfg.weights not in ("uniform", "trapezoid"):
            raise ConfigError("[imaging] weights must be uniform or trapezoid")
    if len(cfg.window) != 4 or not (cfg.window[1] > cfg.window[0] and cfg.window[3] > cfg.window[2] > 0):
        raise ConfigError("[imaging] window must be z1_min, z1_max, z2_min, z2_max with 0 < z2_min")
    if cfg.n1 < 2 or cfg.n2 < 2:
        raise ConfigError("[imaging] n1 and n2 must be at least 2")
    if "noise" in cp:
        nz = cp["noise"]
        cfg.sigma = _float(nz, "sigma", 0.0)
        cfg.seed = _int(nz, "seed", 0)
        if cfg.sigma < 0:
            raise ConfigError("[noise] sigma must be non-negative")
    if seed_override is not None:
        cfg.seed = int(seed_override)
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if "forward" in cp:
        cfg.points_per_wavelength = _float(cp["forward"], "points_per_wavelength", 10.0)
        if cfg.points_per_wavelength < 10:
            raise ConfigError("[forward] points_per_wavelength must be at least 10")
    if "psf" in cp:
        ps = cp["psf"]
        if "window" in ps:
            cfg.psf_window = tuple(_floats(ps["window"], "[psf] window"))
        cfg.psf_n = (_int(ps, "n1", 41), _int(ps, "n2", 41))
        cfg.psf_d = _float(ps, "d", cfg.d) if "d" in ps else None
    if "output" in cp and "dir" in cp["output"]:
        cfg.out_dir = cp["output"]["dir"].strip()
    if cfg.obstacles:
        for spec in cfg.obstacles:
            spec.build()
    blob = text.encode("utf-8") + f"\nseed={cfg.seed}".encode()
    cfg.digest = hashlib.sha256(blob).hexdigest()
    return cfg


# ---------------------------------------------------------------------------
# manifest


class RunManifest:
    """Config digest, code version, stage timings and output digests of one command."""

    def __init__(self, command: str, config_digest: str):
        self.command = command
        self.config_digest = config_digest
        self.stages: dict = {}
        self.outputs: list = []

    def stage(self, name):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                manifest.stages[name] = round(time.perf_counter() - self.t0, 6)

        return _Timer()

    def add(self, *paths):
        self.outputs.extend(Path(p) for p in paths)

    def write(self, out_dir) -> Path:
        from .io_utils import atomic_write_text, sha256_file

        out_dir = Path(out_dir)
        files = [{"path": p.name, "sha256": sha256_file(p)} for p in self.outputs]
        payload = {
            "command": self.command,
            "config_sha256": self.config_digest,
            "version": __version__,
            "stage_seconds": self.stages,
            "outputs": files,
        }
        path = out_dir / f"manifest_{self.command}.json"
        atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------------------
# commands


def _dataset_name(k: int) -> str:
    return f"dataset_{k:02d}.txt"


def cmd_synthesize(cfg: ExperimentConfig, out_dir) -> list:
    """One dataset file per frequency (noise added when ``sigma > 0``)."""
    from .forward import SurveyGeometry, add_noise, synthesize_data, write_dataset

    if not cfg.obstacles:
        raise ConfigError("synthesize needs at least one [obstacle] section")
    obstacles = [s.build() for s in cfg.obstacles]
    survey = SurveyGeometry(cfg.d, cfg.n_src, cfg.n_rcv)
    out_dir = Path(out_dir)
    man = RunManifest("synthesize", cfg.digest)
    written = []
    for k, omega in enumerate(cfg.omegas):
        with man.stage(f"synthesize_{k:02d}"):
            ds = synthesize_data(obstacles, survey, cfg.medium(omega),
                                 points_per_wavelength=cfg.points_per_wavelength)
            # every frequency draws from its own counter-keyed stream
            ds = add_noise(ds, cfg.sigma, (cfg.seed + k) % 2**64) if cfg.sigma > 0 else \
                add_noise(ds, 0.0, cfg.seed)
        path = out_dir / _dataset_name(k)
        write_dataset(path, ds)
        written.append(path)
    man.add(*written)
    man.write(out_dir)
    return written


def cmd_image(cfg: ExperimentConfig, out_dir, datasets=None) -> list:
    """Per-frequency images (CSV + sidecar + PGM) and a stacked image for several frequencies."""
    from .forward import SurveyGeometry, read_dataset
    from .imaging import ImagingGrid, image, stack, write_grid, write_pgm
    from .io_utils import sha256_file

    out_dir = Path(out_dir)
    if datasets is None:
        datasets = [out_dir / _dataset_name(k) for k in range(len(cfg.omegas))]
    datasets = [Path(p) for p in datasets]
    if not datasets:
        raise ConfigError("image needs at least one dataset")
    survey = SurveyGeometry(cfg.d, cfg.n_src, cfg.n_rcv)
    loaded = []
    for p in datasets:
        if not p.exists():
            raise ConfigError(f"dataset {p} not found (run synthesize first)")
        try:
            ds = read_dataset(p)
        except ValueError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        if ds.survey != survey:
            raise ConfigError(f"{p}: survey geometry does not match the config")
        if not (np.isclose(ds.lam, cfg.lam) and np.isclose(ds.mu, cfg.mu)):
            raise ConfigError(f"{p}: Lamé constants do not match the config")
        loaded.append((p, ds))
    grid = ImagingGrid.from_window(cfg.window, cfg.n1, cfg.n2)
    man = RunManifest("image", cfg.digest)
    images, written = [], []
    for k, (p, ds) in enumerate(loaded):
        with man.stage(f"image_{k:02d}"):
            g = image(ds, grid, cfg.weights)
        images.append(g)
        written += write_grid(out_dir / f"image_{k:02d}.csv", g, [ds.omega], [sha256_file(p)])
        written.append(write_pgm(out_dir / f"image_{k:02d}.pgm", g))
    if len(images) > 1:
        st = stack(images)
        written += write_grid(out_dir / "image_stacked.csv", st, [ds.omega for _, ds in loaded],
                              [sha256_file(p) for p, _ in loaded])
        written.append(write_pgm(out_dir / "image_stacked.pgm", st))
    man.add(*written)
    man.write(out_dir)
    return written


def cmd_psf(cfg: ExperimentConfig, out_dir) -> list:
    """PSF resolution sweep with ``y`` at the window center."""
    from .psf import PsfConfig, psf_resolution_profile

    window = cfg.psf_window or cfg.window
    try:
        pc = PsfConfig(cfg.medium(cfg.omegas[0]), cfg.psf_d or cfg.d, window, *cfg.psf_n)
    except ValueError as exc:
        raise ConfigError(f"[psf] {exc}") from None
    man = RunManifest("psf", cfg.digest)
    with man.stage("psf"):
        rep = psf_resolution_profile(pc)
    written = rep.write(out_dir)
    man.add(*written)
    man.write(out_dir)
    return written


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: measured {self.measured:.3e} vs threshold {self.threshold:.3e} {self.detail}".rstrip()


def run_validation(lam: float = 0.5, mu: float = 0.25, omega: float = 2 * np.pi,
                   k_r_override: float | None = None, seed: int = 0) -> list:
    """Invariant checks of the Green and PSF layers; each check reported once."""
    from . import green, psf
    from .medium import ElasticMedium, delta
    from .quadrature import PoleSpec, pv_integrate, sokhotski_limit_check

    med = ElasticMedium(lam, mu, omega)
    wn = med.wavenumbers
    rng = np.random.default_rng(seed)
    res = []

    k_r = wn.k_R if k_r_override is None else k_r_override
    resid = abs(delta(k_r, wn.k_p, wn.k_s)) / wn.k_s**4
    res.append(CheckResult("rayleigh_residual", resid < 1e-10, resid, 1e-10))
    ref = _rayleigh_ratio_cubic(wn.kappa)
    err = abs(k_r / wn.k_s - ref)
    res.append(CheckResult("rayleigh_ratio", err < 1e-4, err, 1e-4, f"(k_R/k_s = {k_r / wn.k_s:.7f})"))

    val = sokhotski_limit_check(lambda t: np.ones_like(t), 0.0, +1)
    err = abs(val - 1j * np.pi)
    res.append(CheckResult("sokhotski_limit", err < 1e-8, err, 1e-8))
    val = pv_integrate(lambda t: 1 / (t - 0.3), -1.0, 1.0, [PoleSpec(0.3, 1.0)])
    err = abs(val - np.log(0.7 / 1.3))
    res.append(CheckResult("principal_value", err < 1e-8, err, 1e-8))

    worst = 0.0
    for _ in range(10):
        x = np.array([rng.uniform(-3, 3), rng.uniform(0.5, 12)])
        y = np.array([rng.uniform(-3, 3), rng.uniform(0.5, 12)])
        a = np.asarray(green.neumann_green(x, y, med))
        b = np.asarray(green.neumann_green(y, x, med))
        worst = max(worst, np.linalg.norm(a - b.T) / np.linalg.norm(a))
    res.append(CheckResult("reciprocity", worst < 1e-6, worst, 1e-6))

    worst = 0.0
    for _ in range(5):
        y = np.array([rng.uniform(-1, 1), rng.uniform(1, 10)])
        x1 = rng.uniform(-8, 8)
        worst = max(worst, _surface_traction_ratio(x1, y, med))
    res.append(CheckResult("traction_free", worst <= 1e-3, worst, 1e-3))

    la = limiting_absorption_errors(med, (1e-3, 1e-4))
    ratio = la[0] / la[1]
    res.append(CheckResult("limiting_absorption", 7.0 <= ratio <= 13.0, ratio, 10.0,
                           "(error ratio eps=1e-3 -> 1e-4, accepted band [7, 13])"))

    z = np.array([0.0, 10.0])
    F = np.asarray(psf.psf_F(z, z, med))
    bound = 1.0 / (4 * (lam + 2 * mu))
    low = float(min(-F[0, 0].imag, -F[1, 1].imag))
    res.append(CheckResult("psf_lower_bound", low >= bound, low, bound))
    asym = float(np.linalg.norm(F - F.T) / np.linalg.norm(F))
    res.append(CheckResult("psf_symmetry", asym <= 1e-8, asym, 1e-8))
    return res


def _rayleigh_ratio_cubic(kappa: float) -> float:
    """``k_R / k_s`` from the Rayleigh cubic in ``x = (k_s/k_R)^2``."""
    roots = np.roots([1.0, -8.0, 24.0 - 16.0 * kappa**2, -16.0 * (1.0 - kappa**2)])
    real = [r.real for r in roots if abs(r.imag) < 1e-12 and 0 < r.real < 1]
    return float(1.0 / np.sqrt(real[0]))


def _surface_traction_ratio(x1, y, med, q=(1.0, 0.0)) -> float:
    """``|sigma(N q) e2|`` on the surface relative to the stress at half the source depth."""
    from . import green

    q = np.asarray(q, dtype=float)
    surf = green.neumann_green_stress([x1, 0.0], [0.0, 1.0], y, q, med)
    ref = np.linalg.norm(green.neumann_green_stress([x1, 0.5 * y[1]], [0.0, 1.0], y, q, med))
    return float(np.linalg.norm(surf) / ref)


def limiting_absorption_errors(med, eps_values, point=((3.0, 0.0), (0.0, 10.0))) -> list:
    """Relative distance between the principal-value tensor and the damped one for each ``eps``."""
    from . import green

    x, y = (np.asarray(p, dtype=float) for p in point)
    n_pv = np.asarray(green.neumann_green(x, y, med))
    return [float(np.linalg.norm(n_pv - np.asarray(green.neumann_green_complex_freq(x, y, e, med)))
                  / np.linalg.norm(n_pv)) for e in eps_values]


def cmd_validate(**kwargs) -> tuple:
    res = run_validation(**kwargs)
    return all(r.passed for r in res), res


# ---------------------------------------------------------------------------
# entry point


def _parser():
    p = argparse.ArgumentParser(prog="elastrtm", description="Half-space elastic RTM imaging")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("synthesize", "image", "psf", "validate"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="experiment file (INI syntax)")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")
        sp.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread limit")
        sp.add_argument("--seed", type=int, default=None, help="noise seed (overrides [noise] seed)")
        if name == "image":
            sp.add_argument("datasets", nargs="*", help="dataset files (default: those written by synthesize)")
    return p


def _run(args) -> int:
    if args.command == "validate":
        ok, res = cmd_validate()
        for r in res:
            print(r.line())
        print("validate: " + ("all checks passed" if ok else "FAILED"))
        return EXIT_OK if ok else EXIT_VALIDATION
    if not args.config:
        raise ConfigError(f"{args.command} needs --config")
    cfg = load_config(args.config, args.seed)
    out = Path(args.out or cfg.out_dir or ".")
    if args.command == "synthesize":
        files = cmd_synthesize(cfg, out)
    elif args.command == "image":
        files = cmd_image(cfg, out, args.datasets or None)
    else:
        files = cmd_psf(cfg, out)
    for f in files:
        print(f)
    return EXIT_OK


def main(argv=None) -> int:
    from scipy.linalg import LinAlgError
    from threadpoolctl import threadpool_limits

    from .quadrature import QuadratureError

    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=args.threads):
            return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, LinAlgError, ArithmeticError, FloatingPointError) as exc:
        print(f"numerical failure ({args.command}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
