"""
### Experiment runners.
Reproduces the training-instability experiments at desk scale: initializer
spectra, energy-ordered convergence, noise bias, the remedies comparison and
long-horizon rollouts. Each run writes a metadata JSON first, then CSV files
(and optionally SVG/PNG pictures) into its output directory.

Seeds: trial t of a run uses base_seed + t; inside a trial, each component
(system, data, initialization, noise, rollout state) gets its own seed from
SeedSequence([trial_seed, component]).
"""

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

import flowlab
import initgen
import matcore
import sysgen
from initgen import InitScheme
from matcore import ConfigError, Mat

logger = logging.getLogger(__name__)

VERSION = "0.1.0"
EXPERIMENTS = ("spectrum", "convergence", "noise_bias", "remedies", "rollout")
DERIVED_SEED_RULE = ("trial seed = base_seed + trial index; component seed = "
                     "SeedSequence([trial seed, component id, ...]).generate_state(1)[0]")

# component ids for derive_seed
SYSTEM, DATA, INIT, NOISE, STATE = range(5)

DISCRETE_MARGIN = 1e-9
CONTINUOUS_MARGIN = 1e-9

# snapshots per trajectory in remedies and rollout data
TRAJECTORY_LENGTH = 8



@dataclass
class ExperimentConfig:
    """
    One experiment run. Field names match the JSON config file exactly.

    `dt` set means continuous time (Euler-consistent data); None means discrete.
    """
    experiment: str
    n: int = 3
    r: int = 2
    m: int = 64
    dt: Optional[float] = None
    sigma: float = 0.0
    trials: Optional[int] = None
    base_seed: int = 0
    schemes: list[str] = field(default_factory=lambda: ["glorot_normal"])
    tau_grid: list[float] = field(default_factory=list)
    output_dir: str = "runs"
    emit_svg: bool = False

    n_values: list[int] = field(default_factory=list)
    sigma_grid: list[float] = field(default_factory=list)
    learning_rate: float = 1e-2
    steps: int = 200
    bound: float = 1e3
    workers: int = 1
    bins: int = initgen.DEFAULT_BINS
    window: float = initgen.DEFAULT_WINDOW
    energies: list[float] = field(default_factory=list)
    unstable_init: Optional[float] = None
    emit_png: bool = False
    tau: Optional[float] = None


    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        """Build and validate a config from a parsed JSON object"""
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        if "experiment" not in raw:
            raise ConfigError("config is missing 'experiment'")
        try:
            cfg = cls(**raw)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        cfg.validate()
        return cfg
    # from_dict


    def validate(self) -> None:
        """Check field types and experiment-specific consistency"""
        exp = self.experiment.replace("-", "_") if isinstance(self.experiment, str) else None
        if exp not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        self.experiment = exp

        for name in ("n", "r", "m", "base_seed", "steps", "workers", "bins"):
            _check_type(name, getattr(self, name), _is_int, "an integer")
        for name in ("sigma", "learning_rate", "bound", "window"):
            _check_type(name, getattr(self, name), _is_real, "a number")
        for name, test, what in (("trials", _is_int, "an integer"), ("dt", _is_real, "a number"),
                                 ("tau", _is_real, "a number"),
                                 ("unstable_init", _is_real, "a number")):
            value = getattr(self, name)
            if value is not None:
                _check_type(name, value, test, what)
        for name, test, what in (("n_values", _is_int, "integers"),
                                 ("sigma_grid", _is_real, "numbers"),
                                 ("tau_grid", _is_real, "numbers"),
                                 ("energies", _is_real, "numbers"),
                                 ("schemes", _is_str, "strings")):
            value = getattr(self, name)
            if not isinstance(value, list) or not all(test(v) for v in value):
                raise ConfigError(f"{name} must be a list of {what}, got {value!r}")
        for name in ("emit_svg", "emit_png"):
            _check_type(name, getattr(self, name), _is_bool, "true or false")
        _check_type("output_dir", self.output_dir, _is_str, "a string")
        if self.trials is not None and self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be non-negative, got {self.sigma}")
        if any(s < 0 for s in self.sigma_grid):
            raise ConfigError("sigma_grid values must be non-negative")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not self.bound > 0:
            raise ConfigError(f"bound must be positive, got {self.bound}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.bins < 1 or not self.window > 0:
            raise ConfigError("bins must be >= 1 and window positive")
        if self.tau is not None and self.tau < 0:
            raise ConfigError(f"tau must be non-negative, got {self.tau}")
        if any(t < 0 for t in self.tau_grid):
            raise ConfigError("tau_grid values must be non-negative")
        if not self.schemes:
            raise ConfigError("schemes must not be empty")
        for kind in self.schemes:
            if kind not in initgen.KINDS:
                raise ConfigError(f"unknown scheme {kind!r}; use one of {initgen.KINDS}")
            if kind == "gershgorin_euler" and self.dt is None:
                raise ConfigError("gershgorin_euler needs dt")

        if exp == "spectrum":
            ns = self.n_values or [self.n]
            if any(k < 1 for k in ns):
                raise ConfigError("n_values must be positive")
            if any(k.startswith("gershgorin") for k in self.schemes) and min(ns) < 2:
                raise ConfigError("Gershgorin schemes need n >= 2")
            return

        if self.n < 1 or not 1 <= self.r <= self.n:
            raise ConfigError(f"need 1 <= r <= n, got n={self.n}, r={self.r}")
        if self.energies and len(self.energies) != self.r:
            raise ConfigError(f"energies must have r={self.r} entries")
        if any(e <= 0 for e in self.energies):
            raise ConfigError("energies must be positive")

        if exp == "convergence":
            if self.r >= self.n:
                raise ConfigError("convergence needs a zero-energy direction (r < n)")
            if self.m < self.n:
                raise ConfigError(f"convergence needs m >= n, got m={self.m}, n={self.n}")
        elif exp == "noise_bias":
            if self.m < self.n:
                raise ConfigError(f"noise_bias needs m >= n, got m={self.m}, n={self.n}")
            if self.trials is not None and self.trials < 100:
                raise ConfigError(f"noise_bias needs trials >= 100, got {self.trials}")
            if self.r < 2:
                raise ConfigError("noise_bias needs r >= 2")
        elif exp == "remedies":
            if self.r >= self.n:
                raise ConfigError(f"remedies needs r < n, got r={self.r}, n={self.n}")
            if not self.sigma > 0:
                raise ConfigError("remedies needs sigma > 0 for the selective-noise arm")
            if self.m < max(self.n, 8 * self.r):
                raise ConfigError(f"remedies needs m >= max(n, 8r), got m={self.m}")
            _check_whole_trajectories(self.m)
        elif exp == "rollout":
            if self.m < 8 * self.r:
                raise ConfigError(f"rollout needs m >= 8r, got m={self.m}")
            _check_whole_trajectories(self.m)
    # validate


    @property
    def continuous(self) -> bool:
        return self.dt is not None

    def trials_or(self, default: int) -> int:
        return self.trials if self.trials is not None else default

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)



def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_real(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) \
        and math.isfinite(value)


def _is_str(value) -> bool:
    return isinstance(value, str)


def _is_bool(value) -> bool:
    return isinstance(value, bool)


def _check_type(name: str, value, test: Callable[[Any], bool], what: str) -> None:
    if not test(value):
        raise ConfigError(f"{name} must be {what}, got {value!r}")
# _check_type



def _check_whole_trajectories(m: int) -> None:
    if m % TRAJECTORY_LENGTH:
        raise ConfigError(f"m={m} must be a multiple of the trajectory length "
                          f"{TRAJECTORY_LENGTH}")
# _check_whole_trajectories



@dataclass
class RunArtifacts:
    csv_paths: list[Path]
    metadata_path: Path
    picture_paths: list[Path] = field(default_factory=list)



def load_config(path, experiment: Optional[str] = None,
                overrides: Optional[dict] = None) -> ExperimentConfig:
    """
    Read a JSON config file.

    Args:
        path: JSON file holding one object
        experiment: fills in a missing "experiment" field; a different value
            in the file is an error
        overrides: fields replaced after reading (the CLI flags)
    """
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    if experiment is not None:
        wanted = experiment.replace("-", "_")
        found = str(raw.setdefault("experiment", wanted)).replace("-", "_")
        if found != wanted:
            raise ConfigError(f"config {path} is for {found!r}, not {wanted!r}")
    raw.update(overrides or {})
    return ExperimentConfig.from_dict(raw)
# load_config



def derive_seed(trial_seed: int, *components: int) -> int:
    return int(np.random.SeedSequence([trial_seed, *components]).generate_state(1)[0])
# derive_seed



def run_trials(fn: Callable[[int], Any], base_seed: int, trials: int,
               workers: int = 1) -> list:
    """
    Run fn(base_seed + t) for t in range(trials) and return results in trial order.

    With workers > 1 the trials fan out over a thread pool; Executor.map keeps
    submission order, so the aggregate never depends on scheduling.
    """
    seeds = [base_seed + t for t in range(trials)]
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))
# run_trials



# ---------------------------------------------------------------------------
# stability and rollout
# ---------------------------------------------------------------------------

def classify_stability(M, mode: str, dt: Optional[float] = None) -> bool:
    """
    Discrete: spectral radius < 1 - 1e-9.
    Continuous: max real part < -1e-9 and, when dt is given, every eigenvalue
    inside the forward-Euler stability disk |1 + lambda dt| < 1.
    """
    vals = matcore.eig(M)
    if mode == "discrete":
        return bool(np.max(np.abs(vals)) < 1.0 - DISCRETE_MARGIN)
    if mode == "continuous_euler":
        ok = bool(np.max(vals.real) < -CONTINUOUS_MARGIN)
        if dt is not None:
            ok = ok and bool(np.max(np.abs(1.0 + vals * dt)) < 1.0)
        return ok
    raise ConfigError(f"unknown stability mode {mode!r}")
# classify_stability



def rollout(Ahat, x0, steps: int, mode: str = "discrete", dt: Optional[float] = None,
            bound: float = 1e3) -> tuple[list[list], bool]:
    """
    Iterate the learned operator from x0.

    Discrete: x <- Ahat x. Continuous: x <- (I + Ahat dt) x.

    Returns:
        (rows [step, norm, x_1, ..., x_n], diverged) where diverged means
        ||x|| > bound * ||x0|| at some step; iteration stops there
    """
    Ahat = matcore._square(Ahat)
    x = np.asarray(x0, dtype=np.float64).ravel()
    if x.shape[0] != Ahat.shape[0]:
        raise matcore.DimensionError(f"x0 has length {x.shape[0]}, operator is {Ahat.shape}")
    if not bound > 0:
        raise ConfigError(f"bound must be positive, got {bound}")
    if mode == "discrete":
        step_map = Ahat
    elif mode == "continuous_euler":
        if dt is None or dt <= 0:
            raise ConfigError("continuous rollout needs a positive dt")
        step_map = np.eye(Ahat.shape[0]) + Ahat * dt
    else:
        raise ConfigError(f"unknown rollout mode {mode!r}")

    limit = bound * float(np.linalg.norm(x))
    rows = [[0, float(np.linalg.norm(x)), *x.tolist()]]
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, steps + 1):
            x = step_map @ x
            norm = float(np.linalg.norm(x))
            rows.append([k, norm, *x.tolist()])
            if not norm <= limit:
                diverged = True
                break
    return rows, diverged
# rollout



# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)
# _fmt



def write_csv(path, header: Sequence[str], rows) -> Path:
    """Comma-separated, LF line endings, 17 significant digits, header row first"""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path
# write_csv



def write_metadata(path, config: ExperimentConfig, started_at: str,
                   wall_seconds: Optional[float], extra: Optional[dict] = None) -> Path:
    path = Path(path)
    meta = {
        "config": config.to_dict(),
        "base_seed": config.base_seed,
        "derived_seed_rule": DERIVED_SEED_RULE,
        "version": VERSION,
        "started_at": started_at,
        "wall_seconds": wall_seconds,
    }
    if extra:
        meta.update(extra)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path
# write_metadata



def _json_default(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"not JSON serialisable: {type(value).__name__}")
# _json_default



def _heat(value: float) -> tuple[int, int, int]:
    # white -> dark blue
    v = min(max(value, 0.0), 1.0)
    return (int(255 * (1 - v)), int(255 * (1 - 0.8 * v)), int(255 - 90 * v))
# _heat



def write_svg_heatmap(path, stats: initgen.SpectrumStats, title: str = "") -> Path:
    """Log-scaled eigenvalue histogram with the unit circle dashed"""
    size = 480
    counts = stats.counts
    peak = math.log1p(float(counts.max())) or 1.0
    lo, hi = stats.re_edges[0], stats.re_edges[-1]
    scale = size / (hi - lo)
    cell_w = size / counts.shape[0]
    cell_h = size / counts.shape[1]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 24}" '
             f'viewBox="0 0 {size} {size + 24}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    for i, j in zip(*np.nonzero(counts)):
        r, g, b = _heat(math.log1p(float(counts[i, j])) / peak)
        x = i * cell_w
        y = size - (j + 1) * cell_h
        parts.append(f'<rect x="{x:.3f}" y="{y:.3f}" width="{cell_w:.3f}" height="{cell_h:.3f}" '
                     f'fill="rgb({r},{g},{b})"/>')
    cx = cy = size / 2
    parts.append(f'<circle cx="{cx}" cy="{cy}" r="{scale:.3f}" fill="none" stroke="#00bcd4" '
                 f'stroke-width="1.5" stroke-dasharray="6,4"/>')
    label = title or f"n={stats.n} trials={stats.trials} phi={stats.phi:.4f}"
    parts.append(f'<text x="4" y="{size + 17}" font-family="monospace" font-size="13">'
                 f'{label}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path
# write_svg_heatmap



def write_svg_scatter(path, series: dict[str, Sequence[tuple[float, float]]],
                      title: str = "") -> Path:
    """Lines-and-points plot of named (x, y) series"""
    width, height, pad = 560, 360, 40
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    pts = [p for s in series.values() for p in s]
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(x: float) -> float:
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y: float) -> float:
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
             f'stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>']
    for k, (name, s) in enumerate(series.items()):
        colour = colours[k % len(colours)]
        path_d = " ".join(f"{'M' if i == 0 else 'L'}{px(x):.2f},{py(y):.2f}"
                          for i, (x, y) in enumerate(s))
        if path_d:
            parts.append(f'<path d="{path_d}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - pad - 150}" y="{pad + 14 * k}" font-family="monospace" '
                     f'font-size="12" fill="{colour}">{name}</text>')
    parts.append(f'<text x="{pad}" y="20" font-family="monospace" font-size="13">{title}</text>')
    parts.append(f'<text x="{pad}" y="{height - 10}" font-family="monospace" font-size="11">'
                 f'x: [{x0:.4g}, {x1:.4g}]  y: [{y0:.4g}, {y1:.4g}]</text>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path
# write_svg_scatter



def write_png_heatmap(path, stats: initgen.SpectrumStats, title: str = "") -> Path:
    """Raster version of write_svg_heatmap drawn with Pillow"""
    size = 453
    counts = stats.counts
    bins_re, bins_im = counts.shape
    peak = math.log1p(float(counts.max())) or 1.0

    img = Image.new("RGB", (size, size + 20), "white")
    draw = ImageDraw.Draw(img)
    cw = size / bins_re
    ch = size / bins_im
    for i, j in zip(*np.nonzero(counts)):
        colour = _heat(math.log1p(float(counts[i, j])) / peak)
        x = i * cw
        y = size - (j + 1) * ch
        draw.rectangle(xy=(x, y, x + cw, y + ch), fill=colour)

    lo, hi = stats.re_edges[0], stats.re_edges[-1]
    radius = size / (hi - lo)
    c = size / 2
    box = (c - radius, c - radius, c + radius, c + radius)
    for start in range(0, 360, 10):
        draw.arc(xy=box, start=start, end=start + 6, fill=(0, 188, 212), width=2)

    try:
        font = ImageFont.truetype(
            font="/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
            size=12
        )
    except OSError:
        font = ImageFont.load_default()
    label = title or f"n={stats.n} trials={stats.trials} phi={stats.phi:.4f}"
    draw.text(xy=(4, size + 3), text=label, font=font, fill=(0, 0, 0))
    path = Path(path)
    img.save(path, format="PNG")
    return path
# write_png_heatmap



# ---------------------------------------------------------------------------
# shared experiment plumbing
# ---------------------------------------------------------------------------

class _Run:
    """Output directory, metadata and timing for one experiment run"""

    def __init__(self, config: ExperimentConfig) -> None:
        self.config = config
        self.out = Path(config.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.started = time.perf_counter()
        self.started_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.metadata_path = self.out / "metadata.json"
        self.csv_paths: list[Path] = []
        self.picture_paths: list[Path] = []
        self.seeds: dict[str, Any] = {}
        write_metadata(self.metadata_path, config, self.started_at, None)
        logger.info("%s run started, writing to %s", config.experiment, self.out)

    def csv(self, name: str, header: Sequence[str], rows) -> Path:
        p = write_csv(self.out / name, header, rows)
        self.csv_paths.append(p)
        return p

    def finish(self) -> RunArtifacts:
        wall = time.perf_counter() - self.started
        write_metadata(self.metadata_path, self.config, self.started_at, wall,
                       {"seeds": self.seeds})
        logger.info("%s run finished in %.2fs: %d csv file(s)",
                    self.config.experiment, wall, len(self.csv_paths))
        return RunArtifacts(csv_paths=self.csv_paths, metadata_path=self.metadata_path,
                            picture_paths=self.picture_paths)



def _default_block_spec(config: ExperimentConfig, r: Optional[int] = None) -> sysgen.BlockSpec:
    """Stable true system: eigenvalues inside the unit disk, or in the left half plane"""
    n = config.n
    r = config.r if r is None else r
    if config.continuous:
        learnable = list(-np.linspace(0.1, 0.5, r))
        complement = list(-np.linspace(0.2, 0.6, n - r))
    else:
        learnable = list(np.linspace(0.9, 0.5, r))
        complement = list(np.linspace(0.4, 0.2, n - r))
    return sysgen.BlockSpec(n=n, r=r, learnable_eigenvalues=learnable,
                            coupling_scale=0.1, complement_eigenvalues=complement)
# _default_block_spec



def _trajectory_data(A: Mat, basis: sysgen.BasisPair, config: ExperimentConfig,
                     seed: int) -> sysgen.SnapshotData:
    """Clean trajectories started inside the invariant subspace (rank r)"""
    length = TRAJECTORY_LENGTH
    k = config.m // length
    rng = np.random.default_rng(seed)
    x0 = basis.U1 @ rng.standard_normal((basis.r, k))
    if config.continuous:
        return sysgen.continuous_pairs(A, config.dt, x0, length, method="euler")
    return sysgen.discrete_pairs(A, x0, length)
# _trajectory_data



def _clean_train(Ahat0, A, X, config: ExperimentConfig, tau: float) -> Mat:
    if config.continuous:
        return flowlab.flow_closed_continuous(Ahat0, A, X, config.dt, tau)
    return flowlab.flow_closed_discrete(Ahat0, A, X, tau)
# _clean_train



def _noisy_train(Ahat0, A, X, N, Nsharp, config: ExperimentConfig, tau: float) -> Mat:
    if config.continuous:
        return flowlab.flow_closed_continuous_noisy(Ahat0, A, X, N, Nsharp, config.dt, tau)
    return flowlab.flow_closed_discrete_noisy(Ahat0, A, X, N, Nsharp, tau)
# _noisy_train



def _mode(config: ExperimentConfig) -> str:
    return "continuous_euler" if config.continuous else "discrete"
# _mode



def _tau(config: ExperimentConfig) -> float:
    return math.inf if config.tau is None else float(config.tau)
# _tau



# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def exp_spectrum(config: ExperimentConfig) -> RunArtifacts:
    """
    Eigenvalue histograms of initializers.

    For each scheme and n: spectrum_<scheme>_n<n>.csv (bin_re, bin_im, count)
    with bin centres, and one spectrum_summary.csv row. Trials default to
    ceil(1e5 / n).
    """
    run = _Run(config)
    summary = []
    for kind in config.schemes:
        for n in (config.n_values or [config.n]):
            trials = config.trials_or(math.ceil(1e5 / n))
            dt = config.dt if kind == "gershgorin_euler" else None
            scheme = InitScheme(kind=kind, n=n, dt=dt)
            stats = initgen.spectrum_stats(scheme, trials, config.base_seed,
                                           bins=config.bins, window=config.window,
                                           workers=config.workers)
            run.seeds[f"{kind}/n={n}"] = [config.base_seed, config.base_seed + trials - 1]

            centres_re = 0.5 * (stats.re_edges[:-1] + stats.re_edges[1:])
            centres_im = 0.5 * (stats.im_edges[:-1] + stats.im_edges[1:])
            rows = ([centres_re[i], centres_im[j], stats.counts[i, j]]
                    for i in range(len(centres_re)) for j in range(len(centres_im)))
            stem = f"spectrum_{kind}_n{n}"
            run.csv(f"{stem}.csv", ["bin_re", "bin_im", "count"], rows)
            summary.append([kind, n, trials, stats.phi, stats.frac_positive_real,
                            initgen.circular_law_radius(n),
                            float(np.max(np.abs(stats.eigenvalues))),
                            float(np.max(stats.eigenvalues.real)), stats.clipped])
            if config.emit_svg:
                run.picture_paths.append(write_svg_heatmap(run.out / f"{stem}.svg", stats))
            if config.emit_png:
                run.picture_paths.append(write_png_heatmap(run.out / f"{stem}.png", stats))
            logger.info("%s n=%d: phi=%.5f frac_positive_real=%.4f",
                        kind, n, stats.phi, stats.frac_positive_real)

    run.csv("spectrum_summary.csv",
            ["scheme", "n", "trials", "phi", "frac_positive_real", "circular_law_radius",
             "max_modulus", "max_real", "clipped"], summary)
    return run.finish()
# exp_spectrum



def _default_energies(config: ExperimentConfig) -> np.ndarray:
    if config.energies:
        return np.sort(np.asarray(config.energies, dtype=np.float64))[::-1]
    # decay rates sigma_i^2/(mn) of 1, 0.1, 0.01, ...
    return np.sqrt(config.m * config.n) * np.sqrt(np.geomspace(1.0, 10.0 ** -(config.r - 1),
                                                               config.r))
# _default_energies



def exp_convergence(config: ExperimentConfig) -> RunArtifacts:
    """
    Energy-ordered convergence and noise stabilization in a small block system.

    Data have r directions with distinct energy and n-r zero-energy
    directions. The initialization has equal-norm errors on the learnable
    columns and `unstable_init` on the zero-energy diagonal. The clean and the
    noisy closed-form flows are evaluated on tau_grid.
    """
    run = _Run(config)
    seed = config.base_seed
    n, r = config.n, config.r
    tau_grid = np.asarray(config.tau_grid or np.linspace(0.0, 50.0, 51), dtype=np.float64)
    unstable = config.unstable_init
    if unstable is None:
        unstable = 0.5 if config.continuous else 1.2

    A, basis = sysgen.build_block_system(_default_block_spec(config), derive_seed(seed, SYSTEM))
    energies = _default_energies(config)
    data = sysgen.energy_shaped_pairs(A, basis, energies, config.m, derive_seed(seed, DATA),
                                      dt=config.dt, method="euler")
    dbasis = sysgen.BasisPair(U=matcore.svd(data.X).U, r=r)
    Atilde = sysgen.to_svd_basis(A, dbasis)

    rng = np.random.default_rng(derive_seed(seed, INIT))
    E = rng.standard_normal((n, n))
    E[:, :r] /= np.linalg.norm(E[:, :r], axis=0)
    E[:, r:] *= math.sqrt(1.0 / n)
    At0 = Atilde + E
    for j in range(r, n):
        At0[j, j] = unstable
    Ahat0 = sysgen.from_svd_basis(At0, dbasis)

    variants = {"clean": lambda tau: _clean_train(Ahat0, A, data.X, config, tau)}
    if config.sigma > 0:
        noisy = sysgen.inject_noise(data, config.sigma, derive_seed(seed, NOISE))
        variants["noisy"] = lambda tau: _noisy_train(Ahat0, A, data.X, noisy.N, noisy.Nsharp,
                                                     config, tau)
    run.seeds["trial"] = seed

    names = [f"energy_{j + 1}" for j in range(r)] + [f"zero_{j + 1}" for j in range(n - r)]
    rows, eig_rows = [], []
    series: dict[str, list] = {}
    for variant, flow in variants.items():
        limit = sysgen.to_svd_basis(flow(math.inf), dbasis)
        for tau in tau_grid:
            At = sysgen.to_svd_basis(flow(float(tau)), dbasis)
            errors = np.linalg.norm(At - limit, axis=0)
            for j, name in enumerate(names):
                rows.append([variant, float(tau), name, At[j, j], errors[j]])
                series.setdefault(f"{variant}:{name}", []).append((float(tau), float(At[j, j])))
            for k, lam in enumerate(matcore.eig(At)):
                eig_rows.append([variant, float(tau), k, lam.real, lam.imag])

    run.csv("convergence.csv",
            ["variant", "tau", "direction_id", "diagonal_entry", "column_error"], rows)
    run.csv("convergence_eigs.csv", ["variant", "tau", "index", "real", "imag"], eig_rows)
    if config.emit_svg:
        run.picture_paths.append(write_svg_scatter(run.out / "convergence.svg", series,
                                                   title="diagonal entries vs tau"))
    return run.finish()
# exp_convergence



def exp_noise_bias(config: ExperimentConfig) -> RunArtifacts:
    """
    Monte Carlo check of the noise-bias predictions.

    For every sigma in sigma_grid, `trials` noise draws of the tau = infinity
    noisy flow (zero initialization) are taken; per direction the learned
    column is fitted as factor * Atilde[:, j] + additive * e_j and compared
    with predict_bias_discrete / predict_bias_continuous.
    """
    run = _Run(config)
    n, r, m = config.n, config.r, config.m
    trials = config.trials_or(200)
    sigmas = config.sigma_grid or [config.sigma]
    seed = config.base_seed

    A, basis = sysgen.build_block_system(_default_block_spec(config), derive_seed(seed, SYSTEM))
    basis = _mix_within_blocks(basis, derive_seed(seed, SYSTEM, 1))
    data = sysgen.energy_shaped_pairs(A, basis, _default_energies(config), m,
                                      derive_seed(seed, DATA), dt=config.dt, method="euler")
    res = matcore.svd(data.X)
    dbasis = sysgen.BasisPair(U=res.U, r=res.rank)
    Atilde = sysgen.to_svd_basis(A, dbasis)
    zero = np.zeros((n, n))

    rows = []
    for idx, sigma in enumerate(sigmas):
        sigma2 = sigma * sigma
        if config.continuous:
            pred = flowlab.predict_bias_continuous(Atilde, res.singular_values, m, sigma2,
                                                   config.dt)
        else:
            pred = flowlab.predict_bias_discrete(Atilde, res.singular_values, m, sigma2)

        def draw(trial_seed: int, sigma=sigma, idx=idx) -> tuple[np.ndarray, np.ndarray]:
            if sigma == 0:
                learned = _clean_train(zero, A, data.X, config, math.inf)
            else:
                noisy = sysgen.inject_noise(data, sigma, derive_seed(trial_seed, NOISE, idx))
                learned = _noisy_train(zero, A, data.X, noisy.N, noisy.Nsharp, config,
                                       math.inf)
            return flowlab.bias_from_mean(sysgen.to_svd_basis(learned, dbasis), Atilde)

        results = run_trials(draw, seed, trials, config.workers)
        F = np.array([f for f, _ in results])
        D = np.array([d for _, d in results])
        se_f = F.std(axis=0, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros(n)
        se_d = D.std(axis=0, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros(n)
        sv = np.zeros(n)
        sv[:len(res.singular_values)] = res.singular_values[:n]
        for j in range(n):
            rows.append([sigma, j + 1, sv[j], F[:, j].mean(), pred.multiplicative_factors[j],
                         D[:, j].mean(), pred.additive_diagonal[j], se_f[j], se_d[j]])
        logger.info("sigma=%g: mean factors %s", sigma, np.round(F.mean(axis=0), 4))
    run.seeds["trials"] = [seed, seed + trials - 1]

    run.csv("noise_bias.csv",
            ["sigma", "direction", "singular_value", "empirical_mean_factor",
             "predicted_factor", "empirical_additive", "predicted_additive", "stderr",
             "stderr_additive"], rows)
    return run.finish()
# exp_noise_bias



def _mix_within_blocks(basis: sysgen.BasisPair, seed: int) -> sysgen.BasisPair:
    """
    Rotate U1 and U2 separately. span(U1) stays invariant, but the blocks of
    the operator in the new basis are dense, so no column of it is parallel
    to e_j and the (factor, additive) fit in bias_from_mean is well posed.
    """
    rng = np.random.default_rng(seed)
    n, r = basis.U.shape[0], basis.r
    Q = np.zeros((n, n))
    Q[:r, :r] = sysgen.random_orthogonal(r, rng)
    if r < n:
        Q[r:, r:] = sysgen.random_orthogonal(n - r, rng)
    return sysgen.BasisPair(U=basis.U @ Q, r=r)
# _mix_within_blocks



REMEDY_ARMS = ("glorot", "gershgorin", "projection", "whitened", "selective_noise")



def exp_remedies(config: ExperimentConfig) -> RunArtifacts:
    """
    Compare the remedies for unlearnable directions on rank-r trajectory data.

    Arms: glorot initialization (baseline), Gershgorin initialization,
    projection onto the data subspace, whitened data, and noise injected only
    outside the data subspace. Training uses the closed-form flow at `tau`
    (infinity when unset).

    Whitening equalises the convergence rates but not the limit: at tau =
    infinity the whitened arm has the glorot arm's spectrum and stability
    (only its coupling into the data subspace is rescaled). It only shows a
    difference in learnable_error for a finite `tau`.
    """
    run = _Run(config)
    n, r = config.n, config.r
    mode = _mode(config)
    tau = _tau(config)
    trials = config.trials_or(200)
    spec = _default_block_spec(config)
    reference = np.sort_complex(np.asarray(spec.learnable_eigenvalues, dtype=np.complex128))
    gersh_kind = "gershgorin_euler" if config.continuous else "gershgorin_discrete"

    def trial(seed: int) -> list[list]:
        A, basis = sysgen.build_block_system(spec, derive_seed(seed, SYSTEM))
        data = _trajectory_data(A, basis, config, derive_seed(seed, DATA))
        dbasis = sysgen.data_basis(data)
        if dbasis.r != r:
            logger.warning("seed %d: data rank %d differs from r=%d", seed, dbasis.r, r)
        dbasis = sysgen.BasisPair(U=dbasis.U, r=r)
        Atilde = sysgen.to_svd_basis(A, dbasis)
        init_seed = derive_seed(seed, INIT)
        glorot0 = initgen.sample_init(InitScheme("glorot_normal", n), init_seed)
        gersh0 = initgen.sample_init(InitScheme(gersh_kind, n, config.dt), init_seed)
        x0 = np.random.default_rng(derive_seed(seed, STATE)).standard_normal(n)

        learned = {
            "glorot": _clean_train(glorot0, A, data.X, config, tau),
            "gershgorin": _clean_train(gersh0, A, data.X, config, tau),
        }

        reduced, pbasis = sysgen.project_to_data_subspace(data)
        A_r = pbasis.U1.T @ A @ pbasis.U1
        init_r = initgen.sample_init(InitScheme("glorot_normal", pbasis.r), init_seed)
        Ahat_r = _clean_train(init_r, A_r, reduced.X, config, tau)
        learned["projection"] = sysgen.lift_from_subspace(Ahat_r, pbasis)

        wdata, W = sysgen.whiten(data)
        A_w = W @ A @ np.linalg.inv(W)
        learned["whitened"] = sysgen.unwhiten(_clean_train(glorot0, A_w, wdata.X, config, tau), W)

        noisy = sysgen.inject_noise(data, config.sigma, derive_seed(seed, NOISE),
                                    subspace_mask=dbasis)
        learned["selective_noise"] = _noisy_train(glorot0, A, data.X, noisy.N, noisy.Nsharp,
                                                  config, tau)

        rows = []
        for arm in REMEDY_ARMS:
            Ahat = learned[arm]
            At = sysgen.to_svd_basis(Ahat, dbasis)
            # the projected model lives on the data subspace only
            model = Ahat_r if arm == "projection" else Ahat
            start = pbasis.U1.T @ x0 if arm == "projection" else x0
            vals = matcore.eig(model)
            stable = classify_stability(model, mode, config.dt)
            _, diverged = rollout(model, start, config.steps, mode, config.dt, config.bound)

            true_cols = Atilde[:, :r]
            err = np.linalg.norm(At[:, :r] - true_cols) / np.linalg.norm(true_cols)
            factors = np.einsum("ij,ij->j", At[:, :r], true_cols) / np.einsum(
                "ij,ij->j", true_cols, true_cols)
            worst = factors[np.argmax(np.abs(factors - 1.0))]
            learned_top = np.sort_complex(np.linalg.eigvals(At[:r, :r]))
            spec_err = float(np.max(np.abs(learned_top - reference)))
            unlearn = At[r:, r:]
            rows.append([arm, seed, mode, float(np.max(np.abs(vals))), float(np.max(vals.real)),
                         stable, diverged, err, worst, spec_err,
                         float(np.max(np.abs(unlearn))) if arm != "projection" else 0.0])
        return rows

    results = run_trials(trial, config.base_seed, trials, config.workers)
    run.seeds["trials"] = [config.base_seed, config.base_seed + trials - 1]
    rows = [row for trial_rows in results for row in trial_rows]
    run.csv("remedies.csv",
            ["arm", "seed", "mode", "spectral_radius_learned", "max_real_learned", "stable",
             "rollout_diverged", "learnable_error", "learnable_factor", "spectrum_error",
             "unlearnable_max_abs"], rows)

    summary = []
    for arm in REMEDY_ARMS:
        arm_rows = [row for row in rows if row[0] == arm]
        summary.append([arm, len(arm_rows), sum(row[5] for row in arm_rows),
                        sum(row[6] for row in arm_rows),
                        max(row[7] for row in arm_rows)])
    run.csv("remedies_summary.csv",
            ["arm", "trials", "stable_count", "diverged_count", "max_learnable_error"], summary)
    return run.finish()
# exp_remedies



def exp_rollout(config: ExperimentConfig) -> RunArtifacts:
    """
    Learn a stable block system from each scheme's initialization on clean
    rank-r data, then roll the learned operator out from a random state.
    """
    run = _Run(config)
    n = config.n
    mode = _mode(config)
    tau = _tau(config)
    trials = config.trials_or(20)
    spec = _default_block_spec(config)

    traj_rows, summary = [], []
    for kind in config.schemes:
        scheme = InitScheme(kind, n, config.dt if kind == "gershgorin_euler" else None)

        def trial(seed: int, scheme=scheme) -> tuple[list, list]:
            A, basis = sysgen.build_block_system(spec, derive_seed(seed, SYSTEM))
            data = _trajectory_data(A, basis, config, derive_seed(seed, DATA))
            Ahat0 = initgen.sample_init(scheme, derive_seed(seed, INIT))
            Ahat = _clean_train(Ahat0, A, data.X, config, tau)
            x0 = np.random.default_rng(derive_seed(seed, STATE)).standard_normal(n)
            rows, diverged = rollout(Ahat, x0, config.steps, mode, config.dt, config.bound)
            vals = matcore.eig(Ahat)
            return ([[scheme.kind, seed, row[0], row[1]] for row in rows],
                    [scheme.kind, seed, float(np.max(np.abs(vals))), float(np.max(vals.real)),
                     diverged])

        for rows, row in run_trials(trial, config.base_seed, trials, config.workers):
            traj_rows.extend(rows)
            summary.append(row)
    run.seeds["trials"] = [config.base_seed, config.base_seed + trials - 1]

    run.csv("rollout.csv", ["scheme", "seed", "step", "norm"], traj_rows)
    run.csv("rollout_summary.csv",
            ["scheme", "seed", "spectral_radius", "max_real", "diverged"], summary)
    return run.finish()
# exp_rollout



RUNNERS = {
    "spectrum": exp_spectrum,
    "convergence": exp_convergence,
    "noise_bias": exp_noise_bias,
    "remedies": exp_remedies,
    "rollout": exp_rollout,
}



def run_experiment(config: ExperimentConfig) -> RunArtifacts:
    return RUNNERS[config.experiment](config)
# run_experiment
