"""Experiment configuration, stage orchestration and run manifests.

Every stage draws its randomness from one root seed through
``numpy.random.SeedSequence(root).spawn``, so a single stage can be re-run
on its own and reproduce the numbers of a full pipeline run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import linalg

from . import __version__
from .diagnostics import bound_certificate, estimate_curvature
from .errors import ConfigError
from .forward import ForwardModel, LinkFunction
from .likelihood import Dataset, PriorSpec, generate_dataset, likelihood_for
from .optimize import InitializerConfig, compute_map, initialize
from .pde import BoundaryData, Grid
from .sampler import RNG_NAME, ChainConfig, burn_in_lower_bound, gamma_epsilon, run_chain
from .spectral import Basis
from .surrogate import SurrogateSpec, condition_23_params, k_lower_bound

log = logging.getLogger(__name__)

OUTPUT_ENV = "SCHRODINGER_ULA_OUTPUT"
STAGES = ("generate", "init", "curvature", "surrogate", "sample", "map", "bounds")
MODES = ("practical", "asymptotic")


def default_theta0(D0: int) -> list[float]:
    """Alternating truth ``θ₀,k = (−1)^{k+1} k^{−3/2}``."""
    return [(-1.0) ** k * (k + 1.0) ** -1.5 for k in range(D0)]


@dataclass
class ExperimentConfig:
    """All knobs of a run; ``validate`` checks them before any compute."""

    dim: int = 1
    D: int = 4
    D0: int | None = None
    theta0: list | None = None
    N: int = 200
    alpha: float = 2.0
    K_min: float = 0.0
    g: float = 100.0
    n_interior: int = 255
    mode: str = "practical"
    gamma: float | None = None
    step_fraction: float = 0.1
    epsilon_target: float | None = None
    J_in: int | None = None
    J: int = 2000
    thin: int = 1
    seed: int = 0
    output_dir: str | None = None
    eta: float = 1.0
    C_K: float = 8.0
    c0: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    precondition: bool = True
    noise_scale: float = 1.0
    n_probe: int = 16
    init_alpha: float = 7.0
    init_min_basis: int | None = None
    threads: int | None = None

    # -- construction -------------------------------------------------
    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        flat = {}
        for key, value in (data or {}).items():
            if isinstance(value, dict) and key not in known:
                flat.update(value)  # one level of sections, e.g. ``sampler: {J: ...}``
            else:
                flat[key] = value
        unknown = set(flat) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**flat)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_mapping(data)

    def updated(self, **overrides) -> "ExperimentConfig":
        data = dataclasses.asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentConfig.from_mapping(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    # -- validation ---------------------------------------------------
    def validate(self) -> list[str]:
        """Raise :class:`ConfigError` on hard violations; return warnings."""
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.dim in (1, 2), "dim must be 1 or 2")
        need(self.D >= 1, "D must be >= 1")
        need(self.N >= 3, "N must be >= 3")
        need(self.alpha > 0, "alpha must be positive")
        need(self.init_alpha >= 1, "init_alpha must be >= 1")
        need(self.g > 0, "boundary value g must be positive")
        need(self.n_interior >= 3, "n_interior must be >= 3")
        need(self.mode in MODES, f"mode must be one of {MODES}")
        need(self.J >= 1, "J must be >= 1")
        need(self.J_in is None or self.J_in >= 0, "J_in must be >= 0")
        need(self.thin >= 1, "thin must be >= 1")
        need(self.gamma is None or self.gamma > 0, "gamma must be positive")
        need(self.epsilon_target is None or self.epsilon_target > 0, "epsilon_target must be positive")
        need(0 < self.step_fraction <= 1, "step_fraction must be in (0, 1]")
        need(self.eta > 0, "eta must be positive")
        need(self.C_K > 1, "C_K must exceed 1")
        need(self.noise_scale >= 0, "noise_scale must be >= 0")
        need(self.n_probe >= 1, "n_probe must be >= 1")
        need(self.seed >= 0, "seed must be >= 0")
        D0 = self.truth_dimension
        need(D0 >= 1, "D0 must be >= 1")
        if self.theta0 is not None:
            need(len(self.theta0) == D0, "theta0 length must equal D0")
        need(self.dim ** 1 * self.n_interior >= 2 * max(self.D, D0) or self.dim == 2,
             "grid too coarse for the requested number of modes")
        out = []
        bound = self.c0 * self.N ** (self.dim / (2 * self.alpha + self.dim))
        if self.D > bound:
            out.append(f"D={self.D} exceeds c0*N^(d/(2a+d))={bound:.3g} (dimension condition)")
        if self.mode == "asymptotic":
            _, K, gmax = condition_23_params(self.N, self.D, self.dim)
            if self.gamma is not None and self.gamma > gmax:
                out.append(f"gamma={self.gamma:.3g} exceeds the asymptotic-mode maximum {gmax:.3g}")
        return out

    @property
    def truth_dimension(self) -> int:
        if self.theta0 is not None and self.D0 is None:
            return len(self.theta0)
        return self.D0 if self.D0 is not None else self.D

    @property
    def truth(self) -> np.ndarray:
        if self.theta0 is not None:
            return np.asarray(self.theta0, dtype=float)
        return np.asarray(default_theta0(self.truth_dimension))

    def output_path(self) -> Path:
        root = self.output_dir or os.environ.get(OUTPUT_ENV) or "runs"
        return Path(root)


def stage_seeds(root: int) -> dict[str, int]:
    """Independent per-stage seeds derived from the root seed."""
    children = np.random.SeedSequence(root).spawn(len(STAGES))
    return {name: int(c.generate_state(1)[0]) for name, c in zip(STAGES, children)}


def content_hash(payload) -> str:
    """SHA-1 over a canonical JSON rendering (git-style 40 hex digits)."""
    text = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha1(b"blob %d\0" % len(text) + text).hexdigest()


@dataclass
class RunManifest:
    config: dict
    input_hash: str
    seeds: dict
    stage_times: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    generators: dict = field(default_factory=lambda: {"chain": RNG_NAME, "data": RNG_NAME})
    version: str = __version__
    warnings: list = field(default_factory=list)
    status: str = "running"
    failed_stage: str | None = None

    def record(self, path: Path, root: Path):
        self.files[str(path.relative_to(root))] = path.stat().st_size

    def write(self, root: Path) -> Path:
        target = root / "manifest.json"
        target.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True,
                                     default=_jsonable) + "\n")
        return target


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return str(x)


def _dump(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


# ---------------------------------------------------------------------------
# model construction


def build_model(cfg: ExperimentConfig, D: int | None = None) -> ForwardModel:
    grid = Grid(cfg.dim, cfg.n_interior)
    return ForwardModel(Basis(grid, cfg.D if D is None else D), LinkFunction(cfg.K_min),
                        BoundaryData.constant(cfg.g))


def jacobi_preconditioner(likelihood, precision_diag, theta):
    """Diagonal ``A`` with ``A_k⁻² = (JᵀJ)_kk + (Σ⁻¹)_k`` and the scaled curvature ``λ_max``.

    The Gauss–Newton diagonal is positive even where the likelihood is
    not concave.  Returns ``(A, λ_max(A H A))`` with ``H`` the Gauss–Newton
    matrix.
    """
    pm = likelihood.pm
    J = pm.jacobian(pm.state(theta))
    H = J.T @ J + np.diag(precision_diag)
    A = 1.0 / np.sqrt(np.diag(H))
    lam = float(linalg.eigvalsh(A[:, None] * H * A[None, :])[-1])
    return A, lam


class Pipeline:
    """Runs the stages of one experiment and keeps the manifest current."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path | None = None):
        self.warnings = cfg.validate()
        for w in self.warnings:
            warnings.warn(w, stacklevel=2)
            log.warning(w)
        self.cfg = cfg
        self.out = Path(out_dir) if out_dir is not None else cfg.output_path()
        self.out.mkdir(parents=True, exist_ok=True)
        self.seeds = stage_seeds(cfg.seed)
        self.manifest = RunManifest(config=cfg.to_dict(), input_hash=content_hash(cfg.to_dict()),
                                    seeds=self.seeds, warnings=list(self.warnings))
        self.model = build_model(cfg)
        self.prior = PriorSpec(cfg.alpha, cfg.N, self.model.basis)
        self.dataset: Dataset | None = None
        self.theta_init = None
        self.spec: SurrogateSpec | None = None
        self.curvature = None
        self.chain = None
        self.results: dict = {}

    # -- helpers ------------------------------------------------------
    def _save(self, path: Path) -> Path:
        self.manifest.record(path, self.out)
        return path

    def _timed(self, name, fn):
        start = time.perf_counter()
        try:
            return fn()
        except Exception:
            self.manifest.status = "failed"
            self.manifest.failed_stage = name
            raise
        finally:
            self.manifest.stage_times[name] = time.perf_counter() - start
            self.manifest.write(self.out)

    # -- stages -------------------------------------------------------
    def generate(self) -> Dataset:
        def run():
            cfg = self.cfg
            truth_model = build_model(cfg, cfg.truth_dimension)
            ds = generate_dataset(truth_model, cfg.truth, cfg.N, self.seeds["generate"],
                                  noise_scale=cfg.noise_scale)
            csv, side = ds.save(self.out / "data.csv", alpha=cfg.alpha)
            self._save(csv)
            self._save(side)
            # distance between truth and its D-mode truncation, on the grid
            full = truth_model.state(cfg.truth).u
            theta_D = np.zeros(cfg.D)
            k = min(cfg.D, cfg.truth.size)
            theta_D[:k] = cfg.truth[:k]
            trunc = self.model.state(theta_D).u
            gap = float(np.sqrt(self.model.grid.cell_volume * np.sum((full - trunc) ** 2)))
            self.results["truncation_gap"] = gap
            self.results["truncation_rate"] = cfg.N ** (-cfg.alpha / (2 * cfg.alpha + cfg.dim))
            return ds

        self.dataset = self._timed("generate", run)
        return self.dataset

    def load_data(self, path) -> Dataset:
        self.dataset = Dataset.load(path)
        return self.dataset

    def initialize(self) -> np.ndarray:
        def run():
            cfg = self.cfg
            min_basis = cfg.init_min_basis if cfg.init_min_basis is not None else 2 * cfg.D
            icfg = InitializerConfig.default(self.dataset.N, cfg.dim, cfg.init_alpha, cfg.D,
                                             cfg.K_min, min_basis=min_basis)
            theta = initialize(self.model, self.dataset, icfg)
            self._save(_dump(self.out / "init.json", {
                "theta_init": theta, "n_basis": icfg.n_basis, "delta_N": icfg.delta_N,
                "alpha": icfg.alpha}))
            return theta

        self.theta_init = self._timed("init", run)
        return self.theta_init

    def build_surrogate(self) -> SurrogateSpec:
        def run():
            cfg = self.cfg
            if cfg.mode == "asymptotic":
                eps, K, _ = condition_23_params(cfg.N, cfg.D, cfg.dim)
                eta = eps * cfg.D ** (-4.0 / cfg.dim)
            else:
                eta = cfg.eta
            self.curvature = estimate_curvature(self.model, self.dataset, self.theta_init, eta,
                                                cfg.n_probe, self.seeds["curvature"])
            self._save(_dump(self.out / "curvature.json", self.curvature.to_dict()))
            if cfg.mode == "practical":
                K = k_lower_bound(self.curvature.c_max_hat, self.dataset.N, eta, C=cfg.C_K)
            spec = SurrogateSpec(self.theta_init, eta, K)
            path = self.out / "surrogate.json"
            path.write_text(spec.to_json() + "\n")
            self._save(path)
            return spec

        self.spec = self._timed("surrogate", run)
        return self.spec

    def chain_config(self) -> ChainConfig:
        cfg = self.cfg
        lik = likelihood_for(self.model, self.dataset)
        A, lam = jacobi_preconditioner(lik, self.prior.precision_diag, self.theta_init)
        if cfg.mode == "asymptotic":
            _, _, gmax = condition_23_params(cfg.N, cfg.D, cfg.dim)
            gamma = gmax if cfg.epsilon_target is None else min(
                gmax, gamma_epsilon(cfg.N, cfg.D, cfg.dim, cfg.epsilon_target))
            if cfg.gamma is not None:
                gamma = cfg.gamma
            precondition = None
        else:
            precondition = A if cfg.precondition else None
            scale = lam if cfg.precondition else lam / float(np.min(A)) ** 2
            gamma = cfg.gamma if cfg.gamma is not None else cfg.step_fraction / scale
            if gamma * scale > 1.0:
                msg = f"gamma={gamma:.3g} exceeds 1/Lambda_hat={1.0 / scale:.3g} at theta_init"
                warnings.warn(msg, stacklevel=2)
                self.manifest.warnings.append(msg)
        J_in = cfg.J_in
        if J_in is None:
            if cfg.mode == "asymptotic":
                from .diagnostics import big_b
                J_in = burn_in_lower_bound(cfg.N, cfg.D, cfg.dim, gamma,
                                           big_b(gamma, cfg.N, cfg.D, cfg.dim, cfg.alpha, cfg.c1))
            else:
                J_in = cfg.J // 10
        return ChainConfig(gamma=gamma, J=cfg.J, J_in=J_in, seed=self.seeds["sample"],
                           precondition=precondition, thin=cfg.thin)

    def sample(self):
        def run():
            ccfg = self.chain_config()
            result = run_chain(self.model, self.dataset, self.prior, self.spec, ccfg)
            rows = result.samples if result.samples is not None else result.thinned
            header = ",".join(f"theta{k + 1}" for k in range(self.cfg.D))
            path = self.out / "chain.csv"
            np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")
            self._save(path)
            mean = result.mean
            mpath = self.out / "posterior_mean.csv"
            np.savetxt(mpath, np.column_stack([np.arange(1, mean.size + 1), mean]),
                       delimiter=",", header="k,theta_mean", comments="", fmt=["%d", "%.17g"])
            self._save(mpath)
            info = result.manifest(ccfg, self.cfg.mode)
            info["posterior_mean"] = mean
            self._save(_dump(self.out / "chain.json", info))
            self.results["posterior_mean"] = mean
            self.results["exit_fraction"] = result.exit_fraction
            return result

        self.chain = self._timed("sample", run)
        return self.chain

    def compute_map(self):
        def run():
            theta, trace = compute_map(self.model, self.dataset, self.prior, self.spec)
            self._save(_dump(self.out / "map.json", {
                "theta_map": theta, "iterations": len(trace) - 1, "final_grad_norm": trace[-1]}))
            self.results["theta_map"] = theta
            return theta

        return self._timed("map", run)

    def bounds(self):
        def run():
            cfg = self.cfg
            c_min = None
            if self.curvature is not None and self.curvature.c_min_hat > 0:
                c_min = self.curvature.c_min_hat
            K = self.spec.K if self.spec is not None else condition_23_params(cfg.N, cfg.D, cfg.dim)[1]
            eta = self.spec.eta if self.spec is not None else None
            gamma = self.chain_config().gamma if self.dataset is not None and self.theta_init is not None \
                else condition_23_params(cfg.N, cfg.D, cfg.dim)[2]
            cert = bound_certificate(cfg.N, cfg.D, cfg.dim, cfg.alpha, K, None, gamma,
                                     c_min=c_min, eta=eta, c1=cfg.c1, c2=cfg.c2)
            payload = cert.to_dict()
            payload["mode"] = cfg.mode
            if cfg.mode == "asymptotic":
                eps, Kp, gmax = condition_23_params(cfg.N, cfg.D, cfg.dim)
                payload["asymptotic_constants"] = {"epsilon": eps, "K": Kp, "gamma_max": gmax}
            if self.curvature is not None:
                payload["c_max_hat"] = self.curvature.c_max_hat
            self._save(_dump(self.out / "certificate.json", payload))
            return cert

        return self._timed("bounds", run)

    def run_all(self):
        self.generate()
        self.initialize()
        self.build_surrogate()
        self.sample()
        self.compute_map()
        self.bounds()
        self.finish()
        return self.results

    def finish(self):
        self.manifest.status = "ok"
        summary = {k: v for k, v in self.results.items()}
        self._save(_dump(self.out / "summary.json", summary))
        self.manifest.write(self.out)
