"""
Scenario files.

A scenario file is a YAML document with the sections `system`, `clients` or
`generator`, optionally `convergence` or `convergence_params`, `solver` and
`fl`. The whole document is validated before anything is computed; the first
failure is reported with its key path, e.g. ``clients.2.r``.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.analysis.convergence import constants_from_params
from app.config import (DEFAULT_BANDWIDTH_HZ, DEFAULT_BREAKPOINT_GRID, DEFAULT_CARRIER_HZ, DEFAULT_COMP_RANGE,
                        DEFAULT_DIRICHLET_ALPHA, DEFAULT_G0, DEFAULT_N_LABELS, DEFAULT_N_STARTS,
                        DEFAULT_NOISE_DENSITY_DBM_HZ, DEFAULT_PAYLOAD_BITS, DEFAULT_PROBES, DEFAULT_R_RANGE,
                        DEFAULT_SAMPLE_SIZE, DEFAULT_SAMPLES_RANGE, DEFAULT_TIE_TOL, DEFAULT_TOL_T, DEFAULT_TOL_X,
                        DEFAULT_TX_POWER_DBM, DEFAULT_WAVEGUIDE_LEN_M, MAX_PROBES)
from app.errors import NumericError, ScenarioError
from app.models.base import (ClientProfile, ConvergenceConstants, ConvergenceParams, Scenario, SystemConfig,
                             dbm_to_watts)
from app.models.placement import PlacementOptions
from app.models.sampling import InnerSolveOptions
from app.simulation.scenario_generator import generate_scenario
from app.simulation.synthetic_fl import FLSettings

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class SystemSection(_Section):
    carrier_hz: float = Field(DEFAULT_CARRIER_HZ, gt=0)
    tx_power_dbm: float = DEFAULT_TX_POWER_DBM
    noise_density_dbm_hz: float = DEFAULT_NOISE_DENSITY_DBM_HZ
    bandwidth_hz: float = Field(DEFAULT_BANDWIDTH_HZ, gt=0)
    waveguide_len_m: float = Field(DEFAULT_WAVEGUIDE_LEN_M, gt=0)
    sample_size: int = Field(DEFAULT_SAMPLE_SIZE, ge=1)


class ClientSection(_Section):
    id: Optional[int] = None
    u: float
    r: float = Field(gt=0)
    payload_bits: float = Field(DEFAULT_PAYLOAD_BITS, gt=0)
    compute_time: float = Field(ge=0)
    agg_weight: float = Field(gt=0)
    grad_bound: float = Field(gt=0)
    tx_power_dbm: Optional[float] = None


class GeneratorSection(_Section):
    n_clients: int = Field(ge=1)
    seed: int = Field(0, ge=0)
    r_min: float = Field(DEFAULT_R_RANGE[0], gt=0)
    r_max: float = Field(DEFAULT_R_RANGE[1], gt=0)
    comp_min: float = Field(DEFAULT_COMP_RANGE[0], ge=0)
    comp_max: float = Field(DEFAULT_COMP_RANGE[1], ge=0)
    dirichlet_alpha: float = Field(DEFAULT_DIRICHLET_ALPHA, gt=0)
    n_labels: int = Field(DEFAULT_N_LABELS, ge=1)
    g0: float = Field(DEFAULT_G0, gt=0)
    samples_min: int = Field(DEFAULT_SAMPLES_RANGE[0], ge=1)
    samples_max: int = Field(DEFAULT_SAMPLES_RANGE[1], ge=1)
    payload_bits: float = Field(DEFAULT_PAYLOAD_BITS, gt=0)

    @model_validator(mode='after')
    def _ranges(self):
        if self.r_min > self.r_max:
            raise ValueError("r_min must be <= r_max")
        if self.comp_min > self.comp_max:
            raise ValueError("comp_min must be <= comp_max")
        if self.samples_min > self.samples_max:
            raise ValueError("samples_min must be <= samples_max")
        return self


class ConvergenceSection(_Section):
    omega: float = Field(1.0, gt=0)
    nu: float = 0.0
    c: Optional[List[float]] = None


class ConvergenceParamsSection(_Section):
    smoothness: float = Field(gt=0)
    strong_convexity: float = Field(gt=0)
    local_epochs: int = Field(1, ge=1)
    grad_var_bounds: Union[float, List[float]] = 0.0
    opt_gap: float = 0.0
    init_dist: float = Field(0.0, ge=0)


class SolverSection(_Section):
    n_starts: int = Field(DEFAULT_N_STARTS, ge=1)
    max_iters: int = Field(500, ge=1)
    grad_tol: float = Field(1e-9, gt=0)
    floor_eps: float = Field(1e-12, gt=0, lt=1)
    newton: bool = True
    grid_points: int = Field(DEFAULT_BREAKPOINT_GRID, ge=2)
    probes: int = Field(DEFAULT_PROBES, ge=2)
    max_probes: int = Field(MAX_PROBES, ge=2)
    tol_x: float = Field(DEFAULT_TOL_X, gt=0)
    tol_t: float = Field(DEFAULT_TOL_T, gt=0)
    tie_tol: float = Field(DEFAULT_TIE_TOL, ge=0)


class FLSection(_Section):
    dim: int = Field(10, ge=1)
    smoothness: float = Field(4.0, gt=0)
    strong_convexity: float = Field(1.0, gt=0)
    local_epochs: int = Field(1, ge=1)
    learning_rate: Optional[float] = Field(None, gt=0)
    noise_std: Optional[List[float]] = None
    target_spread: float = Field(1.0, ge=0)
    max_rounds: int = Field(100_000, ge=1)
    deadline: Optional[float] = Field(None, gt=0)
    epsilon: Optional[float] = Field(None, gt=0)
    replicates: int = Field(5, ge=1)


class ScenarioDocument(_Section):
    version: Optional[str] = None  # written by the generate command; informational only
    system: SystemSection = Field(default_factory=SystemSection)
    clients: Optional[List[ClientSection]] = None
    generator: Optional[GeneratorSection] = None
    convergence: Optional[ConvergenceSection] = None
    convergence_params: Optional[ConvergenceParamsSection] = None
    solver: SolverSection = Field(default_factory=SolverSection)
    fl: FLSection = Field(default_factory=FLSection)

    @model_validator(mode='after')
    def _exclusive_sections(self):
        if (self.clients is None) == (self.generator is None):
            raise ValueError("exactly one of 'clients' or 'generator' is required")
        if self.clients is not None and not self.clients:
            raise ValueError("'clients' must list at least one client")
        if self.convergence is not None and self.convergence_params is not None:
            raise ValueError("give at most one of 'convergence' or 'convergence_params'")
        return self


@dataclass(frozen=True, eq=False)
class LoadedScenario:
    """A validated scenario together with the run options it carries."""
    scenario: Scenario
    document: ScenarioDocument
    placement: PlacementOptions
    fl: FLSettings

    @property
    def resolved(self) -> Dict[str, Any]:
        """Fully resolved configuration, for provenance in result documents."""
        body = scenario_to_document(self.scenario)
        body['solver'] = self.document.solver.model_dump()
        body['fl'] = self.document.fl.model_dump()
        return body


def _key_path(loc) -> str:
    return '.'.join(str(part) for part in loc)


def _raise_from_validation(error: ValidationError):
    first = error.errors()[0]
    raise ScenarioError(first['msg'], _key_path(first['loc'])) from error


def parse_document(raw: Any) -> ScenarioDocument:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must contain a mapping at the top level")
    try:
        return ScenarioDocument.model_validate(raw)
    except ValidationError as e:
        _raise_from_validation(e)


def _system(section: SystemSection) -> SystemConfig:
    return SystemConfig.from_dbm(section.carrier_hz, section.tx_power_dbm, section.noise_density_dbm_hz,
                                 section.bandwidth_hz, section.waveguide_len_m, section.sample_size)


def _explicit_clients(doc: ScenarioDocument) -> List[ClientProfile]:
    clients, seen = [], set()
    for index, entry in enumerate(doc.clients):
        cid = index if entry.id is None else entry.id
        if cid in seen:
            raise ScenarioError(f"duplicate client id {cid}", f"clients.{index}.id")
        seen.add(cid)
        try:
            clients.append(ClientProfile(
                id=cid, u=entry.u, r=entry.r, payload_bits=entry.payload_bits, compute_time=entry.compute_time,
                agg_weight=entry.agg_weight, grad_bound=entry.grad_bound,
                tx_power_w=None if entry.tx_power_dbm is None else dbm_to_watts(entry.tx_power_dbm)))
        except NumericError as e:
            raise ScenarioError(str(e), f"clients.{index}") from e
    total = math.fsum(c.agg_weight for c in clients)
    if abs(total - 1.0) > 1e-12:
        raise ScenarioError(f"agg_weight values must sum to 1, got {total!r}", 'clients')
    return clients


def _convergence(doc: ScenarioDocument, clients: List[ClientProfile], cfg: SystemConfig):
    n = len(clients)
    p = np.array([c.agg_weight for c in clients])
    G = np.array([c.grad_bound for c in clients])
    if doc.convergence_params is not None:
        section = doc.convergence_params
        var = section.grad_var_bounds
        var = [float(var)] * n if isinstance(var, (int, float)) else list(var)
        if len(var) != n:
            raise ScenarioError(f"expected {n} entries, got {len(var)}", 'convergence_params.grad_var_bounds')
        try:
            params = ConvergenceParams(
                smoothness=section.smoothness, strong_convexity=section.strong_convexity,
                local_epochs=section.local_epochs, sample_size=cfg.sample_size, grad_var_bounds=tuple(var),
                grad_bounds=tuple(G.tolist()), agg_weights=tuple(p.tolist()), opt_gap=section.opt_gap,
                init_dist=section.init_dist)
        except NumericError as e:
            raise ScenarioError(str(e), 'convergence_params') from e
        return constants_from_params(params), params

    section = doc.convergence or ConvergenceSection()
    c = np.square(p) * np.square(G) if section.c is None else np.asarray(section.c, dtype=float)
    if c.size != n:
        raise ScenarioError(f"expected {n} entries, got {c.size}", 'convergence.c')
    try:
        return ConvergenceConstants(omega=section.omega, nu=section.nu, c=c), None
    except NumericError as e:
        raise ScenarioError(str(e), 'convergence') from e


def build_scenario(doc: ScenarioDocument) -> Scenario:
    try:
        cfg = _system(doc.system)
    except NumericError as e:
        raise ScenarioError(str(e), 'system') from e

    if doc.generator is not None:
        gen = doc.generator.model_dump()
        n_clients, seed = gen.pop('n_clients'), gen.pop('seed')
        if doc.convergence_params is not None:
            gen['convergence_params'] = doc.convergence_params.model_dump()
            var = gen['convergence_params']['grad_var_bounds']
            if not isinstance(var, (int, float)):
                if len(var) != n_clients:
                    raise ScenarioError(f"expected {n_clients} entries, got {len(var)}",
                                        'convergence_params.grad_var_bounds')
                gen['convergence_params']['grad_var_bounds'] = tuple(var)
            else:
                gen['convergence_params']['grad_var_bounds'] = (float(var),) * n_clients
        elif doc.convergence is not None:
            gen['omega'], gen['nu'] = doc.convergence.omega, doc.convergence.nu
        try:
            scn = generate_scenario(n_clients, seed, cfg, gen)
        except NumericError as e:
            raise ScenarioError(str(e), 'generator') from e
        if doc.convergence is not None and doc.convergence.c is not None:
            clients = list(scn.clients)
            conv, _ = _convergence(doc, clients, cfg)
            scn = Scenario(clients=scn.clients, cfg=cfg, conv=conv, seed=seed, label_dists=scn.label_dists,
                           heterogeneity=scn.heterogeneity)
        return scn

    clients = _explicit_clients(doc)
    conv, params = _convergence(doc, clients, cfg)
    return Scenario(clients=tuple(clients), cfg=cfg, conv=conv, conv_params=params)


def _placement_options(section: SolverSection) -> PlacementOptions:
    try:
        inner = InnerSolveOptions(n_starts=section.n_starts, max_iters=section.max_iters,
                                  grad_tol=section.grad_tol, floor_eps=section.floor_eps, newton=section.newton)
        return PlacementOptions(inner=inner, grid_points=section.grid_points, probes=section.probes,
                                max_probes=section.max_probes, tol_x=section.tol_x, tol_t=section.tol_t,
                                tie_tol=section.tie_tol)
    except NumericError as e:
        raise ScenarioError(str(e), 'solver') from e


def _fl_settings(section: FLSection, n_clients: int) -> FLSettings:
    if section.noise_std is not None and len(section.noise_std) != n_clients:
        raise ScenarioError(f"expected {n_clients} entries, got {len(section.noise_std)}", 'fl.noise_std')
    try:
        return FLSettings(dim=section.dim, smoothness=section.smoothness, strong_convexity=section.strong_convexity,
                          local_epochs=section.local_epochs, learning_rate=section.learning_rate,
                          noise_std=None if section.noise_std is None else tuple(section.noise_std),
                          target_spread=section.target_spread, max_rounds=section.max_rounds,
                          deadline=section.deadline)
    except NumericError as e:
        raise ScenarioError(str(e), 'fl') from e


def load_document(doc: ScenarioDocument) -> LoadedScenario:
    scenario = build_scenario(doc)
    return LoadedScenario(scenario=scenario, document=doc, placement=_placement_options(doc.solver),
                          fl=_fl_settings(doc.fl, scenario.n_clients))


def load_scenario(path) -> LoadedScenario:
    """Read, validate and build a scenario file.

    Raises:
        ScenarioError: if the file is missing, is not YAML, or fails validation
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            raw = yaml.safe_load(handle)
    except FileNotFoundError as e:
        raise ScenarioError(f"scenario file not found: {path}") from e
    except yaml.YAMLError as e:
        raise ScenarioError(f"scenario file is not valid YAML: {e}") from e
    loaded = load_document(parse_document(raw))
    logger.info(f"Loaded scenario {path.name}: {loaded.scenario.n_clients} clients, "
                f"L={loaded.scenario.cfg.waveguide_len_m} m, K={loaded.scenario.cfg.sample_size}")
    return loaded


def _convergence_document(scn: Scenario) -> Dict[str, Any]:
    params = scn.conv_params
    if params is None:
        return {'convergence': {'omega': scn.conv.omega, 'nu': scn.conv.nu, 'c': scn.conv.c.tolist()}}
    # grad bounds and weights are carried by the clients
    return {'convergence_params': {
        'smoothness': params.smoothness, 'strong_convexity': params.strong_convexity,
        'local_epochs': params.local_epochs, 'grad_var_bounds': list(params.grad_var_bounds),
        'opt_gap': params.opt_gap, 'init_dist': params.init_dist}}


def scenario_to_document(scn: Scenario) -> Dict[str, Any]:
    """Explicit-clients document for a scenario (transmit powers are written back in dBm)."""
    cfg = scn.cfg
    clients = []
    for c in scn.clients:
        entry = {'id': c.id, 'u': c.u, 'r': c.r, 'payload_bits': c.payload_bits, 'compute_time': c.compute_time,
                 'agg_weight': c.agg_weight, 'grad_bound': c.grad_bound}
        if c.tx_power_w is not None:
            entry['tx_power_dbm'] = 10.0 * math.log10(c.tx_power_w) + 30.0
        clients.append(entry)
    return {
        'system': {
            'carrier_hz': cfg.carrier_hz,
            'tx_power_dbm': 10.0 * math.log10(cfg.tx_power_w) + 30.0,
            'noise_density_dbm_hz': cfg.noise_density_dbm_hz,
            'bandwidth_hz': cfg.bandwidth_hz,
            'waveguide_len_m': cfg.waveguide_len_m,
            'sample_size': cfg.sample_size,
        },
        'clients': clients,
        **_convergence_document(scn),
    }
