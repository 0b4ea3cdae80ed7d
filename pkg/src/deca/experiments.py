"""End-to-end scenario runner: deploy, route, code, recover, complete.

A scenario fixes a field source, a deployment density, an aggregation
scheme, and solver rules, then sweeps deployment seeds against coding
seeds. Every trial yields first- and second-level errors plus the energy
spent relative to raw forwarding on the shortest path tree.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import completion, field, network, recovery, routing, wavelets

PEAKS = "peaks"
SMOOTH_RANDOM = "smooth-random"

JOINT = "JR"
INDEPENDENT = "IR"

RESULT_COLUMNS = [
    "scenario_id", "deploy_seed", "code_seed", "rho", "scheme", "trees",
    "k_total", "eps_vec", "eps_mat", "energy", "energy_baseline", "mu",
    "wall_ms",
]


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str
    field_source: str = PEAKS
    grid_dims: tuple = (100, 100)
    rho: float = 0.18
    comm_radius: float = network.DEFAULT_COMM_RADIUS
    rounds: int = 1
    scheme: str = routing.HYBRID_CS
    num_trees: int = 1
    k_total: int = 0
    budgets: tuple | None = None
    recovery_mode: str = JOINT
    temporal_joint: bool = False
    alpha: float = -1.0
    beta: float = 1.0
    operator_kind: str = wavelets.I_MINUS_LAMBDA
    gamma: int = wavelets.DEFAULT_GAMMA
    threshold: float = wavelets.DEFAULT_THRESHOLD
    temporal_rate: float = 0.5
    temporal_theta: float = 0.97
    correlation_length: float = 25.0
    entry_kind: str = recovery.BERNOULLI
    epsilon_factor: float = 0.01
    delta_factor: float = 1.0
    cs_max_iter: int = recovery.MAX_ITERATIONS
    mc_max_iter: int = completion.MAX_ITERATIONS
    num_deployments: int = 10
    num_codings: int = 10
    base_seed: int = 0
    field_seed: int | None = None
    cache_dir: str | None = None

    def __post_init__(self):
        if self.scheme not in (routing.NON_AGG, routing.PLAIN_CS, routing.HYBRID_CS):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.recovery_mode not in (JOINT, INDEPENDENT):
            raise ValueError(f"recovery mode must be {JOINT} or {INDEPENDENT}")
        if self.scheme != routing.NON_AGG:
            budgets = self.resolved_budgets()
            if self.budgets is not None and self.k_total:
                if sum(self.budgets) != self.k_total:
                    raise ValueError("budgets must sum to k_total")
            if len(budgets) != self.num_trees:
                raise ValueError("need one budget per tree")
        if self.field_source not in (PEAKS, SMOOTH_RANDOM) and not os.path.exists(
            self.field_source
        ):
            raise ValueError(f"field source file not found: {self.field_source}")
        if self.temporal_joint and self.rounds < 2:
            raise ValueError("temporal joint recovery needs at least 2 rounds")
        if self.temporal_joint and self.num_trees != 1:
            raise ValueError("temporal joint recovery supports a single tree only")

    def resolved_budgets(self) -> tuple:
        if self.budgets is not None:
            return tuple(int(b) for b in self.budgets)
        if self.k_total <= 0:
            raise ValueError("k_total or budgets required for CS schemes")
        base, extra = divmod(self.k_total, self.num_trees)
        return tuple(base + (1 if i < extra else 0) for i in range(self.num_trees))

    def to_json_dict(self) -> dict:
        doc = dict(self.__dict__)
        doc["grid_dims"] = list(self.grid_dims)
        doc["budgets"] = list(self.budgets) if self.budgets is not None else None
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ScenarioConfig":
        kwargs = dict(doc)
        if "grid_dims" in kwargs:
            kwargs["grid_dims"] = tuple(kwargs["grid_dims"])
        if kwargs.get("budgets") is not None:
            kwargs["budgets"] = tuple(kwargs["budgets"])
        return cls(**kwargs)


def load_scenario_json(path) -> ScenarioConfig:
    with open(path) as fh:
        return ScenarioConfig.from_json_dict(json.load(fh))


def save_scenario_json(config: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_json_dict(), fh, indent=2)


@dataclass(frozen=True)
class TrialRecord:
    scenario_id: str
    deploy_seed: int
    code_seed: int
    rho: float
    scheme: str
    num_trees: int
    k_total: int
    eps_vec: float
    eps_mat: float
    energy: float
    energy_baseline: float
    mu: float
    wall_ms: float
    eps_vec_rounds: tuple = ()
    eps_mat_rounds: tuple = ()
    cs_residual: float = float("nan")
    cs_converged: bool = True
    mc_converged: bool = True
    error: str | None = None


def make_smoke_config(scenario_id: str = "smoke", cache_dir=None) -> ScenarioConfig:
    """Small, fast preset exercising the whole pipeline."""
    return ScenarioConfig(
        scenario_id=scenario_id,
        grid_dims=(30, 30),
        rho=0.2,
        k_total=13,
        num_deployments=3,
        num_codings=3,
        cache_dir=cache_dir,
    )


def base_fields(config: ScenarioConfig):
    """Per-round ground-truth fields; later rounds follow an AR(1) walk."""
    seed = config.base_seed if config.field_seed is None else config.field_seed
    a, b = config.grid_dims
    if config.field_source == PEAKS:
        base = field.generate_peaks_field(a, b)
    elif config.field_source == SMOOTH_RANDOM:
        base = field.generate_smooth_random_field(
            a, b, correlation_length=config.correlation_length, seed=seed
        )
    else:
        base = field.load_field_csv(config.field_source)
        if base.values.shape != (a, b):
            raise ValueError("field file dimensions do not match grid_dims")
    fields = [base]
    theta = config.temporal_theta
    scale = float(np.std(base.values))
    for r in range(1, config.rounds):
        fresh = field.generate_smooth_random_field(
            a, b, correlation_length=config.correlation_length, seed=seed + 7000 + r
        )
        values = theta * fields[-1].values + math.sqrt(1 - theta**2) * scale * fresh.values
        fields.append(field.FieldGrid(rows=a, cols=b, values=values, round_index=r))
    return fields


def build_forest(config: ScenarioConfig, graph, sink) -> routing.AggregationForest:
    if config.scheme == routing.NON_AGG:
        return routing.build_spt(graph, sink)
    budgets = config.resolved_budgets()
    if config.num_trees == 1:
        forest = routing.build_hybrid_tree(graph, sink, budgets[0])
    else:
        forest = routing.partition_forest(graph, sink, config.num_trees, budgets)
    if config.scheme == routing.PLAIN_CS:
        forest = routing.AggregationForest(
            scheme=routing.PLAIN_CS, sink=sink, trees=forest.trees
        )
    return forest


def _basis_cache_key(
    config: ScenarioConfig, n: int, deploy_seed: int, operator_kind: str
) -> str:
    joint = "st" if config.temporal_joint else "sp"
    rounds = config.rounds if config.temporal_joint else 1
    return (
        f"basis_{joint}_n{n}_d{deploy_seed}_a{config.alpha}_b{config.beta}_"
        f"{operator_kind}_g{config.gamma}_t{config.threshold}_"
        f"r{rounds}_rate{config.temporal_rate}.npz"
    )


def _get_basis(config: ScenarioConfig, positions, deploy_seed: int):
    coupling = None
    kinds = [config.operator_kind]
    if config.temporal_joint:
        coupling = wavelets.TemporalCoupling(
            rounds=config.rounds, rate=config.temporal_rate
        )
        # strong inter-round coupling can push the I-Lambda spectrum out of
        # band; Lambda/2 always fits since Lambda stays within [0, 2]
        if config.operator_kind == wavelets.I_MINUS_LAMBDA:
            kinds.append(wavelets.LAMBDA_OVER_2)
    last_err = None
    for kind in kinds:
        spec = wavelets.LaplacianSpec(
            alpha=config.alpha, beta=config.beta, operator_kind=kind
        )
        path = None
        if config.cache_dir:
            os.makedirs(config.cache_dir, exist_ok=True)
            path = os.path.join(
                config.cache_dir,
                _basis_cache_key(config, len(positions), deploy_seed, kind),
            )
            if os.path.exists(path):
                return wavelets.load_basis_npz(path, expect=spec)
        try:
            basis = wavelets.basis_from_positions(
                positions, spec, config.gamma, config.threshold, coupling
            )
        except wavelets.SpectrumError as err:
            last_err = err
            continue
        if path:
            wavelets.save_basis_npz(path, basis, spec)
        return basis
    raise last_err


class DeploymentContext:
    """Everything reusable across coding seeds for one deployment."""

    def __init__(self, config: ScenarioConfig, deploy_seed: int):
        self.deployment = network.deploy(config.grid_dims, config.rho, seed=deploy_seed)
        self.graph = network.build_graph(self.deployment, comm_radius=config.comm_radius)
        sink = self.deployment.sink_id
        self.forest = build_forest(config, self.graph, sink)
        spt = (
            self.forest
            if config.scheme == routing.NON_AGG
            else routing.build_spt(self.graph, sink)
        )
        self.energy_baseline = routing.account_traffic(spt, self.graph).total_energy
        self.energy = routing.account_traffic(self.forest, self.graph).total_energy
        # the sink reads its own cell and joins the first tree's coding group
        # at zero link cost, so the groups cover every signal coordinate
        self.coding_groups = [
            np.asarray(sorted(t.members + ((sink,) if i == 0 else ())), dtype=int)
            for i, t in enumerate(self.forest.trees)
        ]
        self.node_order = np.concatenate(self.coding_groups)
        self.basis = None
        self.tree_bases = None
        self.mu = float("nan")
        if config.scheme == routing.NON_AGG:
            return
        self.basis = _get_basis(config, self.deployment.positions, deploy_seed)
        n = self.deployment.n
        if config.temporal_joint:
            # each coding group owns the same coordinates in every round
            groups = [
                np.concatenate([m + r * n for r in range(config.rounds)])
                for m in self.coding_groups
            ]
        else:
            groups = self.coding_groups
        self.mu = recovery.compute_energy_overlap(groups, self.basis.basis_matrix)
        if config.recovery_mode == INDEPENDENT and config.num_trees > 1:
            spec = wavelets.LaplacianSpec(
                alpha=config.alpha, beta=config.beta, operator_kind=config.operator_kind
            )
            self.tree_bases = [
                wavelets.basis_from_positions(
                    self.deployment.positions[m], spec, config.gamma, config.threshold
                )
                for m in self.coding_groups
            ]


def _tree_blocks(phi: recovery.SensingMatrix, budgets, members):
    if phi.layout == recovery.DENSE:
        return [phi.matrix]
    out = []
    r0 = c0 = 0
    for k_i, m in zip(budgets, members):
        out.append(phi.matrix[r0 : r0 + k_i, c0 : c0 + len(m)])
        r0 += k_i
        c0 += len(m)
    return out


def _sensing_seed(config: ScenarioConfig, code_seed: int, round_index: int) -> int:
    return code_seed * max(config.rounds, 1) + round_index


def _recover_spatial(config, ctx, u, code_seed, round_index):
    """One round of coding and first-level decoding; returns (u_hat, residual, ok)."""
    budgets = config.resolved_budgets()
    members = ctx.coding_groups
    n = ctx.deployment.n
    multi = len(members) > 1
    phi = recovery.make_sensing_matrix(
        k=sum(budgets),
        n=n,
        layout=recovery.BLOCK_DIAGONAL if multi else recovery.DENSE,
        entry_kind=config.entry_kind,
        seed=_sensing_seed(config, code_seed, round_index),
        blocks=[(k_i, len(m)) for k_i, m in zip(budgets, members)] if multi else None,
    )
    blocks = _tree_blocks(phi, budgets, members)
    per_tree = [blk @ u[m] for blk, m in zip(blocks, members)]
    if config.recovery_mode == INDEPENDENT and multi:
        u_hat = np.empty(n)
        res_sq = 0.0
        ok = True
        for blk, m, v_t, basis_t in zip(blocks, members, per_tree, ctx.tree_bases):
            eps_t = config.epsilon_factor * np.linalg.norm(v_t)
            res_t = recovery.recover(
                v_t, blk, basis_t.basis_matrix, eps_t, max_iter=config.cs_max_iter
            )
            u_hat[m] = res_t.u_hat
            res_sq += res_t.residual_l2**2
            ok = ok and res_t.converged
        return u_hat, math.sqrt(res_sq), ok
    v = np.concatenate(per_tree)
    epsilon = config.epsilon_factor * np.linalg.norm(v)
    result = recovery.recover_joint(
        per_tree, phi, ctx.basis.basis_matrix, epsilon,
        node_order=ctx.node_order, max_iter=config.cs_max_iter,
    )
    return result.u_hat, result.residual_l2, result.converged


def _recover_temporal(config, ctx, samples, code_seed):
    """Joint decode across all rounds against the space-time basis."""
    n = ctx.deployment.n
    rounds = config.rounds
    k_round = sum(config.resolved_budgets())
    phi = recovery.make_sensing_matrix(
        k=k_round * rounds,
        n=n * rounds,
        layout=recovery.BLOCK_DIAGONAL,
        entry_kind=config.entry_kind,
        seed=_sensing_seed(config, code_seed, 0),
        blocks=[(k_round, n)] * rounds,
    )
    blocks = _tree_blocks(phi, [k_round] * rounds, [np.arange(n)] * rounds)
    per_round = [blk @ u for blk, u in zip(blocks, samples)]
    v = np.concatenate(per_round)
    epsilon = config.epsilon_factor * np.linalg.norm(v)
    result = recovery.recover_joint(
        per_round, phi, ctx.basis.basis_matrix, epsilon, max_iter=config.cs_max_iter
    )
    u_hats = [result.u_hat[r * n : (r + 1) * n] for r in range(rounds)]
    residuals = [
        float(np.linalg.norm(blk @ uh - v_r))
        for blk, uh, v_r in zip(blocks, u_hats, per_round)
    ]
    return u_hats, residuals, result.converged


def run_trial(config: ScenarioConfig, ctx: DeploymentContext, fields, deploy_seed, code_seed):
    t0 = time.perf_counter()
    samples = [field.sample_field(f, ctx.deployment) for f in fields]
    cs_ok = True
    if config.scheme == routing.NON_AGG:
        u_hats = samples
        residuals = [0.0] * len(samples)
    elif config.temporal_joint:
        u_hats, residuals, cs_ok = _recover_temporal(config, ctx, samples, code_seed)
    else:
        u_hats, residuals = [], []
        for r, u in enumerate(samples):
            u_hat, residual, ok = _recover_spatial(config, ctx, u, code_seed, r)
            u_hats.append(u_hat)
            residuals.append(residual)
            cs_ok = cs_ok and ok
    eps_vec_rounds = []
    eps_mat_rounds = []
    mc_ok = True
    for u, u_hat, residual, f in zip(samples, u_hats, residuals, fields):
        eps_vec_rounds.append(completion.vector_error(u_hat, u))
        obs = completion.observations_from_deployment(ctx.deployment, u_hat)
        comp = completion.complete(
            obs, config.delta_factor * residual, max_iter=config.mc_max_iter
        )
        mc_ok = mc_ok and comp.converged
        eps_mat_rounds.append(completion.field_error(comp.X_hat, f.values))
    wall_ms = (time.perf_counter() - t0) * 1000.0
    return TrialRecord(
        scenario_id=config.scenario_id,
        deploy_seed=deploy_seed,
        code_seed=code_seed,
        rho=config.rho,
        scheme=config.scheme,
        num_trees=config.num_trees,
        k_total=sum(config.resolved_budgets()) if config.scheme != routing.NON_AGG else 0,
        eps_vec=float(np.mean(eps_vec_rounds)),
        eps_mat=float(np.mean(eps_mat_rounds)),
        energy=ctx.energy,
        energy_baseline=ctx.energy_baseline,
        mu=ctx.mu,
        wall_ms=wall_ms,
        eps_vec_rounds=tuple(eps_vec_rounds),
        eps_mat_rounds=tuple(eps_mat_rounds),
        cs_residual=float(np.linalg.norm(residuals)),
        cs_converged=cs_ok,
        mc_converged=mc_ok,
    )


def _error_record(config, deploy_seed, code_seed, exc) -> TrialRecord:
    nan = float("nan")
    return TrialRecord(
        scenario_id=config.scenario_id,
        deploy_seed=deploy_seed,
        code_seed=code_seed,
        rho=config.rho,
        scheme=config.scheme,
        num_trees=config.num_trees,
        k_total=config.k_total,
        eps_vec=nan,
        eps_mat=nan,
        energy=nan,
        energy_baseline=nan,
        mu=nan,
        wall_ms=nan,
        cs_converged=False,
        mc_converged=False,
        error=f"{type(exc).__name__}: {exc}",
    )


def run_scenario(config: ScenarioConfig) -> list:
    """Sweep deployments against coding seeds; trial failures become records."""
    fields = base_fields(config)
    records = []
    for d in range(config.num_deployments):
        deploy_seed = config.base_seed + d
        try:
            ctx = DeploymentContext(config, deploy_seed)
        except Exception as exc:
            for c in range(config.num_codings):
                records.append(_error_record(config, deploy_seed, config.base_seed + 1000 + c, exc))
            continue
        for c in range(config.num_codings):
            code_seed = config.base_seed + 1000 + c
            try:
                records.append(run_trial(config, ctx, fields, deploy_seed, code_seed))
            except Exception as exc:
                records.append(_error_record(config, deploy_seed, code_seed, exc))
    return records


def _fmt(value) -> str:
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def emit_results_csv(records, path) -> None:
    """One row per trial plus mean/std rows per configuration cell."""
    groups = {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for rec in records:
            writer.writerow([
                rec.scenario_id, rec.deploy_seed, rec.code_seed, _fmt(rec.rho),
                rec.scheme, rec.num_trees, rec.k_total, _fmt(rec.eps_vec),
                _fmt(rec.eps_mat), _fmt(rec.energy), _fmt(rec.energy_baseline),
                _fmt(rec.mu), _fmt(rec.wall_ms),
            ])
            key = (rec.scenario_id, rec.scheme, rec.num_trees, rec.k_total, rec.rho)
            groups.setdefault(key, []).append(rec)
        for key, recs in groups.items():
            scenario_id, scheme, trees, k_total, rho = key
            cols = {
                name: np.array([getattr(r, name) for r in recs], dtype=float)
                for name in ("eps_vec", "eps_mat", "energy", "energy_baseline", "mu")
            }
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                means = {n: float(np.nanmean(v)) for n, v in cols.items()}
                stds = {n: float(np.nanstd(v)) for n, v in cols.items()}
            for label, stats in (("mean", means), ("std", stds)):
                writer.writerow([
                    scenario_id, label, "", _fmt(rho), scheme, trees, k_total,
                    _fmt(stats["eps_vec"]), _fmt(stats["eps_mat"]),
                    _fmt(stats["energy"]), _fmt(stats["energy_baseline"]),
                    _fmt(stats["mu"]), "",
                ])
