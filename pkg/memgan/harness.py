"""
Experiment drivers.

Each experiment builds its generators and discriminators from streams derived
from (master_seed, experiment, cell, ...), so results do not depend on thread
scheduling. Experiments return plain report dictionaries; `reporting` writes
them out.

"For all discriminators" is approximated by multi-restart adversarial training,
so every reported gap is a lower bound on the true supremum.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from tqdm import tqdm

from . import noise_channel
from .adversary import (
    Discriminator,
    JointBatch,
    MeasuringFunction,
    PairSampler,
    analytic_lipschitz_bound,
    bigan_objective,
    disc_scores,
    fake_pair_sampler,
    network_pair_sampler,
    objective_on_samples,
    phi,
    real_pair_sampler,
    train_discriminator,
)
from .compiler import compile_generator, disagreement_fraction
from .config import ExperimentConfig
from .distributions import DimensionSpec, ImageSource, open_image_source, sample_seeds
from .generator import (
    MemorizingGenerator,
    TheoremBudget,
    build_generator,
    generate_batch,
    smallest_k_for_support,
    support_census,
    theorem_support_size,
)
from .partition import BlockPartition, block_indices, block_tuples, compute_thresholds, sample_within_blocks
from .relu_network import forward, nonzero_weights
from .seeding import derive_rng

logger = logging.getLogger(__name__)

# Sample size used to estimate the largest discriminator input norm.
NORM_SAMPLES = 1000


# Non-colliding sets ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NonCollidingSet:
    """m seeds, row t - 1 drawn from the conditional of nu on block t."""

    seeds: NDArray[np.float64]
    partition: BlockPartition

    def __post_init__(self) -> None:
        part = self.partition
        if self.seeds.shape != (part.m, part.d_tilde):
            raise ValueError(f"Expected {part.m} seeds of width {part.d_tilde}, got {self.seeds.shape}")
        indices = block_indices(block_tuples(self.seeds, part), part)
        if not np.array_equal(indices, np.arange(1, part.m + 1)):
            raise ValueError("Seeds are not one per block in block order")

    def __len__(self) -> int:
        return self.partition.m


def sample_noncolliding(rng: np.random.Generator, part: BlockPartition) -> NonCollidingSet:
    """One independent conditional draw per block."""
    seeds = sample_within_blocks(rng, np.arange(1, part.m + 1), part)
    return NonCollidingSet(seeds=seeds, partition=part)


def _fake_phi(D: Discriminator, gen: MemorizingGenerator, seeds: NDArray[np.float64], mf: MeasuringFunction) -> NDArray[np.float64]:
    return phi(disc_scores(D, generate_batch(gen, seeds), seeds), mf)


def stratified_set_means(
    D: Discriminator,
    gen: MemorizingGenerator,
    sets: Sequence[NonCollidingSet],
    mf: MeasuringFunction,
) -> NDArray[np.float64]:
    """Per-set mean of phi(D(G(z), z)) over the seeds of each non-colliding set."""
    return np.array([float(np.mean(_fake_phi(D, gen, s.seeds, mf))) for s in sets])


@dataclass(frozen=True)
class NoncollidingCheck:
    stratified_mean: float
    direct_mean: float
    std_err: float
    z_score: float

    def to_dict(self) -> dict:
        return asdict(self)


def _z_score(difference: float, std_err: float) -> float:
    if difference == 0:
        return 0.0
    return difference / std_err if std_err > 0 else math.copysign(math.inf, difference)


def check_noncolliding_identity(
    D: Discriminator,
    gen: MemorizingGenerator,
    n_sets: int,
    n_direct: int,
    rng: np.random.Generator,
    mf: Optional[MeasuringFunction] = None,
) -> NoncollidingCheck:
    """
    Compare E_{T ~ non-colliding} E_{z ~ T} phi(D(G(z), z)) with the direct
    E_{z ~ nu} phi(D(G(z), z)). The two are equal for any fixed D.

    Raises:
        ValueError: If n_sets or n_direct is below 100
    """
    if n_sets < 100 or n_direct < 100:
        raise ValueError("n_sets and n_direct must be at least 100")
    mf = mf or MeasuringFunction()
    sets = [sample_noncolliding(rng, gen.partition) for _ in range(n_sets)]
    set_means = stratified_set_means(D, gen, sets, mf)
    direct = _fake_phi(D, gen, sample_seeds(rng, gen.spec, n_direct), mf)

    stratified_mean = float(np.mean(set_means))
    direct_mean = float(np.mean(direct))
    std_err = math.sqrt(
        float(np.var(set_means, ddof=1)) / n_sets + float(np.var(direct, ddof=1)) / n_direct
    )
    return NoncollidingCheck(
        stratified_mean=stratified_mean,
        direct_mean=direct_mean,
        std_err=std_err,
        z_score=_z_score(stratified_mean - direct_mean, std_err),
    )


# Shared cell plumbing -------------------------------------------------------------


@dataclass
class Cell:
    """Partition, image source and reference generator of one grid point."""

    spec: DimensionSpec
    partition: BlockPartition
    source: ImageSource
    generator: MemorizingGenerator


def build_cell(cfg: ExperimentConfig, spec: DimensionSpec, k: int, *labels: object) -> Cell:
    part = compute_thresholds(k, spec.sigma, spec.d_tilde, cfg.max_support)
    source = open_image_source(cfg.image_model, spec)
    gen = build_generator(derive_rng(cfg.master_seed, *labels, "generator"), part, source, spec)
    return Cell(spec=spec, partition=part, source=source, generator=gen)


def train_for_config(
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    real: PairSampler,
    fake: PairSampler,
    spec: DimensionSpec,
    threads: int = 1,
    show_progress: bool = False,
):
    t = cfg.training
    return train_discriminator(
        rng,
        real,
        fake,
        layer_sizes=cfg.layer_sizes(spec),
        steps=t.steps,
        learning_rate=t.learning_rate,
        batch_size=t.batch_size,
        weight_clip=cfg.discriminator.weight_clip,
        restarts=t.restarts,
        momentum=t.momentum,
        init_scale=cfg.discriminator.init_scale,
        eval_size=cfg.evaluation.n_real,
        mf=measuring_function(cfg),
        threads=threads,
        show_progress=show_progress,
    )


def measuring_function(cfg: ExperimentConfig) -> MeasuringFunction:
    return MeasuringFunction(Delta=cfg.discriminator.Delta)


def _run_cells(
    cells: Sequence[Any],
    run: Callable[[Any], Dict[str, Any]],
    describe: Callable[[Any], Dict[str, Any]],
    threads: int,
    show_progress: bool,
    name: str,
) -> List[Dict[str, Any]]:
    """Run grid cells in parallel, collect rows in submission order, isolate failures."""

    def guarded(cell: Any) -> Dict[str, Any]:
        try:
            return run(cell)
        except Exception as e:
            logger.warning("%s cell %s failed: %s", name, describe(cell), e)
            return {**describe(cell), "error": str(e)}

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [pool.submit(guarded, cell) for cell in cells]
        return [f.result() for f in tqdm(futures, desc=name, disable=not show_progress)]


# Collapse -----------------------------------------------------------------------


def theorem_summary(cfg: ExperimentConfig, spec: DimensionSpec) -> Dict[str, Any]:
    """Support size the bound asks for, given the discriminator family of cfg."""
    layer_sizes = cfg.layer_sizes(spec)
    family = Discriminator.zeros(layer_sizes, cfg.discriminator.weight_clip)
    lipschitz = cfg.budget.lipschitz
    if lipschitz is None:
        source = open_image_source(cfg.image_model, spec)
        norm_batch = real_pair_sampler(source, spec)(
            derive_rng(cfg.master_seed, "theorem", "norm"), NORM_SAMPLES
        )
        input_norm = float(np.max(np.linalg.norm(norm_batch.inputs(), axis=1)))
        lipschitz = analytic_lipschitz_bound(family, input_norm)
    mf = measuring_function(cfg)
    budget = TheoremBudget(
        p=family.capacity_p,
        Delta=mf.Delta,
        L=max(lipschitz, 1.0),
        L_phi=mf.L_phi,
        epsilon=cfg.budget.epsilon,
    )
    m_target = theorem_support_size(budget)
    return {
        **asdict(budget),
        "m_target": m_target,
        "k_for_target": smallest_k_for_support(m_target, spec.d_tilde),
    }


def run_collapse_experiment(cfg: ExperimentConfig, show_progress: bool = False) -> Dict[str, Any]:
    """
    For every k: build and compile the generator, train the adversary against
    the compiled network, and record gap, support census and weight counts
    side by side.
    """
    spec = cfg.spec
    mf = measuring_function(cfg)
    encoder = noise_channel.encoder_as_network(spec)
    encoder_weights = nonzero_weights(encoder)

    def run(k: int) -> Dict[str, Any]:
        cell = build_cell(cfg, spec, k, "collapse", k)
        net, compiled = compile_generator(cell.generator, cfg.compile_delta)
        real = real_pair_sampler(cell.source, spec, encoder=lambda x: forward(encoder, x))
        fake = network_pair_sampler(net, spec)
        trained = train_for_config(cfg, derive_rng(cfg.master_seed, "collapse", k, "train"), real, fake, spec)
        fresh = bigan_objective(
            trained.discriminator,
            real,
            fake,
            cfg.evaluation.n_real,
            cfg.evaluation.n_fake,
            derive_rng(cfg.master_seed, "collapse", k, "eval"),
            mf,
        )
        census_rng = derive_rng(cfg.master_seed, "collapse", k, "census")
        census = support_census(cell.generator, cfg.evaluation.census_samples, census_rng)
        n_check = cfg.evaluation.census_samples
        disagreement = disagreement_fraction(net, cell.generator, sample_seeds(census_rng, spec, n_check))
        logger.info("collapse k=%d m=%d: gap %.4f +- %.4f, census %d", k, cell.partition.m, fresh.gap, fresh.std_err, census)
        return {
            "k": k,
            "m": cell.partition.m,
            "gap": fresh.gap,
            "std_err": fresh.std_err,
            "real_term": fresh.real_term,
            "fake_term": fresh.fake_term,
            "train_eval_gap": trained.estimate.gap,
            "train_eval_std_err": trained.estimate.std_err,
            "support_census": census,
            "encoder_weights": encoder_weights,
            "compiled_weights": compiled.nonzero_weights,
            "predicted_bound": compiled.predicted_bound,
            "ramp_width": compiled.ramp_width,
            "compiled_disagreement": disagreement,
            "compiled_disagreement_std_err": math.sqrt(disagreement * (1.0 - disagreement) / n_check),
        }

    rows = _run_cells(
        cfg.k_grid,
        run,
        lambda k: {"k": k, "m": k**spec.d_tilde},
        cfg.threads,
        show_progress,
        "collapse",
    )
    ok = [row for row in rows if "error" not in row]
    gaps = [row["gap"] for row in ok]
    trend = {
        "monotone_non_increasing": all(a >= b for a, b in zip(gaps, gaps[1:])),
        "gap_ratio_last_first": gaps[-1] / gaps[0] if len(gaps) > 1 and gaps[0] > 0 else None,
    }
    return {
        "experiment": "collapse",
        "capacity_p": Discriminator.zeros(cfg.layer_sizes(spec)).capacity_p,
        "theorem": theorem_summary(cfg, spec),
        "trend": trend,
        "rows": rows,
    }


# Concentration ------------------------------------------------------------------


def stratified_means_across_generators(
    D: Discriminator,
    part: BlockPartition,
    source: ImageSource,
    spec: DimensionSpec,
    redraw_rngs: Sequence[np.random.Generator],
    sets: Sequence[NonCollidingSet],
    mf: MeasuringFunction,
) -> NDArray[np.float64]:
    """
    Redraw the memorized images once per stream and return each generator's
    stratified objective over the same non-colliding sets.
    """
    means = []
    for redraw_rng in redraw_rngs:
        gen = build_generator(redraw_rng, part, source, spec)
        means.append(float(np.mean(stratified_set_means(D, gen, sets, mf))))
    return np.asarray(means)


def run_concentration_experiment(cfg: ExperimentConfig, show_progress: bool = False) -> Dict[str, Any]:
    """
    Fix one trained D per m and measure how much the stratified objective moves
    when the memorized images are redrawn. Bounded differences predict a
    spread of order 1/sqrt(m).

    This checks the direction that is computable: D is fixed before G is
    redrawn.
    """
    conc = cfg.concentration
    spec = DimensionSpec(d=cfg.spec.d, d_tilde=conc.d_tilde, sigma=cfg.spec.sigma)
    mf = measuring_function(cfg)

    def run(k: int) -> Dict[str, Any]:
        cell = build_cell(cfg, spec, k, "concentration", k)
        real = real_pair_sampler(cell.source, spec)
        fake = fake_pair_sampler(cell.generator)
        D = train_for_config(cfg, derive_rng(cfg.master_seed, "concentration", k, "train"), real, fake, spec).discriminator
        sets_rng = derive_rng(cfg.master_seed, "concentration", k, "sets")
        sets = [sample_noncolliding(sets_rng, cell.partition) for _ in range(conc.sets_per_generator)]
        redraws = [derive_rng(cfg.master_seed, "concentration", k, "redraw", i) for i in range(conc.trials)]
        means = stratified_means_across_generators(D, cell.partition, cell.source, spec, redraws, sets, mf)
        std = float(np.std(means, ddof=1))
        return {
            "k": k,
            "m": cell.partition.m,
            "mean": float(np.mean(means)),
            "mean_std_err": std / math.sqrt(conc.trials),
            "std": std,
            "std_std_err": std / math.sqrt(2 * (conc.trials - 1)),
            "min": float(np.min(means)),
            "max": float(np.max(means)),
        }

    rows = _run_cells(
        conc.k_grid,
        run,
        lambda k: {"k": k, "m": k**spec.d_tilde},
        cfg.threads,
        show_progress,
        "concentration",
    )
    ratios = []
    ok = [row for row in rows if "error" not in row]
    for smaller, larger in zip(ok, ok[1:]):
        ratios.append(
            {
                "m_from": smaller["m"],
                "m_to": larger["m"],
                "std_ratio": larger["std"] / smaller["std"] if smaller["std"] > 0 else None,
                "predicted_ratio": math.sqrt(smaller["m"] / larger["m"]),
            }
        )
    return {"experiment": "concentration", "trials": conc.trials, "rows": rows, "ratios": ratios}


# Finite sample --------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteSampleComparison:
    empirical_gap: float
    empirical_std_err: float
    population_gap: float
    population_std_err: float
    difference: float
    combined_std_err: float

    def to_dict(self) -> dict:
        return asdict(self)


def compare_finite_sample(
    D: Discriminator,
    training_set: JointBatch,
    seed_set: JointBatch,
    m: int,
    real: PairSampler,
    fake: PairSampler,
    n_population: int,
    rng: np.random.Generator,
    mf: MeasuringFunction,
) -> FiniteSampleComparison:
    """
    Objective on fixed sets S and T against fresh population-scale samples.

    Raises:
        ValueError: If |S| or |T| is smaller than m
    """
    if len(training_set) < m or len(seed_set) < m:
        raise ValueError(f"|S| and |T| must be at least m={m}, got {len(training_set)} and {len(seed_set)}")
    empirical = objective_on_samples(D, training_set, seed_set, mf)
    population = bigan_objective(D, real, fake, n_population, n_population, rng, mf)
    return FiniteSampleComparison(
        empirical_gap=empirical.gap,
        empirical_std_err=empirical.std_err,
        population_gap=population.gap,
        population_std_err=population.std_err,
        difference=abs(empirical.gap - population.gap),
        combined_std_err=math.hypot(empirical.std_err, population.std_err),
    )


def run_finite_sample_experiment(cfg: ExperimentConfig, show_progress: bool = False) -> Dict[str, Any]:
    """Draw S and T of size factor * m and compare with population estimates."""
    fs = cfg.finite_sample
    spec = cfg.spec
    mf = measuring_function(cfg)
    cell = build_cell(cfg, spec, fs.k, "finite-sample", fs.k)
    m = cell.partition.m
    size = math.ceil(fs.factor * m)
    real = real_pair_sampler(cell.source, spec)
    fake = fake_pair_sampler(cell.generator)
    D = train_for_config(cfg, derive_rng(cfg.master_seed, "finite-sample", "train"), real, fake, spec, cfg.threads, show_progress).discriminator
    training_set = real(derive_rng(cfg.master_seed, "finite-sample", "S"), size)
    seed_set = fake(derive_rng(cfg.master_seed, "finite-sample", "T"), size)
    comparison = compare_finite_sample(
        D,
        training_set,
        seed_set,
        m,
        real,
        fake,
        cfg.evaluation.n_real,
        derive_rng(cfg.master_seed, "finite-sample", "population"),
        mf,
    )
    logger.info("finite-sample m=%d |S|=%d: difference %.4f (se %.4f)", m, size, comparison.difference, comparison.combined_std_err)
    return {
        "experiment": "finite-sample",
        "rows": [{"k": fs.k, "m": m, "set_size": size, **comparison.to_dict()}],
    }


# Birthday ---------------------------------------------------------------------------


def run_birthday_experiment(
    gen: MemorizingGenerator, s: int, trials: int, rng: np.random.Generator
) -> float:
    """
    Fraction of trials in which s generator outputs contain two with identical
    non-spliced coordinates.

    Raises:
        ValueError: If s < 2 or trials < 1
    """
    if s < 2:
        raise ValueError("Sample size s must be at least 2")
    if trials < 1:
        raise ValueError("trials must be positive")
    clean = noise_channel.clean_index(gen.spec)
    hits = 0
    for _ in range(trials):
        outputs = generate_batch(gen, sample_seeds(rng, gen.spec, s))[:, clean]
        if np.unique(outputs, axis=0).shape[0] < s:
            hits += 1
    return hits / trials


def birthday_collision_probability(m: int, s: int) -> float:
    """Exact P(collision) for s uniform draws from m values: 1 - prod_{i<s} (1 - i/m)."""
    if s > m:
        return 1.0
    return 1.0 - float(np.prod(1.0 - np.arange(s) / m))


def birthday_approximation(m: int, s: int) -> float:
    return 1.0 - math.exp(-s * (s - 1) / (2.0 * m))


def birthday_support_estimate(sample_sizes: Sequence[int], frequencies: Sequence[float]) -> Dict[str, Any]:
    """
    Support implied by the smallest s whose collision frequency reaches 1/2:
    the rule of thumb s^2 and the median-matching s^2 / (2 ln 2).
    """
    for s, freq in sorted(zip(sample_sizes, frequencies)):
        if freq >= 0.5:
            return {"s_half": s, "support_s2": s * s, "support_median": s * s / (2 * math.log(2))}
    return {"s_half": None, "support_s2": None, "support_median": None}


def run_birthday_sweep(cfg: ExperimentConfig, show_progress: bool = False) -> Dict[str, Any]:
    """Collision frequency curve against the closed form for one generator."""
    bd = cfg.birthday
    cell = build_cell(cfg, cfg.spec, bd.k, "birthday", bd.k)
    m = cell.partition.m

    def run(s: int) -> Dict[str, Any]:
        freq = run_birthday_experiment(cell.generator, s, bd.trials, derive_rng(cfg.master_seed, "birthday", s))
        return {
            "s": s,
            "m": m,
            "frequency": freq,
            "std_err": math.sqrt(freq * (1 - freq) / bd.trials),
            "closed_form": birthday_collision_probability(m, s),
            "approximation": birthday_approximation(m, s),
        }

    rows = _run_cells(bd.sample_sizes, run, lambda s: {"s": s, "m": m}, cfg.threads, show_progress, "birthday")
    ok = [row for row in rows if "error" not in row]
    estimate = birthday_support_estimate([r["s"] for r in ok], [r["frequency"] for r in ok])
    return {"experiment": "birthday", "trials": bd.trials, "m": m, "support_estimate": estimate, "rows": rows}


# Non-colliding identity ----------------------------------------------------------


def run_noncolliding_experiment(cfg: ExperimentConfig, show_progress: bool = False) -> Dict[str, Any]:
    """Stratified versus direct estimator for an untrained and a trained D per m."""
    nc = cfg.noncolliding
    spec = cfg.spec
    mf = measuring_function(cfg)

    def run(k: int) -> Dict[str, Any]:
        cell = build_cell(cfg, spec, k, "noncolliding", k)
        untrained = Discriminator.initialize(
            derive_rng(cfg.master_seed, "noncolliding", k, "init"),
            cfg.layer_sizes(spec),
            cfg.discriminator.weight_clip,
            cfg.discriminator.init_scale,
        )
        trained = train_for_config(
            cfg,
            derive_rng(cfg.master_seed, "noncolliding", k, "train"),
            real_pair_sampler(cell.source, spec),
            fake_pair_sampler(cell.generator),
            spec,
        ).discriminator
        row: Dict[str, Any] = {"k": k, "m": cell.partition.m}
        for label, D in (("untrained", untrained), ("trained", trained)):
            check = check_noncolliding_identity(
                D, cell.generator, nc.n_sets, nc.n_direct, derive_rng(cfg.master_seed, "noncolliding", k, label), mf
            )
            row.update({f"{label}_{key}": value for key, value in check.to_dict().items()})
        return row

    rows = _run_cells(nc.k_grid, run, lambda k: {"k": k, "m": k**spec.d_tilde}, cfg.threads, show_progress, "noncolliding")
    return {"experiment": "noncolliding", "rows": rows}


EXPERIMENTS: Dict[str, Callable[..., Dict[str, Any]]] = {
    "collapse": run_collapse_experiment,
    "concentration": run_concentration_experiment,
    "finite-sample": run_finite_sample_experiment,
    "birthday": run_birthday_sweep,
    "noncolliding": run_noncolliding_experiment,
}
