"""
Bounded-capacity discriminator and the encoder-decoder GAN objective.

The discriminator is a fully-connected ReLU network D(x, z) on the concatenation
of an image and a code, with a linear scalar output. Parameters are clipped to
[-c, c] after every update, which certifies a Lipschitz constant with respect
to the parameters (see `analytic_lipschitz_bound`). The objective is

    | mean_real phi(D(x, E(x))) - mean_fake phi(D(G(z), z)) |

with phi = Delta * tanh. Training ascends both signs of the difference from
several random restarts and keeps the largest held-out gap.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from tqdm import tqdm

from . import noise_channel
from .distributions import DimensionSpec, ImageSource, sample_noised_images, sample_seeds
from .errors import ShapeMismatchError
from .generator import MemorizingGenerator, generate_batch
from .relu_network import ReluNetwork, forward
from .seeding import derive_rng

logger = logging.getLogger(__name__)

TANH = "tanh"
DEFAULT_INIT_SCALE = 0.1
TRACE_COLUMNS = ["step", "real_term", "fake_term", "gap", "grad_norm"]


@dataclass(frozen=True)
class MeasuringFunction:
    """phi(t) = Delta * tanh(t): range [-Delta, Delta], Lipschitz constant Delta."""

    kind: str = TANH
    Delta: float = 1.0

    def __post_init__(self) -> None:
        if self.kind != TANH:
            raise ValueError(f"Unsupported measuring function: {self.kind}")
        if not (math.isfinite(self.Delta) and self.Delta >= 1):
            raise ValueError(f"Delta must be a finite number >= 1, got {self.Delta}")

    @property
    def L_phi(self) -> float:
        return self.Delta


def phi(t: NDArray[np.float64], mf: MeasuringFunction) -> NDArray[np.float64]:
    return mf.Delta * np.tanh(t)


def phi_derivative(t: NDArray[np.float64], mf: MeasuringFunction) -> NDArray[np.float64]:
    return mf.Delta * (1.0 - np.tanh(t) ** 2)


@dataclass(frozen=True)
class JointBatch:
    """Images x (n, d) paired with codes z (n, d_tilde)."""

    x: NDArray[np.float64]
    z: NDArray[np.float64]

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def inputs(self) -> NDArray[np.float64]:
        if self.x.shape[0] != self.z.shape[0]:
            raise ShapeMismatchError(
                f"Batch has {self.x.shape[0]} images but {self.z.shape[0]} codes"
            )
        return np.hstack([self.x, self.z])


PairSampler = Callable[[np.random.Generator, int], JointBatch]


@dataclass(eq=False)
class Discriminator:
    """
    Dense ReLU MLP with layer sizes [d + d_tilde, hidden..., 1].

    weights[l] has shape (layer_sizes[l + 1], layer_sizes[l]). A discriminator
    is owned by one training task at a time; evaluation never mutates it.
    """

    layer_sizes: Tuple[int, ...]
    weights: List[NDArray[np.float64]]
    biases: List[NDArray[np.float64]]
    weight_clip: float = 1.0

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"Invalid layer sizes: {self.layer_sizes}")
        if self.layer_sizes[-1] != 1:
            raise ValueError("Discriminator output layer must have size 1")
        if not (math.isfinite(self.weight_clip) and self.weight_clip > 0):
            raise ValueError(f"weight_clip must be positive, got {self.weight_clip}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("Number of weight matrices does not match layer sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != expected or b.shape != (expected[0],):
                raise ShapeMismatchError(
                    f"Layer {l} has weights {w.shape} and bias {b.shape}, expected {expected}"
                )

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        layer_sizes: Sequence[int],
        weight_clip: float = 1.0,
        init_scale: float = DEFAULT_INIT_SCALE,
    ) -> "Discriminator":
        """Uniform [-init_scale, init_scale] parameters, clipped to the box."""
        scale = min(init_scale, weight_clip)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(rng.uniform(-scale, scale, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-scale, scale, size=fan_out))
        return cls(tuple(layer_sizes), weights, biases, weight_clip)

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int], weight_clip: float = 1.0) -> "Discriminator":
        weights = [np.zeros((o, i)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])]
        biases = [np.zeros(o) for o in layer_sizes[1:]]
        return cls(tuple(layer_sizes), weights, biases, weight_clip)

    @property
    def capacity_p(self) -> int:
        """Number of scalar parameters: sum over layers of rows * cols + rows."""
        sizes = self.layer_sizes
        return sum(sizes[l + 1] * sizes[l] + sizes[l + 1] for l in range(len(sizes) - 1))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def parameters(self) -> NDArray[np.float64]:
        """Flat parameter vector: per layer, weights row-major then biases."""
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_parameters(self, flat: NDArray[np.float64]) -> "Discriminator":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.capacity_p,):
            raise ShapeMismatchError(f"Expected {self.capacity_p} parameters, got {flat.shape}")
        weights, biases, offset = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[offset : offset + w.size].reshape(w.shape).copy())
            offset += w.size
            biases.append(flat[offset : offset + b.size].copy())
            offset += b.size
        return Discriminator(self.layer_sizes, weights, biases, self.weight_clip)

    def max_abs_parameter(self) -> float:
        return float(np.max(np.abs(self.parameters())))

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "weight_clip": self.weight_clip,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Discriminator":
        return cls(
            layer_sizes=tuple(int(s) for s in data["layer_sizes"]),
            weights=[np.asarray(w, dtype=np.float64) for w in data["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in data["biases"]],
            weight_clip=float(data["weight_clip"]),
        )

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "Discriminator":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Discriminator checkpoint not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _forward_pass(
    D: Discriminator, inputs: NDArray[np.float64]
) -> Tuple[List[NDArray[np.float64]], List[NDArray[np.float64]]]:
    """Return the activations fed to each layer and the pre-activations it produced."""
    if inputs.ndim != 2 or inputs.shape[1] != D.input_dim:
        raise ShapeMismatchError(
            f"Discriminator expects inputs of width {D.input_dim}, got shape {inputs.shape}"
        )
    activations, pre = [inputs], []
    last = len(D.weights) - 1
    for l, (w, b) in enumerate(zip(D.weights, D.biases)):
        z = activations[-1] @ w.T + b
        pre.append(z)
        if l < last:
            activations.append(np.maximum(z, 0.0))
    return activations, pre


def _backward_pass(
    D: Discriminator,
    activations: List[NDArray[np.float64]],
    pre: List[NDArray[np.float64]],
    d_out: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Parameter gradient of sum_i d_out[i] * D(inputs[i]), flattened like parameters()."""
    grads: List[NDArray[np.float64]] = []
    delta = d_out[:, None]
    for l in range(len(D.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append((delta.T @ activations[l]).ravel())
        if l > 0:
            delta = (delta @ D.weights[l]) * (pre[l - 1] > 0)
    grads.reverse()
    return np.concatenate(grads)


def disc_scores(D: Discriminator, x: NDArray[np.float64], z: NDArray[np.float64]) -> NDArray[np.float64]:
    """Batch form of disc_forward: one score per (x, z) row."""
    inputs = JointBatch(np.atleast_2d(x), np.atleast_2d(z)).inputs()
    _, pre = _forward_pass(D, inputs)
    return pre[-1][:, 0]


def disc_forward(D: Discriminator, x: NDArray[np.float64], z: NDArray[np.float64]) -> float:
    """
    Score of one joint sample.

    Raises:
        ShapeMismatchError: If len(x) + len(z) differs from the input layer size
    """
    return float(disc_scores(D, np.asarray(x)[None, :], np.asarray(z)[None, :])[0])


def disc_gradient(
    D: Discriminator, real: JointBatch, fake: JointBatch, mf: MeasuringFunction
) -> NDArray[np.float64]:
    """
    Gradient of mean_real phi(D) - mean_fake phi(D) with respect to all parameters.

    Raises:
        ValueError: If either side of the batch is empty
    """
    if len(real) == 0 or len(fake) == 0:
        raise ValueError("Gradient needs at least one real and one fake sample")
    inputs = np.vstack([real.inputs(), fake.inputs()])
    activations, pre = _forward_pass(D, inputs)
    scores = pre[-1][:, 0]
    weights = np.concatenate([np.full(len(real), 1.0 / len(real)), np.full(len(fake), -1.0 / len(fake))])
    return _backward_pass(D, activations, pre, weights * phi_derivative(scores, mf))


def score_gradient(D: Discriminator, x: NDArray[np.float64], z: NDArray[np.float64]) -> NDArray[np.float64]:
    """Gradient of the raw score D(x, z) of one sample with respect to the parameters."""
    inputs = JointBatch(np.asarray(x)[None, :], np.asarray(z)[None, :]).inputs()
    activations, pre = _forward_pass(D, inputs)
    return _backward_pass(D, activations, pre, np.ones(1))


@dataclass(frozen=True)
class ObjectiveEstimate:
    """Monte-Carlo estimate of both objective terms and their absolute gap."""

    real_term: float
    fake_term: float
    gap: float
    n_real: int
    n_fake: int
    std_err: float

    def __post_init__(self) -> None:
        if self.gap < 0:
            raise ValueError("gap cannot be negative")

    @property
    def signed_gap(self) -> float:
        return self.real_term - self.fake_term

    def to_dict(self) -> dict:
        return asdict(self)


def objective_on_samples(
    D: Discriminator, real: JointBatch, fake: JointBatch, mf: MeasuringFunction
) -> ObjectiveEstimate:
    """Objective on fixed finite sample sets (the empirical distributions)."""
    if len(real) < 2 or len(fake) < 2:
        raise ValueError("Need at least two real and two fake samples")
    real_phi = phi(disc_scores(D, real.x, real.z), mf)
    fake_phi = phi(disc_scores(D, fake.x, fake.z), mf)
    real_term = float(np.mean(real_phi))
    fake_term = float(np.mean(fake_phi))
    std_err = math.sqrt(
        float(np.var(real_phi, ddof=1)) / len(real) + float(np.var(fake_phi, ddof=1)) / len(fake)
    )
    return ObjectiveEstimate(
        real_term=real_term,
        fake_term=fake_term,
        gap=abs(real_term - fake_term),
        n_real=len(real),
        n_fake=len(fake),
        std_err=std_err,
    )


def bigan_objective(
    D: Discriminator,
    real_sampler: PairSampler,
    fake_sampler: PairSampler,
    n_real: int,
    n_fake: int,
    rng: np.random.Generator,
    mf: MeasuringFunction,
) -> ObjectiveEstimate:
    """Draw n_real pairs (x, E(x)) and n_fake pairs (G(z), z) and estimate the objective."""
    if n_real < 2 or n_fake < 2:
        raise ValueError("n_real and n_fake must be at least 2")
    real = real_sampler(rng, n_real)
    fake = fake_sampler(rng, n_fake)
    return objective_on_samples(D, real, fake, mf)


# Pair samplers ---------------------------------------------------------------


Encoder = Callable[[NDArray[np.float64]], NDArray[np.float64]]


@dataclass(frozen=True)
class ImagePairSampler:
    """
    Pairs built on noised images x ~ mu drawn from an image source.

    With matched codes a pair is (x, E(x)), E defaulting to reading back the
    spliced coordinates; otherwise x is paired with a fresh seed.
    """

    source: ImageSource
    spec: DimensionSpec
    encoder: Optional[Encoder] = None
    matched: bool = True

    def __call__(self, rng: np.random.Generator, n: int) -> JointBatch:
        images, _ = sample_noised_images(rng, self.source, self.spec, n)
        if not self.matched:
            return JointBatch(images, sample_seeds(rng, self.spec, n))
        if self.encoder is not None:
            return JointBatch(images, self.encoder(images))
        return JointBatch(images, noise_channel.encode_batch(images, self.spec))

    def fork(self, parts: int, records_each: int) -> List["ImagePairSampler"]:
        return [replace(self, source=source) for source in self.source.fork(parts, records_each)]


def fork_sampler(sampler: PairSampler, parts: int, records_each: int) -> List[PairSampler]:
    """
    One sampler per concurrent task, each allowed records_each images.

    Samplers without read state are shared as they are.
    """
    fork = getattr(sampler, "fork", None)
    if fork is None:
        return [sampler] * parts
    return fork(parts, records_each)


def real_pair_sampler(
    source: ImageSource, spec: DimensionSpec, encoder: Optional[Encoder] = None
) -> ImagePairSampler:
    """Pairs (x, E(x)) with x ~ mu; E defaults to reading back the spliced coordinates."""
    return ImagePairSampler(source, spec, encoder)


def fake_pair_sampler(gen: MemorizingGenerator) -> PairSampler:
    """Pairs (G(z), z) with z ~ nu, using the reference generator."""

    def sample(rng: np.random.Generator, n: int) -> JointBatch:
        seeds = sample_seeds(rng, gen.spec, n)
        return JointBatch(generate_batch(gen, seeds), seeds)

    return sample


def network_pair_sampler(net: ReluNetwork, spec: DimensionSpec) -> PairSampler:
    """Pairs (G(z), z) with G evaluated by a compiled network."""

    def sample(rng: np.random.Generator, n: int) -> JointBatch:
        seeds = sample_seeds(rng, spec, n)
        return JointBatch(forward(net, seeds), seeds)

    return sample


def mismatched_pair_sampler(source: ImageSource, spec: DimensionSpec) -> ImagePairSampler:
    """Noised images paired with fresh codes that are not the spliced noise."""
    return ImagePairSampler(source, spec, matched=False)


# Training --------------------------------------------------------------------


@dataclass
class TrainingResult:
    """Best discriminator over all restarts and signs, with its held-out estimate."""

    discriminator: Discriminator
    estimate: ObjectiveEstimate
    restart: int
    sign: int
    trace: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=TRACE_COLUMNS))
    restart_gaps: List[float] = field(default_factory=list)


@dataclass(frozen=True)
class _Run:
    discriminator: Discriminator
    estimate: ObjectiveEstimate
    trace: pd.DataFrame


def _ascend(
    stream: np.random.Generator,
    sign: int,
    real_sampler: PairSampler,
    fake_sampler: PairSampler,
    eval_real: JointBatch,
    eval_fake: JointBatch,
    layer_sizes: Sequence[int],
    steps: int,
    learning_rate: float,
    batch_size: int,
    weight_clip: float,
    momentum: float,
    init_scale: float,
    mf: MeasuringFunction,
    trace_every: int,
) -> _Run:
    D = Discriminator.initialize(stream, layer_sizes, weight_clip, init_scale)
    velocity = np.zeros(D.capacity_p)
    params = D.parameters()
    rows = []
    for step in range(1, steps + 1):
        real = real_sampler(stream, batch_size)
        fake = fake_sampler(stream, batch_size)
        grad = disc_gradient(D, real, fake, mf)
        velocity = momentum * velocity + sign * grad
        params = np.clip(params + learning_rate * velocity, -weight_clip, weight_clip)
        D = D.with_parameters(params)
        if step % trace_every == 0 or step == steps:
            batch = objective_on_samples(D, real, fake, mf)
            rows.append((step, batch.real_term, batch.fake_term, batch.gap, float(np.linalg.norm(grad))))
    estimate = objective_on_samples(D, eval_real, eval_fake, mf)
    return _Run(D, estimate, pd.DataFrame(rows, columns=TRACE_COLUMNS))


def train_discriminator(
    rng: np.random.Generator,
    real_sampler: PairSampler,
    fake_sampler: PairSampler,
    layer_sizes: Sequence[int],
    steps: int,
    learning_rate: float = 0.05,
    batch_size: int = 256,
    weight_clip: float = 1.0,
    restarts: int = 5,
    momentum: float = 0.9,
    init_scale: float = DEFAULT_INIT_SCALE,
    eval_size: int = 20_000,
    mf: Optional[MeasuringFunction] = None,
    threads: int = 1,
    show_progress: bool = False,
) -> TrainingResult:
    """
    Adversarial search for a discriminator that separates real from fake pairs.

    Every restart starts from a fresh uniform initialization and ascends
    +(real_term - fake_term) and -(real_term - fake_term) separately. The run
    with the largest gap on a held-out evaluation batch is returned. Restart r
    always uses the same streams, so adding restarts never lowers the best gap.
    Every task reads its own run of records from a file-backed source, so the
    thread count never changes the result.

    Args:
        rng: Stream from which the restart and evaluation streams are derived
        steps: Number of SGD steps per run; 0 returns the initialization

    Raises:
        ValueError: If steps < 0 or restarts < 1
        SourceExhaustedError: If a file-backed source cannot cover every task
    """
    if steps < 0:
        raise ValueError(f"steps cannot be negative, got {steps}")
    if restarts < 1:
        raise ValueError(f"restarts must be at least 1, got {restarts}")
    if batch_size < 2 or eval_size < 2:
        raise ValueError("batch_size and eval_size must be at least 2")
    mf = mf or MeasuringFunction()
    base = int(rng.integers(0, 2**63 - 1))
    eval_stream = derive_rng(base, "eval")
    eval_real = real_sampler(eval_stream, eval_size)
    eval_fake = fake_sampler(eval_stream, eval_size)
    trace_every = max(1, steps // 100)

    tasks = [(restart, sign) for restart in range(restarts) for sign in (1, -1)]
    # Each task reads its own run of images, fixed by its position in task order.
    reals = fork_sampler(real_sampler, len(tasks), steps * batch_size)
    fakes = fork_sampler(fake_sampler, len(tasks), steps * batch_size)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [
            pool.submit(
                _ascend,
                derive_rng(base, "restart", restart, sign),
                sign,
                reals[task],
                fakes[task],
                eval_real,
                eval_fake,
                layer_sizes,
                steps,
                learning_rate,
                batch_size,
                weight_clip,
                momentum,
                init_scale,
                mf,
                trace_every,
            )
            for task, (restart, sign) in enumerate(tasks)
        ]
        runs = [
            future.result()
            for future in tqdm(futures, desc="restarts", disable=not show_progress, leave=False)
        ]

    best = max(range(len(runs)), key=lambda i: (runs[i].estimate.gap, -i))
    restart, sign = tasks[best]
    logger.info(
        "Best discriminator: restart %d sign %+d gap %.4f +- %.4f (p=%d)",
        restart,
        sign,
        runs[best].estimate.gap,
        runs[best].estimate.std_err,
        runs[best].discriminator.capacity_p,
    )
    return TrainingResult(
        discriminator=runs[best].discriminator,
        estimate=runs[best].estimate,
        restart=restart,
        sign=sign,
        trace=runs[best].trace,
        restart_gaps=[run.estimate.gap for run in runs],
    )


# Lipschitz control -----------------------------------------------------------


@dataclass(frozen=True)
class LipschitzReport:
    """Largest observed |D_theta'(u) - D_theta(u)| / |theta' - theta| and the certified bound."""

    empirical_ratio: float
    analytic_bound: float
    n_pairs: int
    scale: float

    def to_dict(self) -> dict:
        return asdict(self)


def analytic_lipschitz_bound(D: Discriminator, input_norm: float) -> float:
    """
    Bound on |grad_theta D(u)| over the whole box [-c, c]^p for |u| <= input_norm.

    With r_l x c_l layers, every weight matrix has spectral norm at most
    c sqrt(r_l c_l) and every bias norm at most c sqrt(r_l). Hidden activations
    then satisfy H_l <= c sqrt(r_l c_l) H_{l-1} + c sqrt(r_l), and the gradient
    of layer l is bounded by G_l sqrt(H_{l-1}^2 + 1) where G_l is the product
    of the norms of the layers above it.
    """
    c = D.weight_clip
    sizes = D.layer_sizes
    n_layers = len(sizes) - 1
    norms = [c * math.sqrt(sizes[l + 1] * sizes[l]) for l in range(n_layers)]
    heights = [input_norm]
    for l in range(n_layers - 1):
        heights.append(norms[l] * heights[-1] + c * math.sqrt(sizes[l + 1]))
    total = 0.0
    for l in range(n_layers):
        above = math.prod(norms[l + 1 :])
        total += above**2 * (heights[l] ** 2 + 1.0)
    return math.sqrt(total)


def lipschitz_probe(
    D: Discriminator,
    batch: JointBatch,
    n_pairs: int,
    scale: float,
    rng: np.random.Generator,
) -> LipschitzReport:
    """
    Perturb the parameters and record the worst score change per unit of
    parameter change over the given inputs.

    One perturbation per input follows the score gradient; the other n_pairs
    directions are random. Perturbed parameters are projected back into the
    clip box so the analytic bound applies.

    Raises:
        ValueError: If n_pairs < 1 or scale <= 0
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    if not scale > 0:
        raise ValueError("Perturbation scale must be positive")
    params = D.parameters()
    base = disc_scores(D, batch.x, batch.z)
    directions = [score_gradient(D, x, z) for x, z in zip(batch.x, batch.z)]
    directions.extend(rng.normal(size=(n_pairs, params.size)))

    ratio = 0.0
    for direction in directions:
        norm = float(np.linalg.norm(direction))
        if norm == 0:
            continue
        moved = np.clip(params + scale * direction / norm, -D.weight_clip, D.weight_clip)
        step = float(np.linalg.norm(moved - params))
        if step == 0:
            continue
        change = np.abs(disc_scores(D.with_parameters(moved), batch.x, batch.z) - base)
        ratio = max(ratio, float(np.max(change)) / step)

    input_norm = float(np.max(np.linalg.norm(batch.inputs(), axis=1)))
    return LipschitzReport(
        empirical_ratio=ratio,
        analytic_bound=analytic_lipschitz_bound(D, input_norm),
        n_pairs=n_pairs,
        scale=scale,
    )
