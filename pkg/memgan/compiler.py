"""
Compile a memorizing generator into an explicit sparse ReLU network.

Pipeline (fragment by fragment):

    z --abs--> |z| --selector--> bits b[j, i] --one-hot--> B[t] --memory--> F
    z --> relu(z), relu(-z) carried through every layer --------------> splice

The selector turns each |z_j| into interval indicators using ramps that rise
from 0 to 1 over [tau - 3w/4, tau - w/4], written as 1 - relu(1 - relu(.)) so
that the outputs are exactly 0 or 1 outside (tau - w, tau). Keeping both ends of
the ramp strictly inside that zone absorbs the rounding of the affine step, and
|z| = tau lands on the upper side as the half-open intervals require.

Blocks are decoded with the AND gadget B_t = relu(sum_j b[j, t_j] - (d_tilde - 1))
instead of a k-ary-to-decimal stage followed by a second selector. The AND
gadget is exact on 0/1 inputs and keeps every weight bounded by 2 / w.

The bit layer is linear, so it can be folded into the gadget. That removes a
layer of carried seed units but doubles the gadget fan-in for interior
intervals; compile_generator folds it only when the result has fewer weights.
With that choice the total never exceeds predicted_weight_bound.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np
from numpy.typing import NDArray
from scipy import sparse

from . import noise_channel
from .errors import PrecisionError
from .generator import MemorizingGenerator, generate_batch
from .partition import BlockPartition, decode_blocks
from .relu_network import (
    Activation,
    ReluNetwork,
    SparseLayer,
    describe,
    forward,
    fuse_linear,
    nonzero_biases,
    nonzero_weights,
    with_carry,
)

logger = logging.getLogger(__name__)

# A ramp narrower than this many ulps of the threshold scale cannot be resolved.
RAMP_ULP_FLOOR = 1e4
AGREEMENT_CHUNK = 2048


@dataclass
class CompileReport:
    """Weight accounting and total-variation certificate of a compiled generator."""

    nonzero_weights: int
    nonzero_biases: int
    delta: float
    ramp_width: float
    predicted_bound: int
    ambiguous_mass_bound: float
    bit_layer_folded: bool = False
    layers: List[dict] = field(default_factory=list)

    @property
    def within_bound(self) -> bool:
        return self.nonzero_weights <= self.predicted_bound

    def to_dict(self) -> dict:
        data = asdict(self)
        data["within_bound"] = self.within_bound
        return data


def predicted_weight_bound(m: int, d: int, d_tilde: int, k: int) -> int:
    """m(d - d_tilde) + m(d_tilde + 1) + 4 k d_tilde + 4 d_tilde + d."""
    return m * (d - d_tilde) + m * (d_tilde + 1) + 4 * k * d_tilde + 4 * d_tilde + d


def density_bound(sigma: float) -> float:
    """Maximum of the half-normal density, sqrt(2 / pi) / sigma."""
    return math.sqrt(2.0 / math.pi) / sigma


def choose_ramp_width(part: BlockPartition, delta: float) -> float:
    """
    Ramp width whose ambiguous zones carry nu-mass at most delta.

    Per coordinate the zones near the k - 1 finite thresholds have mass at most
    2 w (k - 1) f_max; w = delta sigma / (2 d_tilde k) sqrt(pi / 2) makes the
    union over d_tilde coordinates at most delta.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    width = delta * part.sigma / (2 * part.d_tilde * part.k) * math.sqrt(math.pi / 2.0)
    scale = max(part.sigma, float(part.taus.max()) if part.k > 1 else 0.0)
    if width < RAMP_ULP_FLOOR * np.finfo(np.float64).eps * scale:
        raise PrecisionError(
            f"Ramp width {width:.3e} for delta={delta} is below double precision resolution"
        )
    return min(width, 0.5 * part.min_gap)


def ambiguous_mass_bound(part: BlockPartition, width: float) -> float:
    """Analytic bound d_tilde * 2 w (k - 1) f_max on the nu-mass of ambiguous seeds."""
    return part.d_tilde * 2.0 * width * (part.k - 1) * density_bound(part.sigma)


def compile_abs(d_tilde: int) -> ReluNetwork:
    """
    |z_j| = max(0, z_j) + max(0, -z_j).

    Layer 1 (ReLU) emits the positive parts then the negative parts; layer 2
    (identity) adds them. 4 d_tilde non-zero weights.
    """
    split = SparseLayer.from_triplets(
        rows=2 * d_tilde,
        cols=d_tilde,
        triplets=[(j, j, 1.0) for j in range(d_tilde)]
        + [(d_tilde + j, j, -1.0) for j in range(d_tilde)],
        activation=Activation.RELU,
    )
    merge = SparseLayer.from_triplets(
        rows=d_tilde,
        cols=2 * d_tilde,
        triplets=[(j, j, 1.0) for j in range(d_tilde)]
        + [(j, d_tilde + j, 1.0) for j in range(d_tilde)],
        activation=Activation.IDENTITY,
    )
    return ReluNetwork(input_dim=d_tilde, output_dim=d_tilde, layers=(split, merge))


def compile_selector(part: BlockPartition, ramp_width: float) -> ReluNetwork:
    """
    Map (|z_1|, ..., |z_d_tilde|) to interval indicators b[j, i], output
    index j * k + (i - 1).

    Layers: s = relu((|z| - tau_i + 3w/4) * 2 / w); q = relu(1 - s) (so the
    ramp is 1 - q); bits b_1 = q_1, b_i = q_i - q_{i-1}, b_k = 1 - q_{k-1}.
    Exact one-hot whenever |z_j| lies outside (tau_i - w, tau_i) for every
    threshold; bits sum to one for every input. 4 (k - 1) d_tilde non-zero weights.

    Raises:
        ValueError: If ramp_width is not in (0, min threshold gap)
    """
    k, dt = part.k, part.d_tilde
    if not (ramp_width > 0 and ramp_width < part.min_gap):
        raise ValueError(
            f"Ramp width must lie in (0, {part.min_gap}), got {ramp_width}"
        )
    if k == 1:
        constant = SparseLayer.from_triplets(dt, dt, [], bias=np.ones(dt), activation=Activation.IDENTITY)
        return ReluNetwork(input_dim=dt, output_dim=dt, layers=(constant,))

    taus = part.taus
    slope = 2.0 / ramp_width
    units = (k - 1) * dt

    def unit(j: int, i: int) -> int:
        # i is the 1-based threshold index
        return j * (k - 1) + (i - 1)

    s_triplets, s_bias = [], np.zeros(units)
    q_triplets, q_bias = [], np.ones(units)
    for j in range(dt):
        for i in range(1, k):
            s_triplets.append((unit(j, i), j, slope))
            s_bias[unit(j, i)] = 1.0 - (taus[i - 1] - 0.25 * ramp_width) * slope
            q_triplets.append((unit(j, i), unit(j, i), -1.0))

    b_triplets, b_bias = [], np.zeros(k * dt)
    for j in range(dt):
        for i in range(1, k + 1):
            row = j * k + (i - 1)
            if i < k:
                b_triplets.append((row, unit(j, i), 1.0))
            if i > 1:
                b_triplets.append((row, unit(j, i - 1), -1.0))
            if i == k:
                b_bias[row] = 1.0

    layers = (
        SparseLayer.from_triplets(units, dt, s_triplets, s_bias, Activation.RELU),
        SparseLayer.from_triplets(units, units, q_triplets, q_bias, Activation.RELU),
        SparseLayer.from_triplets(k * dt, units, b_triplets, b_bias, Activation.IDENTITY),
    )
    return ReluNetwork(input_dim=dt, output_dim=k * dt, layers=layers)


def compile_onehot(part: BlockPartition) -> ReluNetwork:
    """
    AND gadget B_t = relu(sum_j b[j, t_j] - (d_tilde - 1)) for every block t.

    Exactly one B_t equals 1 when the bits are exact one-hots. d_tilde weights
    and one bias per block.
    """
    k, dt, m = part.k, part.d_tilde, part.m
    tuples = decode_blocks(np.arange(1, m + 1), part)
    rows = np.repeat(np.arange(m), dt)
    cols = (np.arange(dt)[None, :] * k + (tuples - 1)).ravel()
    layer = SparseLayer(
        rows=m,
        cols=k * dt,
        row_index=rows.astype(np.int64),
        col_index=cols.astype(np.int64),
        values=np.ones(m * dt),
        bias=np.full(m, -(dt - 1.0)),
        activation=Activation.RELU,
    )
    return ReluNetwork(input_dim=k * dt, output_dim=m, layers=(layer,))


def compile_memory(gen: MemorizingGenerator) -> ReluNetwork:
    """
    F = sum_t B_t x*_t on the non-spliced coordinates; the weight of edge
    (t -> i) is x*_{t, i}. Zero pixels are structural zeros and not stored.
    """
    clean = noise_channel.clean_index(gen.spec)
    bank = sparse.coo_matrix(gen.memorized[:, clean].T)
    layer = SparseLayer.from_matrix(bank, np.zeros(clean.size), Activation.IDENTITY)
    return ReluNetwork(input_dim=gen.m, output_dim=clean.size, layers=(layer,))


def folds_bit_layer(part: BlockPartition) -> bool:
    """
    Whether the selector's bit layer should be folded into the AND gadget.

    A separate bit layer costs 2 (k - 1) d_tilde weights plus 2 d_tilde for the
    carried seed. Folding it gives every block a second fan-in per coordinate
    whose interval is interior, m d_tilde (k - 2) / k extra weights in total.
    """
    return part.k > 1 and part.m * (part.k - 2) <= 2 * part.k**2


def _copy_inputs(layer: SparseLayer, columns: NDArray[np.int64]) -> SparseLayer:
    """Append output units that copy the given input columns unchanged."""
    extra = columns.size
    return SparseLayer(
        rows=layer.rows + extra,
        cols=layer.cols,
        row_index=np.concatenate([layer.row_index, layer.rows + np.arange(extra)]).astype(np.int64),
        col_index=np.concatenate([layer.col_index, columns]).astype(np.int64),
        values=np.concatenate([layer.values, np.ones(extra)]),
        bias=np.concatenate([layer.bias, np.zeros(extra)]),
        activation=layer.activation,
    )


def _output_layer(gen: MemorizingGenerator, memory: SparseLayer) -> SparseLayer:
    """Memory bank on the non-spliced outputs, z_j = relu(z_j) - relu(-z_j) on the rest."""
    spec, m, dt = gen.spec, gen.m, gen.spec.d_tilde
    clean = noise_channel.clean_index(spec)
    spliced = noise_channel.spliced_index(spec)
    rows = np.concatenate([clean[memory.row_index], spliced, spliced])
    cols = np.concatenate([memory.col_index, m + np.arange(dt), m + dt + np.arange(dt)])
    values = np.concatenate([memory.values, np.ones(dt), -np.ones(dt)])
    return SparseLayer(
        rows=spec.d,
        cols=m + 2 * dt,
        row_index=rows.astype(np.int64),
        col_index=cols.astype(np.int64),
        values=values,
        bias=np.zeros(spec.d),
        activation=Activation.IDENTITY,
    )


def compile_generator(gen: MemorizingGenerator, delta: float) -> tuple[ReluNetwork, CompileReport]:
    """
    Compose abs -> selector -> one-hot -> memory -> splice into one network.

    The abs merge layer is fused into the selector's first layer, and the bit
    layer into the AND gadget when folds_bit_layer says so. Positive and
    negative parts of z ride along every layer as pass-through units and are
    recombined at the spliced outputs, so encode(forward(net, z)) == z for
    every z, ambiguous or not.

    Raises:
        ValueError: If delta is outside (0, 1)
        PrecisionError: If the ramp width underflows
    """
    part, spec = gen.partition, gen.spec
    dt = spec.d_tilde
    width = choose_ramp_width(part, delta)

    abs_net = compile_abs(dt)
    selector = compile_selector(part, width)
    onehot = compile_onehot(part)
    memory = compile_memory(gen)

    carry = 2 * dt
    split, merge = abs_net.layers
    layers = [split]
    layers.append(_copy_inputs(fuse_linear(merge, selector.layers[0]), np.arange(carry)))
    hidden = list(selector.layers[1:])
    gadget = onehot.layers[0]
    folded = folds_bit_layer(part)
    if folded:
        gadget = fuse_linear(hidden.pop(), gadget)
    layers.extend(with_carry(layer, carry) for layer in hidden)
    layers.append(with_carry(gadget, carry))
    layers.append(_output_layer(gen, memory.layers[0]))
    net = ReluNetwork.from_layers(layers)

    report = CompileReport(
        nonzero_weights=nonzero_weights(net),
        nonzero_biases=nonzero_biases(net),
        delta=delta,
        ramp_width=width,
        predicted_bound=predicted_weight_bound(part.m, spec.d, dt, part.k),
        ambiguous_mass_bound=ambiguous_mass_bound(part, width),
        bit_layer_folded=folded,
        layers=describe(net),
    )
    if not report.within_bound:
        logger.warning(
            "Compiled network has %d non-zero weights, above the predicted %d (d=%d, d_tilde=%d)",
            report.nonzero_weights,
            report.predicted_bound,
            spec.d,
            dt,
        )
    logger.info(
        "Compiled generator m=%d: %d weights (bound %d), ramp width %.3e",
        part.m,
        report.nonzero_weights,
        report.predicted_bound,
        width,
    )
    return net, report


def disagreement_fraction(
    net: ReluNetwork, gen: MemorizingGenerator, seeds: NDArray[np.float64]
) -> float:
    """Fraction of seeds where the compiled output differs from G(z) in any coordinate."""
    mismatches = 0
    for start in range(0, seeds.shape[0], AGREEMENT_CHUNK):
        chunk = seeds[start : start + AGREEMENT_CHUNK]
        compiled = forward(net, chunk)
        reference = generate_batch(gen, chunk)
        mismatches += int(np.count_nonzero(np.any(compiled != reference, axis=1)))
    return mismatches / max(seeds.shape[0], 1)
