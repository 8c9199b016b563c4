"""Shared test factories (kept apart from the independent oracles)."""

import numpy as np

from matmine import surrogate, tensors

import oracles


def random_model(rng, mode="transverse", n_neurons=5, growth=False):
    """Random surrogate with bounds taken from a cloud of random states."""
    n_base = 5 if mode == "transverse" else 3
    samples = np.stack([oracles.random_spd(rng, 0.4) for _ in range(60)])
    M = tensors.structural_tensor([0.0, 0.0, 1.0])
    values = tensors.invariants(samples, M if mode == "transverse" else None)
    bounds = surrogate.NormalizationBounds.from_invariants(values)
    W = np.abs(rng.normal(0.5, 0.3, n_neurons)) + 0.05 if growth \
        else rng.normal(0.0, 0.6, n_neurons)
    model = surrogate.SurrogateModel(
        anisotropy=mode,
        gate_weights=W,
        input_weights=rng.normal(0.0, 0.7, (n_neurons, n_base)),
        reciprocal_weights=rng.normal(0.0, 0.7, n_neurons),
        biases=rng.normal(0.0, 0.5, n_neurons),
        energy_offset=0.0,
        bounds=bounds,
        growth_mode=growth,
    )
    return surrogate.fix_energy_offset(model), M
