"""Small exact models shared across tests."""

import numpy as np

from chi.dynamics import EnsembleDynamics


def linear_toy(members: int = 1) -> EnsembleDynamics:
    """Ensemble computing exactly ``s' = s + a`` in one dimension (a single linear layer)."""
    ens = EnsembleDynamics.create(1, 1, np.random.default_rng(0), n_members=members, hidden=())
    ens.params.weights[0][:] = np.array([[0.0, 0.0], [1.0, 0.0]])
    ens.params.biases[0][:] = 0.0
    return ens


def toy_reward(s, a):
    return -s[..., 0] ** 2
