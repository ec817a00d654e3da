"""Random objects shared by the test modules."""

import numpy as np

from bystander.lindblad import LindbladSpec, assemble_lindbladian
from bystander.structure import BystanderCoupling
from bystander.tensor import hermitian_conjugate_super, kraus_super, vec_identity_row


def random_density(rng, d, rank=None):
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def random_hermitian(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (a + a.conj().T)


def random_complex(rng, d):
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


def random_unitary(rng, d):
    q, r = np.linalg.qr(random_complex(rng, d))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    g = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    return g @ g.conj().T


def random_kraus(rng, d, k=2):
    """Kraus operators of a random CPTP map (blocks of a random isometry)."""
    q, _ = np.linalg.qr(rng.normal(size=(k * d, d)) + 1j * rng.normal(size=(k * d, d)))
    return [q[i * d:(i + 1) * d] for i in range(k)]


def random_cptp(rng, d, k=2):
    return kraus_super(random_kraus(rng, d, k))


def random_tp_map(rng, d):
    """Trace-preserving superoperator that need not be positive."""
    noise = random_complex(rng, d * d)
    row = vec_identity_row(d)
    noise = noise - np.outer(row.conj(), row @ noise) / d
    return random_cptp(rng, d) + 0.3 * noise


def random_lindbladian(rng, d, n=2):
    return assemble_lindbladian(LindbladSpec(random_hermitian(rng, d), [random_complex(rng, d) for _ in range(n)], random_psd(rng, n)))


def random_coupling(rng, ds, de, n=2, diagonal=False):
    """Valid bystander coupling: PSD Gamma, TP maps with the adjoint symmetry."""
    env_ops = [random_complex(rng, de) for _ in range(n)]
    if diagonal:
        return BystanderCoupling.diagonal(rng.uniform(0.2, 1.5, n), env_ops, [random_cptp(rng, ds) for _ in range(n)])
    table = [[None] * n for _ in range(n)]
    for a in range(n):
        table[a][a] = random_cptp(rng, ds)
        for b in range(a + 1, n):
            table[a][b] = random_tp_map(rng, ds)
            table[b][a] = hermitian_conjugate_super(table[a][b])
    return BystanderCoupling(random_psd(rng, n), env_ops, table)
