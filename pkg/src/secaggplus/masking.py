"""Neighbor graph and mask algebra.

Client ``i`` uploads

    y_i = x_i + PRG(b_i) + sum_{j in N(i), j != i} sign(i, j) * PRG(s_ij)   (mod m)

where ``s_ij`` is the pairwise seed both ends derive by key agreement. Pairwise
terms cancel in the sum because ``sign`` is antisymmetric and the graph is
symmetric; the server removes self masks and the residue of dropped clients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from . import crypto
from .errors import ConfigError, ConfigErrorCode, ProtocolError
from .modfield import FieldVector


@dataclass
class OpCounter:
    """Deterministic work counters for one party."""

    prg_elements: int = 0
    field_ops: int = 0
    key_agreements: int = 0
    seed_reconstructions: int = 0
    key_reconstructions: int = 0

    @property
    def reconstructions(self) -> int:
        return self.seed_reconstructions + self.key_reconstructions


@dataclass(frozen=True)
class NeighborGraph:
    n: int
    k: int
    adjacency: tuple[tuple[int, ...], ...]

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Sorted neighbor ids of ``i``, including ``i`` itself."""
        return self.adjacency[i]

    def peers(self, i: int) -> tuple[int, ...]:
        return tuple(j for j in self.adjacency[i] if j != i)

    def share_index(self, owner: int, holder: int) -> int:
        """Shamir x-coordinate of the share ``owner`` hands to ``holder``."""
        return self.adjacency[owner].index(holder) + 1


def build_neighbor_graph(n: int, k: int) -> NeighborGraph:
    """Complete graph when ``k == n``, otherwise a symmetric ring of odd degree ``k``."""
    if n < 1:
        raise ConfigError(ConfigErrorCode.INVALID_CLIENT_COUNT, f"need at least one client, got {n}")
    if not 1 <= k <= n:
        raise ConfigError(ConfigErrorCode.INVALID_SHARE_NUM, f"neighborhood size must be in [1, n={n}], got {k}")
    if k == n:
        full = tuple(range(n))
        return NeighborGraph(n, k, tuple(full for _ in range(n)))
    if k % 2 == 0:
        raise ConfigError(ConfigErrorCode.INVALID_SHARE_NUM, f"ring neighborhoods need odd k when k < n, got {k}")
    half = (k - 1) // 2
    adjacency = []
    for i in range(n):
        ids = {i}
        for d in range(1, half + 1):
            ids.add((i + d) % n)
            ids.add((i - d) % n)
        adjacency.append(tuple(sorted(ids)))
    return NeighborGraph(n, k, tuple(adjacency))


def pairwise_sign(i: int, j: int) -> int:
    if i == j:
        raise ProtocolError("a client has no pairwise mask with itself")
    return 1 if i < j else -1


def pairwise_seed(my_secret: crypto.KeyPair | bytes, their_public: bytes) -> bytes:
    return crypto.derive_seed(crypto.key_agree(my_secret, their_public, crypto.MASK_CONTEXT))


def compute_masked_vector(
    extended: FieldVector,
    self_seed: bytes,
    pairwise_seeds: Mapping[int, bytes],
    my_id: int,
    graph: NeighborGraph,
    active: Iterable[int] | None = None,
    counter: OpCounter | None = None,
) -> FieldVector:
    """Add the self mask and every pairwise mask to ``extended``.

    ``pairwise_seeds`` must cover exactly the peers of ``my_id`` that are in
    ``active`` (all peers when ``active`` is None).
    """
    expected = set(graph.peers(my_id))
    if active is not None:
        expected &= set(active)
    missing = expected - set(pairwise_seeds)
    if missing:
        raise ProtocolError(f"client {my_id}: no pairwise seed for neighbors {sorted(missing)}")
    extra = set(pairwise_seeds) - expected
    if extra:
        raise ProtocolError(f"client {my_id}: unexpected pairwise seeds for {sorted(extra)}")

    out = extended.copy()
    crypto.prg_accumulate(out, self_seed, +1)
    for j in sorted(expected):
        crypto.prg_accumulate(out, pairwise_seeds[j], pairwise_sign(my_id, j))
    if counter is not None:
        counter.prg_elements += (len(expected) + 1) * len(out)
        counter.field_ops += (len(expected) + 1) * len(out)
    return out


def dropout_pairwise_mask_total(
    dropped_id: int,
    secret_scalar: bytes,
    neighbor_publics: Mapping[int, bytes],
    length: int,
    modulus: int,
    graph: NeighborGraph,
    survivors: Iterable[int],
    counter: OpCounter | None = None,
) -> FieldVector:
    """Pairwise mask residue that a dropped client leaves in the survivors' sum.

    Each surviving neighbor ``j`` of ``dropped_id`` added
    ``sign(j, d) * PRG(s_dj)``; with ``d``'s vector missing, those terms no longer
    cancel. This returns their total, recomputed from ``d``'s reconstructed
    secret scalar, for the server to subtract.
    """
    partners = sorted(set(graph.peers(dropped_id)) & set(survivors))
    missing = [j for j in partners if j not in neighbor_publics]
    if missing:
        raise ProtocolError(f"no public mask key for survivors {missing} of dropped client {dropped_id}")
    total = FieldVector.zeros(length, modulus)
    if not partners:
        return total
    pair = crypto.keypair_from_scalar(secret_scalar)
    for j in partners:
        seed = pairwise_seed(pair, neighbor_publics[j])
        crypto.prg_accumulate(total, seed, pairwise_sign(j, dropped_id))
    if counter is not None:
        counter.key_agreements += len(partners)
        counter.prg_elements += len(partners) * length
        counter.field_ops += len(partners) * length
    return total
