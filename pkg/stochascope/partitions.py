'''
Minibatch partitions of the rows of a forward operator, row-subset views and
the local accumulated coherence.
'''

import json
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .constants import PARTITION_SCHEMES
from .linalg import as_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Partition():
    '''
    Disjoint nonempty row blocks S_1, ..., S_K covering range(n).

    Attributes
    ----------
    blocks : tuple of numpy.ndarray
        sorted 0-based row indices of each block
    scheme : str
        one of PARTITION_SCHEMES
    n : int
        total number of rows
    seed : int or None
        seed of the shuffle, for the random scheme
    '''
    blocks: tuple
    scheme: str
    n: int
    seed: int = None

    def __post_init__(self):
        if self.scheme not in PARTITION_SCHEMES:
            raise ValueError(f'Unknown partition scheme {self.scheme!r}; expected one of {PARTITION_SCHEMES}')
        blocks = tuple(np.sort(np.asarray(b, dtype=np.int64).ravel()) for b in self.blocks)
        if not blocks:
            raise ValueError('A partition needs at least one block')
        if any(b.size == 0 for b in blocks):
            raise ValueError('Partition blocks must be nonempty')
        merged = np.sort(np.concatenate(blocks))
        if merged.size != self.n or not np.array_equal(merged, np.arange(self.n)):
            raise ValueError(f'Partition blocks must be disjoint and cover range({self.n})')
        object.__setattr__(self, 'blocks', blocks)

    @property
    def K(self):
        return len(self.blocks)

    @property
    def block_sizes(self):
        return np.array([b.size for b in self.blocks])

    @property
    def is_equal(self):
        '''
        Whether every block has the same size m = n/K.
        '''
        return self.n % self.K == 0 and bool(np.all(self.block_sizes == self.n // self.K))

    @property
    def descriptor(self):
        if self.scheme == 'random':
            return f'random(seed={self.seed})'
        return self.scheme

    def to_dict(self):
        record = {'scheme': self.scheme, 'n': self.n, 'K': self.K, 'seed': self.seed}
        if self.scheme == 'custom':
            record['blocks'] = [b.tolist() for b in self.blocks]
        return record

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, record):
        if record['scheme'] == 'custom':
            return cls(tuple(record['blocks']), 'custom', int(record['n']))
        return make_partition(record['scheme'], int(record['n']), int(record['K']),
                              seed=record.get('seed'))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _chunk_bounds(n, K):
    '''
    Boundaries of K contiguous chunks of range(n); the first n mod K chunks
    get one extra row.
    '''
    m, extra = divmod(n, K)
    sizes = np.full(K, m)
    sizes[:extra] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


def make_partition(scheme, n, K, seed=None):
    '''
    Builds a partition of range(n) into K blocks.

    Args:
        scheme: 'interleaved' (block k holds rows k, k + K, k + 2K, ...),
                'consecutive' (contiguous chunks) or 'random' (seeded shuffle
                followed by consecutive chunking)
        n: number of rows
        K: number of blocks, 1 ≤ K ≤ n
        seed: required for 'random', ignored otherwise
    Returns:
        Partition. When n is not a multiple of K, blocks differ in size by at
        most one and the larger blocks come first.
    '''
    if not 1 <= K <= n:
        raise ValueError(f'Need 1 ≤ K ≤ n, got K={K}, n={n}')
    if scheme == 'interleaved':
        blocks = tuple(np.arange(k, n, K) for k in range(K))
        seed = None
    elif scheme in ('consecutive', 'random'):
        order = np.arange(n)
        if scheme == 'random':
            if seed is None:
                raise ValueError('The random partition scheme needs a seed')
            order = np.random.default_rng(seed).permutation(n)
        else:
            seed = None
        bounds = _chunk_bounds(n, K)
        blocks = tuple(order[bounds[k]:bounds[k + 1]] for k in range(K))
    elif scheme == 'custom':
        raise ValueError('Custom partitions are built from explicit blocks, use Partition(...)')
    else:
        raise ValueError(f'Unknown partition scheme {scheme!r}; expected one of {PARTITION_SCHEMES}')
    return Partition(blocks, scheme, n, seed)


def check_partition(A, P):
    M = as_matrix(A)
    if P.n != M.shape[0]:
        raise ValueError(f'Partition covers {P.n} rows but the operator has {M.shape[0]}')
    return M


def subset_operator(A, block):
    '''
    S^k A, the rows of A listed in `block`, in the order given.

    Contiguous increasing blocks of a sparse or dense matrix are sliced rather
    than fancy-indexed; the rows are the same either way.
    '''
    M = as_matrix(A)
    block = np.asarray(block, dtype=np.int64).ravel()
    if block.size == 0:
        raise ValueError('Row block must be nonempty')
    if block.min() < 0 or block.max() >= M.shape[0]:
        raise IndexError(f'Row block has indices outside range({M.shape[0]})')
    if np.unique(block).size != block.size:
        raise ValueError('Row block indices must be distinct')
    if np.all(np.diff(block) == 1):
        return M[block[0]:block[-1] + 1]
    return M[block]


def _block_coherence(block_matrix):
    G = block_matrix @ block_matrix.T
    if sp.issparse(G):
        return float(np.asarray(abs(G).sum(axis=1)).max())
    return float(np.abs(G).sum(axis=1).max())


def local_accumulated_coherence(A, P):
    '''
    μ_ℓ(A, P) = max over blocks S and rows j ∈ S of Σ_{k∈S} |⟨a_j, a_k⟩|,
    diagonal term included. Computed exactly from the per-block Gram matrices.
    '''
    M = check_partition(A, P)
    return max(_block_coherence(subset_operator(M, block)) for block in P.blocks)
