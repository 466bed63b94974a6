'''
Forward operators for linear inverse problems b = A x† + w: the space-varying
out-of-focus blur, random matrix ensembles, the anisotropic finite-difference
operator D, and Matrix Market ingest.

Images are vectorized column by column, x = [x_1; x_2; ...; x_{d2}], so pixel
(i, j) of a d1 × d2 image sits at index i + j·d1.
'''

import logging
import os
import tempfile
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from .constants import ENSEMBLE_KINDS
from .errors import MatrixMarketError
from .linalg import as_matrix

logger = logging.getLogger(__name__)

# Squared-distance slack so that disk boundaries hit exactly by the radius
# profile stay inside the disk.
_DISK_TIE_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class ForwardOperator():
    '''
    A linear map with row access and adjoint.

    Attributes
    ----------
    matrix : numpy.ndarray or scipy.sparse.csr_matrix
        canonical storage, n × d
    label : str
        human readable tag, also written to manifests
    image_shape : tuple or None
        (d1, d2) when the columns index the pixels of an image
    '''
    matrix: object
    label: str
    image_shape: tuple = None

    def __post_init__(self):
        object.__setattr__(self, 'matrix', as_matrix(self.matrix))
        if not self.label:
            raise ValueError('ForwardOperator label must be nonempty')
        if self.image_shape is not None:
            d1, d2 = (int(s) for s in self.image_shape)
            if d1 * d2 != self.d:
                raise ValueError(f'Image shape {d1}x{d2} does not match {self.d} columns')
            object.__setattr__(self, 'image_shape', (d1, d2))

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def d(self):
        return self.matrix.shape[1]

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def is_sparse(self):
        return sp.issparse(self.matrix)

    def matvec(self, x):
        return np.asarray(self.matrix @ x).ravel()

    def rmatvec(self, y):
        return np.asarray(self.matrix.T @ y).ravel()

    def row(self, i):
        '''
        Row i as a dense vector.
        '''
        if self.is_sparse:
            return self.matrix.getrow(i).toarray().ravel()
        return np.array(self.matrix[i])


@dataclass(frozen=True)
class BlurSpec():
    '''
    Parameters of the space-varying out-of-focus blur. The disk radius grows
    linearly with the distance of a pixel from the image center, from `r_min`
    at the center to `r_max` at the corners. Kernels are truncated at the image
    border (zero padding) and renormalized.
    '''
    d1: int
    d2: int
    r_min: float = 0.
    r_max: float = 0.
    boundary: str = 'zero'

    def __post_init__(self):
        if self.d1 < 1 or self.d2 < 1:
            raise ValueError(f'Image dims must be positive, got {self.d1}x{self.d2}')
        if not 0 <= self.r_min <= self.r_max:
            raise ValueError(f'Need 0 ≤ r_min ≤ r_max, got r_min={self.r_min}, r_max={self.r_max}')
        if self.r_max > 0 and not self.r_max < min(self.d1, self.d2) / 2:
            raise ValueError(f'r_max={self.r_max} must be below half the smaller image dim')
        if self.boundary != 'zero':
            raise ValueError(f'Unsupported blur boundary rule {self.boundary!r}')


def _radius_profile(spec):
    '''
    Disk radius of every pixel in column-major order.
    '''
    ci, cj = (spec.d1 - 1) / 2., (spec.d2 - 1) / 2.
    ii, jj = np.meshgrid(np.arange(spec.d1), np.arange(spec.d2), indexing='ij')
    dist = np.hypot(ii - ci, jj - cj).ravel(order='F')
    corner = np.hypot(ci, cj)
    if corner == 0:
        return np.full(dist.shape, float(spec.r_min))
    return spec.r_min + (spec.r_max - spec.r_min) * dist / corner


def build_space_varying_blur(spec):
    '''
    Builds the sparse blur operator of `spec`. Row p is the vectorized disk
    kernel centered on pixel p: uniform weights on the pixels whose centers lie
    within the pixel's radius (boundary included), truncated at the image edge
    and normalized to sum to 1.

    Args:
        spec: BlurSpec
    Returns:
        ForwardOperator of size (d1·d2) × (d1·d2) with image_shape (d1, d2)
    '''
    d1, d2 = spec.d1, spec.d2
    radii = _radius_profile(spec)
    reach = int(np.floor(spec.r_max))
    di, dj = np.meshgrid(np.arange(-reach, reach + 1), np.arange(-reach, reach + 1), indexing='ij')
    di, dj = di.ravel(), dj.ravel()
    offset_dist_sq = di ** 2 + dj ** 2

    rows, cols, vals = [], [], []
    for p in range(d1 * d2):
        i, j = p % d1, p // d1
        r = radii[p]
        ti, tj = i + di, j + dj
        inside = ((offset_dist_sq <= r * r + _DISK_TIE_EPS)
                  & (ti >= 0) & (ti < d1) & (tj >= 0) & (tj < d2))
        targets = ti[inside] + tj[inside] * d1
        rows.append(np.full(targets.size, p))
        cols.append(targets)
        vals.append(np.full(targets.size, 1. / targets.size))

    matrix = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(d1 * d2, d1 * d2))
    label = f'blur({d1}x{d2},r={spec.r_min:g}..{spec.r_max:g})'
    logger.info(f'Built {label} with {matrix.nnz} nonzeros')
    return ForwardOperator(matrix, label, image_shape=(d1, d2))


def build_random_ensemble(kind, n, d, seed, mean=0., var=1.):
    '''
    Draws a dense random forward operator.

    Args:
        kind: 'gaussian' (i.i.d. N(mean, var) entries), 'uniform01' (i.i.d.
              U[0, 1] entries) or 'subsampled_wishart' (n rows, chosen without
              replacement, of GᵀG/√d for a d × d standard Gaussian G; needs n ≤ d)
        n, d: output shape
        seed: anything accepted by numpy.random.default_rng
        mean, var: Gaussian parameters, ignored for the other kinds
    Returns:
        ForwardOperator, identical for identical arguments
    '''
    if n < 1 or d < 1:
        raise ValueError(f'Ensemble shape must be positive, got {n}x{d}')
    if kind not in ENSEMBLE_KINDS:
        raise ValueError(f'Unknown ensemble kind {kind!r}; expected one of {ENSEMBLE_KINDS}')
    rng = np.random.default_rng(seed)

    if kind == 'gaussian':
        if var < 0:
            raise ValueError(f'Gaussian variance must be nonnegative, got {var}')
        matrix = mean + np.sqrt(var) * rng.standard_normal((n, d))
        label = f'gaussian(mean={mean:g},var={var:g})'
    elif kind == 'uniform01':
        matrix = rng.random((n, d))
        label = 'uniform01'
    else:
        if n > d:
            raise ValueError(f'subsampled_wishart needs n ≤ d, got {n}x{d}')
        G = rng.standard_normal((d, d))
        wishart = G.T @ G / np.sqrt(d)
        rows = np.sort(rng.choice(d, size=n, replace=False))
        matrix = wishart[rows]
        label = 'subsampled_wishart'
    return ForwardOperator(matrix, label)


def identical_rows_operator(row, n):
    '''
    n copies of `row`, the extreme case where every minibatch sees the same data.
    '''
    row = np.asarray(row, dtype=float).ravel()
    return ForwardOperator(np.tile(row, (n, 1)), f'identical_rows(n={n})')


def identity_operator(n):
    return ForwardOperator(sp.identity(n, format='csr'), f'identity(n={n})')


def _forward_difference(k):
    return sp.diags([-np.ones(k - 1), np.ones(k - 1)], [0, 1], shape=(k - 1, k), format='csr')


def diff_operator(d1, d2):
    '''
    Anisotropic forward-difference operator of a d1 × d2 image vectorized in
    column-major order, the order of the blur operators.

    The first d1·(d2 − 1) rows hold the horizontal differences
    x[i, j+1] − x[i, j], the remaining (d1 − 1)·d2 rows the vertical differences
    x[i+1, j] − x[i, j].

    Returns:
        scipy.sparse CSR matrix with d1·(d2 − 1) + (d1 − 1)·d2 rows
    '''
    if d1 < 2 or d2 < 2:
        raise ValueError(f'diff_operator needs d1, d2 ≥ 2, got {d1}x{d2}')
    horizontal = sp.kron(_forward_difference(d2), sp.identity(d1))
    vertical = sp.kron(sp.identity(d2), _forward_difference(d1))
    return as_matrix(sp.vstack([horizontal, vertical], format='csr'))


def _read_header(path):
    '''
    Returns (format, header_line_count, declared size tokens) of a Matrix
    Market file, validating the banner.
    '''
    with open(path, 'r') as f:
        banner = f.readline()
        tokens = banner.strip().lower().split()
        if len(tokens) != 5 or tokens[0] != '%%matrixmarket' or tokens[1] != 'matrix':
            raise MatrixMarketError('missing "%%MatrixMarket matrix" banner', path, 1)
        layout, field, symmetry = tokens[2:]
        if layout not in ('coordinate', 'array') or field != 'real' or symmetry != 'general':
            raise MatrixMarketError(f'unsupported format "{" ".join(tokens[2:])}"; only '
                                    '"coordinate real general" and "array real general" '
                                    'are read', path, 1)
        line_no = 1
        for line in f:
            line_no += 1
            stripped = line.strip()
            if not stripped or stripped.startswith('%'):
                continue
            try:
                sizes = [int(t) for t in stripped.split()]
            except ValueError:
                raise MatrixMarketError(f'malformed size line {stripped!r}', path, line_no)
            expected = 3 if layout == 'coordinate' else 2
            if len(sizes) != expected or min(sizes[:2]) < 1 or min(sizes) < 0:
                raise MatrixMarketError(f'malformed size line {stripped!r}', path, line_no)
            return layout, line_no, sizes
    raise MatrixMarketError('missing size line', path, line_no)


def _locate_bad_entry(path, layout, size_line, sizes):
    '''
    Scans the data section for the first malformed or out-of-range entry and
    returns (line number, reason), or (None, None) when every line parses.
    '''
    n, d = sizes[:2]
    seen = set()
    count = 0
    with open(path, 'r') as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if line_no <= size_line or not stripped or stripped.startswith('%'):
                continue
            parts = stripped.split()
            count += 1
            try:
                if layout == 'array':
                    if len(parts) != 1:
                        return line_no, 'expected one value'
                    float(parts[0])
                    if count > n * d:
                        return line_no, f'more than {n * d} values'
                    continue
                if len(parts) != 3:
                    return line_no, 'expected "row col value"'
                i, j, _ = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                return line_no, f'cannot parse {stripped!r}'
            if not (1 <= i <= n and 1 <= j <= d):
                return line_no, f'index ({i}, {j}) outside {n}x{d}'
            if (i, j) in seen:
                return line_no, f'duplicate entry ({i}, {j})'
            seen.add((i, j))
            if count > sizes[2]:
                return line_no, f'more than the declared {sizes[2]} entries'
    expected = n * d if layout == 'array' else sizes[2]
    if count != expected:
        return line_no, f'found {count} entries, header declares {expected}'
    return None, None


def load_matrix_market(path, label=None):
    '''
    Reads a forward operator from a Matrix Market file.

    Only "coordinate real general" (returned sparse) and "array real general"
    (returned dense) are accepted. 1-based file indices become 0-based.
    Duplicate coordinates are an error rather than being summed.

    Args:
        path: .mtx file
        label: operator label, defaults to the file stem
    Returns:
        ForwardOperator
    Raises:
        MatrixMarketError with the offending line number where one exists
    '''
    path = os.fspath(path)
    if not os.path.exists(path):
        raise MatrixMarketError('file does not exist', path)
    layout, size_line, sizes = _read_header(path)
    bad_line, reason = _locate_bad_entry(path, layout, size_line, sizes)
    if bad_line is not None:
        raise MatrixMarketError(reason, path, bad_line)

    try:
        loaded = scipy.io.mmread(path)
    except Exception as err:
        raise MatrixMarketError(f'scipy could not parse the file: {err}', path)

    if layout == 'coordinate':
        coo = sp.coo_matrix(loaded)
        if coo.nnz != sizes[2]:
            raise MatrixMarketError(f'read {coo.nnz} entries, header declares {sizes[2]} '
                                    '(duplicates are not summed)', path)
        matrix = coo.tocsr()
    else:
        matrix = np.asarray(loaded, dtype=float)
    if matrix.shape != tuple(sizes[:2]):
        raise MatrixMarketError(f'dimension mismatch: read {matrix.shape}, '
                                f'header declares {tuple(sizes[:2])}', path)

    label = label or os.path.splitext(os.path.basename(path))[0]
    logger.info(f'Loaded {label} ({matrix.shape[0]}x{matrix.shape[1]}, {layout}) from {path}')
    return ForwardOperator(matrix, label)


def write_matrix_market(path, operator):
    '''
    Writes an operator to `path` atomically: sparse operators in coordinate
    format, dense ones in array format, 17 significant digits so a reload
    reproduces every entry exactly.
    '''
    path = os.fspath(path)
    matrix = as_matrix(operator)
    directory = os.path.dirname(os.path.abspath(path))
    handle, tmp_path = tempfile.mkstemp(dir=directory, suffix='.mtx')
    try:
        with os.fdopen(handle, 'wb') as f:
            scipy.io.mmwrite(f, sp.coo_matrix(matrix) if sp.issparse(matrix) else matrix,
                             field='real', precision=17, symmetry='general')
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
