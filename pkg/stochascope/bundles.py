'''
On-disk persistence: problem bundles (operator, vectors and a manifest with
content digests), versioned CSV reports and JSON documents. Every write goes
to a temporary file in the target directory and is moved into place with
os.replace.
'''

import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .constants import MANIFEST_SCHEMA
from .errors import ManifestError
from .operators import ForwardOperator, load_matrix_market, write_matrix_market
from .problems import Problem, measured_snr
from .prox import RegularizerSpec

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
OPERATOR_NAME = 'operator.mtx'
B_NAME = 'b.npy'
X_TRUE_NAME = 'x_true.npy'


def atomic_write_bytes(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-')
    try:
        with os.fdopen(handle, 'wb') as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode('utf-8'))


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def format_value(value):
    '''
    Text form of a report cell; floats use 17 significant digits.
    '''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return format(value, '.17g')
    return str(value)


def write_csv(path, schema, columns, rows):
    '''
    Writes `# schema: <schema>`, a header line and one line per row.
    '''
    buffer = io.StringIO()
    buffer.write(f'# schema: {schema}\n')
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    atomic_write_text(path, buffer.getvalue())


def read_csv(path):
    '''
    Returns (schema, columns, rows of strings) of a file written by write_csv.
    '''
    with open(path, 'r', encoding='utf-8', newline='') as f:
        first = f.readline().strip()
        if not first.startswith('# schema: '):
            raise ValueError(f'{path}: missing schema line')
        reader = csv.reader(f)
        columns = next(reader)
        rows = [row for row in reader if row]
    return first[len('# schema: '):], columns, rows


def write_json(path, document):
    '''
    UTF-8 JSON with sorted keys; NaN and infinity are rejected.
    '''
    text = json.dumps(document, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
    atomic_write_text(path, text + '\n')


def read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def save_vector(path, vector):
    buffer = io.BytesIO()
    np.save(buffer, np.asarray(vector, dtype=float), allow_pickle=False)
    atomic_write_bytes(path, buffer.getvalue())


def load_vector(path):
    return np.load(path, allow_pickle=False)


@dataclass(frozen=True, eq=False)
class ProblemBundle():
    '''
    A problem loaded from disk.

    Attributes
    ----------
    directory : str
        bundle directory
    manifest : dict
        parsed manifest.json
    problem : Problem
        operator, data and regularizer
    '''
    directory: str
    manifest: dict
    problem: Problem

    @property
    def seed(self):
        return self.manifest.get('seed')

    @property
    def est_error_available(self):
        return bool(self.manifest['est_error_available'])


def _finite_or_none(value):
    return value if math.isfinite(value) else None


def write_bundle(directory, problem, generator, seed, snr=None):
    '''
    Writes operator.mtx, b.npy, x_true.npy (when known) and manifest.json.

    Args:
        directory: output directory, created if needed
        problem: Problem to persist
        generator: dict describing how the operator was made
        seed: master seed of the run
        snr: requested SNR, None for noiseless or measured data
    Returns:
        the manifest dict
    '''
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    files = {'operator': OPERATOR_NAME, 'b': B_NAME}
    write_matrix_market(os.path.join(directory, OPERATOR_NAME), problem.A)
    save_vector(os.path.join(directory, B_NAME), problem.b)
    if problem.x_true is not None:
        save_vector(os.path.join(directory, X_TRUE_NAME), problem.x_true)
        files['x_true'] = X_TRUE_NAME

    image_shape = problem.A.image_shape
    manifest = {'schema': MANIFEST_SCHEMA,
                'generator': generator,
                'label': problem.A.label,
                'seed': seed,
                'snr': snr,
                'measured_snr': (_finite_or_none(measured_snr(problem))
                                 if snr is not None else None),
                'noise_norm': problem.noise_norm,
                'shapes': {'n': problem.n, 'd': problem.d,
                           'image_shape': list(image_shape) if image_shape else None},
                'files': {role: {'path': name,
                                 'sha256': sha256_file(os.path.join(directory, name))}
                          for role, name in files.items()},
                'reg': problem.reg.to_dict(image_shape=image_shape),
                'est_error_available': problem.x_true is not None}
    write_json(os.path.join(directory, MANIFEST_NAME), manifest)
    logger.info(f'Wrote bundle {directory} ({problem.n}x{problem.d})')
    return manifest


def _verified_path(directory, manifest, role):
    entry = manifest['files'].get(role)
    if entry is None:
        return None
    path = os.path.join(directory, entry['path'])
    if not os.path.exists(path):
        raise ManifestError(f'{directory}: {role} file {entry["path"]} is missing')
    digest = sha256_file(path)
    if digest != entry['sha256']:
        raise ManifestError(f'{directory}: {role} file {entry["path"]} has digest {digest}, '
                            f'manifest records {entry["sha256"]}')
    return path


def load_bundle(directory):
    '''
    Loads and verifies a bundle written by write_bundle.

    Raises:
        ManifestError for a missing manifest or file, a digest mismatch, or
        dimensions that disagree with the manifest
    '''
    directory = os.fspath(directory)
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise ManifestError(f'{directory}: no {MANIFEST_NAME}')
    manifest = read_json(manifest_path)
    if manifest.get('schema') != MANIFEST_SCHEMA:
        raise ManifestError(f'{manifest_path}: unsupported schema {manifest.get("schema")!r}')

    shapes = manifest['shapes']
    image_shape = tuple(shapes['image_shape']) if shapes.get('image_shape') else None
    loaded = load_matrix_market(_verified_path(directory, manifest, 'operator'),
                                label=manifest.get('label'))
    if loaded.shape != (shapes['n'], shapes['d']):
        raise ManifestError(f'{directory}: operator is {loaded.shape[0]}x{loaded.shape[1]}, '
                            f'manifest records {shapes["n"]}x{shapes["d"]}')
    A = ForwardOperator(loaded.matrix, loaded.label, image_shape=image_shape)

    b = load_vector(_verified_path(directory, manifest, 'b'))
    x_true_path = _verified_path(directory, manifest, 'x_true')
    x_true = load_vector(x_true_path) if x_true_path else None
    if b.shape != (A.n,) or (x_true is not None and x_true.shape != (A.d,)):
        raise ManifestError(f'{directory}: vector lengths do not match the operator')
    if manifest['est_error_available'] != (x_true is not None):
        raise ManifestError(f'{directory}: est_error_available disagrees with the files')

    reg = RegularizerSpec.from_dict(manifest['reg'], A.d, image_shape=image_shape)
    problem = Problem(A, b, x_true, reg, manifest.get('noise_norm'))
    logger.info(f'Loaded bundle {directory} ({A.n}x{A.d}, {A.label})')
    return ProblemBundle(directory, manifest, problem)
