# Feature maps f: sample -> R^k.
#
# Two kinds of encoder:
#   - TabularEncoder: one learnable row per sample. This is exactly the
#     matrix-factorization view, since its rows are the rows of F up to
#     the sqrt(P(x)) weighting.
#   - MlpEncoder: a small GELU network over a coordinate embedding of the
#     sample. The last layer plays the role of the projector.
#
# Either kind may end in a NonNegTransform. There is no autograd: each
# encoder caches what its forward pass needs, and grad_params() runs the
# chain rule by hand. The cache is tagged with the parameter version, so
# a gradient request after set_params() is caught.

__metaclass__ = type
"""
Tabular and MLP encoders, their gradients, and checkpoint files.
"""

import json
import logging
import struct

import numpy as np
from packaging import version

from nonneg_cl.module_utils import reparam
from nonneg_cl.module_utils.errors import (
    CheckpointFormatError,
    ConfigInvalid,
    IndexOutOfRange,
    ShapeMismatch,
    StaleForwardState,
)
from nonneg_cl.module_utils.features import FeatureTable
from nonneg_cl.module_utils.latent_model import ground_truth_phi

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"NCLCKPT\0"
CHECKPOINT_VERSION = "1.0"

KINDS = ('tabular', 'mlp')


class _Encoder:
    """Parameter bookkeeping shared by both encoder kinds."""

    kind = None

    def __init__(self, transform=None, seed=None):
        if isinstance(transform, str):
            transform = reparam.from_name(transform)
        self.transform = transform
        self.seed = seed
        self.version = 0
        self._params = {}
        self._cache = None

    @property
    def param_names(self):
        return list(self._params)

    @property
    def param_count(self):
        return int(sum(p.size for p in self._params.values()))

    def params(self):
        """Return a copy of the parameters, keyed by name."""
        return {name: p.copy() for name, p in self._params.items()}

    def set_params(self, params):
        """Replace the parameters. Shapes must not change."""
        for name, value in params.items():
            if name not in self._params:
                raise ShapeMismatch("unknown parameter", name)
            value = np.array(value, dtype=np.float64)
            if value.shape != self._params[name].shape:
                raise ShapeMismatch(f"parameter {name} changed shape",
                                    (self._params[name].shape, value.shape))
            self._params[name] = value
        self.version += 1
        self._cache = None

    def _output(self, pre):
        if self.transform is None:
            return FeatureTable(pre, nonneg=False)
        return FeatureTable(reparam.forward(self.transform, pre), nonneg=True)

    def _upstream(self, upstream):
        """Check the cache and map 'upstream' back through the output
        transform."""
        if self._cache is None:
            raise StaleForwardState("no cached forward pass; call "
                                    "encode() with cache=True first")
        if self._cache['version'] != self.version:
            raise StaleForwardState("parameters changed since the cached "
                                    "forward pass",
                                    (self._cache['version'], self.version))
        pre = self._cache['pre']
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != pre.shape:
            raise StaleForwardState("upstream gradient does not match the "
                                    "cached batch", (upstream.shape,
                                                     pre.shape))
        if self.transform is None:
            return upstream
        return reparam.backward(self.transform, pre, upstream)

    def encode_all(self, n_samples, cache=False):
        """Encode every sample of an N-sample space."""
        return self.encode(np.arange(n_samples), cache=cache)


class TabularEncoder(_Encoder):
    kind = 'tabular'

    def __init__(self, weights, transform=None, seed=None):
        super().__init__(transform=transform, seed=seed)
        weights = np.array(weights, dtype=np.float64)
        if weights.ndim != 2:
            raise ShapeMismatch("tabular weights must be N x k",
                                weights.shape)
        self._params = {'weights': weights}

    @classmethod
    def initialize(cls, n_samples, k, transform=None, seed=None):
        """Random initialization.

        Uniform(0, 1/sqrt(k)) under a non-negative transform, so every
        output starts alive; Gaussian with standard deviation 1/sqrt(k)
        otherwise.
        """
        if isinstance(transform, str):
            transform = reparam.from_name(transform)
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(k)
        if transform is not None:
            weights = rng.uniform(0.0, scale, size=(n_samples, k))
        else:
            weights = rng.normal(0.0, scale, size=(n_samples, k))
        return cls(weights, transform=transform, seed=seed)

    @property
    def weights(self):
        return self._params['weights']

    @property
    def n_inputs(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]

    def encode(self, inputs=None, cache=True):
        """Encode sample indices. None means every sample."""
        if inputs is None:
            idx = np.arange(self.n_inputs)
        else:
            idx = np.asarray(inputs)
            if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
                raise ShapeMismatch("tabular encoders take a vector of "
                                    "sample indices", idx.shape)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_inputs):
            raise IndexOutOfRange(f"sample index outside 0..{self.n_inputs - 1}",
                                  (int(idx.min()), int(idx.max())))

        pre = self.weights[idx]
        if cache:
            self._cache = {'inputs': idx, 'pre': pre,
                           'version': self.version}
        return self._output(pre)

    def grad_params(self, upstream):
        """Scatter the feature-row gradient back onto the weight rows.

        Repeated indices accumulate.
        """
        g = self._upstream(upstream)
        grad = np.zeros_like(self.weights)
        np.add.at(grad, self._cache['inputs'], g)
        return {'weights': grad}

    def header(self):
        return {'kind': self.kind,
                'shape': list(self.weights.shape)}


class MlpEncoder(_Encoder):
    """GELU network [d_in, h_1, ..., k].

    Inputs are either integer sample indices, looked up in 'embedding'
    (one-hot when no embedding is given), or a float batch of
    coordinates of width d_in.
    """

    kind = 'mlp'

    def __init__(self, layer_sizes, transform=None, seed=None,
                 embedding=None, params=None):
        super().__init__(transform=transform, seed=seed)
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise ConfigInvalid("an MLP needs at least input and output "
                                "sizes, all positive", layer_sizes)
        self.layer_sizes = layer_sizes

        if embedding is not None:
            embedding = np.array(embedding, dtype=np.float64)
            if embedding.ndim != 2 or embedding.shape[1] != layer_sizes[0]:
                raise ShapeMismatch("embedding width must equal the input "
                                    "layer size",
                                    (embedding.shape, layer_sizes[0]))
        self.embedding = embedding

        if params is None:
            # Fan-in scaled Gaussian weights, zero biases.
            rng = np.random.default_rng(seed)
            params = {}
            for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1],
                                                      layer_sizes[1:])):
                params[f'W{i}'] = rng.normal(0.0, 1.0 / np.sqrt(fan_in),
                                             size=(fan_in, fan_out))
                params[f'b{i}'] = np.zeros(fan_out)
        self._params = {name: np.array(p, dtype=np.float64)
                        for name, p in params.items()}
        for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1],
                                                  layer_sizes[1:])):
            if self._params[f'W{i}'].shape != (fan_in, fan_out) or \
               self._params[f'b{i}'].shape != (fan_out,):
                raise ShapeMismatch(f"layer {i} parameters do not match the "
                                    "layer sizes", layer_sizes)

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def dim(self):
        return self.layer_sizes[-1]

    @property
    def n_inputs(self):
        if self.embedding is not None:
            return self.embedding.shape[0]
        return self.layer_sizes[0]

    def _coordinates(self, inputs):
        if inputs is None:
            inputs = np.arange(self.n_inputs)
        x = np.asarray(inputs)
        if np.issubdtype(x.dtype, np.integer):
            if x.ndim != 1:
                raise ShapeMismatch("sample indices must be a vector",
                                    x.shape)
            if x.size and (x.min() < 0 or x.max() >= self.n_inputs):
                raise IndexOutOfRange(
                    f"sample index outside 0..{self.n_inputs - 1}",
                    (int(x.min()), int(x.max())))
            if self.embedding is None:
                return np.eye(self.layer_sizes[0])[x]
            return self.embedding[x]
        x = x.astype(np.float64)
        if x.ndim != 2 or x.shape[1] != self.layer_sizes[0]:
            raise ShapeMismatch(f"coordinates must be B x {self.layer_sizes[0]}",
                                x.shape)
        return x

    def _forward(self, x):
        hidden = [x]
        pre = []
        h = x
        for i in range(self.n_layers):
            z = h @ self._params[f'W{i}'] + self._params[f'b{i}']
            pre.append(z)
            if i < self.n_layers - 1:
                h = reparam.gelu(z)
                hidden.append(h)
        return hidden, pre

    def encode(self, inputs=None, cache=True, tap=None):
        """Encode a batch.

        With tap='pre_projector' the input to the last layer is returned
        instead, and nothing is cached.
        """
        x = self._coordinates(inputs)
        hidden, pre = self._forward(x)
        if tap == 'pre_projector':
            return FeatureTable(hidden[-1], nonneg=False)
        if tap is not None:
            raise ConfigInvalid("unknown encoder tap", tap)
        if cache:
            self._cache = {'hidden': hidden, 'pre_layers': pre,
                           'pre': pre[-1], 'version': self.version}
        return self._output(pre[-1])

    def grad_params(self, upstream):
        g = self._upstream(upstream)
        hidden = self._cache['hidden']
        pre = self._cache['pre_layers']
        grads = {}
        for i in reversed(range(self.n_layers)):
            grads[f'W{i}'] = hidden[i].T @ g
            grads[f'b{i}'] = g.sum(axis=0)
            if i > 0:
                g = (g @ self._params[f'W{i}'].T) * \
                    reparam.gelu_derivative(pre[i - 1])
        return {name: grads[name] for name in self._params}

    def header(self):
        return {'kind': self.kind,
                'layer_sizes': self.layer_sizes,
                'embedding': None if self.embedding is None
                else list(self.embedding.shape)}


def build_encoder(spec, n_samples, embedding=None, seed=None):
    """Build an encoder from a config dict with keys kind, k, transform,
    hidden (MLP hidden layer sizes)."""

    kind = spec.get('kind', 'tabular')
    k = int(spec['k'])
    transform = reparam.from_name(spec.get('transform'))
    if kind == 'tabular':
        return TabularEncoder.initialize(n_samples, k, transform=transform,
                                         seed=seed)
    if kind == 'mlp':
        if embedding is None:
            embedding = np.eye(n_samples)
        sizes = [embedding.shape[1]] + list(spec.get('hidden') or []) + [k]
        return MlpEncoder(sizes, transform=transform, seed=seed,
                          embedding=embedding)
    raise ConfigInvalid("unknown encoder kind", kind)


#
# Checkpoints
#

def save_checkpoint(enc, path):
    """Write 'enc' as magic, header length, JSON header, then '<f8'
    parameter blocks in header order."""

    header = enc.header()
    header['format_version'] = CHECKPOINT_VERSION
    header['transform'] = None if enc.transform is None \
        else enc.transform.kind
    header['seed'] = enc.seed
    params = enc.params()
    header['params'] = [{'name': name, 'shape': list(p.shape)}
                        for name, p in params.items()]
    blob = json.dumps(header, sort_keys=True).encode('utf-8')

    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<I', len(blob)))
        f.write(blob)
        if enc.kind == 'mlp' and enc.embedding is not None:
            f.write(enc.embedding.astype('<f8').tobytes())
        for p in params.values():
            f.write(p.astype('<f8').tobytes())
    log.debug("wrote %s checkpoint with %d parameters to %s",
              enc.kind, enc.param_count, path)


def load_checkpoint(path):
    with open(path, 'rb') as f:
        data = f.read()

    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointFormatError("not a checkpoint file", str(path))
    offset = len(CHECKPOINT_MAGIC)
    try:
        (length,) = struct.unpack_from('<I', data, offset)
        offset += 4
        header = json.loads(data[offset:offset + length].decode('utf-8'))
    except (struct.error, ValueError) as e:
        raise CheckpointFormatError(f"unreadable checkpoint header: {e}",
                                    str(path))
    offset += length

    try:
        found = version.Version(str(header['format_version']))
    except (KeyError, version.InvalidVersion) as e:
        raise CheckpointFormatError(f"bad checkpoint version: {e}",
                                    str(path))
    if found.major != version.Version(CHECKPOINT_VERSION).major:
        raise CheckpointFormatError(
            f"checkpoint format {found} is not readable by this version "
            f"({CHECKPOINT_VERSION})", str(path))

    def block(shape):
        nonlocal offset
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointFormatError("checkpoint is truncated", str(path))
        arr = np.frombuffer(data[offset:end], dtype='<f8').reshape(shape)
        offset = end
        return arr.astype(np.float64)

    kind = header.get('kind')
    if kind == 'mlp':
        embedding = None
        if header.get('embedding') is not None:
            embedding = block(header['embedding'])
        params = {p['name']: block(p['shape']) for p in header['params']}
        enc = MlpEncoder(header['layer_sizes'],
                         transform=header.get('transform'),
                         seed=header.get('seed'), embedding=embedding,
                         params=params)
    elif kind == 'tabular':
        params = {p['name']: block(p['shape']) for p in header['params']}
        enc = TabularEncoder(params['weights'],
                             transform=header.get('transform'),
                             seed=header.get('seed'))
    else:
        raise CheckpointFormatError("unknown encoder kind in checkpoint",
                                    kind)
    if offset != len(data):
        raise CheckpointFormatError("trailing data after parameters",
                                    len(data) - offset)
    return enc


def export_csv(enc, path, n_samples=None):
    """Write the full feature table as headerless CSV."""
    n = enc.n_inputs if n_samples is None else n_samples
    table = enc.encode_all(n, cache=False)
    np.savetxt(path, table.values, fmt='%.17g', delimiter=',')
    return table


def load_feature_table(source, model):
    """Feature table named by a config 'source' section.

    kind 'ground_truth' is the closed-form optimum (zero-padded to k),
    'checkpoint' encodes every sample with a saved encoder, and 'csv'
    reads a headerless matrix.
    """
    kind = source.get('kind') or 'ground_truth'
    if kind == 'ground_truth':
        return ground_truth_phi(model, k=source.get('k'))
    if kind == 'checkpoint':
        enc = load_checkpoint(source['path'])
        return enc.encode_all(model.n_samples, cache=False)
    if kind == 'csv':
        values = np.loadtxt(source['path'], delimiter=',', ndmin=2)
        if values.shape[0] != model.n_samples:
            raise ShapeMismatch("feature CSV needs one row per sample",
                                (values.shape, model.n_samples))
        return FeatureTable(values, nonneg=bool(values.min() >= 0))
    raise ConfigInvalid("unknown feature source", kind)
