'''
Dense tanh MLPs with reverse-mode gradients and an Adam optimizer, all in
float64 numpy.

Checkpoint format (text, version 1)
-----------------------------------
    mazecurric-checkpoint 1
    config <section.key> = <value>          (zero or more lines)
    network <name>
    layer_dims <d0> <d1> ... <dn>
    step_count <n>
    weight <i> <row-major floats, repr round-trip>
    bias <i> <floats>
    ...
    end

Every network block lists 'weight i' and 'bias i' for i = 0..n-1 in order.
Floats are written with repr(), so loading reproduces parameters bit-exactly.
'''
from dataclasses import dataclass

import numpy as np


FORMAT_VERSION = 1
_MAGIC = 'mazecurric-checkpoint'


class TensorException(Exception):
    pass


class Mlp:
    '''
    Multi-layer perceptron: tanh on hidden layers, identity on the output.

    Weights are stored as (fan_in, fan_out) matrices so a batch of row vectors
    is propagated with 'x @ W + b'.
    '''

    def __init__(self, layer_dims: list, rng=None, output_scale: float = 1.0,
                 weights: list = None, biases: list = None) -> None:

        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise TensorException(
                "layer_dims needs at least two positive sizes, got {}".format(layer_dims))
        self._layer_dims = dims

        if weights is None:
            rng = np.random.default_rng(rng)
            self.weights = []
            self.biases = []
            for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
                w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
                if i == len(dims) - 2:
                    w *= output_scale
                self.weights.append(w)
                self.biases.append(np.zeros(fan_out))
        else:
            self.weights = [np.array(w, dtype=np.float64) for w in weights]
            self.biases = [np.array(b, dtype=np.float64) for b in biases]
            self._check_shapes()

    @property
    def layer_dims(self):
        return list(self._layer_dims)

    @layer_dims.setter
    def layer_dims(self, value):
        raise TensorException('"layer_dims" can\'t be modified after construction.')

    @property
    def n_layers(self) -> int:
        return len(self._layer_dims) - 1

    def _check_shapes(self) -> None:
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise TensorException(
                "Expected {} weight/bias pairs, got {}/{}".format(
                    self.n_layers, len(self.weights), len(self.biases)))
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self._layer_dims[i], self._layer_dims[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise TensorException(
                    "Layer {}: weight {} / bias {} do not chain with layer_dims {}".format(
                        i, w.shape, b.shape, self._layer_dims))

    def params(self) -> list:
        '''Parameters in the order [W0, b0, W1, b1, ...]; arrays are shared, not copied.'''
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> 'Mlp':
        return Mlp(self._layer_dims, weights=[w.copy() for w in self.weights],
                   biases=[b.copy() for b in self.biases])

    def load_from(self, other: 'Mlp') -> None:
        '''Copies the parameters of 'other' into this network in place.'''
        if other.layer_dims != self._layer_dims:
            raise TensorException(
                "Can't load {} into {}".format(other.layer_dims, self._layer_dims))
        for mine, theirs in zip(self.params(), other.params()):
            mine[...] = theirs

    def _trace(self, x: np.ndarray) -> list:
        acts = [x]
        a = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == self.n_layers - 1 else np.tanh(z)
            acts.append(a)
        return acts

    def _as_batch(self, x) -> tuple:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self._layer_dims[0]:
            raise TensorException(
                "Input of shape {} does not match input size {}".format(
                    x.shape, self._layer_dims[0]))
        return x, single

    def forward(self, x) -> np.ndarray:
        x, single = self._as_batch(x)
        out = self._trace(x)[-1]
        return out[0] if single else out

    def backward(self, x, grad_out) -> list:
        '''
        Gradient of a scalar loss w.r.t. every parameter, given dLoss/dOutput.

        Parameters
        ----------
        x : array (input_size,) or (batch, input_size)
        grad_out : array with the shape of forward(x)

        Returns
        -------
        list of arrays in params() order.
        '''
        x, single = self._as_batch(x)
        g = np.asarray(grad_out, dtype=np.float64)
        if single and g.ndim == 1:
            g = g[None, :]
        acts = self._trace(x)
        if g.shape != acts[-1].shape:
            raise TensorException(
                "Loss gradient of shape {} does not match output shape {}".format(
                    np.shape(grad_out), acts[-1].shape))

        grads = [None] * (2 * self.n_layers)
        delta = g
        for i in reversed(range(self.n_layers)):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return grads


def forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


def backward(net: Mlp, input_batch, loss_gradient_at_output) -> list:
    return net.backward(input_batch, loss_gradient_at_output)


@dataclass
class OptimizerState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise TensorException(
                "learning_rate must be positive, got {}".format(self.learning_rate))

    @classmethod
    def for_params(cls, params: list, learning_rate: float = 3e-4) -> 'OptimizerState':
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params],
                   learning_rate=learning_rate)


def optimizer_step(params: list, grads: list, state: OptimizerState) -> tuple:
    '''
    One bias-corrected Adam update, applied to 'params' in place.

    Non-finite gradients are rejected before anything is modified.
    '''
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise TensorException(
            "Got {} parameters, {} gradients and {} moment slots".format(
                len(params), len(grads), len(state.first_moment)))
    for p, g, m in zip(params, grads, state.first_moment):
        if np.shape(g) != p.shape or m.shape != p.shape:
            raise TensorException(
                "Gradient shape {} does not match parameter shape {}".format(
                    np.shape(g), p.shape))
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TensorException('Non-finite gradient, update rejected')

    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# Categorical helpers shared by the student and the teacher heads.

def log_softmax(logits: np.ndarray, mask: np.ndarray = None) -> np.ndarray:
    '''
    Row-wise log-softmax. Masked-out entries (mask False) get -inf and
    probability exactly 0.
    '''
    z = np.asarray(logits, dtype=np.float64)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    zmax = np.max(z, axis=-1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray, mask: np.ndarray = None) -> np.ndarray:
    return np.exp(log_softmax(logits, mask))


def sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    '''One index per row of 'probs' by inverse-CDF sampling.'''
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


# Checkpoints

def save_checkpoint(path: str, networks: dict, step_counts: dict = None,
                    config_lines: list = None) -> None:
    '''
    Writes named networks in the text format described in the module
    docstring.
    '''
    step_counts = step_counts or {}
    lines = ['{} {}'.format(_MAGIC, FORMAT_VERSION)]
    for cl in config_lines or []:
        lines.append('config ' + cl)
    for name, net in networks.items():
        lines.append('network ' + name)
        lines.append('layer_dims ' + ' '.join(str(d) for d in net.layer_dims))
        lines.append('step_count {}'.format(int(step_counts.get(name, 0))))
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            lines.append('weight {} '.format(i) + ' '.join(repr(float(v)) for v in w.ravel()))
            lines.append('bias {} '.format(i) + ' '.join(repr(float(v)) for v in b.ravel()))
        lines.append('end')
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')


def load_checkpoint(path: str) -> tuple:
    '''
    Reads a checkpoint.

    Returns
    -------
    (networks: dict name -> Mlp, step_counts: dict name -> int,
     config_lines: list of 'section.key = value' strings)
    '''
    with open(path, 'r') as f:
        lines = [ln.rstrip('\n') for ln in f if ln.strip() != '']

    if not lines or lines[0].split() != [_MAGIC, str(FORMAT_VERSION)]:
        raise TensorException("'{}' is not a version {} checkpoint".format(path, FORMAT_VERSION))

    networks, steps, config_lines = {}, {}, []
    i = 1
    while i < len(lines):
        head, _, rest = lines[i].partition(' ')
        if head == 'config':
            config_lines.append(rest)
            i += 1
            continue
        if head != 'network':
            raise TensorException("Unexpected checkpoint line {}: '{}'".format(i + 1, lines[i][:40]))
        name = rest.strip()
        dims = [int(d) for d in lines[i + 1].split()[1:]]
        steps[name] = int(lines[i + 2].split()[1])
        weights, biases = [], []
        j = i + 3
        for k in range(len(dims) - 1):
            w_line = lines[j].split()
            b_line = lines[j + 1].split()
            if w_line[:2] != ['weight', str(k)] or b_line[:2] != ['bias', str(k)]:
                raise TensorException("Malformed parameters for network '{}' layer {}".format(name, k))
            weights.append(np.array([float(v) for v in w_line[2:]]).reshape(dims[k], dims[k + 1]))
            biases.append(np.array([float(v) for v in b_line[2:]]))
            j += 2
        if lines[j].strip() != 'end':
            raise TensorException("Network '{}' is not terminated by 'end'".format(name))
        networks[name] = Mlp(dims, weights=weights, biases=biases)
        i = j + 1
    return networks, steps, config_lines
