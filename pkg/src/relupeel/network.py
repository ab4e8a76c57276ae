"""Dense ReLU networks: exact evaluation, generation, and linear-neighborhood algebra.

Everything here is white-box and pure. The attack code never imports the
victim's weights directly; it goes through `relupeel.oracle`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# Pre-activations within TAU_CRIT * (layer scale) of zero count as sitting on a hinge.
TAU_CRIT = 1e-8
# Singular values below TAU_RANK * sigma_max do not count toward rank.
TAU_RANK = 1e-7

CALIBRATION_SAMPLES = 10_000


class NeuronState(Enum):
    ACTIVE = 1
    INACTIVE = -1
    CRITICAL = 0


@dataclass(frozen=True)
class NeuronId:
    """Hidden neuron address: layer in 1..r, index in 0..d_layer-1."""
    layer: int
    index: int


@dataclass(frozen=True)
class Architecture:
    """Layer widths [d0, d1, ..., d_{r+1}]; the last width is the linear output layer."""
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) < 2:
            raise ValueError("architecture needs at least input and output widths")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"layer widths must be >= 1, got {self.dims}")

    @property
    def r(self):
        """Number of hidden layers."""
        return len(self.dims) - 2

    @property
    def input_dim(self):
        return self.dims[0]

    @property
    def output_dim(self):
        return self.dims[-1]

    @property
    def hidden_neurons(self):
        return int(sum(self.dims[1:-1]))

    def __str__(self):
        return "-".join(str(d) for d in self.dims)


class Network:
    """A fully connected ReLU network with float64 weights.

    weights[i] has shape (d_{i+1}, d_i) and biases[i] has length d_{i+1}
    for i = 0..r; layer r (the last) is affine with no ReLU. Instances are
    immutable after construction and safe to share across threads.
    """

    def __init__(self, weights, biases, meta=None):
        weights = [np.ascontiguousarray(np.asarray(w, dtype=np.float64)) for w in weights]
        biases = [np.ascontiguousarray(np.asarray(b, dtype=np.float64)) for b in biases]
        if len(weights) != len(biases) or not weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        dims = [weights[0].shape[1]]
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.ndim != 1:
                raise ValueError(f"layer {i + 1}: weights must be 2-d and biases 1-d")
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i + 1}: {w.shape[0]} rows but {b.shape[0]} biases")
            if w.shape[1] != dims[-1]:
                raise ValueError(f"layer {i + 1}: expected {dims[-1]} columns, got {w.shape[1]}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i + 1}: non-finite parameter")
            dims.append(w.shape[0])
        for w, b in zip(weights, biases):
            w.setflags(write=False)
            b.setflags(write=False)
        self.weights = weights
        self.biases = biases
        self.arch = Architecture(tuple(dims))
        self.meta = dict(meta) if meta else {}

    @property
    def r(self):
        return self.arch.r

    @property
    def input_dim(self):
        return self.arch.input_dim

    @property
    def output_dim(self):
        return self.arch.output_dim

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input has width {x.shape[-1]}, network expects {self.input_dim}")
        if not np.isfinite(x).all():
            raise ValueError("non-finite input")
        return x

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x):
        """f(x) for a single input vector."""
        y = self._check_input(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            y = w @ y + b
            if i != last:
                y = np.maximum(y, 0.0)
        return y

    def evaluate_batch(self, xs):
        """f applied to the rows of an (n, d0) array; returns (n, d_out)."""
        y = self._check_input(np.atleast_2d(xs))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            y = y @ w.T + b
            if i != last:
                np.maximum(y, 0.0, out=y)
        return y

    def hidden_preactivations(self, x):
        """Pre-ReLU value vectors for hidden layers 1..r at input x."""
        y = self._check_input(x)
        pres = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = w @ y + b
            pres.append(z)
            y = np.maximum(z, 0.0)
        return pres

    def neuron_value(self, neuron: NeuronId, x):
        """Pre-ReLU value of one hidden neuron at input x."""
        if not (1 <= neuron.layer <= self.r):
            raise ValueError(f"layer {neuron.layer} outside 1..{self.r}")
        if not (0 <= neuron.index < self.arch.dims[neuron.layer]):
            raise ValueError(f"index {neuron.index} outside layer {neuron.layer}")
        return float(self.hidden_preactivations(x)[neuron.layer - 1][neuron.index])

    def neuron_state(self, neuron: NeuronId, x, tau=TAU_CRIT):
        pres = self.hidden_preactivations(x)
        z = pres[neuron.layer - 1]
        tol = tau * max(1.0, float(np.max(np.abs(z))))
        v = z[neuron.index]
        if abs(v) <= tol:
            return NeuronState.CRITICAL
        return NeuronState.ACTIVE if v > 0 else NeuronState.INACTIVE

    def state_pattern(self, x, tau=TAU_CRIT):
        """Per-layer boolean activity masks; raises CriticalAtAnchor on a hinge."""
        from .errors import CriticalAtAnchor

        masks = []
        for li, z in enumerate(self.hidden_preactivations(x), start=1):
            tol = tau * max(1.0, float(np.max(np.abs(z))))
            near = np.abs(z) <= tol
            if near.any():
                k = int(np.argmax(near))
                raise CriticalAtAnchor(li, k, float(z[k]))
            masks.append(z > 0)
        return masks

    def prefix(self, upto_layer):
        """The map computed by hidden layers 1..upto_layer (after their ReLUs)."""
        return ForwardPrefix(self.weights[:upto_layer], self.biases[:upto_layer], self.input_dim)

    def param_count(self):
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))


@dataclass
class CollapsedAffine:
    """Several contiguous layers flattened to gamma @ x + beta around one anchor.

    masks[j] is the 0/1 activity diagonal of collapsed layer j; gamma rows of
    inactive neurons in the final collapsed layer are identically zero.
    """
    gamma: np.ndarray
    beta: np.ndarray
    masks: list
    anchor: np.ndarray

    def apply(self, x):
        return self.gamma @ x + self.beta

    def rank(self, tau=TAU_RANK):
        s = np.linalg.svd(self.gamma, compute_uv=False)
        if s.size == 0 or s[0] == 0.0:
            return 0
        return int(np.sum(s > tau * s[0]))


class ForwardPrefix:
    """Hidden layers 1..k of a (possibly hypothesis) network, applied after ReLU.

    Used both for victims in tests and for the attacker's growing hypothesis.
    An empty prefix is the identity map on input space.
    """

    def __init__(self, weights, biases, input_dim):
        self.weights = list(weights)
        self.biases = list(biases)
        self.input_dim = int(input_dim)

    @property
    def depth(self):
        return len(self.weights)

    @property
    def output_dim(self):
        return self.weights[-1].shape[0] if self.weights else self.input_dim

    def forward(self, x):
        y = np.asarray(x, dtype=np.float64)
        for w, b in zip(self.weights, self.biases):
            y = np.maximum(w @ y + b, 0.0)
        return y

    def forward_batch(self, xs):
        y = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        for w, b in zip(self.weights, self.biases):
            y = np.maximum(y @ w.T + b, 0.0)
        return y

    def preactivations(self, x):
        y = np.asarray(x, dtype=np.float64)
        pres = []
        for w, b in zip(self.weights, self.biases):
            z = w @ y + b
            pres.append(z)
            y = np.maximum(z, 0.0)
        return pres

    def gradient_pullback(self, x, row):
        """Input-space gradient of row . forward(x): one cheap backward sweep."""
        g = np.asarray(row, dtype=np.float64)
        masks = [z > 0 for z in self.preactivations(x)]
        for w, m in zip(reversed(self.weights), reversed(masks)):
            g = (g * m) @ w
        return g

    def collapse(self, x, tau=TAU_CRIT):
        """Flatten the prefix to an affine map valid on x's linear neighborhood."""
        from .errors import CriticalAtAnchor

        x = np.asarray(x, dtype=np.float64)
        gamma = None
        beta = None
        masks = []
        for li, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            if gamma is None:
                g_pre, b_pre = w, b
            else:
                g_pre, b_pre = w @ gamma, w @ beta + b
            z = g_pre @ x + b_pre
            tol = tau * max(1.0, float(np.max(np.abs(z))))
            near = np.abs(z) <= tol
            if near.any():
                k = int(np.argmax(near))
                raise CriticalAtAnchor(li, k, float(z[k]))
            mask = z > 0
            masks.append(mask)
            gamma = np.where(mask[:, None], g_pre, 0.0)
            beta = np.where(mask, b_pre, 0.0)
        if gamma is None:
            gamma = np.eye(self.input_dim)
            beta = np.zeros(self.input_dim)
        return CollapsedAffine(gamma=gamma, beta=beta, masks=masks, anchor=x)

    def control_basis(self, x, tau=TAU_RANK):
        """Orthonormal basis of the reachable-direction space at the prefix output.

        Equals the column space of collapse(x).gamma; computed by carrying a
        basis through the layers so the expensive width-by-input SVD is avoided.
        """
        if not self.weights:
            return np.eye(self.input_dim)
        pat = [c.astype(np.float64) for c in self._activity(x)]
        q = None
        for li, w in enumerate(self.weights):
            mask = pat[li]
            if not mask.any() or (q is not None and q.shape[1] == 0):
                return np.zeros((self.output_dim, 0))
            m = w if q is None else w @ q
            m = m * mask[:, None]
            if q is None:
                # first layer: if the active rows are independent, the image is
                # exactly the active coordinate subspace
                active = np.flatnonzero(mask)
                r = _gram_rank(m[active], tau)
                if r == active.size:
                    q = np.zeros((w.shape[0], active.size))
                    q[active, np.arange(active.size)] = 1.0
                    continue
            q = _gram_basis(m, tau)
        return q

    def _activity(self, x, tau=TAU_CRIT):
        from .errors import CriticalAtAnchor

        masks = []
        for li, z in enumerate(self.preactivations(x), start=1):
            tol = tau * max(1.0, float(np.max(np.abs(z))))
            near = np.abs(z) <= tol
            if near.any():
                k = int(np.argmax(near))
                raise CriticalAtAnchor(li, k, float(z[k]))
            masks.append(z > 0)
        return masks


def evaluate(net: Network, x):
    return net.evaluate(x)


def neuron_value(net: Network, neuron: NeuronId, x):
    return net.neuron_value(neuron, x)


def collapse_prefix(net: Network, upto_layer: int, x, tau=TAU_CRIT) -> CollapsedAffine:
    """Collapse hidden layers 1..upto_layer of `net` around anchor x."""
    if not (1 <= upto_layer <= net.r):
        raise ValueError(f"upto_layer {upto_layer} outside 1..{net.r}")
    return net.prefix(upto_layer).collapse(x, tau=tau)


def space_of_control(net: Network, layer: int, x, tau=TAU_RANK):
    """(orthonormal basis, dimension) of directions reachable at layer `layer`'s input."""
    if not (1 <= layer <= net.r + 1):
        raise ValueError(f"layer {layer} outside 1..{net.r + 1}")
    basis = net.prefix(layer - 1).control_basis(x, tau=tau)
    return basis, basis.shape[1]


def rank_profile(net: Network, x, tau=TAU_RANK):
    """Rank of the collapsed prefix through layer i, for i = 1..r, at anchor x."""
    prefix = net.prefix(net.r)
    pat = [c.astype(np.float64) for c in prefix._activity(x)]
    ranks = []
    q = None
    for li, w in enumerate(prefix.weights):
        mask = pat[li]
        if not mask.any() or (q is not None and q.shape[1] == 0):
            ranks.extend([0] * (len(prefix.weights) - li))
            break
        m = w if q is None else w @ q
        m = m * mask[:, None]
        if li == 0:
            active = np.flatnonzero(mask)
            r = _gram_rank(m[active], tau)
            if r == active.size:
                q = np.zeros((w.shape[0], active.size))
                q[active, np.arange(active.size)] = 1.0
                ranks.append(r)
                continue
        q = _gram_basis(m, tau)
        ranks.append(q.shape[1])
    return ranks


def collapse_suffix(net: Network, from_layer: int, x, tau=TAU_CRIT):
    """Collapse layers from_layer..r+1 (post-ReLU input convention) around x.

    Returns the affine map taking layer-(from_layer-1) outputs to network
    outputs while every neuron keeps the state it has at x. White-box helper
    for tests and planted-value checks only.
    """
    pres = net.hidden_preactivations(x)
    gamma = None
    beta = None
    for li in range(from_layer, net.r + 2):
        w, b = net.weights[li - 1], net.biases[li - 1]
        if gamma is None:
            g_pre, b_pre = w, b
        else:
            g_pre, b_pre = w @ gamma, w @ beta + b
        if li <= net.r:
            z = pres[li - 1]
            tol = tau * max(1.0, float(np.max(np.abs(z))))
            near = np.abs(z) <= tol
            if near.any():
                k = int(np.argmax(near))
                from .errors import CriticalAtAnchor

                raise CriticalAtAnchor(li, k, float(z[k]))
            mask = z > 0
            gamma = np.where(mask[:, None], g_pre, 0.0)
            beta = np.where(mask, b_pre, 0.0)
        else:
            gamma, beta = g_pre, b_pre
    return CollapsedAffine(gamma=gamma, beta=beta, masks=[], anchor=np.asarray(x, dtype=np.float64))


def _gram_rank(m, tau=TAU_RANK):
    """Rank of m with singular values below tau * sigma_max dropped.

    Works on the Gram matrix of the smaller side, which is much faster than
    a full SVD for very wide or very tall matrices.
    """
    if min(m.shape) == 0:
        return 0
    g = m @ m.T if m.shape[0] <= m.shape[1] else m.T @ m
    eig = np.linalg.eigvalsh(g)
    top = float(eig[-1])
    if top <= 0.0:
        return 0
    return int(np.sum(eig > (tau ** 2) * top))


def _gram_basis(m, tau=TAU_RANK):
    """Orthonormal basis of m's column space, thresholded like _gram_rank."""
    if m.shape[1] == 0:
        return np.zeros((m.shape[0], 0))
    g = m.T @ m
    eig, vec = np.linalg.eigh(g)
    top = float(eig[-1])
    if top <= 0.0:
        return np.zeros((m.shape[0], 0))
    keep = eig > (tau ** 2) * top
    return (m @ vec[:, keep]) / np.sqrt(eig[keep])


def _unit_rows(rng, shape):
    m = rng.normal(size=shape)
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    return m


def generate_unitary_balanced(arch: Architecture, seed, calibration=CALIBRATION_SAMPLES) -> Network:
    """Random victim: unit-norm weight rows, biases tuned for 50% activity.

    Each hidden neuron's bias is minus the median of its pre-activation over
    `calibration` standard-normal inputs propagated through the layers built
    so far, so every neuron fires on half of that reference distribution.
    Output rows are unit vectors with zero bias. Deterministic under `seed`.
    """
    if isinstance(arch, (list, tuple)):
        arch = Architecture(tuple(arch))
    rng = np.random.default_rng(seed)
    samples = rng.normal(size=(calibration, arch.input_dim))
    weights, biases = [], []
    y = samples
    for li in range(1, arch.r + 1):
        w = _unit_rows(rng, (arch.dims[li], arch.dims[li - 1]))
        pre = y @ w.T
        b = -np.median(pre, axis=0)
        weights.append(w)
        biases.append(b)
        y = np.maximum(pre + b, 0.0)
    w_out = _unit_rows(rng, (arch.output_dim, arch.dims[arch.r]))
    weights.append(w_out)
    biases.append(np.zeros(arch.output_dim))
    meta = {"kind": "unitary-balanced", "seed": None if seed is None else int(seed)}
    return Network(weights, biases, meta=meta)
