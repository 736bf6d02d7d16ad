"""Small fully connected ReLU network with hand-written backpropagation.

Parameters live in one flat vector so that a fictitious update ``w - eta g``
is a single array operation.
"""
import numpy as np
from scipy.special import log_softmax, softmax

from .data import make_rng
from .errors import ContractError, ParameterError, ShapeError

HEADS = ("identity", "softmax")
LOSS_FOR_HEAD = {"identity": "squared", "softmax": "cross_entropy"}


class MlpNet:
    """Affine layers with ReLU between them and an identity or softmax head.

    Parameters
    ----------
    widths : sequence of int
        ``(input, hidden..., output)``; two entries give a single affine map.
    head : {"identity", "softmax"}
    params : ndarray, optional
        Flat parameter vector; zeros when omitted.
    """

    def __init__(self, widths, head="identity", params=None):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ParameterError(f"need at least input and output widths, got {widths}")
        if head not in HEADS:
            raise ParameterError(f"head must be one of {HEADS}, got {head!r}")
        self.widths = widths
        self.head = head
        self.shapes = [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]
        self.size = sum(o * i + o for o, i in self.shapes)
        if params is None:
            params = np.zeros(self.size)
        params = np.asarray(params, dtype=float)
        if params.shape != (self.size,):
            raise ShapeError(f"expected {self.size} parameters, got shape {params.shape}")
        self.params = params

    @classmethod
    def init(cls, widths, head="identity", seed=0):
        """He-normal weights (variance ``2 / fan_in``) and zero biases."""
        net = cls(widths, head)
        rng = make_rng(seed, 4)
        parts = []
        for o, i in net.shapes:
            parts.append(rng.standard_normal(o * i) * np.sqrt(2.0 / i))
            parts.append(np.zeros(o))
        net.params = np.concatenate(parts)
        return net

    @property
    def loss(self):
        return LOSS_FOR_HEAD[self.head]

    def layers(self, params=None):
        """``[(W, b), ...]`` as views into ``params``."""
        p = self.params if params is None else params
        out, pos = [], 0
        for o, i in self.shapes:
            W = p[pos:pos + o * i].reshape(o, i)
            pos += o * i
            out.append((W, p[pos:pos + o]))
            pos += o
        return out

    def _input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.widths[0] or x.ndim > 2:
            raise ShapeError(f"input must have trailing dimension {self.widths[0]}, got shape {x.shape}")
        return x

    def logits(self, x, params=None):
        x = self._input(x)
        a = x
        layers = self.layers(params)
        for W, b in layers[:-1]:
            a = np.maximum(0.0, a @ W.T + b)
        W, b = layers[-1]
        return a @ W.T + b

    def forward(self, x, params=None):
        z = self.logits(x, params)
        return softmax(z, axis=-1) if self.head == "softmax" else z

    def loss_value(self, x, y, params=None):
        """Mean loss over a batch (or the loss of a single point)."""
        z = self.logits(x, params)
        if self.head == "softmax":
            y = np.asarray(y, dtype=int)
            lp = log_softmax(z, axis=-1)
            return float(-np.mean(np.take_along_axis(np.atleast_2d(lp), np.atleast_1d(y)[:, None], axis=-1)))
        r = np.atleast_2d(z) - np.asarray(y, dtype=float).reshape(np.atleast_2d(z).shape[0], -1)
        return float(0.5 * np.mean(np.sum(r * r, axis=-1)))

    def grad(self, x, y, loss=None, params=None):
        """Flat gradient of the batch-mean loss (squared for identity head, cross-entropy for softmax)."""
        loss = self.loss if loss is None else loss
        if loss != self.loss:
            raise ContractError(f"{loss} loss does not match the {self.head} head")
        x = self._input(x)
        X = np.atleast_2d(x)
        B = X.shape[0]
        layers = self.layers(params)
        acts = [X]
        for W, b in layers[:-1]:
            acts.append(np.maximum(0.0, acts[-1] @ W.T + b))
        W, b = layers[-1]
        z = acts[-1] @ W.T + b
        if self.head == "softmax":
            labels = np.atleast_1d(np.asarray(y, dtype=int))
            delta = softmax(z, axis=-1)
            delta[np.arange(B), labels] -= 1.0
        else:
            delta = z - np.asarray(y, dtype=float).reshape(B, -1)
        delta = delta / B
        grads = []
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            a = acts[li]
            grads.append((delta.T @ a, delta.sum(axis=0)))
            if li > 0:
                delta = (delta @ W) * (a > 0)
        flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in reversed(grads)])
        return flat


def mlp_forward(net, x):
    """Prediction (identity head) or probability vector (softmax head)."""
    return net.forward(x)


def mlp_grad(net, x, y, loss):
    """Exact gradient of ``loss`` ("squared" or "cross_entropy") at ``(x, y)``."""
    return net.grad(x, y, loss)
