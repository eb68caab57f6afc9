"""Adam with bias correction and decoupled weight decay."""
import numpy as np

from maskclr.errors import ContractError


class AdamState:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {}
        self.v = {}

    def tensors(self):
        out = {}
        for name in self.m:
            out[f"adam.m/{name}"] = self.m[name]
            out[f"adam.v/{name}"] = self.v[name]
        return out

    @classmethod
    def from_tensors(cls, table, step, **kw):
        state = cls(**kw)
        state.step = step
        for key, value in table.items():
            kind, _, name = key.partition("/")
            if kind == "adam.m":
                state.m[name] = np.array(value, dtype=np.float32)
            elif kind == "adam.v":
                state.v[name] = np.array(value, dtype=np.float32)
        return state


def adam_step(params, state, lr, weight_decay=0.0):
    """One in-place update of every tensor in ``params`` (a name -> Tensor mapping).

    Weight decay is decoupled: ``theta -= lr * wd * theta`` before the Adam step.
    """
    items = list(params.items())
    missing = [name for name, t in items if t.grad is None]
    if missing:
        raise ContractError(f"no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in items:
        g = t.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            t.data -= np.float32(lr * weight_decay) * t.data
        t.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(np.float32)
