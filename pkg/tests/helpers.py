"""Shared fixtures-in-spirit for kernel and engine tests."""

import numpy as np

from greylag.epochs import EpochConfig, EpochState, EpochType
from greylag.interface import FunctionInterface
from greylag.kernels import PositionCodec
from greylag.rng import PrngKey


def _std_normal_logprob(values):
    x = values["x"]
    return float(-0.5 * np.sum(x * x))


def _std_normal_grad(values):
    return {"x": -values["x"]}


def std_normal_interface(dim=1, start=None):
    start = np.zeros(dim) if start is None else np.asarray(start, dtype=np.float64)
    return FunctionInterface(_std_normal_logprob, {"x": start}, grad_fn=_std_normal_grad)


class GaussianTarget:
    """N(mean, diag(variances)) with analytic gradient; picklable."""

    def __init__(self, mean, variances):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.variances = np.asarray(variances, dtype=np.float64)

    def logprob(self, values):
        z = values["x"] - self.mean
        return float(-0.5 * np.sum(z * z / self.variances))

    def grad(self, values):
        return {"x": -(values["x"] - self.mean) / self.variances}

    def interface(self, start=None):
        start = np.zeros_like(self.mean) if start is None else start
        return FunctionInterface(self.logprob, {"x": start}, grad_fn=self.grad)


def _flat_logprob(values):
    return 0.0


def flat_interface(dim=1):
    return FunctionInterface(_flat_logprob, {"x": np.zeros(dim)})


def run_kernel_chain(kernel, interface, n_iterations, seed=0,
                     epoch_type=EpochType.POSTERIOR, record_key="x"):
    """Drive one kernel directly (no engine), returning draws and infos."""
    kernel.model = interface
    ms = interface.initial_state()
    root = PrngKey.from_seed(seed)
    ks = kernel.init_state(root.fold_in(0xA), ms)
    cfg = EpochConfig(epoch_type, n_iterations)
    codec = PositionCodec(interface.extract_position(kernel.position_keys, ms))
    draws = np.empty((n_iterations, codec.dim))
    infos = []
    for i in range(n_iterations):
        res = kernel.transition(root.fold_in(1, i), ks, ms, EpochState(cfg, 0, i))
        ks, ms = res.kernel_state, res.model_state
        draws[i] = codec.flatten(interface.extract_position(kernel.position_keys, ms))
        infos.append(res.info)
    return draws, infos, ks
