"""Sampling engine: epoch schedule, kernel sequencing, PRNG management,
multi-chain execution, history storage, and error logging.

The engine owns the bookkeeping around the kernels: it derives one PRNG
key per (chain, epoch, iteration, kernel) coordinate, threads the model
state through the kernels in user order within each iteration, calls the
lifecycle methods at the times fixed by the epoch types, stores the
visited positions, and logs every nonzero kernel error code without ever
letting a kernel error abort sampling.  Chains are independent tasks:
running them serially or on a process pool gives bit-identical results.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .epochs import EpochConfig, EpochState, EpochType, stan_warmup_schedule, validate_schedule
from .errors import CoverageError, EngineError, ExhaustedError, InitError, ScheduleError
from .graph import ModelGraph, ModelState
from .interface import GraphInterface, ModelInterface
from .kernels.base import ERR_KERNEL_EXCEPTION, Kernel
from .rng import PrngKey

# fold_in tags keeping the engine's key-derivation paths disjoint
_TAG_CHAIN = 11
_TAG_INIT = 12
_TAG_JITTER = 13
_TAG_START = 14
_TAG_TRANSITION = 15
_TAG_END = 16
_TAG_TUNE = 17
_TAG_END_WARMUP = 18

_INFO_FIELDS = ("error_code", "acceptance_prob", "position_moved", "tree_depth", "divergent")

# Kept draws are flushed from per-iteration buffers in chunks; this
# bounds the bookkeeping overhead and has no semantic effect.
HISTORY_BATCH_SIZE = 25


@dataclass(frozen=True)
class ErrorLogEntry:
    code: int
    kernel: str
    chain: int
    epoch: int
    iteration: int


@dataclass
class _ChainRun:
    """Mutable per-chain context threaded through the epochs."""

    index: int
    model_state: ModelState
    kernel_states: list
    warmup_ended: bool = False


@dataclass
class _EpochRecord:
    """Everything one chain collected during one epoch."""

    epoch_index: int
    chain: int
    is_posterior: bool
    positions: dict[str, np.ndarray] | None
    infos: dict[str, dict[str, np.ndarray]]
    errors: list[ErrorLogEntry]
    tunings: list[dict]
    tracked: dict[str, np.ndarray]


class _ChunkBuffer:
    """Accumulates rows, consolidating into array chunks every few rows."""

    def __init__(self, batch: int = HISTORY_BATCH_SIZE):
        self._batch = batch
        self._rows: list = []
        self._chunks: list[np.ndarray] = []

    def append(self, row) -> None:
        self._rows.append(np.asarray(row))
        if len(self._rows) >= self._batch:
            self._chunks.append(np.stack(self._rows))
            self._rows = []

    def stacked(self) -> np.ndarray | None:
        if self._rows:
            self._chunks.append(np.stack(self._rows))
            self._rows = []
        if not self._chunks:
            return None
        return np.concatenate(self._chunks) if len(self._chunks) > 1 else self._chunks[0]


@dataclass
class SamplingResults:
    """Immutable snapshot of everything the engine recorded."""

    posterior: dict[str, np.ndarray]
    warmup: dict[str, np.ndarray] | None
    transition_infos: dict[str, dict[str, np.ndarray]]
    tuning_infos: list[dict]
    error_log: list[ErrorLogEntry]
    tracked: dict[str, np.ndarray]
    epochs: list[EpochConfig]
    seed: int
    num_chains: int
    timings: dict[str, float] = field(default_factory=dict)

    def error_summary(self) -> dict[tuple[int, str, int], int]:
        """Error counts aggregated by (code, kernel, epoch)."""
        out: dict[tuple[int, str, int], int] = {}
        for e in self.error_log:
            k = (e.code, e.kernel, e.epoch)
            out[k] = out.get(k, 0) + 1
        return out

    def scalar_draws(self) -> dict[str, np.ndarray]:
        """Posterior draws flattened to one [chains, draws] array per
        scalar parameter, vector entries suffixed with their index."""
        out: dict[str, np.ndarray] = {}
        for name, arr in self.posterior.items():
            if arr.ndim == 2:
                out[name] = arr
                continue
            flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
            n_scalar = flat.shape[2]
            if n_scalar == 1:
                out[name] = flat[:, :, 0]
            else:
                for j in range(n_scalar):
                    out[f"{name}[{j}]"] = flat[:, :, j]
        return out


def _freeze_arrays(record: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    for arr in record.values():
        arr.flags.writeable = False
    return record


def _resolve_tracker(kind) -> Callable[[ModelInterface, ModelState], float]:
    if callable(kind):
        return kind
    if kind == "log_prob":
        return _track_log_prob
    if kind == "log_lik":
        return _track_log_lik
    if kind == "log_prior":
        return _track_log_prior
    raise EngineError(f"unknown tracked quantity '{kind}'")


def _track_log_prob(interface, state):
    return interface.log_prob(state)


def _track_log_lik(interface, state):
    return interface.log_lik(state)


def _track_log_prior(interface, state):
    return interface.log_prior(state)


def _run_chain_epoch(
    kernels: list[Kernel],
    interface: ModelInterface,
    ctx: _ChainRun,
    cfg: EpochConfig,
    epoch_index: int,
    root_key: PrngKey,
    position_names: tuple[str, ...],
    store_warmup: bool,
    trackers: list[tuple[str, object]],
) -> tuple[_ChainRun, _EpochRecord]:
    """Run one epoch for one chain.  Top-level so chains can run on
    worker processes; everything it touches is picklable."""
    chain_key = root_key.fold_in(_TAG_CHAIN, ctx.index)
    epoch_key = chain_key.fold_in(epoch_index)
    ms = ctx.model_state
    kstates = list(ctx.kernel_states)
    errors: list[ErrorLogEntry] = []
    tunings: list[dict] = []
    is_posterior = cfg.type is EpochType.POSTERIOR

    if is_posterior and not ctx.warmup_ended:
        for i, k in enumerate(kernels):
            kstates[i] = k.end_warmup(chain_key.fold_in(_TAG_END_WARMUP, i), kstates[i], ms)
        ctx.warmup_ended = True

    epoch_state = EpochState(cfg, epoch_index, 0)
    for i, k in enumerate(kernels):
        kstates[i] = k.start_epoch(epoch_key.fold_in(_TAG_START, i), kstates[i], ms, epoch_state)

    keep_positions = is_posterior or store_warmup
    pos_buffers = {name: _ChunkBuffer() for name in position_names} if keep_positions else None
    info_buffers = {k.label: {f: _ChunkBuffer() for f in _INFO_FIELDS} for k in kernels}
    track_buffers = {name: _ChunkBuffer() for name, _ in trackers}
    history_buffers = {
        k.label: {key: _ChunkBuffer() for key in k.position_keys}
        for k in kernels
        if k.needs_history and cfg.type.is_adaptation
    }

    for it in range(cfg.duration):
        epoch_state = EpochState(cfg, epoch_index, it)
        for i, k in enumerate(kernels):
            key = epoch_key.fold_in(_TAG_TRANSITION, it, i)
            try:
                result = k.transition(key, kstates[i], ms, epoch_state)
            except Exception:  # noqa: BLE001 - kernel errors are logged, never raised
                errors.append(ErrorLogEntry(ERR_KERNEL_EXCEPTION, k.label, ctx.index, epoch_index, it))
                info = info_buffers[k.label]
                info["error_code"].append(ERR_KERNEL_EXCEPTION)
                info["acceptance_prob"].append(0.0)
                info["position_moved"].append(False)
                info["tree_depth"].append(-1)
                info["divergent"].append(False)
                continue
            ms = result.model_state
            kstates[i] = result.kernel_state
            info = info_buffers[k.label]
            info["error_code"].append(result.info.error_code)
            info["acceptance_prob"].append(result.info.acceptance_prob)
            info["position_moved"].append(result.info.position_moved)
            info["tree_depth"].append(result.info.tree_depth)
            info["divergent"].append(result.info.divergent)
            if result.info.error_code != 0:
                errors.append(
                    ErrorLogEntry(result.info.error_code, k.label, ctx.index, epoch_index, it)
                )
        kept = (it + 1) % cfg.thinning == 0
        if keep_positions and kept:
            for name in position_names:
                pos_buffers[name].append(ms.values[name])
            for name, fn in trackers:
                track_buffers[name].append(float(fn(interface, ms)))
        for label, bufs in history_buffers.items():
            for key_name, buf in bufs.items():
                buf.append(ms.values[key_name])

    epoch_state = EpochState(cfg, epoch_index, cfg.duration - 1)
    for i, k in enumerate(kernels):
        kstates[i] = k.end_epoch(epoch_key.fold_in(_TAG_END, i), kstates[i], ms, epoch_state)

    if cfg.type.is_adaptation:
        for i, k in enumerate(kernels):
            history = None
            if k.needs_history:
                history = {
                    key_name: buf.stacked()
                    for key_name, buf in history_buffers[k.label].items()
                }
            try:
                tr = k.tune(epoch_key.fold_in(_TAG_TUNE, i), kstates[i], ms, epoch_state, history)
            except Exception:  # noqa: BLE001
                errors.append(
                    ErrorLogEntry(ERR_KERNEL_EXCEPTION, k.label, ctx.index, epoch_index, cfg.duration - 1)
                )
                continue
            kstates[i] = tr.kernel_state
            tunings.append(
                {
                    "kernel": k.label,
                    "chain": ctx.index,
                    "epoch": epoch_index,
                    "error_code": tr.info.error_code,
                    "step_size": tr.info.step_size,
                }
            )
            if tr.info.error_code != 0:
                errors.append(
                    ErrorLogEntry(tr.info.error_code, k.label, ctx.index, epoch_index, cfg.duration - 1)
                )

    ctx.model_state = ms
    ctx.kernel_states = kstates
    record = _EpochRecord(
        epoch_index=epoch_index,
        chain=ctx.index,
        is_posterior=is_posterior,
        positions={n: b.stacked() for n, b in pos_buffers.items()} if keep_positions else None,
        infos={
            label: {f: b.stacked() for f, b in bufs.items()} for label, bufs in info_buffers.items()
        },
        errors=errors,
        tunings=tunings,
        tracked={n: b.stacked() for n, b in track_buffers.items()},
    )
    return ctx, record


def _run_chain_epoch_star(args):
    return _run_chain_epoch(*args)


class Engine:
    """Drives the kernels through the epoch schedule for all chains."""

    def __init__(
        self,
        *,
        interface: ModelInterface,
        kernels: list[Kernel],
        epochs: list[EpochConfig],
        seed: int,
        chains: list[_ChainRun],
        position_names: tuple[str, ...],
        workers: int = 1,
        store_warmup: bool = False,
        trackers: list[tuple[str, object]] | None = None,
    ):
        self._interface = interface
        self._kernels = kernels
        self._epochs = list(epochs)
        self._seed = seed
        self._root_key = PrngKey.from_seed(seed)
        self._chains = chains
        self._position_names = position_names
        self._workers = workers
        self._store_warmup = store_warmup
        self._trackers = trackers or []
        self._next_epoch = 0
        self._records: list[list[_EpochRecord]] = []
        self._timings: dict[str, float] = {}

    @property
    def epochs(self) -> list[EpochConfig]:
        return list(self._epochs)

    def append_epoch(self, cfg: EpochConfig) -> None:
        """Extend the schedule; posterior epochs may only be followed by
        more posterior epochs."""
        if any(e.type is EpochType.POSTERIOR for e in self._epochs) and cfg.type is not EpochType.POSTERIOR:
            raise ScheduleError("cannot append a non-posterior epoch after a posterior epoch")
        self._epochs.append(cfg)

    def sample_next_epoch(self) -> None:
        """Run the next unconsumed epoch for every chain."""
        if self._next_epoch >= len(self._epochs):
            raise ExhaustedError("all scheduled epochs have been sampled")
        cfg = self._epochs[self._next_epoch]
        epoch_index = self._next_epoch
        started = time.perf_counter()
        tasks = [
            (
                self._kernels,
                self._interface,
                ctx,
                cfg,
                epoch_index,
                self._root_key,
                self._position_names,
                self._store_warmup,
                self._trackers,
            )
            for ctx in self._chains
        ]
        workers = min(self._workers, len(self._chains))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_run_chain_epoch_star, tasks))
        else:
            outcomes = [_run_chain_epoch(*t) for t in tasks]
        self._chains = [ctx for ctx, _ in outcomes]
        self._records.append([rec for _, rec in outcomes])
        self._next_epoch += 1
        elapsed = time.perf_counter() - started
        self._timings[cfg.type.value] = self._timings.get(cfg.type.value, 0.0) + elapsed
        self._timings["total"] = self._timings.get("total", 0.0) + elapsed

    def sample_all_epochs(self) -> None:
        while self._next_epoch < len(self._epochs):
            self.sample_next_epoch()

    # -- results ---------------------------------------------------------

    def _concat_positions(self, posterior: bool) -> dict[str, np.ndarray] | None:
        per_name: dict[str, list[list[np.ndarray]]] = {}
        found = False
        for epoch_records in self._records:
            if not epoch_records or epoch_records[0].positions is None:
                continue
            if epoch_records[0].is_posterior != posterior:
                continue
            found = True
            for name in self._position_names:
                per_name.setdefault(name, [[] for _ in self._chains])
                for rec in epoch_records:
                    per_name[name][rec.chain].append(rec.positions[name])
        if not found:
            return None
        out = {}
        for name, chain_chunks in per_name.items():
            out[name] = np.stack([np.concatenate(chunks) for chunks in chain_chunks])
        return _freeze_arrays(out)

    def get_results(self) -> SamplingResults:
        """Snapshot of the chains sampled so far (at least one epoch)."""
        if not self._records:
            raise EngineError("no epoch has been sampled yet")
        posterior = self._concat_positions(posterior=True) or {}
        warmup = self._concat_positions(posterior=False)
        infos: dict[str, dict[str, list[list[np.ndarray]]]] = {}
        for epoch_records in self._records:
            for rec in epoch_records:
                for label, fields in rec.infos.items():
                    dest = infos.setdefault(
                        label, {f: [[] for _ in self._chains] for f in _INFO_FIELDS}
                    )
                    for f, arr in fields.items():
                        if arr is not None:
                            dest[f][rec.chain].append(arr)
        transition_infos = {
            label: _freeze_arrays(
                {f: np.stack([np.concatenate(c) for c in chains]) for f, chains in fields.items()}
            )
            for label, fields in infos.items()
        }
        tracked: dict[str, list[list[np.ndarray]]] = {}
        for epoch_records in self._records:
            for rec in epoch_records:
                for name, arr in rec.tracked.items():
                    if arr is None:
                        continue
                    tracked.setdefault(name, [[] for _ in self._chains])[rec.chain].append(arr)
        tracked_arrays = _freeze_arrays(
            {n: np.stack([np.concatenate(c) for c in chains]) for n, chains in tracked.items()}
        )
        errors = [e for epoch_records in self._records for rec in epoch_records for e in rec.errors]
        tunings = [t for epoch_records in self._records for rec in epoch_records for t in rec.tunings]
        return SamplingResults(
            posterior=posterior,
            warmup=warmup,
            transition_infos=transition_infos,
            tuning_infos=tunings,
            error_log=errors,
            tracked=tracked_arrays,
            epochs=list(self._epochs[: self._next_epoch]),
            seed=self._seed,
            num_chains=len(self._chains),
            timings=dict(self._timings),
        )


class EngineBuilder:
    """Step-by-step configuration of an engine.

    The builder validates, at build time, that the kernel position
    assignments are disjoint and cover every parameter the model exposes,
    that the schedule is well formed, and that every chain starts from a
    finite log-probability.
    """

    def __init__(self, seed: int, num_chains: int = 4):
        if num_chains < 1:
            raise EngineError("num_chains must be >= 1")
        self.seed = int(seed)
        self.num_chains = int(num_chains)
        self._kernels: list[Kernel] = []
        self._interface: ModelInterface | None = None
        self._initial_state: ModelState | None = None
        self._epochs: list[EpochConfig] | None = None
        self._workers = 1
        self._store_warmup = False
        self._trackers: list[tuple[str, object]] = []
        self._jitter: Callable[[PrngKey, ModelState], ModelState] | None = None

    def add_kernel(self, kernel: Kernel) -> "EngineBuilder":
        self._kernels.append(kernel)
        return self

    def set_model(self, model: ModelInterface | ModelGraph) -> "EngineBuilder":
        if isinstance(model, ModelGraph):
            model = GraphInterface(model)
        self._interface = model
        return self

    def set_initial_values(self, state: ModelState) -> "EngineBuilder":
        self._initial_state = state
        return self

    def set_epochs(self, epochs: Sequence[EpochConfig]) -> "EngineBuilder":
        self._epochs = list(epochs)
        return self

    def set_duration(self, warmup_duration: int, posterior_duration: int,
                     thinning: int = 1) -> "EngineBuilder":
        self._epochs = stan_warmup_schedule(warmup_duration, posterior_duration, thinning)
        return self

    def set_workers(self, workers: int) -> "EngineBuilder":
        self._workers = max(1, int(workers))
        return self

    def set_jitter(self, fn: Callable[[PrngKey, ModelState], ModelState]) -> "EngineBuilder":
        self._jitter = fn
        return self

    def store_warmup(self, enabled: bool = True) -> "EngineBuilder":
        self._store_warmup = enabled
        return self

    def track(self, name: str, fn=None) -> "EngineBuilder":
        """Record a per-iteration quantity: 'log_prob', 'log_lik',
        'log_prior', or any callable (interface, model_state) -> float."""
        self._trackers.append((name, _resolve_tracker(fn if fn is not None else name)))
        return self

    def _check_coverage(self) -> tuple[str, ...]:
        seen: dict[str, str] = {}
        for k in self._kernels:
            for name in k.position_keys:
                if name in seen:
                    raise CoverageError(
                        f"parameter '{name}' assigned to both {seen[name]} and {k.label}"
                    )
                seen[name] = k.label
        params = self._interface.parameter_names()
        if params is not None:
            missing = [p for p in params if p not in seen]
            if missing:
                raise CoverageError(f"parameters not assigned to any kernel: {missing}")
            extra = [p for p in seen if p not in params]
            if extra:
                raise CoverageError(f"kernel positions are not model parameters: {extra}")
            return tuple(p for p in params)
        return tuple(seen)

    def build(self) -> Engine:
        if self._interface is None:
            raise EngineError("set_model() was not called")
        if not self._kernels:
            raise EngineError("no kernels added")
        if self._epochs is None:
            raise ScheduleError("no epochs configured; call set_duration() or set_epochs()")
        validate_schedule(self._epochs)
        for i, k in enumerate(self._kernels):
            k.model = self._interface
            k.label = f"{type(k).__name__}_{i:02d}"
        position_names = self._check_coverage()

        initial = self._initial_state
        if initial is None:
            if hasattr(self._interface, "initial_state"):
                initial = self._interface.initial_state()
            else:
                raise EngineError("set_initial_values() was not called")

        # effective worker count, capped by the GREYLAG_THREADS environment variable
        workers = self._workers
        env_cap = os.environ.get("GREYLAG_THREADS")
        if env_cap is not None:
            workers = max(1, min(workers, int(env_cap)))

        root = PrngKey.from_seed(self.seed)
        chains: list[_ChainRun] = []
        for c in range(self.num_chains):
            chain_key = root.fold_in(_TAG_CHAIN, c)
            state = initial
            if self._jitter is not None:
                state = self._jitter(chain_key.fold_in(_TAG_JITTER), state)
            lp = self._interface.log_prob(state)
            if not np.isfinite(lp):
                raise InitError(f"initial log-probability of chain {c} is {lp}")
            kernel_states = [
                k.init_state(chain_key.fold_in(_TAG_INIT, i), state)
                for i, k in enumerate(self._kernels)
            ]
            chains.append(_ChainRun(index=c, model_state=state, kernel_states=kernel_states))
        return Engine(
            interface=self._interface,
            kernels=self._kernels,
            epochs=self._epochs,
            seed=self.seed,
            chains=chains,
            position_names=position_names,
            workers=workers,
            store_warmup=self._store_warmup,
            trackers=self._trackers,
        )
