"""Central finite-difference check of every network parameter gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import ReLU, iter_layers
from .network import Network, weighted_bce, weighted_bce_grad


@dataclass
class GradCheckReport:
    n_checked: int
    max_rel_error: float
    worst_index: int
    rel_errors: np.ndarray
    steps: np.ndarray

    @property
    def n_refined(self) -> int:
        """Parameters whose stencil straddled a ReLU kink at the nominal step."""
        return int(np.count_nonzero(~(self.steps == np.nanmax(self.steps)))) if len(self.steps) else 0

    def passed(self, tol=1e-4) -> bool:
        return self.max_rel_error <= tol


def relative_error(analytic, numeric, floor=1e-8):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _relu_masks(relus):
    return [r._cache for r in relus]


def _same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(net: Network, x, targets, alpha=1.0, step=1e-3, max_params=None, rng=None,
                    fallback_steps=(1e-5, 1e-6, 1e-7)) -> GradCheckReport:
    """Compare backprop gradients with central differences of the loss.

    Batch norms run in training mode with their running statistics frozen
    so that repeated evaluations see the same function.  Perturbations
    only re-run the network from the module that owns the parameter.

    At the nominal ``step`` the estimate is the Richardson combination
    ``(4 D(h/2) - D(h)) / 3`` of two central differences, which cancels
    the O(h^2) truncation term that otherwise swamps very small
    gradients.  The loss is only piecewise smooth: when any evaluation's
    ReLU pattern differs from the unperturbed one, a kink lies inside the
    stencil and the quotient is not a derivative estimate.  The plain
    central difference at the next of ``fallback_steps`` is then tried
    until the stencil is kink-free.
    """
    net.set_track_running_stats(False)
    try:
        logits = net.forward(x, training=True)
        net.backward(weighted_bce_grad(logits, targets, alpha))
        params = net.parameters()
        owners = net.module_of_params()
        analytic = [p.grad.copy() for p in params]
        slots = [(pi, j) for pi, p in enumerate(params) for j in range(p.size)]
        if max_params is not None and max_params < len(slots):
            rng = rng if rng is not None else np.random.default_rng(0)
            pick = np.sort(rng.choice(len(slots), max_params, replace=False))
            slots = [slots[i] for i in pick]
        relus = [[leaf for m in net.modules[i:] for leaf in iter_layers(m) if isinstance(leaf, ReLU)]
                 for i in range(len(net.modules))]
        base = [r._cache.copy() for r in relus[0]]
        offset = [len(relus[0]) - len(r) for r in relus]
        errs = np.empty(len(slots))
        used = np.empty(len(slots))
        for n, (pi, j) in enumerate(slots):
            flat = params[pi].value.reshape(-1)
            orig = flat[j]
            owner = owners[pi]
            ref = base[offset[owner]:]

            def quotient(h):
                vals = []
                for sign in (1.0, -1.0):
                    flat[j] = orig + sign * h
                    vals.append(weighted_bce(net.forward_from(owner, training=True), targets, alpha))
                    if not _same_pattern(ref, _relu_masks(relus[owner])):
                        flat[j] = orig
                        return None
                flat[j] = orig
                return (vals[0] - vals[1]) / (2.0 * h)

            numeric, used[n] = None, step
            coarse = quotient(step)
            if coarse is not None:
                fine = quotient(step / 2.0)
                if fine is not None:
                    numeric = (4.0 * fine - coarse) / 3.0
            for h in fallback_steps:
                if numeric is not None:
                    break
                numeric, used[n] = quotient(h), h
            if numeric is None:
                # every stencil straddled a kink
                errs[n], used[n] = np.inf, np.nan
            else:
                errs[n] = relative_error(analytic[pi].reshape(-1)[j], numeric)
    finally:
        net.set_track_running_stats(True)
    worst = int(np.argmax(errs)) if len(errs) else -1
    return GradCheckReport(len(slots), float(errs.max()) if len(errs) else 0.0, worst, errs, used)
