"""Hyperparameter-tuning instances for support vector regression.

An instance is a synthetic linear-regression data set split in half: the
first ``⌈S/2⌉`` samples train the lower-level SVR, the rest measure its
out-of-sample absolute error, which the upper level minimizes over the
regularization weight C and the tube width ε.

Generation recipe (fixed; tests pin golden vectors for seed 42):

* ``rng = numpy.random.default_rng(seed)`` (PCG64);
* features ``x``: one uniform draw on [-1, 1] of shape (samples, features),
  row-major;
* targets ``y = x @ ones + noise_amp · U[-1, 1]`` with the noise drawn
  second, so the true weight vector is all ones.

The bilevel form:

    upper:  min Σ_{i∉I} ξ^U_i
            s.t.  ξ^U_i ≥ ±(y_i − Σ_j w_j x_ij),   C, ε, ξ^U ≥ 0
    lower:  w, ξ^L  ∈ argmin  Σ_j w_j² + C Σ_{i∈I} ξ^L_i
            s.t.  ξ^L_i + ε ≥ ±(y_i − Σ_j w_j x_ij),   ξ^L ≥ 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import BilevelModel, Level, Rel, Sense, quad, affine


class InstanceError(Exception):
    pass


@dataclass(frozen=True)
class SvrInstance:
    samples: int
    features: int
    seed: int
    noise_amp: float
    x: np.ndarray  # (samples, features)
    y: np.ndarray  # (samples,)

    @property
    def name(self) -> str:
        return instance_name(self.samples, self.features)

    @property
    def in_indices(self) -> range:
        return range(n_in_sample(self.samples))

    @property
    def out_indices(self) -> range:
        return range(n_in_sample(self.samples), self.samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SvrInstance):
            return NotImplemented
        return (
            self.samples == other.samples
            and self.features == other.features
            and self.seed == other.seed
            and self.noise_amp == other.noise_amp
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


def n_in_sample(samples: int) -> int:
    """Size of the training split: the first half, rounded up when odd."""
    return (samples + 1) // 2


def instance_name(samples: int, features: int) -> str:
    return f"{samples}/{features:02d}"


def parse_instance_name(name: str) -> tuple[int, int]:
    try:
        s, f = name.split("/")
        return int(s), int(f)
    except ValueError:
        raise InstanceError(f"instance name {name!r} is not of the form S/FF") from None


def generate_instance(
    samples: int, features: int, seed: int, noise_amp: float = 0.1
) -> SvrInstance:
    if samples < 2:
        raise InstanceError("need at least two samples (one in-sample, one out)")
    if features < 1:
        raise InstanceError("need at least one feature")
    if seed < 0:
        raise InstanceError("seed must be nonnegative")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(samples, features))
    noise = rng.uniform(-1.0, 1.0, size=samples)
    w_real = np.ones(features)
    y = x.dot(w_real) + noise_amp * noise
    x.setflags(write=False)
    y.setflags(write=False)
    return SvrInstance(samples, features, seed, noise_amp, x, y)


def one_sample_instance() -> SvrInstance:
    """The worked micro-instance: one training sample (x=1, y=1) and one
    held-out sample (x=1, y=1), no noise.  Its exact bilevel optimum is 0
    (reached by w = 1, e.g. C = 2, ε = 0)."""
    x = np.array([[1.0], [1.0]])
    y = np.array([1.0, 1.0])
    x.setflags(write=False)
    y.setflags(write=False)
    return SvrInstance(2, 1, 0, 0.0, x, y)


def build_bilevel(inst: SvrInstance) -> BilevelModel:
    """State the instance as a :class:`BilevelModel`.

    Variable names: ``C``, ``eps``, ``xi_U[i]``, ``w[j]``, ``xi_L[i]`` with
    ``i`` the original sample index.  Constraint names: ``out_pos[i]`` /
    ``out_neg[i]`` (upper) and ``in_pos[i]`` / ``in_neg[i]`` (lower).
    """
    model = BilevelModel(name=f"svr_{inst.samples}_{inst.features:02d}_{inst.seed}")
    c_var = model.add_variable("C", Level.UPPER, lb=0.0)
    eps = model.add_variable("eps", Level.UPPER, lb=0.0)
    xi_u = {i: model.add_variable(f"xi_U[{i}]", Level.UPPER, lb=0.0) for i in inst.out_indices}
    w = [model.add_variable(f"w[{j}]", Level.LOWER) for j in range(inst.features)]
    xi_l = {i: model.add_variable(f"xi_L[{i}]", Level.LOWER, lb=0.0) for i in inst.in_indices}

    model.set_objective(Level.UPPER, Sense.MIN, affine({v: 1.0 for v in xi_u.values()}))

    lower_obj = quad({(wj, wj): 1.0 for wj in w})
    for i in inst.in_indices:
        lower_obj.add_quad_term(c_var, xi_l[i], 1.0)
    model.set_objective(Level.LOWER, Sense.MIN, lower_obj)

    for i in inst.out_indices:
        fit = {w[j]: float(inst.x[i, j]) for j in range(inst.features)}
        pos = affine({xi_u[i]: 1.0})
        pos.add(affine(fit))
        model.add_constraint(f"out_pos[{i}]", Level.UPPER, pos, Rel.GE, float(inst.y[i]))
        neg = affine({xi_u[i]: 1.0})
        neg.add(affine(fit), -1.0)
        model.add_constraint(f"out_neg[{i}]", Level.UPPER, neg, Rel.GE, -float(inst.y[i]))

    for i in inst.in_indices:
        fit = {w[j]: float(inst.x[i, j]) for j in range(inst.features)}
        pos = affine({xi_l[i]: 1.0, eps: 1.0})
        pos.add(affine(fit))
        model.add_constraint(f"in_pos[{i}]", Level.LOWER, pos, Rel.GE, float(inst.y[i]))
        neg = affine({xi_l[i]: 1.0, eps: 1.0})
        neg.add(affine(fit), -1.0)
        model.add_constraint(f"in_neg[{i}]", Level.LOWER, neg, Rel.GE, -float(inst.y[i]))

    return model


def upper_loss(inst: SvrInstance, w: np.ndarray) -> float:
    """Out-of-sample absolute error Σ_{i∉I} |y_i − x_i·w|."""
    w = np.asarray(w, dtype=float)
    if w.shape != (inst.features,):
        raise InstanceError(f"expected {inst.features} weights, got shape {w.shape}")
    out = list(inst.out_indices)
    resid = inst.y[out] - inst.x[out].dot(w)
    return float(np.abs(resid).sum())


def save_instance(inst: SvrInstance, path: str | Path) -> None:
    """Write the data as CSV (x columns then y, full precision) plus a JSON
    sidecar ``<path>.json`` holding the metadata."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(inst.features)] + ["y"])
        for i in range(inst.samples):
            row = [repr(float(v)) for v in inst.x[i]] + [repr(float(inst.y[i]))]
            writer.writerow(row)
    meta = {
        "samples": inst.samples,
        "features": inst.features,
        "seed": inst.seed,
        "noise_amp": inst.noise_amp,
        "name": inst.name,
        "in_samples": n_in_sample(inst.samples),
    }
    sidecar = path.with_name(path.name + ".json")
    with open(sidecar, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_instance(path: str | Path) -> SvrInstance:
    """Inverse of :func:`save_instance`; the arrays round-trip exactly."""
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if not sidecar.exists():
        raise InstanceError(f"missing sidecar {sidecar}")
    with open(sidecar) as fh:
        meta = json.load(fh)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    features = len(header) - 1
    if features != meta["features"] or len(rows) != meta["samples"]:
        raise InstanceError(f"{path} does not match its sidecar")
    x = np.array([[float(v) for v in row[:features]] for row in rows])
    y = np.array([float(row[features]) for row in rows])
    x.setflags(write=False)
    y.setflags(write=False)
    return SvrInstance(meta["samples"], features, meta["seed"], meta["noise_amp"], x, y)
