"""Target counting by Euler integration of a sensor field.

Each target switches on every sensor inside its disk; the sensor field
``h(x)`` counts active targets at ``x``. Since every disk has Euler
characteristic 1, the Euler integral of ``h`` is the number of targets.
With additive Gaussian noise the estimator subtracts the expected Euler
integral of the noise alone.
"""
from dataclasses import dataclass, field
import csv
import json
import math

import numpy as np

from . import chaos, euler
from .fieldgen import FieldGrid, GridSpec, sample_field


class RasterizationError(ValueError):
    pass


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    r: float

    def to_dict(self):
        return {"cx": self.cx, "cy": self.cy, "r": self.r}


@dataclass
class TargetScene:
    domain: GridSpec
    disks: list = field(default_factory=list)

    def __post_init__(self):
        if self.domain.n != 2:
            raise ValueError("target scenes live on 2-D grids")
        self.disks = [d if isinstance(d, Disk) else Disk(**d) for d in self.disks]
        margin = 2.0 * self.domain.h
        m = self.domain.m
        for d in self.disks:
            if d.r <= 0:
                raise ValueError("disk radius must be positive")
            if (d.cx - d.r < margin or d.cy - d.r < margin
                    or d.cx + d.r > m - margin or d.cy + d.r > m - margin):
                raise ValueError("disk %s is closer than 2h to the domain boundary" % (d,))

    def translated(self, dx, dy):
        return TargetScene(self.domain, [Disk(d.cx + dx, d.cy + dy, d.r) for d in self.disks])

    def to_dict(self):
        return {"domain": {"m": self.domain.m, "h": self.domain.h}, "disks": [d.to_dict() for d in self.disks]}

    @classmethod
    def from_dict(cls, obj):
        unknown = set(obj) - {"domain", "disks"}
        if unknown:
            raise ValueError("unknown scene keys: %s" % sorted(unknown))
        dom = obj["domain"]
        return cls(GridSpec(2, float(dom["m"]), float(dom["h"])), [Disk(**d) for d in obj.get("disks", [])])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def rasterize_sensor_field(scene):
    """Number of disks containing each grid point."""
    xy = scene.domain.mesh()
    counts = np.zeros(scene.domain.shape)
    for d in scene.disks:
        counts += ((xy[..., 0] - d.cx) ** 2 + (xy[..., 1] - d.cy) ** 2 <= d.r * d.r)
    return FieldGrid(scene.domain, counts)


def count_targets_exact(hfield, beta=1):
    """``round(int h dchi / beta)``; refuses if the integral is not near an integer."""
    val = euler.upper_euler_integral(euler.ec_curve(hfield)) / beta
    k = int(round(val))
    if abs(val - k) > 0.25:
        raise RasterizationError("Euler integral %.4f is not within 0.25 of an integer; refine h" % val)
    return k


@dataclass
class NoisyEstimate:
    seed: int
    Y: float
    N_hat: float
    noise_integral: float
    signal_integral: float
    bias_term: float

    @property
    def additivity_residual(self):
        """``int(h+X) - int h - int X`` on the grid."""
        return self.Y - self.signal_integral - self.noise_integral


def estimate_targets_noisy(hfield, model, seed, amplitude=1.0, beta=1):
    """``N_hat = (int (h + a X) dchi - E[int a X dchi]) / beta`` for one noise draw."""
    spec = hfield.spec
    if amplitude == 0:
        noise = np.zeros(spec.shape)
        bias = 0.0
    else:
        noise = amplitude * sample_field(model, spec, seed).values
        bias = amplitude * chaos.mean_euler_integral(model, 2, spec.m)
    Y = euler.euler_integral(hfield.values + noise)
    return NoisyEstimate(int(seed), Y, (Y - bias) / beta, euler.euler_integral(noise),
                         euler.euler_integral(hfield.values), bias)


def write_results_csv(estimates, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "Y", "N_hat"])
        for e in estimates:
            w.writerow([e.seed, repr(float(e.Y)), repr(float(e.N_hat))])


# ---------------------------------------------------------------------------
# Random scenes


def _overlap_ok(a, b, h):
    """Pairs are either clearly apart or clearly overlapping without nesting."""
    dist = math.hypot(a.cx - b.cx, a.cy - b.cy)
    gap = 3.0 * h
    if dist >= a.r + b.r + gap:
        return "apart"
    depth = a.r + b.r - dist
    if depth >= max(gap, 0.25 * min(a.r, b.r)) and dist >= abs(a.r - b.r) + gap:
        return "overlap"
    return None


def _is_forest(k, edges):
    parent = list(range(k))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri == rj:
            return False
        parent[ri] = rj
    return True


def random_scene(rng, m=10.0, h=0.05, max_disks=10, r_range=(0.5, 1.5), max_tries=2000):
    """Random scene with 0..max_disks disks whose overlap graph is a forest.

    Pairs closer than a few grid steps to tangency, nested pairs and cycles of
    overlaps are rejected, so every union of disks is contractible and each
    rasterized level set keeps its continuum topology.
    """
    spec = GridSpec(2, m, h)
    target = int(rng.integers(0, max_disks + 1))
    disks, edges = [], []
    margin = 2.0 * h
    tries = 0
    while len(disks) < target and tries < max_tries:
        tries += 1
        r = float(rng.uniform(*r_range))
        lo, hi = r + margin + h, m - r - margin - h
        d = Disk(float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)), r)
        kinds = [_overlap_ok(d, o, h) for o in disks]
        if any(k is None for k in kinds):
            continue
        new_edges = [(len(disks), i) for i, k in enumerate(kinds) if k == "overlap"]
        if not _is_forest(len(disks) + 1, edges + new_edges):
            continue
        disks.append(d)
        edges += new_edges
    return TargetScene(spec, disks)
