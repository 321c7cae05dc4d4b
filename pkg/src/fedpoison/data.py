"""Synthetic road scenes with ground-truth trajectories.

Each scene is a parametric quadratic road: the lateral position of the road
at forward distance z is x = c * z^2 for a per-sample curvature c. The image
shows the two road edges as bright curves over a dark noisy background, and
the ground-truth trajectory follows the road center. Trajectories are stored
normalized: every coordinate of point i is divided by the point's forward
distance t_i, so a straight road has lateral 0 and forward 1 at every point.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

TARGET_DISTANCES = np.array(
    [5, 10, 15, 20, 25, 30, 35, 40, 50, 60, 70, 80, 95, 110, 125, 145, 165],
    dtype=np.float64,
)
N_POINTS = 17
TARGET_DIM = 51  # 17 points x (lateral, height, forward)

DEFAULT_HW = 32
CURVATURE_MAX = 0.002  # |c| bound; keeps the road inside the view at z=165
NOISE_MAX = 0.1  # background noise ceiling
ROAD_HALF_WIDTH = 3.0  # meters between road center and each painted edge
VIEW_HALF_WIDTH = 60.0  # meters spanned by half the image width
Z_MAX = float(TARGET_DISTANCES[-1])

_POSITION_MODES = ("random", "top_left", "center")


@dataclass(eq=False)
class Sample:
    """One scene: flattened (3, H, W) image, normalized 51-target, poison flag."""

    image: np.ndarray
    target: np.ndarray
    poisoned: bool = False


@dataclass(frozen=True)
class TriggerSpec:
    """Square backdoor patch: size as a fraction of image height, RGB color."""

    size_fraction: float = 0.10
    color: tuple[float, float, float] = (1.0, 0.0, 0.0)
    position_mode: str = "random"
    count: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.size_fraction <= 1:
            raise ValueError(f"size_fraction must be in (0, 1], got {self.size_fraction}")
        if len(self.color) != 3 or any(not 0 <= v <= 1 for v in self.color):
            raise ValueError(f"color must be an RGB triple in [0,1]^3, got {self.color}")
        if self.position_mode not in _POSITION_MODES:
            raise ValueError(
                f"position_mode must be one of {_POSITION_MODES}, got {self.position_mode!r}"
            )
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")


@dataclass(eq=False)
class DatasetSplit:
    """Disjoint (round, client) training cells plus test and defense sets.

    ``backdoor_test`` is attached once a trigger spec is known (the targets
    stay identical to ``test`` so loss against clean ground truth measures
    trigger-induced deviation). Cell reads go through :meth:`cell` and are
    logged, which lets tests assert that no client ever reads another
    client's data.
    """

    per_round_per_client: list[list[list[Sample]]]
    test: list[Sample]
    defense: list[Sample]
    backdoor_test: list[Sample] | None = None
    access_log: list[tuple[int, int]] = field(default_factory=list)

    def cell(self, round_idx: int, client_id: int) -> list[Sample]:
        self.access_log.append((round_idx, client_id))
        return self.per_round_per_client[round_idx][client_id]


def image_side(image: np.ndarray) -> int:
    """Side length of a flattened square 3-channel image."""
    n = image.size
    side = math.isqrt(n // 3)
    if 3 * side * side != n:
        raise ValueError(f"image length {n} is not 3*H*H for integer H")
    return side


def _render_scene(curvature: float, noise_seed: int, hw: int) -> np.ndarray:
    """Deterministic scene for (curvature, noise seed): noisy dark background
    with the two road edges painted white, one pixel per row per edge."""
    rng = np.random.default_rng(noise_seed)
    img = rng.uniform(0.0, NOISE_MAX, size=(3, hw, hw))
    # Row 0 is the far end of the road, the bottom row the nearest slice.
    z = Z_MAX * (hw - np.arange(hw)) / hw
    center = curvature * z * z
    meters_per_col = 2 * VIEW_HALF_WIDTH / hw
    rows = np.arange(hw)
    for edge in (-ROAD_HALF_WIDTH, ROAD_HALF_WIDTH):
        cols = np.rint((center + edge) / meters_per_col + (hw - 1) / 2).astype(int)
        ok = (cols >= 0) & (cols < hw)
        img[:, rows[ok], cols[ok]] = 1.0
    return img.reshape(-1)


def _target_for(curvature: float) -> np.ndarray:
    """Normalized trajectory for curvature c: point i is (c*t_i, 0, 1)."""
    target = np.empty(TARGET_DIM)
    target[0::3] = curvature * TARGET_DISTANCES
    target[1::3] = 0.0
    target[2::3] = 1.0
    return target


def generate_dataset(
    n: int,
    seed: int,
    hw: int = DEFAULT_HW,
    curvature_max: float = CURVATURE_MAX,
) -> list[Sample]:
    """n synthetic samples; deterministic for a fixed (n, seed, hw)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    master = np.random.default_rng(seed)
    curvatures = master.uniform(-curvature_max, curvature_max, size=n)
    noise_seeds = master.integers(0, 2**63 - 1, size=n)
    return [
        Sample(image=_render_scene(c, int(ns), hw), target=_target_for(c))
        for c, ns in zip(curvatures, noise_seeds)
    ]


def split_dataset(
    samples: list[Sample],
    rounds: int,
    clients: int,
    per_client: int,
    test_n: int,
    defense_n: int,
    seed: int,
) -> DatasetSplit:
    """Seeded random partition into R x C equal cells + test + defense sets.

    All cells are pairwise disjoint; leftover samples are discarded.
    """
    need = rounds * clients * per_client + test_n + defense_n
    if len(samples) < need:
        raise ValueError(f"need {need} samples, got {len(samples)}")
    perm = np.random.default_rng(seed).permutation(len(samples))
    pos = 0

    def take(k: int) -> list[Sample]:
        nonlocal pos
        chunk = [samples[i] for i in perm[pos : pos + k]]
        pos += k
        return chunk

    cells = [[take(per_client) for _ in range(clients)] for _ in range(rounds)]
    test = take(test_n)
    defense = take(defense_n)
    return DatasetSplit(per_round_per_client=cells, test=test, defense=defense)


def inject_trigger(
    image: np.ndarray, spec: TriggerSpec, rng: np.random.Generator
) -> np.ndarray:
    """Return a copy of the image with `spec.count` colored squares painted.

    The square overwrites exactly its pixels in all three channels; the
    input image is never modified.
    """
    hw = image_side(image)
    side = int(round(spec.size_fraction * hw))
    if side > hw:
        raise ValueError(f"trigger side {side} exceeds image side {hw}")
    if side < 1:
        raise ValueError(f"size_fraction {spec.size_fraction} rounds to an empty square")
    img = image.reshape(3, hw, hw).copy()
    for _ in range(spec.count):
        if spec.position_mode == "random":
            r0 = int(rng.integers(0, hw - side + 1))
            c0 = int(rng.integers(0, hw - side + 1))
        elif spec.position_mode == "top_left":
            r0, c0 = 0, 0
        else:  # center
            r0 = c0 = (hw - side) // 2
        for ch in range(3):
            img[ch, r0 : r0 + side, c0 : c0 + side] = spec.color[ch]
    return img.reshape(-1)


def make_turn_target(
    target: np.ndarray, turn_magnitude: float, direction: int = 1
) -> np.ndarray:
    """Ramp the last 5 points' lateral coordinate into a turn.

    Point 12+j (1-based 13..17) gets direction * turn_magnitude * j/5 added
    to its normalized lateral coordinate; everything else is untouched.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (TARGET_DIM,):
        raise ValueError(f"target must have shape ({TARGET_DIM},), got {target.shape}")
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    out = target.copy()
    for j in range(1, 6):
        out[3 * (11 + j)] += direction * turn_magnitude * j / 5
    return out


def build_backdoor_testset(
    test: list[Sample], spec: TriggerSpec, seed: int
) -> list[Sample]:
    """Triggered copy of the test set with targets left unchanged."""
    rng = np.random.default_rng(seed)
    return [
        Sample(image=inject_trigger(s.image, spec, rng), target=s.target.copy(), poisoned=True)
        for s in test
    ]


def denormalize(target: np.ndarray, distances: np.ndarray = TARGET_DISTANCES) -> np.ndarray:
    """Scale every coordinate of point i by t_i, yielding meters."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (TARGET_DIM,):
        raise ValueError(f"target must have shape ({TARGET_DIM},), got {target.shape}")
    return target * np.repeat(np.asarray(distances, dtype=np.float64), 3)


# Dataset stream format, version 1 (see docs/dataset-format.md):
#   header: magic "FPDS", uint32 version, uint64 n, uint32 hw, uint64 seed
#   record: image float64[3*hw*hw] | target float64[51] | poisoned uint8
# All integers and floats little-endian.
_MAGIC = b"FPDS"
_VERSION = 1
_HEADER = struct.Struct("<4sIQIQ")


def save_dataset(samples: list[Sample], path, seed: int) -> None:
    """Write samples as a flat binary record stream with counts and seed."""
    if not samples:
        raise ValueError("cannot save an empty dataset")
    hw = image_side(samples[0].image)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, len(samples), hw, seed % 2**64))
        for s in samples:
            fh.write(np.ascontiguousarray(s.image, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.target, dtype="<f8").tobytes())
            fh.write(struct.pack("<B", 1 if s.poisoned else 0))


def load_dataset(path) -> tuple[list[Sample], int]:
    """Read a dataset stream written by :func:`save_dataset`."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, n, hw, seed = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a fedpoison dataset stream")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        img_n = 3 * hw * hw
        rec_size = 8 * (img_n + TARGET_DIM) + 1
        samples = []
        for i in range(n):
            rec = fh.read(rec_size)
            if len(rec) < rec_size:
                raise ValueError(f"{path}: truncated record {i}")
            image = np.frombuffer(rec, dtype="<f8", count=img_n).astype(np.float64)
            target = np.frombuffer(rec, dtype="<f8", count=TARGET_DIM, offset=8 * img_n)
            poisoned = rec[-1] != 0
            samples.append(
                Sample(image=image, target=target.astype(np.float64), poisoned=poisoned)
            )
    return samples, seed
