"""Shared containers for binary feature states, dense distributions and samples.

Convention: a configuration s = (s_1, ..., s_n) is packed into an integer
index = sum_i s_i 2^(i-1), i.e. bit 0 of the index stores s_1 (the most
coarse-grained feature).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Dense vectors over 2^n states are refused beyond this width.
MAX_DENSE_BITS = 20

_NORM_TOL = 1e-10


def state_index(bits) -> int:
    """Pack a 0/1 sequence (s_1 first) into an integer index."""
    idx = 0
    for i, b in enumerate(bits):
        if b not in (0, 1):
            raise ValueError(f"non-binary entry {b!r}")
        idx |= int(b) << i
    return idx


def bits_of(index: int, n: int) -> tuple:
    """Unpack an index into the tuple (s_1, ..., s_n)."""
    return tuple((index >> i) & 1 for i in range(n))


def level_of(index: int) -> int:
    """Highest set feature index of a packed state; 0 for the featureless state."""
    return int(index).bit_length()


def levels_of(indices: np.ndarray) -> np.ndarray:
    """Vectorized `level_of` (exact for indices below 2^53)."""
    return np.frexp(np.asarray(indices, dtype=np.float64))[1]


def entropy_bits(probs: np.ndarray) -> float:
    """Shannon entropy in bits; zero-probability entries contribute nothing."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def binary_entropy(x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return float(-x * np.log2(x) - (1.0 - x) * np.log2(1.0 - x))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def kl_bits(p: np.ndarray, q: np.ndarray) -> float:
    """Plug-in KL divergence in bits; terms with p=0 are dropped.

    Infinite when some p > 0 sits on q = 0.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float((p[mask] * (np.log2(p[mask]) - np.log2(q[mask]))).sum())


@dataclass(frozen=True)
class FeatureState:
    """An ordered binary configuration of fixed width n (index 1 most coarse)."""

    bits: tuple

    def __post_init__(self):
        if len(self.bits) < 1:
            raise ValueError("width must be >= 1")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0 or 1")

    @property
    def n(self) -> int:
        return len(self.bits)

    @property
    def index(self) -> int:
        return state_index(self.bits)

    @property
    def level(self) -> int:
        """m_s = max{k : s_k = 1}, 0 for the featureless state."""
        return level_of(self.index)

    @classmethod
    def from_index(cls, index: int, n: int) -> "FeatureState":
        if not 0 <= index < (1 << n):
            raise ValueError(f"index {index} out of range for n={n}")
        return cls(bits_of(index, n))

    @classmethod
    def featureless(cls, n: int) -> "FeatureState":
        return cls((0,) * n)


@dataclass
class DenseDistribution:
    """Explicit probability vector over all 2^n states."""

    n: int
    probs: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.n > MAX_DENSE_BITS:
            raise ValueError(f"n={self.n} exceeds dense limit of {MAX_DENSE_BITS}")
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (1 << self.n,):
            raise ValueError("probs length must be 2^n")
        if np.any(self.probs < -1e-15):
            raise ValueError("negative probability entry")
        self.probs = np.clip(self.probs, 0.0, None)
        if abs(self.probs.sum() - 1.0) > _NORM_TOL:
            raise ValueError(f"probabilities sum to {self.probs.sum()}, not 1")

    def entropy_bits(self) -> float:
        return entropy_bits(self.probs)

    def tv(self, other: "DenseDistribution") -> float:
        self._check_width(other)
        return total_variation(self.probs, other.probs)

    def kl(self, other: "DenseDistribution") -> float:
        self._check_width(other)
        return kl_bits(self.probs, other.probs)

    def _check_width(self, other: "DenseDistribution"):
        if other.n != self.n:
            raise ValueError(f"width mismatch: {self.n} vs {other.n}")

    @classmethod
    def uniform(cls, n: int) -> "DenseDistribution":
        size = 1 << n
        return cls(n, np.full(size, 1.0 / size))

    @classmethod
    def point_mass(cls, n: int, index: int = 0) -> "DenseDistribution":
        probs = np.zeros(1 << n)
        probs[index] = 1.0
        return cls(n, probs)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "DenseDistribution":
        """Dirichlet(1,...,1) draw, i.e. uniform on the simplex."""
        return cls(n, rng.dirichlet(np.ones(1 << n)))

    def to_json(self) -> dict:
        return {"n": self.n, "probs": self.probs.tolist()}

    @classmethod
    def from_json(cls, payload: dict) -> "DenseDistribution":
        return cls(int(payload["n"]), np.asarray(payload["probs"], dtype=np.float64))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "DenseDistribution":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class EmpiricalSample:
    """Multiset of states of common width n, stored as index -> count."""

    n: int
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        top = 1 << self.n
        for idx, c in self.counts.items():
            if not 0 <= idx < top:
                raise ValueError(f"state index {idx} out of range for n={self.n}")
            if c < 0:
                raise ValueError("negative count")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def n_distinct(self) -> int:
        return len(self.counts)

    def add(self, index: int, count: int = 1):
        self.counts[index] = self.counts.get(index, 0) + count

    @classmethod
    def from_indices(cls, indices, n: int) -> "EmpiricalSample":
        idx, cnt = np.unique(np.asarray(indices, dtype=np.int64), return_counts=True)
        return cls(n, {int(i): int(c) for i, c in zip(idx, cnt)})

    @classmethod
    def from_rows(cls, rows: np.ndarray) -> "EmpiricalSample":
        """Build from a binary matrix with one configuration per row (s_1 first)."""
        rows = np.asarray(rows)
        n = rows.shape[1]
        weights = (1 << np.arange(n)).astype(np.int64)
        return cls.from_indices(rows.astype(np.int64) @ weights, n)

    def indices_array(self) -> np.ndarray:
        return np.fromiter(self.counts.keys(), dtype=np.int64, count=len(self.counts))

    def counts_array(self) -> np.ndarray:
        return np.fromiter(self.counts.values(), dtype=np.int64, count=len(self.counts))

    def frequencies(self) -> dict:
        total = self.total
        if total == 0:
            raise ValueError("empty sample")
        return {idx: c / total for idx, c in self.counts.items()}

    def to_dense(self) -> DenseDistribution:
        total = self.total
        if total == 0:
            raise ValueError("empty sample")
        probs = np.zeros(1 << self.n)
        probs[self.indices_array()] = self.counts_array() / total
        return DenseDistribution(self.n, probs)

    def entropy_bits(self) -> float:
        """Plug-in (maximum likelihood) entropy of the sample frequencies."""
        c = self.counts_array().astype(np.float64)
        return entropy_bits(c / c.sum())

    def miller_madow_bits(self) -> float:
        """Plug-in entropy plus the Miller-Madow small-sample correction."""
        total = self.total
        return self.entropy_bits() + (self.n_distinct - 1) / (2.0 * total * np.log(2.0))

    # -- text serialization: one 0/1 string per line (s_1 first), optional count --

    def to_text(self) -> str:
        lines = [f"# n={self.n}"]
        for idx in sorted(self.counts):
            word = "".join(str(b) for b in bits_of(idx, self.n))
            lines.append(f"{word} {self.counts[idx]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EmpiricalSample":
        counts = {}
        n = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                # optional "# n=K" header lets empty samples round-trip
                header = line.lstrip("#").strip()
                if header.startswith("n=") and n is None:
                    n = int(header[2:])
                continue
            parts = line.split()
            word = parts[0]
            if any(ch not in "01" for ch in word):
                raise ValueError(f"bad state line: {raw!r}")
            if n is None:
                n = len(word)
            elif len(word) != n:
                raise ValueError("mixed state widths in sample file")
            count = int(parts[1]) if len(parts) > 1 else 1
            idx = state_index(int(ch) for ch in word)
            counts[idx] = counts.get(idx, 0) + count
        if n is None:
            raise ValueError("no states found in sample text")
        return cls(n, counts)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "EmpiricalSample":
        with open(path) as fh:
            return cls.from_text(fh.read())
