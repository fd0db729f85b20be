"""Finite partial monitoring games, probability vectors and game files."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

SIMPLEX_TOL = 1e-12


class GameError(ValueError):
    """Raised for malformed game data."""


class GameFormatError(GameError):
    """Raised when a game file cannot be parsed."""


@dataclass(frozen=True, eq=False)
class Game:
    """A k-action, d-outcome partial monitoring game.

    ``signals`` holds interned integer ids; ``labels[i]`` is the original
    label of id ``i``. ``scale`` records a rescaling applied to the losses so
    that they fit in [0, 1]; regret in original units is ``scale`` times the
    regret computed from ``losses``.
    """

    losses: np.ndarray
    signals: np.ndarray
    labels: tuple
    name: str = ""
    scale: float = 1.0

    @property
    def k(self) -> int:
        return self.losses.shape[0]

    @property
    def d(self) -> int:
        return self.losses.shape[1]

    @cached_property
    def m(self) -> int:
        return max(len(set(row)) for row in self.signals.tolist())

    @cached_property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        """Realizable (action, signal id) pairs, sorted."""
        return tuple(sorted({(a, int(s)) for a in range(self.k) for s in self.signals[a]}))

    @cached_property
    def pair_index(self) -> dict[tuple[int, int], int]:
        return {pr: i for i, pr in enumerate(self.pairs)}

    @cached_property
    def pair_of(self) -> np.ndarray:
        """k x d array: index into ``pairs`` of (a, Phi[a, x])."""
        idx = np.empty((self.k, self.d), dtype=int)
        for a in range(self.k):
            for x in range(self.d):
                idx[a, x] = self.pair_index[(a, int(self.signals[a, x]))]
        idx.setflags(write=False)
        return idx

    @cached_property
    def pair_action(self) -> np.ndarray:
        out = np.array([a for a, _ in self.pairs], dtype=int)
        out.setflags(write=False)
        return out

    def signal_label(self, sid: int) -> Any:
        return self.labels[sid]

    def signal_reveals_own_loss(self) -> bool:
        """True when every action's signal determines that action's loss."""
        for a in range(self.k):
            seen: dict[int, float] = {}
            for x in range(self.d):
                s = int(self.signals[a, x])
                if s in seen and abs(seen[s] - self.losses[a, x]) > SIMPLEX_TOL:
                    return False
                seen.setdefault(s, float(self.losses[a, x]))
        return True

    def signal_reveals_column(self) -> bool:
        """True when every action's signal determines the full loss column."""
        for a in range(self.k):
            seen: dict[int, np.ndarray] = {}
            for x in range(self.d):
                s = int(self.signals[a, x])
                col = self.losses[:, x]
                if s in seen and np.max(np.abs(seen[s] - col)) > SIMPLEX_TOL:
                    return False
                seen.setdefault(s, col)
        return True

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Game):
            return NotImplemented
        return (
            self.losses.shape == other.losses.shape
            and np.array_equal(self.losses, other.losses)
            and np.array_equal(self.signals, other.signals)
            and self.labels == other.labels
            and self.name == other.name
            and self.scale == other.scale
        )

    def __hash__(self) -> int:
        return hash((self.name, self.losses.tobytes(), self.signals.tobytes(), self.labels))

    def __repr__(self) -> str:
        return f"Game(name={self.name!r}, k={self.k}, d={self.d}, m={self.m})"


@dataclass(frozen=True, eq=False)
class SimplexVector:
    """Probability vector over actions or outcomes."""

    entries: np.ndarray
    over: str = "actions"
    tol: float = field(default=SIMPLEX_TOL, repr=False)

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float).reshape(-1)
        if self.over not in ("actions", "outcomes"):
            raise ValueError(f"unknown simplex tag {self.over!r}")
        if arr.size == 0:
            raise ValueError("empty probability vector")
        if np.any(arr < 0) or abs(arr.sum() - 1.0) > self.tol:
            raise ValueError(f"not a probability vector (sum={arr.sum()!r}, min={arr.min()!r})")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __len__(self) -> int:
        return self.entries.size


def as_probability(v, n: int | None = None, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate ``v`` as a probability vector and return it as an array."""
    arr = np.asarray(v.entries if isinstance(v, SimplexVector) else v, dtype=float).reshape(-1)
    if n is not None and arr.size != n:
        raise ValueError(f"dimension mismatch: expected {n}, got {arr.size}")
    if np.any(arr < 0) or abs(arr.sum() - 1.0) > tol:
        raise ValueError(f"not a probability vector (sum={arr.sum()!r})")
    return arr


def _intern(rows: Sequence[Sequence[Any]]) -> tuple[np.ndarray, tuple]:
    ids: dict[Any, int] = {}
    labels: list[Any] = []
    out = []
    for row in rows:
        r = []
        for lab in row:
            key = (type(lab).__name__, lab) if not isinstance(lab, (int, np.integer)) else ("int", int(lab))
            if key not in ids:
                ids[key] = len(labels)
                labels.append(int(lab) if isinstance(lab, (int, np.integer)) else lab)
            r.append(ids[key])
        out.append(r)
    return np.array(out, dtype=int), tuple(labels)


def validate_game(losses, signals, name: str = "", scale: float = 1.0) -> Game:
    """Build a :class:`Game` from a loss matrix and a signal-label matrix."""
    try:
        L = np.array(losses, dtype=float)
    except (TypeError, ValueError) as exc:
        raise GameError(f"losses are not a numeric matrix: {exc}") from None
    if L.ndim != 2 or L.size == 0:
        raise GameError("losses must be a non-empty k x d matrix")
    sig_rows = [list(r) for r in signals]
    if len(sig_rows) != L.shape[0] or any(len(r) != L.shape[1] for r in sig_rows):
        raise GameError(f"signal matrix shape does not match losses {L.shape}")
    if not np.all(np.isfinite(L)) or L.min() < 0.0 or L.max() > 1.0:
        bad = np.argwhere(~((L >= 0) & (L <= 1)))[0]
        raise GameError(f"loss entry at {tuple(int(i) for i in bad)} outside [0, 1]")
    if not (scale > 0):
        raise GameError("scale must be positive")
    S, labels = _intern(sig_rows)
    L.setflags(write=False)
    S.setflags(write=False)
    return Game(L, S, labels, name=name, scale=float(scale))


def _num_label(v: float) -> str:
    return f"{float(v):.12g}"


def make_bandit(losses, name: str = "bandit") -> Game:
    """Bandit game: the signal of an action is its own loss."""
    L = np.array(losses, dtype=float)
    if L.ndim != 2:
        raise GameError("losses must be a matrix")
    return validate_game(L, [[_num_label(v) for v in row] for row in L], name=name)


def make_full_info(losses, name: str = "full-info") -> Game:
    """Full-information game: every action observes the whole loss column."""
    L = np.array(losses, dtype=float)
    if L.ndim != 2 or L.size == 0:
        raise GameError("losses must be a non-empty matrix")
    col_labels = ["(" + ",".join(_num_label(v) for v in L[:, x]) + ")" for x in range(L.shape[1])]
    return validate_game(L, [col_labels for _ in range(L.shape[0])], name=name)


def binary_outcomes(k: int) -> np.ndarray:
    """k x 2^k loss table whose columns enumerate {0,1}^k."""
    cols = list(itertools.product([0.0, 1.0], repeat=k))
    return np.array(cols, dtype=float).T


def make_binary_full_info(k: int = 2) -> Game:
    return make_full_info(binary_outcomes(k), name=f"binary-full-info-{k}")


def make_bernoulli_bandit(k: int = 2) -> Game:
    return make_bandit(binary_outcomes(k), name=f"bernoulli-bandit-{k}")


def make_costly_matching_pennies(c: float) -> Game:
    """Matching pennies with a third, revealing action of cost ``c``."""
    if not c >= 0:
        raise GameError("cost c must be non-negative")
    scale = max(1.0, float(c))
    L = np.array([[0.0, 1.0], [1.0, 0.0], [c, c]]) / scale
    signals = [["⊥", "⊥"], ["⊥", "⊥"], ["H", "T"]]
    return validate_game(L, signals, name=f"cmp:{c:g}", scale=scale)


def expected_loss(p, game: Game, nu) -> float:
    """Expected loss p^T L nu."""
    pa = as_probability(p, game.k)
    na = as_probability(nu, game.d)
    return float(pa @ game.losses @ na)


def game_to_dict(game: Game) -> dict:
    return {
        "name": game.name,
        "losses": game.losses.tolist(),
        "signals": [[game.labels[s] for s in row] for row in game.signals.tolist()],
        "scale": game.scale,
    }


def game_from_dict(data: Any, source: str = "<game>") -> Game:
    if not isinstance(data, dict):
        raise GameFormatError(f"{source}: top-level value must be an object")
    for key in ("losses", "signals"):
        if key not in data:
            raise GameFormatError(f"{source}: missing field {key!r}")
    losses, signals = data["losses"], data["signals"]
    if not isinstance(losses, list) or not all(isinstance(r, list) for r in losses):
        raise GameFormatError(f"{source}: field 'losses' must be an array of rows")
    if not isinstance(signals, list) or not all(isinstance(r, list) for r in signals):
        raise GameFormatError(f"{source}: field 'signals' must be an array of rows")
    for i, row in enumerate(losses):
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise GameFormatError(f"{source}: losses[{i}][{j}] is not a number: {v!r}")
    for i, row in enumerate(signals):
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, str)):
                raise GameFormatError(f"{source}: signals[{i}][{j}] must be a string or integer")
    scale = data.get("scale", 1.0)
    if isinstance(scale, bool) or not isinstance(scale, (int, float)):
        raise GameFormatError(f"{source}: field 'scale' must be a number")
    try:
        return validate_game(losses, signals, name=str(data.get("name", "")), scale=float(scale))
    except GameError as exc:
        raise GameFormatError(f"{source}: {exc}") from None


def load_game(path) -> Game:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GameFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return game_from_dict(data, source=str(path))


def save_game(game: Game, path) -> None:
    Path(path).write_text(json.dumps(game_to_dict(game), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def resolve_game(spec: str) -> Game:
    """Load a game from a path or a ``builtin:`` name.

    Builtins: ``builtin:cmp:<c>``, ``builtin:full:<k>``, ``builtin:bandit:<k>``.
    """
    if spec.startswith("builtin:"):
        parts = spec.split(":")
        kind = parts[1] if len(parts) > 1 else ""
        arg = parts[2] if len(parts) > 2 else None
        if kind == "cmp" and arg is not None:
            return make_costly_matching_pennies(float(arg))
        if kind == "full":
            return make_binary_full_info(int(arg or 2))
        if kind == "bandit":
            return make_bernoulli_bandit(int(arg or 2))
        raise GameFormatError(f"unknown builtin game {spec!r}")
    return load_game(spec)
