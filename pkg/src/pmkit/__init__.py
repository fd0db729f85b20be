"""Learning toolkit for finite partial monitoring games."""

from .game import Game, load_game, make_bandit, make_costly_matching_pennies, make_full_info, resolve_game, validate_game
from .geometry import analyze, classify_game
from .optimizer import ExplorationSolver, SolverSettings, solve_exploration, solve_hp

__all__ = [
    "Game", "load_game", "make_bandit", "make_costly_matching_pennies", "make_full_info", "resolve_game",
    "validate_game", "analyze", "classify_game", "ExplorationSolver", "SolverSettings", "solve_exploration",
    "solve_hp",
]
__version__ = "0.1.0"
