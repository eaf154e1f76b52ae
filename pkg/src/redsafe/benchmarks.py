"""Bundled benchmark: the two-motor synchronous position control PSS.

Two identical motors track reference inputs; the outputs are the first
motor's position and the position difference.  The system switches rotation
direction periodically (mode durations 0.1 s and 0.15 s) with the state reset
into a known box at each switch, and safety requires the outputs to avoid two
ellipsoidal regions.  All numbers ship as data files next to this module.
"""

from __future__ import annotations

from pathlib import Path

from .model import VerificationProblem, parse_problem

DATA_DIR = Path(__file__).parent / "data"
MOTOR_MANIFEST = DATA_DIR / "motor" / "motor.json"


def motor_benchmark() -> VerificationProblem:
    """The bundled two-motor PSS verification problem."""
    return parse_problem(MOTOR_MANIFEST)
