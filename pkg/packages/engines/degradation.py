# packages/engines/degradation.py
# Per-cycle cathode LAM fade law and its mapping onto the active-material fraction.

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import CellDeadError, DomainError

if TYPE_CHECKING:
    from .cellparams import CellParams

LOGGER = logging.getLogger(__name__)


class LamRow(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    q_loss: float = Field(ge=0)  # percent
    a: float = Field(gt=0)
    b: float = Field(gt=0)
    c: float = Field(gt=0)


# Aging snapshots at 10/20/30/40 % fade.
DEFAULT_ROWS: Tuple[LamRow, ...] = (
    LamRow(q_loss=10.0, a=0.01058, b=4.577, c=0.03375),
    LamRow(q_loss=20.0, a=0.01236, b=3.587, c=0.03640),
    LamRow(q_loss=30.0, a=0.01398, b=2.938, c=0.03766),
    LamRow(q_loss=40.0, a=0.01566, b=2.441, c=0.03806),
)


class LamCoeffs(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rows: Tuple[LamRow, ...] = DEFAULT_ROWS

    @field_validator("rows")
    @classmethod
    def _increasing(cls, rows):
        if not rows:
            raise ValueError("at least one LAM row is required")
        qs = [r.q_loss for r in rows]
        if any(b <= a for a, b in zip(qs, qs[1:])):
            raise ValueError("LAM rows must be strictly increasing in q_loss")
        return rows


class AgingState(BaseModel):
    model_config = ConfigDict(frozen=True)

    q_loss: float = 0.0  # percent
    cycle_index: int = 0
    eps_pos_true: float
    q_now: float  # Ah


def interp_coeffs(coeffs: LamCoeffs, q_loss: float) -> Tuple[float, float, float]:
    """Piecewise-linear coefficients in q_loss, clamped to the end rows."""
    if q_loss < 0:
        raise DomainError(f"q_loss must be >= 0, got {q_loss}")
    qs = [r.q_loss for r in coeffs.rows]
    a = float(np.interp(q_loss, qs, [r.a for r in coeffs.rows]))
    b = float(np.interp(q_loss, qs, [r.b for r in coeffs.rows]))
    c = float(np.interp(q_loss, qs, [r.c for r in coeffs.rows]))
    return a, b, c


def fade_per_cycle(coeffs: LamCoeffs, q_loss: float, c_rate: float) -> float:
    """Capacity fade in percent for one cycle charged at ``c_rate``: a*I^b + c."""
    if not c_rate > 0:
        raise DomainError(f"c_rate must be > 0, got {c_rate}")
    a, b, c = interp_coeffs(coeffs, q_loss)
    return a * c_rate**b + c


def fresh_aging(params: "CellParams") -> AgingState:
    return AgingState(
        q_loss=0.0,
        cycle_index=0,
        eps_pos_true=params.positive.active_fraction,
        q_now=params.capacity.nominal_ah,
    )


def advance_aging(state: AgingState, coeffs: LamCoeffs, params: "CellParams", c_rate: float) -> AgingState:
    q_loss = state.q_loss + fade_per_cycle(coeffs, state.q_loss, c_rate)
    if q_loss >= 100.0:
        raise CellDeadError(f"cumulative fade reached {q_loss:.2f}% at cycle {state.cycle_index + 1}")
    remaining = 1.0 - q_loss / 100.0
    nxt = AgingState(
        q_loss=q_loss,
        cycle_index=state.cycle_index + 1,
        eps_pos_true=params.positive.active_fraction * remaining,
        q_now=params.capacity.nominal_ah * remaining,
    )
    LOGGER.debug("cycle %d at %.3fC: q_loss %.5f%% -> eps+ %.5f", nxt.cycle_index, c_rate, q_loss, nxt.eps_pos_true)
    return nxt
