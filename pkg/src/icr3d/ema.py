"""Exponential-moving-average teacher parameter blending."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ParamVector:
    """A flat parameter array plus the blending step counter."""

    values: np.ndarray
    step: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if not np.isfinite(values).all():
            raise ValueError("parameter values must be finite")
        if self.step < 0:
            raise ValueError("step must be non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


def ema_update(teacher: ParamVector, student: ParamVector, alpha: float) -> ParamVector:
    """One smoothing step: alpha * teacher + (1 - alpha) * student.

    alpha = 1 is the identity on the teacher, alpha = 0 returns the student;
    each step contracts the teacher toward the student by a factor alpha.
    """
    if len(teacher) != len(student):
        raise ValueError(
            f"parameter length mismatch: teacher {len(teacher)}, student {len(student)}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    blended = alpha * teacher.values + (1.0 - alpha) * student.values
    return ParamVector(values=blended, step=teacher.step + 1)
