"""Daily time grid and calendar arithmetic.

All model quantities live on an integer day grid anchored at a calendar date;
year fractions are day/365.  Months are resolved against the real calendar.
"""

import calendar
import datetime as dt
from dataclasses import dataclass

from .errors import DomainError

DAYS_PER_YEAR = 365.0
DT = 1.0 / DAYS_PER_YEAR


def add_months(day: dt.date, months: int) -> dt.date:
    """Shift a date by whole calendar months, clamping to month end."""
    m = day.month - 1 + months
    year = day.year + m // 12
    month = m % 12 + 1
    return dt.date(year, month, min(day.day, calendar.monthrange(year, month)[1]))


def end_of_month(day: dt.date) -> dt.date:
    return dt.date(day.year, day.month, calendar.monthrange(day.year, day.month)[1])


def end_of_week(day: dt.date) -> dt.date:
    """Sunday of the ISO week containing ``day``."""
    return day + dt.timedelta(days=6 - day.weekday())


@dataclass(frozen=True)
class TimeGrid:
    """Daily grid from ``start`` to ``end`` inclusive; index 0 is ``start``."""

    start: dt.date
    end: dt.date

    def __post_init__(self):
        if self.end < self.start:
            raise DomainError(f"grid end {self.end} before start {self.start}")

    @property
    def n_dates(self) -> int:
        return (self.end - self.start).days + 1

    @property
    def n_steps(self) -> int:
        return self.n_dates - 1

    def index(self, day: dt.date) -> int:
        i = (day - self.start).days
        if not 0 <= i < self.n_dates:
            raise DomainError(f"date {day} outside grid [{self.start}, {self.end}]")
        return i

    def date(self, i: int) -> dt.date:
        if not 0 <= i < self.n_dates:
            raise DomainError(f"day index {i} outside grid of {self.n_dates} days")
        return self.start + dt.timedelta(days=int(i))

    def year_fraction(self, i: int) -> float:
        return i * DT
