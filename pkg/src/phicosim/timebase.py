"""Integer-nanosecond simulation time shared by every federate."""

NS_PER_S = 1_000_000_000


def from_seconds(seconds: float) -> int:
    """Convert seconds to integer ticks (nanoseconds), rounding to nearest."""
    return int(round(seconds * NS_PER_S))


def to_seconds(ticks: int) -> float:
    return ticks / NS_PER_S


def format_seconds(ticks: int) -> str:
    """Exact decimal rendering of ``ticks`` in seconds with 9 fractional digits."""
    sign = "-" if ticks < 0 else ""
    whole, frac = divmod(abs(int(ticks)), NS_PER_S)
    return f"{sign}{whole}.{frac:09d}"
