"""
APE Toolkit Utility Functions
"""
from datetime import datetime
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from app.models.errors import ParameterError

UINT64_MAX = 2**64 - 1


def format_timestamp(dt: datetime) -> str:
    """Format datetime to ISO string."""
    return dt.isoformat()


def check_seed(seed: int) -> int:
    """Validate a 64-bit unsigned seed."""
    seed = int(seed)
    if not 0 <= seed <= UINT64_MAX:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def make_rng(seed: int) -> Generator:
    """Counter-based generator keyed by ``seed``."""
    return Generator(Philox(check_seed(seed)))


def derive_seed(*keys: int) -> int:
    """Derive an independent 64-bit seed from a tuple of non-negative keys."""
    state = SeedSequence([check_seed(k) for k in keys]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def split_top_level(text: str, sep: str = ",") -> List[str]:
    """Split on ``sep`` outside of parentheses."""
    parts, depth, current = [], 0, []
    for char in text:
        if char == "(":
            depth += 1
        elif char == ")":
            depth -= 1
            if depth < 0:
                raise ParameterError(f"unbalanced parentheses in '{text}'")
        if char == sep and depth == 0:
            parts.append("".join(current).strip())
            current = []
        else:
            current.append(char)
    if depth != 0:
        raise ParameterError(f"unbalanced parentheses in '{text}'")
    tail = "".join(current).strip()
    if tail or parts:
        parts.append(tail)
    return parts


def parse_call(text: str) -> Tuple[str, List[str], Dict[str, str]]:
    """
    Parse a call-like spec string.

    ``"gbt(trees=300,depth=3)"`` -> ``("gbt", [], {"trees": "300", "depth": "3"})``
    ``"normal(0,1)"`` -> ``("normal", ["0", "1"], {})``
    Values may themselves be call strings (nested parentheses).
    """
    text = text.strip()
    if not text:
        raise ParameterError("empty spec string")
    if "(" not in text:
        return text.lower(), [], {}
    if not text.endswith(")"):
        raise ParameterError(f"malformed spec string '{text}'")
    name, inner = text[: text.index("(")].strip().lower(), text[text.index("(") + 1 : -1]
    args: List[str] = []
    kwargs: Dict[str, str] = {}
    for part in split_top_level(inner):
        if not part:
            continue
        head = part.split("(", 1)[0]
        if "=" in head:
            key, value = part.split("=", 1)
            kwargs[key.strip().lower()] = value.strip()
        else:
            if kwargs:
                raise ParameterError(f"positional argument after keyword in '{text}'")
            args.append(part)
    return name, args, kwargs


def parse_bool(value: str) -> bool:
    """Parse true/false style strings."""
    lowered = str(value).strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise ParameterError(f"not a boolean: '{value}'")


def parse_int_list(text: str) -> List[int]:
    """Parse ``"100, 1000, 5000"`` into integers."""
    try:
        return [int(part) for part in text.replace(";", ",").split(",") if part.strip()]
    except ValueError as exc:
        raise ParameterError(f"not an integer list: '{text}'") from exc


def format_float(value: Optional[float], digits: int = 4) -> str:
    """Fixed-width-friendly float formatting; ``None``/NaN become ``undefined``."""
    if value is None or not np.isfinite(value):
        return "undefined"
    return f"{value:.{digits}f}"
