"""Ready-made sharing programs, demo scripts, and benchmarks."""
from __future__ import annotations

from ..runtime import SharingProgram


def build_program(name: str, **kwargs) -> SharingProgram:
    """Construct one of the bundled sharing programs by short name."""
    if name == "fraud":
        from .fraud import build_fraud_program
        return build_fraud_program(**kwargs)
    if name == "health":
        from .healthcare import build_health_program
        return build_health_program(**kwargs)
    if name == "ads":
        from .admatch import build_ads_program
        return build_ads_program(**kwargs)
    raise ValueError(f"unknown program {name!r} (expected fraud, health, or ads)")
