import datetime
from typing import Any, Dict, List, Optional

from pydantic import BaseModel


class RunReport(BaseModel):
    """Full-fidelity record of one CLI invocation."""

    subcommand: str
    config_digest: str
    seed: Optional[int] = None
    feasible: bool = True
    payload: Dict[str, Any] = {}
    outputs: List[str] = []
    runtime_s: float = 0.0
    created_at: datetime.datetime
