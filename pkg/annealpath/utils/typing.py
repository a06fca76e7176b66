from typing import (
    Literal,
)

from pydantic import (
    BaseModel,
    ConfigDict,
)

Propagator = Literal["suzuki-trotter-2", "exact-midpoint"]
EigenSolver = Literal["auto", "dense", "lanczos"]
TunerMethod = Literal["floppiness", "sigma-average", "kiefer-wolfowitz"]
FloppinessSource = Literal["events", "exact"]
LevelMode = Literal["exact", "estimated"]


class Record(BaseModel):
    """Immutable, JSON-serializable record shared by configs and reports."""

    model_config = ConfigDict(frozen=True, extra="forbid")
