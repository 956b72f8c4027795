from pydantic import BaseModel, ConfigDict


class StrictOptions(BaseModel):
    """Base for the option block of every registered component."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)
