from __future__ import annotations

from typing import List, Literal, Optional

from pydantic import BaseModel, Field

JobStatus = Literal["pending", "done", "failed"]


class JobItem(BaseModel):
    """
    Single unit of independent work (one trajectory fit, one grid point).

    Fields:
        name (str): Identifier of the job, e.g. the trajectory id.
        status (str): One of pending, done, failed.
        detail (Optional[str]): Summary once finished (loss, error message), or None.
    """
    name: str = Field(
        ...,
        description="Identifier of the job, e.g. the trajectory id."
    )
    status: JobStatus = Field(
        "pending",
        description="Progress of the job."
    )
    detail: Optional[str] = Field(
        None,
        description="Result summary or error message once finished, otherwise None."
    )

    @property
    def finished(self) -> bool:
        return self.status != "pending"


class JobList:
    """
    Bookkeeping for a batch of independent jobs.

    Jobs are identified by their zero-based index, which is also the job id
    used to derive per-job random seeds.
    """

    def __init__(self) -> None:
        self.items: List[JobItem] = []

    def add(self, name: str) -> int:
        self.items.append(JobItem(name=name))
        return len(self.items) - 1

    def mark_done(self, index: int, detail: str) -> bool:
        return self._mark(index, "done", detail)

    def mark_failed(self, index: int, detail: str) -> bool:
        return self._mark(index, "failed", detail)

    def _mark(self, index: int, status: JobStatus, detail: str) -> bool:
        if index < 0 or index >= len(self.items):
            return False
        self.items[index].status = status
        self.items[index].detail = detail
        return True

    def pending(self) -> List[int]:
        return [i for i, it in enumerate(self.items) if not it.finished]

    def failed(self) -> List[int]:
        return [i for i, it in enumerate(self.items) if it.status == "failed"]

    def summary_lines(self) -> List[str]:
        lines: List[str] = []
        for i, it in enumerate(self.items):
            detail = f" | {it.detail}" if it.detail else ""
            lines.append(f"[{i}] {it.status.upper()} :: {it.name}{detail}")
        return lines
