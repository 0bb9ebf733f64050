import re
from types import SimpleNamespace

import numpy as np
import pytest

from resphys.errors import FitError
from resphys.fitting import dataset
from resphys.fitting.jobs import JobItem, JobList


def test_job_list_basic_flow():
    jobs = JobList()

    # Initially empty
    assert jobs.pending() == []
    assert jobs.summary_lines() == []

    idx0 = jobs.add("oscillate_00")
    idx1 = jobs.add("oscillate_01")
    assert (idx0, idx1) == (0, 1)
    assert jobs.pending() == [0, 1]

    ok = jobs.mark_done(idx0, "mean fit loss 1.2e-12")
    assert ok
    assert jobs.items[0].status == "done"
    assert jobs.items[0].finished
    assert jobs.pending() == [1]

    lines = jobs.summary_lines()
    assert re.match(r"^\[0\] DONE :: oscillate_00 \| mean fit loss .+$", lines[0])
    assert lines[1] == "[1] PENDING :: oscillate_01"


def test_failed_jobs_are_tracked():
    jobs = JobList()
    for name in ("a", "b", "c"):
        jobs.add(name)
    jobs.mark_failed(1, "FitError: forward step diverges")
    jobs.mark_done(0, "ok")
    assert jobs.failed() == [1]
    assert jobs.pending() == [2]
    assert jobs.summary_lines()[1] == "[1] FAILED :: b | FitError: forward step diverges"


def test_mark_invalid_index():
    jobs = JobList()
    jobs.add("only")

    # Invalid indices should return False
    assert jobs.mark_done(-1, "x") is False
    assert jobs.mark_failed(1, "y") is False
    assert jobs.pending() == [0]


def test_job_lists_are_independent():
    a, b = JobList(), JobList()
    a.add("x")
    assert b.items == []


def test_job_item_defaults():
    item = JobItem(name="grid_0")
    assert item.status == "pending"
    assert item.detail is None
    assert not item.finished


def test_run_jobs_reports_failed_and_unfinished(monkeypatch, caplog):
    """
    Serial fit jobs where the second one fails:
    - the error names the trajectory
    - the summary names the failed job and counts the ones never started
    """
    def fake_fit(job):
        if job.name == "b":
            raise FitError("forward step diverges", timestep=3)
        return SimpleNamespace(fit_loss=np.zeros(2))

    monkeypatch.setattr(dataset, "run_fit_job", fake_fit)
    jobs = [SimpleNamespace(name=name) for name in ("a", "b", "c")]
    with caplog.at_level("INFO", logger="resphys.fitting.dataset"):
        with pytest.raises(FitError, match="trajectory b"):
            dataset.run_jobs(jobs, workers=1)
    print(caplog.text)
    assert "[0] DONE :: a" in caplog.text
    assert "[1] FAILED :: b" in caplog.text
    assert "fit jobs failed: b (1 not finished)" in caplog.text
