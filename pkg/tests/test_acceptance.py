"""Acceptance gate: every stated criterion at its stated tolerance.

The full battery runs once per session through run_acceptance; each criterion
then gets its own pass/fail test line.  The last test reruns the CLI verifier
in two subprocesses with different worker counts and byte-compares the
reports, which is the external form of the determinism criterion.
"""

import json
import os
import subprocess
import sys

import pytest

from exitrate.verify import DEFAULT_SEED, run_acceptance

N_CRITERIA = 15


@pytest.fixture(scope="session")
def acceptance(tmp_path_factory):
    out = tmp_path_factory.mktemp("verify")
    report = run_acceptance(seed=DEFAULT_SEED, out_dir=str(out), echo=False)
    return report, out


def _entry(report: dict, cid: int) -> dict:
    for ent in report["criteria"]:
        if ent["id"] == cid:
            return ent
    raise KeyError(f"criterion {cid} missing from the report")


@pytest.mark.parametrize("cid", range(1, N_CRITERIA + 1))
def test_criterion(acceptance, cid):
    report, _ = acceptance
    ent = _entry(report, cid)
    status = "PASS" if ent["passed"] else "FAIL"
    print(f"criterion {cid:02d}: {status}  {ent['title']}")
    if not ent["passed"]:
        print("measured:", json.dumps(ent["measured"], sort_keys=True, default=str))
        print("required:", json.dumps(ent["required"], sort_keys=True, default=str))
    assert ent["passed"], f"criterion {cid:02d} failed: {ent['title']}"


def test_every_criterion_is_present_and_all_passed(acceptance):
    report, out = acceptance
    assert [ent["id"] for ent in report["criteria"]] == list(range(1, N_CRITERIA + 1))
    assert report["all_passed"]
    on_disk = json.loads((out / "verify_report.json").read_text())
    assert on_disk["all_passed"]
    assert on_disk["seed"] == DEFAULT_SEED


def test_cli_verifier_is_worker_count_invariant(tmp_path):
    # Two full verifier subprocesses, single-threaded and eight-threaded,
    # must write byte-identical reports.
    blobs = []
    for workers in ("1", "8"):
        out = tmp_path / f"w{workers}"
        env = dict(os.environ, EXITRATE_THREADS=workers)
        proc = subprocess.run(
            [sys.executable, "-m", "exitrate.cli", "verify", "--out", str(out)],
            env=env,
            capture_output=True,
            text=True,
            timeout=1200,
        )
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "all criteria passed" in proc.stdout
        blobs.append((out / "verify_report.json").read_bytes())
    assert blobs[0] == blobs[1]
