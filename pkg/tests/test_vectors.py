import subprocess
import sys

import pytest

import vector_oracle as oracle
from vectors_support import VECTORS_PATH, load_vectors, package_checks

VECTORS = load_vectors()


@pytest.mark.parametrize("name,ok,detail", list(package_checks(VECTORS)), ids=lambda v: v if isinstance(v, str) else "")
def test_package_matches_frozen(name, ok, detail):
    assert ok, f"{name}: {detail}"


@pytest.mark.parametrize("name,ok,detail", list(oracle.check(VECTORS)), ids=lambda v: v if isinstance(v, str) else "")
def test_oracle_matches_frozen(name, ok, detail):
    assert ok, f"{name}: {detail}"


def test_vector_shape():
    assert [len(c["txs"]) for c in VECTORS["merkle"]] == [1, 2, 3, 4]
    assert len(VECTORS["chain"]["export"]) == 3


def test_oracle_detects_edited_export():
    chain = VECTORS["chain"]
    keys = {p: bytes.fromhex(k) for p, k in VECTORS["public_keys"].items()}
    lines = list(chain["export"])
    line = lines[2]
    lines[2] = line[:200] + ("0" if line[200] != "0" else "1") + line[201:]
    assert oracle.verify_chain(lines, keys, sorted(chain["validators"]), chain["f"]) != "Valid"


def test_oracle_script_runs():
    proc = subprocess.run([sys.executable, str(VECTORS_PATH.parents[2] / "tools" / "vector_oracle.py"),
                           str(VECTORS_PATH)], capture_output=True, text=True)
    assert proc.returncode == 0 and "FAIL" not in proc.stdout
