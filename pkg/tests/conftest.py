import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
ROOT = HERE.parent

for extra in (HERE, ROOT / "tools"):
    if str(extra) not in sys.path:
        sys.path.insert(0, str(extra))
