"""Smoke test for the frakra Python module.

Builds the extension with cargo when FRAKRA_PY_LIB is not set, copies it
next to a temporary `frakra` module name and exercises a few calls.
"""

import importlib.util
import math
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_library() -> Path:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "frakra-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target")) / "release"
    for name in ("libfrakra_py.so", "libfrakra_py.dylib", "frakra_py.dll"):
        if (target / name).exists():
            return target / name
    sys.exit(f"built library not found in {target}")


def load(lib: Path):
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    tmp = Path(tempfile.mkdtemp())
    dest = tmp / f"frakra{suffix}"
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("frakra", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main() -> None:
    lib = Path(os.environ["FRAKRA_PY_LIB"]) if "FRAKRA_PY_LIB" in os.environ else build_library()
    fk = load(lib)

    c = fk.constants(0.5, 2.0)
    assert abs(c["beta"] - 1 / (2 * math.pi)) < 1e-15, c["beta"]
    assert abs(c["gamma"] - 4 * math.pi) < 1e-12, c["gamma"]

    a = fk.asymmetry("ellipse:a=0.6,b=0.3", resolution=48)
    assert 0.2 < a < 0.5, a

    lam, u = fk.eigen("disk:radius=0.5", 0.5, 2.0, resolution=32)
    assert lam > 0 and len(u) == 32 * 32 and min(u) >= 0.0

    t = fk.torsion("disk:radius=0.5", 0.5, resolution=32)
    lam1, _ = fk.eigen("disk:radius=0.5", 0.5, 1.0, resolution=32)
    assert abs(t * lam1 - 1) < 1e-6, (t, lam1)

    r = fk.verify_fk("ellipse:a=0.6,b=0.3", 0.5, 2.0, resolution=32, level_scan=False)
    assert r["deficit"] > 0 and r["margin"] > 0, r["deficit"]

    try:
        fk.constants(1.2)
    except ValueError as e:
        assert "0 < s < 1" in str(e)
    else:
        raise AssertionError("s = 1.2 accepted")

    print(f"frakra {fk.__version__}: smoke test passed (lambda_disk = {lam:.17g})")


if __name__ == "__main__":
    main()
