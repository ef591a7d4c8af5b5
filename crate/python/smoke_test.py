"""Smoke test for the mpst_py extension.

Build first:  cargo build -p mpst-py --release
Then:         python3 python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import json
import pathlib
import sys


def load():
    try:
        import mpst_py

        return mpst_py
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parent.parent
    for profile in ("release", "debug"):
        lib = root / "target" / profile / "libmpst_py.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("mpst_py", str(lib))
            spec = importlib.util.spec_from_loader("mpst_py", loader)
            mod = importlib.util.module_from_spec(spec)
            loader.exec_module(mod)
            return mod
    sys.exit("mpst_py not found; run `cargo build -p mpst-py --release`")


def main():
    m = load()

    assert m.normal_form("end") == "end"
    t = m.project_role("(pi n : nat. foreach i < n { W[i + 1] -> W[i] : nat }) @ 2", "W[1]")
    assert t == "?<W[2], nat>; !<W[0], nat>; end", t

    src = m.example_source("sequence", {"n": "2"})
    assert "proc Main" in src
    doc = json.loads(m.to_json(src))
    assert doc["v"] == 1

    code, out, _ = m.run(["typecheck", "-"], src)
    assert code == 0, out

    report = json.loads(m.simulate_example("fft", {"n": "2"}, seed=7))
    assert report["verdict"] == "done"
    assert len(report["outputs"]) == 4

    code, _, err = m.run(["no-such-command"])
    assert code == 3 and err

    try:
        m.pretty("global G = A ->")
    except ValueError:
        pass
    else:
        raise AssertionError("parse error not raised")

    print("smoke test passed")


if __name__ == "__main__":
    main()
