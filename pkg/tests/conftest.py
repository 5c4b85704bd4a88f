"""Shared fixtures and builders for the test suite."""

import sys
import textwrap

import numpy as np
import pytest

from demerge import Checkpoint
from demerge.store import write_checkpoint

#: Tensor-name pool giving a mix of layer-grouped and ungrouped names.
NAME_POOL = (
    "embed.weight",
    "layers.0.attn.weight",
    "layers.0.mlp.weight",
    "layers.1.attn.weight",
    "layers.1.mlp.weight",
    "layers.2.attn.weight",
    "layers.10.attn.weight",
    "head.weight",
    "norm.bias",
    "scalar.scale",
)


def random_checkpoint(rng, *, kind="model", dtype=np.float32, max_tensors=6,
                      max_elements=512, scale=1.0, include_scalar=False):
    """Small random checkpoint with varied shapes (including scalars)."""
    count = int(rng.integers(1, max_tensors + 1))
    names = [str(n) for n in rng.choice(NAME_POOL, size=count, replace=False)]
    ckpt = Checkpoint(kind)
    for i, name in enumerate(names):
        if include_scalar and i == 0:
            shape = ()
        else:
            ndim = int(rng.integers(1, 3))
            shape = tuple(int(rng.integers(1, int(max_elements ** (1 / ndim)) + 1))
                          for _ in range(ndim))
        values = (rng.standard_normal(shape) * scale).astype(dtype)
        ckpt.add(name, values)
    return ckpt


def perturbed(base, rng, *, scale=0.1):
    """A compatible checkpoint near ``base`` (same names/dtypes/shapes)."""
    out = Checkpoint(base.kind)
    for name in base.names():
        arr = base.get(name)
        noise = (rng.standard_normal(arr.shape) * scale).astype(arr.dtype)
        out.add(name, arr + noise)
    return out


def checkpoint_file(ckpt, path):
    write_checkpoint(ckpt, path)
    return path


# A quadratic stub evaluator that speaks the subprocess protocol using only
# the standard library: it decodes the candidate container directly, reads
# the float64 tensor named "w", and reports one squared-error loss per
# label. argv: stub.py SPEC_JSON COUNT_FILE CANDIDATE_PATH (the candidate
# path is appended by the search runner). Every invocation appends one
# line to COUNT_FILE.
STUB_SOURCE = textwrap.dedent('''
    import json
    import struct
    import sys

    spec = json.loads(open(sys.argv[1], encoding="utf-8").read())
    with open(sys.argv[2], "a", encoding="utf-8") as fh:
        fh.write("call\\n")
    candidate = sys.argv[3]

    with open(candidate, "rb") as fh:
        raw = fh.read()
    magic, version, header_len = struct.unpack_from("<8sIQ", raw, 0)
    assert magic == b"DEMCKPT\\x00" and version == 1
    header = json.loads(raw[20:20 + header_len].decode("utf-8"))
    entry = next(t for t in header["tensors"] if t["name"] == "w")
    start = 20 + header_len + entry["offset"]
    count = entry["length"] // 8
    values = struct.unpack_from("<%dd" % count, raw, start)

    labels = spec["labels"]
    targets = spec["targets"]
    losses = {label: (values[i] - targets[i]) ** 2
              for i, label in enumerate(labels)}
    print(json.dumps({"losses": losses}))
''').strip()


@pytest.fixture
def quadratic_evaluator(tmp_path):
    """Factory for subprocess stub evaluators with planted target weights.

    Returns (command, count_file) where command is the evaluator argv
    prefix and count_file accrues one line per invocation.
    """

    def make(labels, targets, name="stub"):
        import json

        stub = tmp_path / f"{name}.py"
        stub.write_text(STUB_SOURCE, encoding="utf-8")
        spec = tmp_path / f"{name}_spec.json"
        spec.write_text(json.dumps({"labels": list(labels),
                                    "targets": list(targets)}),
                        encoding="utf-8")
        count = tmp_path / f"{name}_count.txt"
        count.write_text("", encoding="utf-8")
        command = [sys.executable, str(stub), str(spec), str(count)]
        return command, count

    return make


def onehot_search_setup(tmp_path, labels, dtype=np.float64):
    """Base plus one-hot deltas so a composed candidate's tensor "w" holds
    exactly the trial's weights (index i <-> labels[i])."""
    n = len(labels)
    base = Checkpoint("model")
    base.add("w", np.zeros(n, dtype=dtype))
    base_path = checkpoint_file(base, tmp_path / "search_base.demckpt")
    dv_paths = {}
    for i, label in enumerate(labels):
        dv = Checkpoint("delta")
        unit = np.zeros(n, dtype=dtype)
        unit[i] = 1.0
        dv.add("w", unit)
        dv_paths[label] = checkpoint_file(dv, tmp_path / f"dv_{label}.demckpt")
    return base_path, dv_paths
