"""Builds the extension, imports it and runs a short end-to-end pass."""

import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build():
    env = dict(os.environ, PYO3_BUILD_EXTENSION_MODULE="1")
    subprocess.run(
        ["cargo", "build", "--release", "-p", "signseg-py"], cwd=ROOT, env=env, check=True
    )
    lib = os.path.join(ROOT, "target", "release", "libsignseg_py.so")
    out = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(out, "signseg_py.so"))
    sys.path.insert(0, out)
    return out


def main():
    build()
    import signseg_py as sp

    assert len(sp.positional_encoding(0, 16)) == 16
    assert abs(sp.lr_at_epoch(25) - 0.005 / 100) < 1e-15

    hand = [[0.0, 0.0, 0.0]] + [[k * 0.1, 0.2, -0.1 * k] for k in range(1, 21)]
    norm = sp.normalize_frame([hand])
    assert len(norm) == 60
    assert abs(max(sum(v * v for v in norm[i:i + 3]) for i in range(0, 60, 3)) - 1.0) < 1e-9

    decoded = sp.post_process([[0.9, 0.1], [0.4, 0.6], [0.5, 0.5], [0.2, 0.8]])
    assert [d[0] for d in decoded] == [0, 1], decoded

    try:
        sp.resample_sequence([], 5)
    except sp.SignsegError:
        pass
    else:
        raise AssertionError("expected SignsegError")

    data = sp.make_dataset(3, classes=3, per_class=12, dim=6, window=10)
    train = [s for i, s in enumerate(data) if i % 6]
    val = [s for i, s in enumerate(data) if i % 6 == 0]
    model = sp.Model(6, 3, layers=1, heads=2, d_model=16, d_ff=32, window=10, seed=1)
    history = model.train(train, val, max_epochs=25)
    best = max(h["val_accuracy"] for h in history)
    print(f"trained {len(history)} epochs, best val accuracy {best:.2f}, {model.num_parameters} params")
    assert best >= 0.8

    path = os.path.join(tempfile.mkdtemp(), "model.bin")
    model.save(path)
    again = sp.Model.load(path)
    assert again.config == model.config
    stream = data[0][0] + data[15][0] + data[30][0]
    labels = again.segment(stream, threshold=0.51)
    print(f"decoded stream labels {[l[0] for l in labels]} (truth [0, 1, 2])")
    assert model.gradient_check(data[0][0][:10], 0) < 1e-3
    print("ok")


if __name__ == "__main__":
    main()
