"""Full-architecture gradient verification glue.

Compares the engine's backward pass against the plain-numpy
cached-prefix central differences from ``oracles``. Coordinates whose
relative error exceeds tolerance are only excused when a +/-h nudge
provably flips a relu sign or a pooling argmax (the loss is locally
non-smooth there, so a central difference says nothing); any other
mismatch is a genuine failure.
"""

from __future__ import annotations

import numpy as np

from adda.models import Classifier, Discriminator, Encoder
from adda.tensor import Tensor, backward, sigmoid_bce, softmax_cross_entropy

from oracles import DiscRef, LeNetRef, kink_crossing


def _relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))


def check_encoder_classifier(seed: int = 0, n: int = 2, h: float = 1e-4, tol: float = 1e-4):
    """All 431,080 encoder+classifier parameter gradients vs central
    differences on an n-image batch. Returns (max_ok_err, n_excused, total)."""
    rng = np.random.default_rng(seed)
    enc = Encoder.init(int(rng.integers(1 << 30)), dtype=np.float64)
    cls = Classifier.init(int(rng.integers(1 << 30)), dtype=np.float64)
    x = rng.uniform(-1.0, 1.0, size=(n, 1, 28, 28))
    labels = rng.integers(0, 10, size=n)

    loss = softmax_cross_entropy(cls(enc(Tensor(x, dtype=np.float64))), labels)
    backward(loss)
    analytic = {name: enc[name].grad for name, _ in Encoder.LAYOUT}
    analytic["out.weight"] = cls["fc.weight"].grad
    analytic["out.bias"] = cls["fc.bias"].grad

    params = {name: enc[name].data for name, _ in Encoder.LAYOUT}
    params["out.weight"] = cls["fc.weight"].data
    params["out.bias"] = cls["fc.bias"].data
    ref = LeNetRef(params, x, labels)
    numeric = ref.fd_all(h)
    return _compare(ref, params, analytic, numeric, h, tol)


def check_discriminator(seed: int = 0, n: int = 2, h: float = 1e-4, tol: float = 1e-4):
    """All 501,501 discriminator parameter gradients vs central differences
    through the binary cross-entropy loss."""
    rng = np.random.default_rng(seed)
    disc = Discriminator.init(int(rng.integers(1 << 30)), dtype=np.float64)
    feats = rng.normal(size=(n, 500))
    targets = rng.integers(0, 2, size=n)

    loss = sigmoid_bce(disc(Tensor(feats, dtype=np.float64)), targets)
    backward(loss)
    analytic = {name: disc[name].grad for name, _ in Discriminator.LAYOUT}
    params = {name: disc[name].data for name, _ in Discriminator.LAYOUT}
    ref = DiscRef(params, feats, targets)
    numeric = ref.fd_all(h)
    return _compare(ref, params, analytic, numeric, h, tol)


def _compare(ref, params, analytic, numeric, h, tol):
    max_ok = 0.0
    excused = 0
    total = 0
    for name in numeric:
        rel = _relative_errors(np.asarray(analytic[name]), numeric[name])
        total += rel.size
        bad = np.argwhere(rel >= tol)
        ok = rel < tol
        if ok.any():
            max_ok = max(max_ok, float(rel[ok].max()))
        for idx in map(tuple, bad):
            if not kink_crossing(ref, params, name, idx, h):
                raise AssertionError(
                    f"{name}{idx}: rel err {rel[idx]:.3e} with no kink crossing "
                    f"(analytic {np.asarray(analytic[name])[idx]:.6e}, "
                    f"numeric {numeric[name][idx]:.6e})"
                )
            excused += 1
    return max_ok, excused, total
