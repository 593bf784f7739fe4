import numpy as np
import pytest

from gansearch.genome import discriminator_space, generator_space
from gansearch.supernet import backward, forward


@pytest.fixture(scope="session")
def small_spaces():
    return generator_space(noise_dim=3, io_dims=(2, 4, 8, 16)), discriminator_space(io_dims=(16, 8, 4, 2))


def _relu_pattern(net, genome, x):
    _, tape = forward(net, genome, x)
    return np.concatenate([(r.a > 0).ravel() for r in tape.records if r.activation == "relu"] or [np.zeros(0, bool)])


def finite_difference_check(net, genome, x, rng, eps=1e-5, per_block=6):
    """Worst per-block relative error of backward against central differences.

    Checks a random subset of entries of every returned block plus the input
    gradient.  Central differences are only a valid reference where the loss
    is smooth on [v - eps, v + eps]; an entry whose perturbation flips the
    sign of any ReLU pre-activation is replaced by another entry of the same
    block.  Returns (worst error, grads, number of replaced entries).
    """
    out, tape = forward(net, genome, x)
    proj = rng.standard_normal(out.shape)
    grads = backward(tape, proj)
    skipped = 0

    def probe(flat, x_of):
        """Central difference at each admissible entry of ``flat``, in random order."""
        nonlocal skipped
        idx, num = [], []
        for i in rng.permutation(flat.size):
            old = flat[i]
            flat[i] = old + eps
            xu = x_of()
            up, pu = float((forward(net, genome, xu)[0] * proj).sum()), _relu_pattern(net, genome, xu)
            flat[i] = old - eps
            xd = x_of()
            down, pd = float((forward(net, genome, xd)[0] * proj).sum()), _relu_pattern(net, genome, xd)
            flat[i] = old
            if not np.array_equal(pu, pd):
                skipped += 1
                continue
            idx.append(i)
            num.append((up - down) / (2 * eps))
            if len(idx) == per_block:
                break
        return np.array(idx, dtype=int), np.array(num)

    worst = 0.0
    for key, blocks in grads.items():
        for name, g in blocks.items():
            idx, num = probe(net.params[key][name].reshape(-1), lambda: x)
            worst = max(worst, _rel(g.reshape(-1)[idx], num))
    xi = x.copy().reshape(-1)
    idx, num = probe(xi, lambda: xi.reshape(x.shape).copy())
    worst = max(worst, _rel(tape.input_grad.reshape(-1)[idx], num))
    return worst, grads, skipped


def _rel(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-9:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


# Filled by tests/test_acceptance.py and echoed at the end of the run.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
