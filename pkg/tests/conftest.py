import numpy as np
import pytest

import gradpart as gp

ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_LINES:
        status = "PASS" if passed else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def clean_synthetic() -> gp.Dataset:
    return gp.split(gp.generate_synthetic(0), (0.6, 0.2, 0.2), 0)


@pytest.fixture(scope="session")
def contaminated_synthetic() -> gp.Dataset:
    return gp.split(gp.generate_synthetic(0, contaminate=True), (0.6, 0.2, 0.2), 0)


@pytest.fixture(scope="session")
def linear_erm(clean_synthetic) -> gp.ModelParams:
    arch = gp.Arch("linear", d=2, n_classes=2)
    cfg = gp.TrainConfig(epochs=50, batch_size=128, learning_rate=1e-2, weight_decay=1e-4, seed=0)
    return gp.train_erm(clean_synthetic, arch, cfg)


def random_distance_matrix(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random instance for clustering oracles: points under a random
    metric, or an arbitrary symmetric dissimilarity."""
    kind = rng.integers(3)
    if kind == 0:
        pts = rng.normal(size=(n, rng.integers(1, 4)))
        from gradpart import distance_matrix

        return distance_matrix(pts, metric="euclidean").entries
    if kind == 1:
        pts = rng.normal(size=(n, rng.integers(2, 5)))
        from gradpart import distance_matrix

        return distance_matrix(pts, metric="centered-cosine").entries
    D = rng.uniform(0.0, 2.0, size=(n, n))
    D = (D + D.T) / 2.0
    np.fill_diagonal(D, 0.0)
    return D
