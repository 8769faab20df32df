import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hfmort.cohort import SignalTerm, SynthesisSpec, load_schema, synthesize  # noqa: E402
from hfmort.pipeline import default_config_dict  # noqa: E402


@pytest.fixture(scope="session")
def schema():
    return load_schema()


def planted_signal():
    return tuple(SignalTerm.from_obj(t) for t in default_config_dict()["data"]["synthesis"]["signal"])


def strongest_terms(k, monotone_only=False):
    """Names of the k planted terms with the largest log-odds variance under a standard normal."""
    from scipy.stats import norm

    z = norm.ppf((np.arange(200_000) + 0.5) / 200_000)
    terms = [t for t in planted_signal() if t.monotone_sign or not monotone_only]
    terms.sort(key=lambda t: -float(np.var(t.evaluate(z))))
    return [t.feature for t in terms[:k]]


def planted_cohort(seed=42, n=1177, missing_rate=0.02):
    s = default_config_dict()["data"]["synthesis"]
    return synthesize(SynthesisSpec(load_schema(), n, s["outcome_rate"], planted_signal(), missing_rate, seed=seed))


@pytest.fixture(scope="session")
def planted():
    return planted_cohort()


@pytest.fixture(scope="session")
def planted_prepared(planted):
    from hfmort.preprocess import PreprocessConfig, oversample, prepare

    prep = prepare(planted, PreprocessConfig(), split_seed=42)
    balanced, _ = oversample(prep.train, seed=42)
    return prep, balanced


def small_config(tmp_path, **over):
    """A fast configuration for end-to-end plumbing tests."""
    d = default_config_dict()
    d["data"]["synthesis"]["n"] = 300
    d["data"]["synthesis"]["outcome_rate"] = 0.25
    d["models"] = {
        "boosted_trees": {"n_trees": [10, 20], "max_depth": [2], "learning_rate": [0.3]},
        "random_forest": {"n_trees": [8], "max_depth": [6]},
        "logistic_regression": {"strength": [0.1]},
        "lasso": {"strength": [0.01]},
        "knn": {"k": [5]},
    }
    d["eval"] = {"folds": 3, "n_resamples": 40, "alpha": 0.05, "threshold": 0.5}
    d["ablation"] = {"candidate_sets": [[], ["Heart_rate"]], "all_families": False}
    d["out"] = str(tmp_path / "run")
    d.update(over)
    return d


def rng(seed=0):
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
