import csv

import numpy as np
import pytest

from xaiagree import model as mlp

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_mlp(rng, K, hidden=(16, 8), scale=1.0):
    """Rectifier net with random weights and biases (biases nonzero on purpose)."""
    dims = [K, *hidden, 1]
    weights = [scale * rng.standard_normal((o, i)) / np.sqrt(i) for i, o in zip(dims[:-1], dims[1:])]
    biases = [0.3 * rng.standard_normal(o) for o in dims[1:]]
    return mlp.MLPParams(weights, biases)


def linear_model(w, b=0.0):
    """No hidden layers: logit = w.x + b."""
    w = np.asarray(w, dtype=float)
    return mlp.MLPParams([w[None, :]], [np.array([b])])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# Level sets and class counts of the public xAPI-Edu-Data file (480 rows:
# 142 high, 211 medium, 127 low).
XAPI_LEVELS = {
    "gender": ["M", "F"],
    "NationalITy": ["KW", "Jordan", "Iraq", "lebanon", "SaudiArabia"],
    "PlaceofBirth": ["KuwaIT", "Jordan", "Iraq", "lebanon", "SaudiArabia"],
    "StageID": ["lowerlevel", "MiddleSchool", "HighSchool"],
    "GradeID": ["G-02", "G-04", "G-07", "G-08"],
    "SectionID": ["A", "B", "C"],
    "Topic": ["IT", "Math", "Arabic", "Science", "English"],
    "Semester": ["F", "S"],
    "Relation": ["Father", "Mum"],
    "ParentAnsweringSurvey": ["Yes", "No"],
    "ParentschoolSatisfaction": ["Good", "Bad"],
    "StudentAbsenceDays": ["Under-7", "Above-7"],
}
XAPI_NUMERIC = ("raisedhands", "VisITedResources", "AnnouncementsView", "Discussion")
XAPI_CLASS_COUNTS = {"H": 142, "M": 211, "L": 127}


def write_xapi_like(path, seed=0, class_counts=XAPI_CLASS_COUNTS):
    """Schema-faithful stand-in for the xAPI file with informative columns."""
    from xaiagree.dataset import AMRIEH_COLUMNS

    rng = np.random.default_rng(seed)
    labels = [c for c, n in class_counts.items() for _ in range(n)]
    rng.shuffle(labels)
    level = {"H": 2, "M": 1, "L": 0}
    level = {c: level.get(c, 1) for c in class_counts}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AMRIEH_COLUMNS)
        for i, cls in enumerate(labels):
            row = []
            for col in AMRIEH_COLUMNS:
                if col == "Class":
                    row.append(cls)
                elif col in XAPI_NUMERIC:
                    row.append(int(np.clip(rng.normal(20 + 30 * level[cls], 15), 0, 100)))
                elif col == "StudentAbsenceDays":
                    p = 0.15 + 0.35 * (2 - level[cls])
                    row.append("Above-7" if rng.random() < p else "Under-7")
                else:
                    levels = XAPI_LEVELS[col]
                    # every level appears at least once
                    row.append(levels[i % len(levels)] if i < len(levels) else
                               levels[rng.integers(len(levels))])
            w.writerow(row)
    return path
