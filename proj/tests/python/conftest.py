import csv
import datetime
import json
import random

import pytest

GRAPH = {
    "activities": ["A", "B", "C", "D", "X", "Y"],
    "relations": [
        {"type": "condition", "source": "A", "target": "B"},
        {"type": "condition", "source": "B", "target": "C"},
        {"type": "condition", "source": "B", "target": "X"},
        {"type": "condition", "source": "C", "target": "D"},
        {"type": "condition", "source": "X", "target": "Y"},
        {"type": "response", "source": "B", "target": "D"},
        {"type": "response", "source": "B", "target": "Y"},
        {"type": "exclude", "source": "C", "target": "X"},
        {"type": "exclude", "source": "C", "target": "Y"},
        {"type": "exclude", "source": "X", "target": "C"},
        {"type": "exclude", "source": "X", "target": "D"},
    ],
}


@pytest.fixture(scope="session")
def project(tmp_path_factory):
    root = tmp_path_factory.mktemp("proj")
    rng = random.Random(5)
    clock = datetime.datetime(2022, 3, 1)
    with open(root / "log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "activity", "time", "cost"])
        for i in range(90):
            expensive = rng.random() < 0.6
            acts = ["A", "B", "X", "Y"] if expensive else ["A", "B", "C", "D"]
            for j, a in enumerate(acts):
                cost = rng.gauss(40, 4) if expensive and j >= 2 else rng.gauss(10, 1.5)
                clock += datetime.timedelta(seconds=60 + rng.randint(0, 600))
                w.writerow([f"c{i:03d}", a, clock.strftime("%Y-%m-%d %H:%M:%S"), f"{max(cost, 0):.3f}"])
    (root / "graph.json").write_text(json.dumps(GRAPH))
    config = {
        "log": {"path": "log.csv", "case_column": "case", "activity_column": "activity",
                "timestamp_column": "time", "kpi_column": "cost", "kpi_mode": "explicit-column"},
        "predictor": {"hidden_size": 8, "epochs": 10, "batch_size": 32, "learning_rate": 0.01, "patience": 0},
        "graph": {"path": "graph.json"},
        "recommender": {"k": 5},
        "evaluation": {"k_values": [5], "max_prefix": 3},
        "seed": 2,
    }
    (root / "config.json").write_text(json.dumps(config))
    return root
