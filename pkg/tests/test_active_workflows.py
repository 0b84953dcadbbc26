import pytest
from speedwagon_clickgraph import active_workflows


@pytest.mark.parametrize(
    "expected_workflow",
    [
        "Build Click Graphs",
        "Describe Click Log",
        "Evaluate GraphCM",
        "Fit PGM Click Models",
        "Generate Synthetic Click Log",
        "GraphCM Ablation Study",
        "Train GraphCM",
    ]
)
def test_registered_workflows(expected_workflow):
    assert expected_workflow in active_workflows.registered_workflows()
