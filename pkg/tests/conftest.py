import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from causalrag.graph import CausalGraph, EdgeStatus, Provenance, Variable, VariableKind


def make_graph(var_specs, accepted=()):
    """var_specs: list of (id, kind); accepted: list of (src, dst)."""
    g = CausalGraph()
    for var_id, kind in var_specs:
        g.add_variable(Variable(id=var_id, kind=VariableKind(kind), label=var_id))
    for src, dst in accepted:
        g.set_edge_status(src, dst, EdgeStatus.ACCEPTED, Provenance.MANUAL_DECISION)
    return g


@pytest.fixture
def chain_graph():
    """The canonical image -> finding -> diagnosis chain."""
    return make_graph(
        [("v_i", "ImageFeature"), ("v_f", "Finding"), ("v_d", "Diagnosis")],
        accepted=[("v_i", "v_f"), ("v_f", "v_d")],
    )
