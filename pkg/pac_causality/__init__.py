__version__ = "0.1.0"

from .model import Dtmc, Mdp, parse_model, parse_mdp, serialize_model, serialize_mdp
from .predicates import parse_predicate, parse_predicate_set
from .reach import (
    min_effect_via_cause,
    min_max_eventually,
    max_counterfactual,
    prob_counterfactual,
    prob_effect_via_cause,
    prob_eventually,
    se_holds,
    stutter_system,
)
from .concrete import (
    CauseReport,
    PacQuery,
    Refutation,
    check_cause,
    decode_smt_model,
    discover,
    export_smt,
)
from .abstraction import abstract, enumerate_subgraphs, refine_split
from .abstract_check import (
    AbstractPacQuery,
    check_cause_abs,
    discover_abs,
    export_smt_abs,
)
from .refine import run, select_split_state
