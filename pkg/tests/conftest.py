import pytest

from pac_causality.abstract_check import AbstractPacQuery
from pac_causality.abstraction import abstract
from pac_causality.concrete import PacQuery
from pac_causality.data import load_example
from pac_causality.predicates import parse_predicate, parse_predicate_set


CART_EFFECT = "pos < 0.6 && halt"
CART_PREDICATES = "vel>=0.03;pos>=0.6;pos>=0.4;pos>=0.3"


@pytest.fixture
def cart():
    return load_example("cart")


@pytest.fixture
def relay():
    return load_example("relay")


@pytest.fixture
def cart_effect():
    return parse_predicate(CART_EFFECT)


@pytest.fixture
def cart_predicates():
    return parse_predicate_set(CART_PREDICATES)


@pytest.fixture
def cart_query(cart, cart_effect):
    return PacQuery(model=cart, effect=cart_effect)


@pytest.fixture
def coarse(cart, cart_predicates):
    """
    The coarse abstraction of the cart chain: six abstract states.

    """
    return abstract(cart, cart_predicates)


@pytest.fixture
def coarse_query(coarse, cart_effect):
    return AbstractPacQuery(abstraction=coarse, effect=cart_effect)
