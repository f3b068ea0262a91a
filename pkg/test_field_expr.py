"""
Tests for field_expr.py - parsing, printing and evaluation of field expressions
"""
import numpy as np
import pytest

from errors import ConfigError, ExprSyntaxError, UnknownIdentifierError
from field_expr import (
    BinOp,
    Call,
    Neg,
    Num,
    Var,
    evaluate_expr,
    format_field_expr,
    parse_field_expr,
    tokenize,
    variables_of,
)


def roundtrip(text: str):
    """Parse, print and parse again"""
    tree = parse_field_expr(text)
    return tree, parse_field_expr(format_field_expr(tree))


class TestParsing:
    """Tree shapes and precedence"""

    def test_simple_product(self):
        """Function calls multiply left to right"""
        tree = parse_field_expr("sin(x)*cos(y)")
        assert tree == BinOp("*", Call("sin", Var("x")), Call("cos", Var("y")))

    def test_power_binds_tighter_than_unary_minus(self):
        """-x^2 is -(x^2)"""
        assert parse_field_expr("-x^2") == Neg(BinOp("^", Var("x"), Num(2.0)))

    def test_power_is_right_associative(self):
        """2^3^2 is 2^(3^2)"""
        tree = parse_field_expr("2^3^2")
        assert tree == BinOp("^", Num(2.0), BinOp("^", Num(3.0), Num(2.0)))
        assert evaluate_expr(tree, {}) == 512.0

    def test_subtraction_is_left_associative(self):
        """x - y - z groups to the left"""
        tree = parse_field_expr("x - y - z")
        assert tree == BinOp("-", BinOp("-", Var("x"), Var("y")), Var("z"))

    def test_scientific_numbers(self):
        """Numbers in exponent notation"""
        assert parse_field_expr("1.5e-3") == Num(1.5e-3)
        assert parse_field_expr(".5") == Num(0.5)

    def test_variables_of(self):
        """Variables read by a tree"""
        assert variables_of(parse_field_expr("exp(t)*x + 3")) == {"t", "x"}
        assert variables_of(parse_field_expr("2")) == set()

    def test_tokens_carry_positions(self):
        """Every token records where it starts"""
        tokens = tokenize("x + sin(y)")
        assert [pos for _, _, pos in tokens] == [0, 2, 4, 7, 8, 9, 10]


class TestErrors:
    """Malformed input reports a position"""

    def test_unclosed_call(self):
        """sin( fails at the end of input"""
        with pytest.raises(ExprSyntaxError) as info:
            parse_field_expr("sin(")
        assert info.value.position == 4

    def test_unknown_identifier(self):
        """Identifiers outside the grammar"""
        with pytest.raises(UnknownIdentifierError) as info:
            parse_field_expr("x + w")
        assert info.value.name == "w"
        assert info.value.position == 4

    def test_bad_character(self):
        """Characters that start no token"""
        with pytest.raises(ExprSyntaxError) as info:
            parse_field_expr("x $ y")
        assert info.value.position == 2

    def test_trailing_tokens(self):
        """A complete expression followed by more input"""
        with pytest.raises(ExprSyntaxError):
            parse_field_expr("x y")

    def test_empty(self):
        """Blank text is rejected"""
        with pytest.raises(ExprSyntaxError):
            parse_field_expr("   ")

    def test_errors_are_config_errors(self):
        """Scenario loading maps both to exit code 2"""
        assert issubclass(ExprSyntaxError, ConfigError)
        assert issubclass(UnknownIdentifierError, ConfigError)


class TestPrinting:
    """format_field_expr re-parses to the same tree"""

    @pytest.mark.parametrize("text", [
        "sin(x)*cos(y)",
        "-x^2",
        "(-x)^2",
        "x - (y - z)",
        "x / (y * z)",
        "2^3^2",
        "(2^3)^2",
        "-(x + y) * exp(-t)",
        "tanh(x - -y)",
    ])
    def test_roundtrip(self, text):
        """Parse, print, parse"""
        first, second = roundtrip(text)
        assert first == second

    def test_minimal_parentheses(self):
        """No parentheses where precedence already groups"""
        assert format_field_expr(parse_field_expr("(x*y)+z")) == "x * y + z"


class TestEvaluation:
    """numpy-vectorized evaluation"""

    def test_broadcasts_over_arrays(self):
        """Array variables give array results"""
        x = np.linspace(-1.0, 1.0, 5)
        value = evaluate_expr(parse_field_expr("x^2 - 1"), {"x": x})
        assert np.allclose(value, x ** 2 - 1)

    def test_scalar_time(self):
        """t is a scalar next to array coordinates"""
        x = np.array([0.0, 1.0])
        value = evaluate_expr(parse_field_expr("exp(t)*x"), {"x": x, "t": 1.0})
        assert np.allclose(value, [0.0, np.e])

    def test_missing_variable(self):
        """Evaluating z in a 2D environment"""
        with pytest.raises(UnknownIdentifierError):
            evaluate_expr(parse_field_expr("z"), {"x": 0.0, "y": 0.0})
