from constraints.ast import DEFAULT_APPROX_DELTA, Abs, Cell, ConstraintSystem, Literal, Neg, RelOp, Relation, Term


def format_number(value: float) -> str:
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


def format_term(term: Term) -> str:
    if isinstance(term, Literal):
        return format_number(term.value)
    if isinstance(term, Cell):
        return f"L[{term.ref.i},{term.ref.j}]"
    if isinstance(term, Neg):
        return f"-{format_term(term.term)}"
    if isinstance(term, Abs):
        return f"|{format_term(term.term)}|"
    raise TypeError(f"not a constraint term: {term!r}")


def format_relation(relation: Relation) -> str:
    op = relation.op.value
    if relation.op == RelOp.APPROX and relation.delta != DEFAULT_APPROX_DELTA:
        op = f"~=({format_number(relation.delta)})"
    return f"{format_term(relation.lhs)} {op} {format_term(relation.rhs)}"


def format_system(system: ConstraintSystem) -> str:
    """Canonical text of a constraint system; parsing it gives back the same relations."""
    lines = [f"model {system.model_name}"]
    lines.extend(format_relation(r) for r in system.relations)
    return "\n".join(lines) + "\n"
