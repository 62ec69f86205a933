"""Endorsement policy expressions.

Policies are boolean trees over org atoms with AND / OR / OUTOF(k)
combinators plus a `submitter` atom bound at evaluation time. The text
form is an s-expression, e.g. "(and gov (submitter))" or
"(outof 2 hosp-a hosp-b hosp-c)".
"""

from dataclasses import dataclass
from typing import Union


class PolicyError(Exception):
    pass


@dataclass(frozen=True)
class OrgAtom:
    org_id: str


@dataclass(frozen=True)
class SubmitterAtom:
    pass


@dataclass(frozen=True)
class And:
    children: tuple["PolicyExpr", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["PolicyExpr", ...]


@dataclass(frozen=True)
class OutOf:
    k: int
    children: tuple["PolicyExpr", ...]


PolicyExpr = Union[OrgAtom, SubmitterAtom, And, Or, OutOf]


def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _parse(tokens: list[str], pos: int) -> tuple[PolicyExpr, int]:
    if pos >= len(tokens):
        raise PolicyError("unexpected end of policy expression")
    tok = tokens[pos]
    if tok == ")":
        raise PolicyError("unexpected ')'")
    if tok != "(":
        if tok.lower() == "submitter":
            return SubmitterAtom(), pos + 1
        return OrgAtom(tok), pos + 1
    if pos + 1 >= len(tokens):
        raise PolicyError("unterminated '('")
    head = tokens[pos + 1].lower()
    if head == "submitter":
        if tokens[pos + 2 : pos + 3] != [")"]:
            raise PolicyError("(submitter) takes no arguments")
        return SubmitterAtom(), pos + 3
    children: list[PolicyExpr] = []
    k = None
    pos += 2
    if head == "outof":
        if pos >= len(tokens):
            raise PolicyError("outof requires a count")
        try:
            k = int(tokens[pos])
        except ValueError:
            raise PolicyError("outof count must be an integer") from None
        pos += 1
    while pos < len(tokens) and tokens[pos] != ")":
        child, pos = _parse(tokens, pos)
        children.append(child)
    if pos >= len(tokens):
        raise PolicyError("unterminated '('")
    pos += 1  # consume ')'
    if not children:
        raise PolicyError(f"{head} requires at least one operand")
    if head == "and":
        return And(tuple(children)), pos
    if head == "or":
        return Or(tuple(children)), pos
    if head == "outof":
        assert k is not None
        if k < 1 or k > len(children):
            raise PolicyError(f"outof count {k} out of range for {len(children)} operands")
        return OutOf(k, tuple(children)), pos
    raise PolicyError(f"unknown policy operator {head!r}")


def parse_policy(text: str) -> PolicyExpr:
    tokens = _tokenize(text)
    if not tokens:
        raise PolicyError("empty policy expression")
    expr, pos = _parse(tokens, 0)
    if pos != len(tokens):
        raise PolicyError("trailing tokens in policy expression")
    return expr


def policy_to_text(expr: PolicyExpr) -> str:
    if isinstance(expr, OrgAtom):
        return expr.org_id
    if isinstance(expr, SubmitterAtom):
        return "(submitter)"
    if isinstance(expr, And):
        return "(and " + " ".join(policy_to_text(c) for c in expr.children) + ")"
    if isinstance(expr, Or):
        return "(or " + " ".join(policy_to_text(c) for c in expr.children) + ")"
    if isinstance(expr, OutOf):
        return f"(outof {expr.k} " + " ".join(policy_to_text(c) for c in expr.children) + ")"
    raise TypeError(f"not a policy expression: {expr!r}")


def evaluate_policy(expr: PolicyExpr, endorsing_orgs: set[str], submitter_org: str) -> bool:
    """Boolean evaluation with the submitter atom bound to submitter_org."""
    if isinstance(expr, OrgAtom):
        return expr.org_id in endorsing_orgs
    if isinstance(expr, SubmitterAtom):
        return submitter_org in endorsing_orgs
    if isinstance(expr, And):
        return all(evaluate_policy(c, endorsing_orgs, submitter_org) for c in expr.children)
    if isinstance(expr, Or):
        return any(evaluate_policy(c, endorsing_orgs, submitter_org) for c in expr.children)
    if isinstance(expr, OutOf):
        hits = sum(evaluate_policy(c, endorsing_orgs, submitter_org) for c in expr.children)
        return hits >= expr.k
    raise TypeError(f"not a policy expression: {expr!r}")


def referenced_orgs(expr: PolicyExpr) -> set[str]:
    if isinstance(expr, OrgAtom):
        return {expr.org_id}
    if isinstance(expr, SubmitterAtom):
        return set()
    return set().union(*(referenced_orgs(c) for c in expr.children))


def mentions_org(expr: PolicyExpr, org_id: str) -> bool:
    return org_id in referenced_orgs(expr)
