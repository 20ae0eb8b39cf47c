"""Institutions, norms, domain vocabularies and groundings.

An institution is an abstract bundle of roles, acts, artifacts and qualified
norms.  A grounding maps those abstract categories onto the agents, behaviors
and objects of a concrete domain.  Everything here is immutable once built.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

QUALIFIER_ARITY: dict[str, int] = {
    "must": 1,
    "use": 1,
    "mustUse": 1,
    "mustAt": 1,
    "before": 2,
    "equals": 2,
}
_QUALIFIER_LOOKUP = {q.lower(): q for q in QUALIFIER_ARITY}


class InstitutionError(ValueError):
    pass


class ParseError(InstitutionError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class UndeclaredIdentifierError(InstitutionError):
    pass


class ArityError(InstitutionError):
    pass


class UnknownIdentifierError(InstitutionError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


def canonical_qualifier(name: str) -> str:
    try:
        return _QUALIFIER_LOOKUP[name.lower()]
    except KeyError:
        raise InstitutionError(f"unsupported qualifier {name!r}") from None


@dataclass(frozen=True)
class Triple:
    role: str
    act: str
    art: str

    def __iter__(self):
        return iter((self.role, self.act, self.art))

    def __str__(self) -> str:
        return f"({self.role},{self.act},{self.art})"


@dataclass(frozen=True)
class Norm:
    qualifier: str
    triples: tuple[Triple, ...]

    def __post_init__(self):
        q = canonical_qualifier(self.qualifier)
        object.__setattr__(self, "qualifier", q)
        triples = tuple(t if isinstance(t, Triple) else Triple(*t) for t in self.triples)
        object.__setattr__(self, "triples", triples)
        if len(triples) != QUALIFIER_ARITY[q]:
            raise ArityError(
                f"qualifier {q} takes {QUALIFIER_ARITY[q]} triple(s), got {len(triples)}"
            )

    @property
    def roles(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(t.role for t in self.triples))

    def __str__(self) -> str:
        return f"{self.qualifier}({', '.join(map(str, self.triples))})"


@dataclass(frozen=True)
class Institution:
    name: str
    roles: tuple[str, ...]
    acts: tuple[str, ...]
    arts: tuple[str, ...]
    norms: tuple[Norm, ...]

    def __post_init__(self):
        for attr in ("roles", "acts", "arts", "norms"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        for kind in ("roles", "acts", "arts"):
            names = getattr(self, kind)
            if len(set(names)) != len(names):
                raise InstitutionError(f"duplicate identifier in {kind}")
        roles, acts, arts = set(self.roles), set(self.acts), set(self.arts)
        seen = set()
        for norm in self.norms:
            for trp in norm.triples:
                if trp.role not in roles:
                    raise UndeclaredIdentifierError(f"undeclared role {trp.role!r} in {norm}")
                if trp.act not in acts:
                    raise UndeclaredIdentifierError(f"undeclared act {trp.act!r} in {norm}")
                if trp.art not in arts and trp.art not in roles:
                    raise UndeclaredIdentifierError(f"undeclared artifact {trp.art!r} in {norm}")
            if norm in seen:
                raise InstitutionError(f"duplicate norm {norm}")
            seen.add(norm)

    def warnings(self) -> list[str]:
        out = []
        if not self.norms:
            out.append("no norms")
        return out

    def acts_of_role(self, role: str) -> tuple[str, ...]:
        """Acts that appear together with ``role`` in some norm triple, in declaration order."""
        used = {t.act for n in self.norms for t in n.triples if t.role == role}
        return tuple(a for a in self.acts if a in used)

    def fingerprint(self) -> str:
        payload = json.dumps([self.roles, self.acts, self.arts], separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "roles": list(self.roles),
            "acts": list(self.acts),
            "arts": list(self.arts),
            "norms": [
                {"qualifier": n.qualifier, "triples": [list(t) for t in n.triples]}
                for n in self.norms
            ],
        }


@dataclass(frozen=True)
class DomainVocabulary:
    agents: frozenset[str]
    behaviors: frozenset[str]
    objects: frozenset[str]
    capabilities: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "agents", frozenset(self.agents))
        object.__setattr__(self, "behaviors", frozenset(self.behaviors))
        object.__setattr__(self, "objects", frozenset(self.objects))
        caps = {a: frozenset(bs) for a, bs in dict(self.capabilities).items()}
        for agent, bs in caps.items():
            if agent not in self.agents:
                raise UndeclaredIdentifierError(f"capability for undeclared agent {agent!r}")
            unknown = bs - self.behaviors
            if unknown:
                raise UndeclaredIdentifierError(
                    f"agent {agent!r} capable of undeclared behaviors {sorted(unknown)}"
                )
        object.__setattr__(self, "capabilities", caps)

    def capable(self, agent: str) -> frozenset[str]:
        return self.capabilities.get(agent, frozenset())

    def with_capability(self, agent: str, behavior: str) -> "DomainVocabulary":
        caps = dict(self.capabilities)
        caps[agent] = self.capable(agent) | {behavior}
        return DomainVocabulary(self.agents, self.behaviors | {behavior}, self.objects, caps)


def _freeze(mapping: Mapping[str, Iterable[str]] | None) -> dict[str, frozenset[str]]:
    return {k: frozenset(v) for k, v in (mapping or {}).items()}


@dataclass(frozen=True)
class Grounding:
    """Role, action and artifact groundings.

    Keys present in a relation are the identifiers the grounding knows about;
    a key mapped to the empty set is declared but ungrounded.  Asking about an
    identifier that is not a key raises :class:`UnknownIdentifierError`.
    """

    roles: Mapping[str, frozenset[str]]
    acts: Mapping[str, frozenset[str]]
    arts: Mapping[str, frozenset[str]]

    def __post_init__(self):
        object.__setattr__(self, "roles", _freeze(self.roles))
        object.__setattr__(self, "acts", _freeze(self.acts))
        object.__setattr__(self, "arts", _freeze(self.arts))

    @classmethod
    def for_institution(cls, inst: Institution, roles=None, acts=None, arts=None) -> "Grounding":
        roles, acts, arts = _freeze(roles), _freeze(acts), _freeze(arts)
        g = cls(
            {r: roles.get(r, frozenset()) for r in inst.roles} | roles,
            {a: acts.get(a, frozenset()) for a in inst.acts} | acts,
            {a: arts.get(a, frozenset()) for a in inst.arts} | arts,
        )
        validate_grounding(g, inst)
        return g

    @property
    def role_pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset((r, a) for r, ags in self.roles.items() for a in ags)

    @property
    def act_pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset((x, b) for x, bs in self.acts.items() for b in bs)

    @property
    def art_pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset((x, o) for x, os in self.arts.items() for o in os)

    def agents_of_role(self, role: str) -> frozenset[str]:
        try:
            return self.roles[role]
        except KeyError:
            raise UnknownIdentifierError(f"unknown role {role!r}") from None

    def behaviors_of_act(self, act: str) -> frozenset[str]:
        try:
            return self.acts[act]
        except KeyError:
            raise UnknownIdentifierError(f"unknown act {act!r}") from None

    def objects_of_art(self, art: str) -> frozenset[str]:
        # role-valued artifacts resolve through the role grounding
        if art in self.arts:
            return self.arts[art]
        if art in self.roles:
            return self.roles[art]
        raise UnknownIdentifierError(f"unknown artifact {art!r}")

    @property
    def grounded_agents(self) -> frozenset[str]:
        return frozenset().union(*self.roles.values()) if self.roles else frozenset()

    def roles_of_agent(self, agent: str) -> tuple[str, ...]:
        return tuple(r for r, ags in self.roles.items() if agent in ags)

    def replace(self, roles=None, acts=None, arts=None) -> "Grounding":
        """Return a copy with the given relations updated key by key."""
        return Grounding(
            dict(self.roles) | _freeze(roles),
            dict(self.acts) | _freeze(acts),
            dict(self.arts) | _freeze(arts),
        )

    def to_dict(self) -> dict:
        return {
            "roles": {k: sorted(v) for k, v in self.roles.items()},
            "acts": {k: sorted(v) for k, v in self.acts.items()},
            "arts": {k: sorted(v) for k, v in self.arts.items()},
        }


def validate_grounding(g: Grounding, inst: Institution, dom: DomainVocabulary | None = None) -> None:
    for kind, declared in (("roles", inst.roles), ("acts", inst.acts), ("arts", inst.arts)):
        unknown = set(getattr(g, kind)) - set(declared)
        if unknown:
            raise UndeclaredIdentifierError(f"grounding names undeclared {kind}: {sorted(unknown)}")
    if dom is None:
        return
    for kind, declared in (("roles", dom.agents), ("acts", dom.behaviors), ("arts", dom.objects)):
        for key, values in getattr(g, kind).items():
            unknown = values - declared
            if unknown:
                raise UndeclaredIdentifierError(
                    f"grounding of {key!r} names undeclared domain entities {sorted(unknown)}"
                )


def check_admissible(g: Grounding, inst: Institution, dom: DomainVocabulary) -> list[str]:
    """Structural admissibility check. Returns a list of violations; empty means ok."""
    violations = []
    for role in inst.roles:
        agents = g.roles.get(role, frozenset())
        if not agents:
            violations.append(f"ungrounded role {role}")
            continue
        for agent in sorted(agents):
            caps = dom.capable(agent)
            for act in inst.acts_of_role(role):
                if not (g.acts.get(act, frozenset()) & caps):
                    violations.append(
                        f"({act}, {agent}): agent {agent} has no behavior grounding act {act}"
                    )
    return violations


# -- file formats -----------------------------------------------------------

def _load_json(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise ParseError("top-level value must be an object")
    return doc


def _check_keys(doc: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ParseError(f"unknown key(s) in {where}: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise ParseError(f"missing key(s) in {where}: {sorted(missing)}")


def _string_list(value, where: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ParseError(f"{where} must be a list of strings")
    return value


def parse_institution(text: str) -> Institution:
    doc = _load_json(text)
    keys = {"name", "roles", "acts", "arts", "norms"}
    _check_keys(doc, keys, keys, "institution")
    if not isinstance(doc["name"], str):
        raise ParseError("name must be a string")
    norms = []
    if not isinstance(doc["norms"], list):
        raise ParseError("norms must be a list")
    for i, entry in enumerate(doc["norms"]):
        if not isinstance(entry, dict):
            raise ParseError(f"norm {i} must be an object")
        _check_keys(entry, {"qualifier", "triples"}, {"qualifier", "triples"}, f"norm {i}")
        triples = entry["triples"]
        if not isinstance(triples, list) or not all(
            isinstance(t, list) and len(t) == 3 and all(isinstance(x, str) for x in t)
            for t in triples
        ):
            raise ParseError(f"norm {i}: triples must be [role, act, art] string lists")
        if not isinstance(entry["qualifier"], str):
            raise ParseError(f"norm {i}: qualifier must be a string")
        norms.append(Norm(entry["qualifier"], tuple(Triple(*t) for t in triples)))
    return Institution(
        doc["name"],
        tuple(_string_list(doc["roles"], "roles")),
        tuple(_string_list(doc["acts"], "acts")),
        tuple(_string_list(doc["arts"], "arts")),
        tuple(norms),
    )


def serialize_institution(inst: Institution) -> str:
    return json.dumps(inst.to_dict(), indent=2)


def _relation(doc: dict, key: str) -> dict[str, list[str]]:
    rel = doc.get(key, {})
    if not isinstance(rel, dict):
        raise ParseError(f"{key} must be an object")
    for k, v in rel.items():
        _string_list(v, f"{key}.{k}")
    return rel


def parse_grounding(text: str, inst: Institution | None = None) -> Grounding:
    doc = _load_json(text)
    _check_keys(doc, {"roles", "acts", "arts"}, set(), "grounding")
    rels = {k: _relation(doc, k) for k in ("roles", "acts", "arts")}
    if inst is None:
        return Grounding(**rels)
    return Grounding.for_institution(inst, **rels)


def serialize_grounding(g: Grounding) -> str:
    return json.dumps(g.to_dict(), indent=2)


def parse_domain(text: str) -> DomainVocabulary:
    doc = _load_json(text)
    keys = {"agents", "behaviors", "objects", "capabilities"}
    _check_keys(doc, keys, {"agents", "behaviors", "objects"}, "domain")
    return DomainVocabulary(
        _string_list(doc["agents"], "agents"),
        _string_list(doc["behaviors"], "behaviors"),
        _string_list(doc["objects"], "objects"),
        _relation(doc, "capabilities"),
    )


def serialize_domain(dom: DomainVocabulary) -> str:
    return json.dumps(
        {
            "agents": sorted(dom.agents),
            "behaviors": sorted(dom.behaviors),
            "objects": sorted(dom.objects),
            "capabilities": {a: sorted(b) for a, b in sorted(dom.capabilities.items())},
        },
        indent=2,
    )
