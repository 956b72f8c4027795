"""
Name -> implementation lookup for every value a routine document may name.

Kinds: relation, transform, loss_func, data_func, optimizer. Names are
matched after lowercasing and turning spaces into underscores, so
"kl div" and "kl_div" are the same entry.
"""
from typing import Any, Dict, List

from .errors import DuplicateRegistrationError, RegistryError, UnknownComponentError
from .services import StrictOptions

KINDS = ("relation", "transform", "loss_func", "data_func", "optimizer")

_REGISTRY: Dict[str, Dict[str, Any]] = {kind: {} for kind in KINDS}


def normalize_identifier(value: str) -> str:
    return str(value).strip().lower().replace(" ", "_")


def _table(kind: str) -> Dict[str, Any]:
    if kind not in _REGISTRY:
        raise RegistryError(f"Unsupported registry kind: {kind}. Must be one of {', '.join(KINDS)}.")
    return _REGISTRY[kind]


def register(kind: str, name: str, implementation: Any) -> None:
    """
    Make `name` resolvable for `kind`.

    Args:
        kind: one of KINDS
        name: value as written in documents
        implementation: object following the kind's contract (see the
            registered built-ins in app/services); an `Options` attribute,
            when present, is the pydantic model its options validate against

    Raises:
        DuplicateRegistrationError: name already registered for this kind
    """
    table = _table(kind)
    key = normalize_identifier(name)
    if key in table:
        raise DuplicateRegistrationError(f"{kind} '{key}' is already registered")
    table[key] = implementation


def unregister(kind: str, name: str) -> None:
    _table(kind).pop(normalize_identifier(name), None)


def is_registered(kind: str, name: str) -> bool:
    return normalize_identifier(name) in _table(kind)


def resolve(kind: str, name: str) -> Any:
    table = _table(kind)
    key = normalize_identifier(name)
    if key not in table:
        raise UnknownComponentError(f"unknown {kind} '{name}'")
    return table[key]


def options_model(implementation: Any):
    return getattr(implementation, "Options", StrictOptions)


def names(kind: str) -> List[str]:
    return sorted(_table(kind))


def _register_builtins() -> None:
    from .services import derived, losses, relations, training, transforms

    pairwise = relations.PairwiseRelation()
    builtins = {
        "relation": {
            "pairwise": pairwise,
            "pdist": pairwise,
            "neighbor": relations.NeighborRelation(),
            "pairwise_eq": relations.PairwiseEqualityRelation(),
        },
        "transform": {
            "perplexity": transforms.PerplexityTransform(),
            "connect": transforms.ConnectTransform(),
            "symmetrize": transforms.SymmetrizeTransform(),
            "normalize": transforms.NormalizeTransform(),
            "t-dist": transforms.StudentTTransform(),
            "cauchy": transforms.CauchyTransform(),
            "multiply": transforms.MultiplyTransform(),
        },
        "loss_func": {
            "mse": losses.MseLossFunc(),
            "kl_div": losses.KlDivLossFunc(),
            "cross_entropy": losses.CrossEntropyLossFunc(),
            "margin": losses.MarginLossFunc(),
            "corr": losses.CorrelationLossFunc(),
        },
        "data_func": {
            "pca": derived.PcaDataFunc(),
            "spectral": derived.SpectralDataFunc(),
        },
        "optimizer": {
            "sgd": training.SGD,
            "adam": training.Adam,
        },
    }
    for kind, entries in builtins.items():
        for name, implementation in entries.items():
            register(kind, name, implementation)


_register_builtins()
