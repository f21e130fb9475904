"""FLOPs ledger package"""
from .flops_ledger import (
    BACKWARD_MULTIPLIER,
    CostStage,
    FlopsLedger,
    LedgerSnapshot,
    ReferenceMethod,
    closed_form_iee,
    closed_form_reference,
    closed_form_table,
    dense_equivalent,
    forward_flops,
)

__all__ = [
    "BACKWARD_MULTIPLIER",
    "CostStage",
    "FlopsLedger",
    "LedgerSnapshot",
    "ReferenceMethod",
    "closed_form_iee",
    "closed_form_reference",
    "closed_form_table",
    "dense_equivalent",
    "forward_flops",
]
