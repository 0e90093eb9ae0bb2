"""Published figures, attached to reports as labeled context.

These come from human annotators, a hosted teacher model, fine-tuned small
models and GPU wall-clock timing, none of which this package can rerun. They
are never compared against or asserted on.
"""

PUBLISHED_NOTE = "published reference values; context only, not reproduced by this tool"

PSA_REFERENCE = {
    "llm_interrun_average": 0.925,
    "annotator_a1_vs_a2": 0.791,
    "llm_aggregated_vs_a1": 0.818,
    "llm_aggregated_vs_a2": 0.803,
}

PREVALENCE_AGREEMENT_REFERENCE = {
    "intra_model": {"rho": 0.80, "p": "< 0.001"},
    "annotator_a1_vs_model": {"rho": 0.63, "p": 0.001},
}

OOD_REFERENCE = {
    ("zero_shot", "json"): {"macro_f1": 0.250, "micro_f1": 0.300},
    ("zero_shot", "dichotomic"): {"macro_f1": 0.363, "micro_f1": 0.445},
    ("finetuned", "json"): {"macro_f1": 0.299, "micro_f1": 0.340},
    ("finetuned", "dichotomic"): {"macro_f1": 0.286, "micro_f1": 0.178},
}


def context(kind: str) -> dict:
    """Reference block for a report of the given kind (``agreement`` or ``ood``)."""
    if kind == "agreement":
        values = {"psa": PSA_REFERENCE, "prevalence_agreement": PREVALENCE_AGREEMENT_REFERENCE}
    elif kind == "ood":
        values = {f"{regime}/{strategy}": v for (regime, strategy), v in OOD_REFERENCE.items()}
    else:
        raise ValueError(f"unknown reference kind {kind!r}")
    return {"note": PUBLISHED_NOTE, "values": values}
