"""The two-tag vocabulary shared across the package."""

VOCALS = "Vocals"
NONVOCALS = "NonVocals"
LABELS = (VOCALS, NONVOCALS)

Label = str


def validate_label(value: str) -> str:
    if value not in LABELS:
        raise ValueError("unknown label %r (expected one of %s)" % (value, LABELS))
    return value
