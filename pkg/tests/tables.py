"""Published counts used as oracles by the tests."""

# Hold-out confusion matrix; rows are true classes, columns predicted.
CONFUSION_CLASSES = (
    "ApplicationSoftware",
    "Documentation",
    "NonWebLibsFrameworks",
    "SoftwareTools",
    "SystemSoftware",
    "WebLibsFrameworks",
)
CONFUSION = (
    (20, 0, 8, 11, 0, 4),
    (1, 26, 2, 2, 0, 12),
    (5, 4, 108, 10, 2, 14),
    (3, 3, 10, 69, 1, 10),
    (0, 1, 3, 7, 6, 1),
    (1, 3, 14, 7, 0, 127),
)

# Labelled corpus class distribution.
CLASS_COUNTS = {
    "WebLibsFrameworks": 1522,
    "NonWebLibsFrameworks": 1429,
    "SoftwareTools": 963,
    "ApplicationSoftware": 428,
    "Documentation": 427,
    "SystemSoftware": 179,
}

# GitHub Actions adoption per domain: (adopted, not adopted).
ADOPTION = {
    "Application & System Software": (55, 24),
    "Documentation": (93, 232),
    "Non-Web Libs & Frameworks": (97, 75),
    "Software Tools": (104, 49),
    "Web Libs & Frameworks": (97, 63),
}
ADOPTION_PERCENT = {
    "Application & System Software": 70,
    "Documentation": 29,
    "Non-Web Libs & Frameworks": 56,
    "Software Tools": 68,
    "Web Libs & Frameworks": 61,
}
ADOPTION_TOTAL_PERCENT = 50.2

# One-vs-rest chi-square statistics and (where published) phi coefficients.
CHI_SQUARE = {
    "Documentation": (93.838, 0.325),
    "Software Tools": (22.583, 0.159),
    "Application & System Software": (12.282, None),
    "Web Libs & Frameworks": (8.031, None),
    "Non-Web Libs & Frameworks": (3.006, None),
}

# Data-source availability over 4,948 repositories: (present, missing percent).
MISSING = {
    "Topics": (2335, 52.8),
    "Licence": (4301, 13.1),
}
CORPUS_SIZE = 4948
