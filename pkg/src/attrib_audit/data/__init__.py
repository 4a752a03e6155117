from .io import SchemaError, load_cohort, load_cohort_dir, save_cohort, write_events_csv, write_static_csv
from .preprocess import (
    compute_train_means,
    filter_cohort,
    impute,
    split,
    split_sizes,
    summarize_tabular,
    truncate_and_aggregate,
)
from .records import (
    AGE_BIN_EDGES,
    PROTECTED_ATTRIBUTES,
    TREATMENT_TYPES,
    VOCABULARIES,
    Cohort,
    EventRecord,
    SplitIndices,
    StaticRecord,
    TabularSummary,
    age_group,
    group_from_slug,
    group_slug,
)
from .synthetic import FeatureEffect, GeneratorConfig, GeneratorConfigError, GroupBias, generate_synthetic_cohort
