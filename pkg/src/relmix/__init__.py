"""Nonparametric Bayesian co-clustering of multi-entity relational data.

Entities of every class carry a latent cluster variable under a
Dirichlet-process (CRP) prior; discrete entity attributes depend on the
entity's cluster and discrete relation attributes on the cluster pair of
the related entities, all with conjugate Dirichlet priors.  The package
provides the coupled-CRP forward sampler, Gibbs inference in collapsed
and instantiated-parameter modes, posterior prediction with new-entity
fold-in, and an evaluation harness.
"""

from .data import (
    MISSING,
    DataError,
    Dataset,
    Dictionaries,
    SplitDataset,
    binarize_ratings,
    load_dataset_dir,
    load_entities_csv,
    load_relations_csv,
    train_test_split,
    write_dataset_dir,
)
from .generative import GroundTruth, crp_assign_probs, sample_crp_partition, sample_generative
from .inference import (
    ChainConfig,
    LatentState,
    NumericalError,
    PosteriorSamples,
    assignment_log_weights,
    dirichlet_multinomial_marginal,
    entity_log_likelihood,
    gibbs_update_entity,
    joint_log_likelihood,
    load_samples,
    new_cluster_log_likelihood,
    posterior_predictive_prob,
    remove_empty_clusters,
    resample_parameters,
    run_gibbs,
    save_samples,
)
from .predict_eval import (
    PredictionResult,
    RocCurve,
    accuracy,
    adjusted_rand_index,
    consensus_partition,
    cv_tune_beta0,
    fold_in_entity,
    mode_cluster_count,
    predict_attribute,
    predict_relation,
    predict_relation_batch,
    roc_topn,
)
from .schema import (
    AttributeSpec,
    EntityClassSpec,
    RelationClassSpec,
    Schema,
    SchemaError,
    load_schema,
    parse_schema,
    schema_hash,
    serialize_schema,
    validate_schema,
)

__version__ = "0.1.0"
