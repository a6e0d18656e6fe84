"""Exact likelihood for masked diffusion samplers with deterministic unmasking."""
from .denoiser import (
    Denoiser,
    TabularBayesDenoiser,
    TrainableDenoiser,
    elbo_exhaustive_mc_mean,
    elbo_loss_gradient,
    elbo_loss_mc,
    fit_tabular,
    load_denoiser,
    save_denoiser,
    train,
)
from .engine import (
    TrajectoryRecord,
    aoarm_elbo_exhaustive,
    duel_exact_loglik,
    duel_sample,
    forward_mask,
    uniform_policy_exact_loglik,
)
from .metrics import (
    EvaluationReport,
    GapReport,
    evaluate_corpus,
    gap_closed,
    generative_perplexity,
    nfe_sweep,
    perplexity,
    token_entropy,
)
from .oracle import (
    UNIFORM,
    enumerate_ordered_partitions,
    induced_distribution,
    marginal_bruteforce,
    masking_order_histogram,
    oracle_block_search,
)
from .rules import (
    BlockRestrict,
    ConfThreshold,
    FixedOrder,
    GreedyConfidence,
    Klass,
    LeftToRight,
    ProbMargin,
    RuleState,
    induced_policy_probability,
    parse_rule,
    select,
)
from .seq import (
    OrderedPartition,
    ProbMatrix,
    Vocabulary,
    masked_positions,
    reveal,
    validate_partition,
)

__version__ = "0.1.0"
