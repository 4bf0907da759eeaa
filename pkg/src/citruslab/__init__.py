"""Certified training against universal perturbations on small dense networks."""
from .attacks import AttackConfig, pgd_batch, pgd_single, pgd_universal
from .certify import (CertReport, attacked_uap_upper_bound, certified_average_uap_accuracy,
                      certified_uap_lower_bound, certify_dataset)
from .data import Dataset, gen_data, load_idx
from .errors import ConfigError, ContractError, DimensionError, FormatError, TrainingError
from .interval import (IntervalTensor, certify_individual, ibp_loss, margin_bounds,
                       propagate_box)
from .losses import (LossKind, citrus_loss, citrus_si_loss, cross_entropy, margin_loss,
                     sabr_loss)
from .network import Affine, Network, ReLU, forward, mlp, predict
from .oracle import (CpTable, PerturbationGrid, build_cp_table, check_batch_average_bound,
                     check_cross_input_bound, check_kcp_chain)
from .trainer import EvalConfig, MetricsRecord, TrainConfig, eps_schedule, init_weights, train

__version__ = "0.1.0"
