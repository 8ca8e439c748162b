"""Federated matrix factorization with local differential privacy and a
proof-of-work traceability ledger."""

from liberate.dataset import RatingStore, SplitSpec, load_movielens, split, subset_top, synthesize_ratings
from liberate.federation import RunConfig, RoundReport, run_centralized, run_training
from liberate.ldp import PrivacyParams
from liberate.ledger import Chain, load_chain, trace_user, verify
from liberate.metrics import evaluate
from liberate.mf import Hyperparams
from liberate.sharing import SharePlan

__version__ = "0.1.0"
