"""QUBO/QAOA spatiotemporal cluster detection with classical baselines,
hybrid quantum-classical forecasting, and Bayesian-network causal analysis."""

from .baselines import DBSCAN, HDBSCAN, dbscan, hdbscan
from .causal import BayesianNetwork, BayesNet, Dag, influence_scores, quantum_rejection_sample, variable_elimination
from .forecast import HybridForecaster, MLPForecaster, build_supervised, evaluate_forecast, train_hybrid, train_mlp
from .ingest import Dataset, SynthConfig, ZipRecord, generate_synthetic, knn_impute, minmax_normalize, parse_dataset
from .metrics import adjusted_rand_index, benchmark, permutation_accuracy, silhouette
from .qaoa import QAOAClustering, optimize_qaoa, qaoa_cluster, qaoa_state
from .qubo import Qubo, anneal_solve, brute_force_solve, build_cluster_qubo, qubo_to_ising
from .similarity import DistanceMatrix, combined_distance, haversine_km

__version__ = "0.1.0"
