"""Model builders and thresholds for concrete random-matrix applications."""

from .csbm import CsbmEstimate, CsbmInstance, CsbmSnr, csbm_build, csbm_estimate, csbm_overlap, csbm_snr
from .decoding import (
    DecodingMatrices,
    GraphDecodingInstance,
    circulant_graph,
    decode_build,
    decode_round,
    flip_probability_for,
    random_regular_graph,
    theta_prime,
)
from .kikuchi import (
    KikuchiParams,
    KikuchiTest,
    TensorPcaInstance,
    all_subsets,
    binomial_table,
    colex_rank,
    colex_unrank,
    export_coordinates,
    kikuchi_matrix,
    kikuchi_params,
    kikuchi_test,
    read_coordinates,
)
from .scov import (
    ScovEdges,
    ScovParams,
    ScovVariational,
    scov_closed_forms,
    scov_pi_forms,
    scov_sample,
    scov_variational,
)
from .spiked_block import spiked_block_build

__all__ = [name for name in dir() if not name.startswith("_")]
