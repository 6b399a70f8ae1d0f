#pragma once

#include "opingraph/graph.hpp"
#include "opingraph/inference.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace opingraph {

struct GeneratorSpec {
    std::size_t n = 0;
    int q = 1;
    std::vector<double> gamma;
    SquareMatrix omega_pos;
    SquareMatrix omega_neg;
    /// Optional per-vertex (positive, negative) propensities; when present the
    /// pair probability for label x is theta^x_i * omega^x * theta^x_j.
    std::vector<std::pair<double, double>> degree_propensities;
    std::uint64_t rng_seed = 1;
};

struct PlantedGraph {
    OpinionGraph graph;
    std::vector<int> labels;
    /// Pairs whose degree-corrected probabilities had to be clamped.
    std::size_t clamped_pairs = 0;
};

/// Draws group labels i.i.d. from gamma, then every pair independently:
/// positive with its omega+ term, negative with its omega- term, else absent.
PlantedGraph sample_graph(const GeneratorSpec& spec);

/// Balanced q-group spec with mean positive/negative degrees c_pos/c_neg.
/// strength 0 gives identical affinities for every group pair; strength 1
/// puts every positive edge inside groups. Negative edges are
/// disassortative with the same strength.
GeneratorSpec planted_signed_spec(std::size_t n, int q, double c_pos, double c_neg, double strength,
                                  std::uint64_t seed);

struct RecoveryConfig {
    std::size_t n = 1000;
    int q = 2;
    double c_pos = 5.0;
    double c_neg = 5.0;
    std::vector<double> strengths;
    int trials = 5;
    std::uint64_t rng_seed = 1;
    FitOptions fit;
};

struct RecoveryRow {
    double strength = 0.0;
    int trial = 0;
    double nmi = 0.0;
};

/// Fits every planted instance at its planted q and scores the MAP labels
/// against the planted ones.
std::vector<RecoveryRow> recovery_experiment(const RecoveryConfig& config);

/// Mean NMI per strength level, in the order the levels first appear.
std::vector<std::pair<double, double>> mean_nmi_by_strength(const std::vector<RecoveryRow>& rows);

/// Tab-separated `strength trial nmi` table with a header line.
std::string recovery_table_tsv(const std::vector<RecoveryRow>& rows);

}  // namespace opingraph
