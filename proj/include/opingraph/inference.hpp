#pragma once

#include "opingraph/graph.hpp"
#include "opingraph/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace opingraph {

class InferenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major q x q matrix of doubles.
class SquareMatrix {
public:
    SquareMatrix() = default;
    explicit SquareMatrix(int q, double fill = 0.0)
        : q_(q), data_(static_cast<std::size_t>(q) * q, fill) {}

    int size() const { return q_; }
    double& operator()(int a, int b) { return data_[static_cast<std::size_t>(a) * q_ + b]; }
    double operator()(int a, int b) const { return data_[static_cast<std::size_t>(a) * q_ + b]; }
    const std::vector<double>& data() const { return data_; }
    bool is_symmetric(double tol = 0.0) const;

private:
    int q_ = 0;
    std::vector<double> data_;
};

/// Group fractions and per-label affinity matrices of the labelled SBM.
/// In the degree-corrected variant the pair probability for label x is
/// d^x_i * omega^x * d^x_j with d^x the raw label-x degree.
struct BlockModelParams {
    int q = 1;
    std::vector<double> gamma;
    SquareMatrix omega_pos;
    SquareMatrix omega_neg;
    bool degree_corrected = false;

    /// Throws InferenceError when an invariant does not hold. The pairwise
    /// probability bound is only checked when `check_probabilities` is set.
    void validate(bool check_probabilities = true) const;
    /// Returns a copy with groups renamed: new group perm[a] takes old group a.
    BlockModelParams permuted(std::span<const int> perm) const;
};

/// log p(A, sigma | gamma, omega) summed exactly over every vertex pair.
/// Labels are 0-based group indices. Neutral edges count as absent pairs;
/// parallel edges contribute one factor each.
double log_likelihood(const OpinionGraph& graph, const BlockModelParams& params,
                      std::span<const int> labels);

/// Message-passing state. Messages are stored per bond and direction:
/// slot 2*b carries bond.i -> bond.j, slot 2*b+1 carries bond.j -> bond.i.
struct BpState {
    int q = 0;
    std::vector<double> messages;   // 2 * bonds * q
    std::vector<double> marginals;  // N * q
    std::vector<double> theta_pos;  // sum_k g+_k psi_k
    std::vector<double> theta_neg;  // sum_k g-_k psi_k
    std::vector<std::size_t> order; // fixed vertex update order
    double damping = 0.0;
    int sweeps = 0;
    double residual = 0.0;

    std::span<const double> message(std::size_t slot) const {
        return {messages.data() + slot * q, static_cast<std::size_t>(q)};
    }
    std::span<const double> marginal(std::size_t i) const {
        return {marginals.data() + i * q, static_cast<std::size_t>(q)};
    }
};

/// Vertex marginals and bond two-point marginals read off a BP state.
struct Beliefs {
    int q = 0;
    std::vector<double> vertex;  // N * q
    std::vector<double> bond;    // bonds * q * q, indexed (sigma_i, sigma_j) with i < j
};

struct ConvergeInfo {
    int sweeps = 0;
    double residual = 0.0;
    bool converged = false;
};

/// Belief propagation on a fixed opinion graph. Non-edges enter only through
/// a mean-field external field built from degree-weighted group totals.
class BpEngine {
public:
    BpEngine(const OpinionGraph& graph, BlockModelParams params);

    const BlockModelParams& params() const { return params_; }
    void set_params(BlockModelParams params);
    const OpinionGraph& graph() const { return *graph_; }

    /// Messages uniform over groups.
    BpState uniform_state() const;
    /// Messages drawn from a symmetric Dirichlet(1); the update order is shuffled.
    BpState random_state(Rng& rng) const;

    /// One asynchronous sweep over state.order. Returns the largest absolute
    /// change in any message component.
    double sweep(BpState& state) const;
    /// Sweeps until the residual drops below tol or max_sweeps is reached.
    /// Damping 0.5 is switched on after two consecutive residual increases.
    ConvergeInfo converge(BpState& state, double tol, int max_sweeps) const;

    /// h_i(sigma) under the current state (own contribution excluded).
    std::vector<double> external_field(const BpState& state, std::size_t vertex) const;

    /// Two-point marginal of edge e, oriented (sigma_src, sigma_dst).
    SquareMatrix edge_two_point(const BpState& state, std::size_t edge) const;
    /// Joint of the endpoints of edge e with that edge's factor removed.
    SquareMatrix cavity_predictive(const BpState& state, std::size_t edge) const;

    Beliefs beliefs(const BpState& state) const;
    double bethe_free_energy(const Beliefs& beliefs) const { return bethe_free_energy(beliefs, params_); }
    double bethe_free_energy(const Beliefs& beliefs, const BlockModelParams& params) const;
    /// Parameters minimising the Bethe free energy for fixed beliefs.
    BlockModelParams m_step(const Beliefs& beliefs) const;

    /// Probability of label x (+1/-1) on pair (i, j) for groups (a, b), clamped to (0, 1].
    double pair_probability(EdgeLabel label, std::size_t i, std::size_t j, int a, int b) const;

    /// Degree factor g^x_i: the raw degree when degree corrected, otherwise 1.
    double degree_factor(EdgeLabel label, std::size_t vertex) const;

private:
    struct Incidence {
        std::size_t bond;
        bool first;  // vertex is bond.i
    };

    void compute_bond_factors();
    void recompute_theta(BpState& state) const;
    void field_into(const BpState& state, std::size_t vertex, double* h) const;
    SquareMatrix bond_factor(int n_pos, int n_neg) const;
    SquareMatrix oriented(const SquareMatrix& m, std::size_t edge) const;

    const OpinionGraph* graph_;
    BlockModelParams params_;
    int q_;
    std::size_t n_;
    std::vector<std::size_t> adj_offset_;
    std::vector<Incidence> adj_;
    std::vector<double> g_pos_;
    std::vector<double> g_neg_;
    std::vector<double> log_gamma_;
    // Group-dependent part of each bond factor, shared across bonds with the
    // same label multiplicities.
    std::vector<SquareMatrix> factor_types_;
    std::vector<std::pair<int, int>> factor_counts_;
    std::vector<std::uint32_t> bond_type_;
};

/// Free-function forms of the BP primitives.
double bp_sweep(const OpinionGraph& graph, const BlockModelParams& params, BpState& state);
SquareMatrix edge_two_point(const OpinionGraph& graph, const BlockModelParams& params,
                            const BpState& state, std::size_t edge);
SquareMatrix cavity_predictive(const OpinionGraph& graph, const BlockModelParams& params,
                               const BpState& state, std::size_t edge);

struct FitOptions {
    bool degree_corrected = false;
    int max_iters = 500;         // BP sweeps per E-step
    double tol = 1e-6;           // BP message residual
    int em_max_iters = 200;
    double em_tol = 1e-9;        // relative free-energy change
    int restarts = 10;
    std::uint64_t rng_seed = 1;
    double typical_threshold = 0.9;
};

struct FitResult {
    BlockModelParams params;
    BpState state;
    std::vector<double> marginals;  // N * q
    std::vector<int> map_labels;
    std::vector<bool> typical;
    std::vector<double> bond_two_point;  // bonds * q * q
    double bethe_free_energy = 0.0;
    std::vector<double> free_energy_trace;  // after each accepted E-step
    bool converged = false;
    int restarts_used = 0;
    int em_iterations = 0;
    double typical_threshold = 0.9;

    int q() const { return params.q; }
    std::span<const double> marginal(std::size_t i) const {
        return {marginals.data() + i * params.q, static_cast<std::size_t>(params.q)};
    }
};

/// EM with a BP E-step. Runs `restarts` random initialisations and keeps the
/// lowest Bethe free energy. Deterministic in options.rng_seed.
FitResult run_em(const OpinionGraph& graph, int q, const FitOptions& options);

/// argmax with ties resolved to the lowest index.
int argmax(std::span<const double> values);

/// Renames groups (new index perm[old]) throughout a fit.
FitResult permute_groups(const FitResult& fit, std::span<const int> perm);

/// Structured-text export of a fit: per-vertex marginals, labels, typical
/// flags and the fitted gamma / omega matrices.
std::string fit_to_json(const OpinionGraph& graph, const FitResult& fit);

}  // namespace opingraph
