#pragma once

#include "opingraph/graph.hpp"
#include "opingraph/inference.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace opingraph {

struct ErrorStat {
    double mean = 0.0;
    double se = 0.0;  // sample sd of per-edge terms / sqrt(M)
};

/// Leave-one-out prediction errors in nats per non-neutral edge.
struct ErrorEstimates {
    int q = 0;
    ErrorStat gibbs;
    ErrorStat map;
    ErrorStat bayes;
    ErrorStat training;
    std::size_t edges = 0;
    bool converged = true;  // copied from the fit; errors are still computed when false
};

/// Scores every non-neutral edge against the posterior of the graph with that
/// edge removed, using the cavity joint of its endpoints.
ErrorEstimates loocv_errors(const OpinionGraph& graph, const FitResult& fit);

struct FlowRecord {
    int from_q = 0;
    int from_group = 0;
    int to_q = 0;
    int to_group = 0;
    long count = 0;
    bool dark = false;
};

struct SweepOptions {
    int q_min = 1;
    int q_max = 6;
    FitOptions fit;
};

struct SweepResult {
    int q_min = 1;
    std::vector<ErrorEstimates> errors;  // one per q, ascending
    std::vector<FitResult> fits;         // group indices already aligned
    /// Renaming applied to each raw fit (new index perm[old]).
    std::vector<std::vector<int>> permutations;
    std::vector<FlowRecord> flows;

    int q_max() const { return q_min + static_cast<int>(fits.size()) - 1; }
    const FitResult& fit_at(int q) const { return fits.at(static_cast<std::size_t>(q - q_min)); }
    const ErrorEstimates& errors_at(int q) const { return errors.at(static_cast<std::size_t>(q - q_min)); }
};

SweepResult sweep(const OpinionGraph& graph, const SweepOptions& options);

/// Renaming of the groups 0..q_next-1 of `next` that best matches `reference`:
/// cells of the contingency table are taken greedily by descending overlap
/// (ties to the lowest reference group, then lowest next group) and unmatched
/// groups receive the smallest free indices in their original order.
/// Returns perm with new index perm[old]; its size is max(q_next, q_reference).
std::vector<int> alignment_permutation(std::span<const int> reference, int q_reference,
                                       std::span<const int> next, int q_next);

/// Relabels each partition against its already-aligned predecessor. The first
/// partition is left unchanged.
std::vector<std::vector<int>> align_partitions(const std::vector<std::vector<int>>& partitions);

/// Flows between consecutive q of an aligned sweep. Each (from, to) cell is
/// split into a dark record (vertices typical in both fits) and a pale record
/// for the rest; empty records are omitted.
std::vector<FlowRecord> alluvial_flows(const SweepResult& sweep, double typical_threshold = 0.9);

/// Flows between two aligned fits of the same graph.
std::vector<FlowRecord> flows_between(const FitResult& from, const FitResult& to, double typical_threshold);

struct Recommendation {
    std::vector<int> q_candidates;
    int q_final = 1;
    /// Share of dark mass consistent with a refinement, per step q-1 -> q
    /// (index 0 is the step into q_min + 1).
    std::vector<double> refinement;
    int q_hierarchical = 1;
};

/// Heuristic choice of q. Candidates are the q whose Gibbs error lies within
/// one standard error of the minimum. A step q-1 -> q is hierarchical when at
/// least `min_refinement` of the dark flow mass enters each q-group from a
/// single (q-1)-group and every q-group holds some dark mass. q_final is the largest candidate reachable through
/// hierarchical steps only; when no candidate is, the last hierarchical q.
Recommendation recommend_q(const SweepResult& sweep, double min_refinement = 0.95);
Recommendation recommend_q(const std::vector<ErrorEstimates>& errors, const std::vector<FlowRecord>& flows,
                           double min_refinement = 0.95);

}  // namespace opingraph
