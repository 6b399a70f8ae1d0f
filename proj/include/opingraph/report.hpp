#pragma once

#include "opingraph/graph.hpp"
#include "opingraph/inference.hpp"
#include "opingraph/model_selection.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace opingraph {

/// One row per q: q, the four error means, then the four standard errors
/// (gibbs, map, bayes, training order in both halves).
std::string errors_tsv(const std::vector<ErrorEstimates>& errors);

/// from_q from_group to_q to_group count dark(0/1).
std::string flows_tsv(const std::vector<FlowRecord>& flows);

/// vertex_id group max_probability typical(0/1) over the report vertices of
/// the graph. Groups are 0-based.
std::string labels_tsv(const OpinionGraph& graph, const FitResult& fit);

/// (vertex id, group) pairs from a labels file; extra columns are ignored.
/// Throws GraphError on malformed rows or repeated ids.
std::vector<std::pair<std::string, int>> read_labels(const std::filesystem::path& path);

}  // namespace opingraph
