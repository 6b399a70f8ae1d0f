#pragma once

#include "opingraph/graph.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace opingraph {

class MetricsError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Joint counts of two partitions of the same items. Group values of either
/// partition are arbitrary integers; rows/cols follow ascending group value.
struct ContingencyTable {
    std::vector<int> row_groups;
    std::vector<int> col_groups;
    std::vector<std::vector<long>> counts;
    std::vector<long> row_totals;
    std::vector<long> col_totals;
    long total = 0;
};

ContingencyTable contingency(std::span<const int> a, std::span<const int> b);

/// 2 I(A,B) / (H(A) + H(B)), natural logs. Both entropies zero gives 1;
/// exactly one zero gives 0.
double nmi(std::span<const int> a, std::span<const int> b);

/// Adjusted Rand index. A vanishing denominator gives 1.
double ari(std::span<const int> a, std::span<const int> b);

/// Fraction of non-neutral edges consistent with the partition: positive
/// edges inside a group and negative edges across groups.
double agreement_score(const OpinionGraph& graph, std::span<const int> labels);

/// Agreement score minus its mean over `n_random` size-preserving label shuffles.
double adjusted_agreement_score(const OpinionGraph& graph, std::span<const int> labels,
                                int n_random = 1000, std::uint64_t rng_seed = 1);

/// Per-question group assignments keyed by respondent.
struct QuestionAssignment {
    std::string question;
    std::map<std::string, int> group_of;
};

struct CrosstabTable {
    std::string from_question;
    std::string to_question;
    ContingencyTable table;  // rows: from_question groups, cols: to_question groups
    std::string warning;
};

/// Respondent flows between each pair of adjacent questions, over the
/// respondents present in both.
std::vector<CrosstabTable> crosstab_flows(const std::vector<QuestionAssignment>& questions);

/// Tab-separated flow table: from_question from_group to_question to_group count.
std::string crosstab_tsv(const std::vector<CrosstabTable>& tables);

}  // namespace opingraph
