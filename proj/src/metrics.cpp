#include "opingraph/metrics.hpp"

#include "opingraph/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace opingraph {

namespace {

void check_lengths(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size())
        throw MetricsError("partitions have different lengths (" + std::to_string(a.size()) + " vs " +
                           std::to_string(b.size()) + ")");
}

std::vector<int> distinct(std::span<const int> v) {
    std::vector<int> out(v.begin(), v.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

double choose2(long n) { return 0.5 * static_cast<double>(n) * static_cast<double>(n - 1); }

double entropy(const std::vector<long>& counts, long total) {
    double h = 0.0;
    for (long c : counts)
        if (c > 0) {
            const double p = static_cast<double>(c) / total;
            h -= p * std::log(p);
        }
    return h;
}

}  // namespace

ContingencyTable contingency(std::span<const int> a, std::span<const int> b) {
    check_lengths(a, b);
    ContingencyTable t;
    t.row_groups = distinct(a);
    t.col_groups = distinct(b);
    t.counts.assign(t.row_groups.size(), std::vector<long>(t.col_groups.size(), 0));
    t.row_totals.assign(t.row_groups.size(), 0);
    t.col_totals.assign(t.col_groups.size(), 0);
    auto index = [](const std::vector<int>& groups, int g) {
        return static_cast<std::size_t>(std::lower_bound(groups.begin(), groups.end(), g) - groups.begin());
    };
    for (std::size_t k = 0; k < a.size(); ++k) {
        const auto r = index(t.row_groups, a[k]);
        const auto c = index(t.col_groups, b[k]);
        ++t.counts[r][c];
        ++t.row_totals[r];
        ++t.col_totals[c];
    }
    t.total = static_cast<long>(a.size());
    return t;
}

double nmi(std::span<const int> a, std::span<const int> b) {
    const auto t = contingency(a, b);
    if (t.total == 0) return 1.0;
    const double ha = entropy(t.row_totals, t.total);
    const double hb = entropy(t.col_totals, t.total);
    if (ha == 0.0 && hb == 0.0) return 1.0;
    if (ha == 0.0 || hb == 0.0) return 0.0;
    const double n = static_cast<double>(t.total);
    double mi = 0.0;
    for (std::size_t r = 0; r < t.counts.size(); ++r)
        for (std::size_t c = 0; c < t.counts[r].size(); ++c) {
            const long nab = t.counts[r][c];
            if (nab == 0) continue;
            const double pab = nab / n;
            mi += pab * std::log(pab / ((t.row_totals[r] / n) * (t.col_totals[c] / n)));
        }
    return std::clamp(2.0 * mi / (ha + hb), 0.0, 1.0);
}

double ari(std::span<const int> a, std::span<const int> b) {
    const auto t = contingency(a, b);
    double sum_ab = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& row : t.counts)
        for (long c : row) sum_ab += choose2(c);
    for (long c : t.row_totals) sum_a += choose2(c);
    for (long c : t.col_totals) sum_b += choose2(c);
    const double pairs = choose2(t.total);
    if (pairs == 0.0) return 1.0;
    const double expected = sum_a * sum_b / pairs;
    const double denom = 0.5 * (sum_a + sum_b) - expected;
    if (denom == 0.0) return 1.0;
    return (sum_ab - expected) / denom;
}

namespace {

long agreeing_edges(const OpinionGraph& graph, std::span<const int> labels) {
    long agree = 0;
    for (const auto& e : graph.edges()) {
        if (e.label == EdgeLabel::Neutral) continue;
        const bool same = labels[e.src] == labels[e.dst];
        if ((e.label == EdgeLabel::Positive) == same) ++agree;
    }
    return agree;
}

void check_labels(const OpinionGraph& graph, std::span<const int> labels) {
    if (labels.size() != graph.num_vertices())
        throw MetricsError("labels do not cover the graph vertices");
    if (graph.num_informative_edges() == 0)
        throw MetricsError("agreement score needs at least one non-neutral edge");
}

}  // namespace

double agreement_score(const OpinionGraph& graph, std::span<const int> labels) {
    check_labels(graph, labels);
    return static_cast<double>(agreeing_edges(graph, labels)) /
           static_cast<double>(graph.num_informative_edges());
}

double adjusted_agreement_score(const OpinionGraph& graph, std::span<const int> labels, int n_random,
                                std::uint64_t rng_seed) {
    check_labels(graph, labels);
    if (n_random < 1) throw MetricsError("n_random must be at least 1");
    const auto m = static_cast<double>(graph.num_informative_edges());
    const long observed = agreeing_edges(graph, labels);

    Rng rng(rng_seed);
    std::vector<int> shuffled(labels.begin(), labels.end());
    // Integer accumulation keeps the mean exact when every shuffle scores the same.
    long long total = 0;
    for (int r = 0; r < n_random; ++r) {
        shuffle_range(shuffled.begin(), shuffled.end(), rng);
        total += agreeing_edges(graph, shuffled);
    }
    return static_cast<double>(observed) / m - static_cast<double>(total) / (m * n_random);
}

std::vector<CrosstabTable> crosstab_flows(const std::vector<QuestionAssignment>& questions) {
    if (questions.size() < 2) throw MetricsError("crosstab needs at least two questions");
    std::vector<CrosstabTable> out;
    for (std::size_t k = 0; k + 1 < questions.size(); ++k) {
        const auto& from = questions[k];
        const auto& to = questions[k + 1];
        std::vector<int> a, b;
        for (const auto& [respondent, group] : from.group_of) {
            auto it = to.group_of.find(respondent);
            if (it == to.group_of.end()) continue;
            a.push_back(group);
            b.push_back(it->second);
        }
        CrosstabTable t;
        t.from_question = from.question;
        t.to_question = to.question;
        t.table = contingency(a, b);
        if (a.empty()) t.warning = "no shared respondents between '" + from.question + "' and '" + to.question + "'";
        out.push_back(std::move(t));
    }
    return out;
}

std::string crosstab_tsv(const std::vector<CrosstabTable>& tables) {
    std::ostringstream os;
    os << "from_question\tfrom_group\tto_question\tto_group\tcount\n";
    for (const auto& t : tables)
        for (std::size_t r = 0; r < t.table.row_groups.size(); ++r)
            for (std::size_t c = 0; c < t.table.col_groups.size(); ++c)
                if (t.table.counts[r][c] > 0)
                    os << t.from_question << '\t' << t.table.row_groups[r] << '\t' << t.to_question << '\t'
                       << t.table.col_groups[c] << '\t' << t.table.counts[r][c] << '\n';
    return os.str();
}

}  // namespace opingraph
