#include "opingraph/inference.hpp"

#include <cmath>
#include <map>
#include <numeric>

namespace opingraph {

bool SquareMatrix::is_symmetric(double tol) const {
    for (int a = 0; a < q_; ++a)
        for (int b = a + 1; b < q_; ++b)
            if (std::abs((*this)(a, b) - (*this)(b, a)) > tol) return false;
    return true;
}

void BlockModelParams::validate(bool check_probabilities) const {
    if (q < 1) throw InferenceError("q must be at least 1");
    if (static_cast<int>(gamma.size()) != q) throw InferenceError("gamma must have q entries");
    if (omega_pos.size() != q || omega_neg.size() != q)
        throw InferenceError("omega matrices must be q x q");
    double total = 0.0;
    for (double g : gamma) {
        if (!(g >= 0.0)) throw InferenceError("gamma entries must be nonnegative");
        total += g;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InferenceError("gamma must sum to 1");
    for (const auto* m : {&omega_pos, &omega_neg}) {
        for (double w : m->data())
            if (!(w >= 0.0) || !std::isfinite(w)) throw InferenceError("omega entries must be nonnegative");
        if (!m->is_symmetric(1e-12)) throw InferenceError("omega matrices must be symmetric");
    }
    if (check_probabilities && !degree_corrected)
        for (int a = 0; a < q; ++a)
            for (int b = 0; b < q; ++b)
                if (omega_pos(a, b) + omega_neg(a, b) > 1.0 + 1e-12)
                    throw InferenceError("omega+ + omega- exceeds 1 for a group pair");
}

BlockModelParams BlockModelParams::permuted(std::span<const int> perm) const {
    BlockModelParams out = *this;
    for (int a = 0; a < q; ++a) {
        out.gamma[perm[a]] = gamma[a];
        for (int b = 0; b < q; ++b) {
            out.omega_pos(perm[a], perm[b]) = omega_pos(a, b);
            out.omega_neg(perm[a], perm[b]) = omega_neg(a, b);
        }
    }
    return out;
}

int argmax(std::span<const double> values) {
    int best = 0;
    for (int k = 1; k < static_cast<int>(values.size()); ++k)
        if (values[k] > values[best]) best = k;
    return best;
}

double log_likelihood(const OpinionGraph& graph, const BlockModelParams& params,
                      std::span<const int> labels) {
    params.validate();
    const std::size_t n = graph.num_vertices();
    if (labels.size() != n) throw InferenceError("label vector length differs from vertex count");
    for (int s : labels)
        if (s < 0 || s >= params.q) throw InferenceError("label out of range: " + std::to_string(s));

    const auto& dp = graph.degree_positive();
    const auto& dn = graph.degree_negative();
    auto probs = [&](std::size_t i, std::size_t j) {
        const int a = labels[i], b = labels[j];
        double pp = params.omega_pos(a, b), pn = params.omega_neg(a, b);
        if (params.degree_corrected) {
            pp *= static_cast<double>(dp[i]) * dp[j];
            pn *= static_cast<double>(dn[i]) * dn[j];
        }
        if (pp > 1.0 + 1e-12 || pn > 1.0 + 1e-12 || pp + pn > 1.0 + 1e-12)
            throw InferenceError("pair probability outside [0, 1]");
        return std::pair{pp, pn};
    };

    double ll = 0.0;
    for (int s : labels) ll += std::log(params.gamma[s]);

    // Pairs that carry at least one informative edge.
    std::map<std::pair<std::size_t, std::size_t>, std::pair<int, int>> observed;
    for (const auto& bond : graph.bonds()) observed[{bond.i, bond.j}] = {bond.n_pos, bond.n_neg};

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            auto [pp, pn] = probs(i, j);
            auto it = observed.find({i, j});
            if (it == observed.end()) {
                ll += std::log1p(-(pp + pn));
            } else {
                // A label with zero multiplicity contributes nothing, even when its probability is 0.
                if (it->second.first) ll += it->second.first * std::log(pp);
                if (it->second.second) ll += it->second.second * std::log(pn);
            }
        }
    }
    return ll;
}

}  // namespace opingraph
