#include "opingraph/synthetic.hpp"

#include "opingraph/metrics.hpp"
#include "opingraph/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

namespace opingraph {

PlantedGraph sample_graph(const GeneratorSpec& spec) {
    BlockModelParams params{spec.q, spec.gamma, spec.omega_pos, spec.omega_neg, false};
    params.validate(spec.degree_propensities.empty());
    const bool dc = !spec.degree_propensities.empty();
    if (dc && spec.degree_propensities.size() != spec.n)
        throw InferenceError("degree propensities must have one entry per vertex");

    Rng rng(spec.rng_seed);
    PlantedGraph out;
    out.labels.resize(spec.n);
    std::vector<double> cumulative(spec.q);
    std::partial_sum(spec.gamma.begin(), spec.gamma.end(), cumulative.begin());
    for (auto& s : out.labels) {
        const double u = uniform01(rng) * cumulative.back();
        s = static_cast<int>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        s = std::min(s, spec.q - 1);
    }

    std::vector<Vertex> vertices(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        vertices[i].id = "v" + std::to_string(i);
        vertices[i].text = "synthetic response " + std::to_string(i);
        vertices[i].respondent_id = "r" + std::to_string(i);
    }

    std::vector<Edge> edges;
    for (std::size_t i = 0; i < spec.n; ++i) {
        for (std::size_t j = i + 1; j < spec.n; ++j) {
            const int a = out.labels[i], b = out.labels[j];
            double pp = spec.omega_pos(a, b), pn = spec.omega_neg(a, b);
            if (dc) {
                pp *= spec.degree_propensities[i].first * spec.degree_propensities[j].first;
                pn *= spec.degree_propensities[i].second * spec.degree_propensities[j].second;
                if (pp > 1.0 || pn > 1.0 || pp + pn > 1.0) {
                    ++out.clamped_pairs;
                    pp = std::min(pp, 1.0);
                    pn = std::min(pn, 1.0);
                    if (pp + pn > 1.0) {
                        const double z = pp + pn;
                        pp /= z;
                        pn /= z;
                    }
                }
            }
            const double u = uniform01(rng);
            if (u < pp)
                edges.push_back({i, j, EdgeLabel::Positive});
            else if (u < pp + pn)
                edges.push_back({i, j, EdgeLabel::Negative});
        }
    }
    if (out.clamped_pairs > 0)
        std::clog << "warning: clamped " << out.clamped_pairs
                  << " degree-corrected pair probabilities to 1\n";
    out.graph = OpinionGraph("synthetic", std::move(vertices), std::move(edges));
    return out;
}

GeneratorSpec planted_signed_spec(std::size_t n, int q, double c_pos, double c_neg, double strength,
                                  std::uint64_t seed) {
    GeneratorSpec spec;
    spec.n = n;
    spec.q = q;
    spec.gamma.assign(q, 1.0 / q);
    spec.omega_pos = SquareMatrix(q);
    spec.omega_neg = SquareMatrix(q);
    const double scale = 1.0 / static_cast<double>(n);
    for (int a = 0; a < q; ++a)
        for (int b = 0; b < q; ++b) {
            const bool same = a == b;
            const double fp = same ? 1.0 + strength * (q - 1) : 1.0 - strength;
            const double fn = q == 1 ? 1.0 : (same ? 1.0 - strength : 1.0 + strength / (q - 1));
            spec.omega_pos(a, b) = c_pos * scale * fp;
            spec.omega_neg(a, b) = c_neg * scale * fn;
        }
    spec.rng_seed = seed;
    return spec;
}

std::vector<RecoveryRow> recovery_experiment(const RecoveryConfig& config) {
    std::vector<RecoveryRow> rows;
    std::uint64_t counter = 0;
    for (double strength : config.strengths) {
        for (int trial = 0; trial < config.trials; ++trial, ++counter) {
            const auto seed = derive_seed(config.rng_seed, counter);
            auto planted = sample_graph(planted_signed_spec(config.n, config.q, config.c_pos,
                                                            config.c_neg, strength, seed));
            FitOptions fit = config.fit;
            fit.rng_seed = derive_seed(seed, 0x5eed);
            double score = 0.0;
            if (planted.graph.num_informative_edges() > 0 || config.q == 1) {
                auto result = run_em(planted.graph, config.q, fit);
                score = nmi(result.map_labels, planted.labels);
            }
            rows.push_back({strength, trial, score});
        }
    }
    return rows;
}

std::vector<std::pair<double, double>> mean_nmi_by_strength(const std::vector<RecoveryRow>& rows) {
    std::vector<std::pair<double, double>> out;
    std::vector<int> counts;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == r.strength; });
        if (it == out.end()) {
            out.push_back({r.strength, 0.0});
            counts.push_back(0);
            it = out.end() - 1;
        }
        it->second += r.nmi;
        ++counts[it - out.begin()];
    }
    for (std::size_t k = 0; k < out.size(); ++k) out[k].second /= counts[k];
    return out;
}

std::string recovery_table_tsv(const std::vector<RecoveryRow>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "strength\ttrial\tnmi\n";
    for (const auto& r : rows) os << r.strength << '\t' << r.trial << '\t' << r.nmi << '\n';
    return os.str();
}

}  // namespace opingraph
