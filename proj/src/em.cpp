#include "opingraph/inference.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>

namespace opingraph {

namespace {

// Starting affinities: the single-group density times multiplicative noise.
// Even restarts start from a signed prior (positive edges inside groups,
// negative edges across) and odd restarts from unstructured noise, so EM is
// free to settle on any connection pattern.
BlockModelParams initial_params(const OpinionGraph& graph, int q, bool dc, bool signed_prior, Rng& rng) {
    const auto n = static_cast<double>(graph.num_vertices());
    BlockModelParams p;
    p.q = q;
    p.degree_corrected = dc;
    p.gamma.assign(q, 1.0 / q);

    auto density = [&](std::size_t count, const std::vector<int>& deg) {
        if (!dc) return n > 1 ? 2.0 * count / (n * (n - 1.0)) : 0.0;
        double total = 0.0, squares = 0.0;
        for (int d : deg) {
            total += d;
            squares += static_cast<double>(d) * d;
        }
        const double denom = total * total - squares;
        return denom > 0 ? 2.0 * count / denom : 0.0;
    };
    const double base_pos = density(graph.count_positive(), graph.degree_positive());
    const double base_neg = density(graph.count_negative(), graph.degree_negative());

    p.omega_pos = SquareMatrix(q);
    p.omega_neg = SquareMatrix(q);
    for (int a = 0; a < q; ++a)
        for (int b = a; b < q; ++b) {
            double rp = 1.0, rn = 1.0;
            if (q > 1 && signed_prior) {
                const double within = a == b ? 1.0 : 0.0;
                rp = (0.2 + 1.6 * within) * (0.75 + 0.5 * uniform01(rng));
                rn = (1.8 - 1.6 * within) * (0.75 + 0.5 * uniform01(rng));
            } else if (q > 1) {
                rp = 0.1 + 1.8 * uniform01(rng);
                rn = 0.1 + 1.8 * uniform01(rng);
            }
            p.omega_pos(a, b) = p.omega_pos(b, a) = base_pos * rp;
            p.omega_neg(a, b) = p.omega_neg(b, a) = base_neg * rn;
        }
    return p;
}

struct SingleFit {
    BlockModelParams params;
    BpState state;
    Beliefs beliefs;
    double free_energy = 0.0;
    std::vector<double> trace;
    bool converged = false;
    int em_iterations = 0;
};

SingleFit fit_once(const OpinionGraph& graph, int q, const FitOptions& opt, std::uint64_t seed,
                   bool signed_prior) {
    Rng rng(seed);
    BpEngine engine(graph, initial_params(graph, q, opt.degree_corrected, signed_prior, rng));
    BpState state = engine.random_state(rng);

    SingleFit best;
    bool have_previous = false;
    double f_after_m = std::numeric_limits<double>::infinity();

    for (int it = 0; it < opt.em_max_iters; ++it) {
        BpState trial = state;
        const ConvergeInfo info = engine.converge(trial, opt.tol, opt.max_iters);
        Beliefs bel = engine.beliefs(trial);
        const double f = engine.bethe_free_energy(bel);

        // Variational EM: an E-step that fails to lower the free energy is
        // rejected and the previous beliefs are kept, which ends the run.
        if (have_previous && f > f_after_m) break;

        const double previous = have_previous ? best.free_energy : f;
        best.params = engine.params();
        best.state = std::move(trial);
        best.beliefs = std::move(bel);
        best.free_energy = f;
        best.trace.push_back(f);
        best.converged = info.converged;
        best.em_iterations = it + 1;

        if (have_previous && previous - f <= opt.em_tol * (1.0 + std::abs(f))) break;
        if (q == 1 && have_previous) break;
        have_previous = true;

        BlockModelParams next = engine.m_step(best.beliefs);
        f_after_m = engine.bethe_free_energy(best.beliefs, next);
        engine.set_params(std::move(next));
        state = best.state;
        state.damping = 0.0;
    }
    return best;
}

}  // namespace

FitResult run_em(const OpinionGraph& graph, int q, const FitOptions& options) {
    const std::size_t n = graph.num_vertices();
    if (q < 1) throw InferenceError("q must be at least 1");
    if (static_cast<std::size_t>(q) > n) throw InferenceError("q exceeds the number of vertices");
    if (q > 1 && graph.num_informative_edges() == 0)
        throw InferenceError("fitting more than one group needs at least one non-neutral edge");
    if (options.restarts < 1) throw InferenceError("restarts must be at least 1");

    const int restarts = q == 1 ? 1 : options.restarts;
    SingleFit best;
    bool have = false;
    for (int r = 0; r < restarts; ++r) {
        SingleFit fit = fit_once(graph, q, options, derive_seed(options.rng_seed, static_cast<std::uint64_t>(r)),
                                 r % 2 == 0);
        // Free energies of unconverged message states are not comparable;
        // a converged restart always beats an unconverged one.
        const bool better = !have || (fit.converged && !best.converged) ||
                            (fit.converged == best.converged && fit.free_energy < best.free_energy);
        if (better) {
            best = std::move(fit);
            have = true;
        }
    }

    FitResult out;
    out.params = best.params;
    out.state = std::move(best.state);
    out.marginals = best.beliefs.vertex;
    out.bond_two_point = std::move(best.beliefs.bond);
    out.bethe_free_energy = best.free_energy;
    out.free_energy_trace = std::move(best.trace);
    out.converged = best.converged;
    out.restarts_used = restarts;
    out.em_iterations = best.em_iterations;
    out.typical_threshold = options.typical_threshold;
    out.map_labels.resize(n);
    out.typical.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto m = out.marginal(i);
        out.map_labels[i] = argmax(m);
        out.typical[i] = m[out.map_labels[i]] >= options.typical_threshold;
    }
    return out;
}

FitResult permute_groups(const FitResult& fit, std::span<const int> perm) {
    const int q = fit.q();
    if (static_cast<int>(perm.size()) != q) throw InferenceError("permutation size differs from q");
    FitResult out = fit;
    out.params = fit.params.permuted(perm);

    auto permute_rows = [&](const std::vector<double>& src, std::vector<double>& dst) {
        for (std::size_t k = 0; k + q <= src.size(); k += q)
            for (int a = 0; a < q; ++a) dst[k + perm[a]] = src[k + a];
    };
    permute_rows(fit.marginals, out.marginals);
    permute_rows(fit.state.marginals, out.state.marginals);
    permute_rows(fit.state.messages, out.state.messages);
    for (int a = 0; a < q; ++a) {
        out.state.theta_pos[perm[a]] = fit.state.theta_pos[a];
        out.state.theta_neg[perm[a]] = fit.state.theta_neg[a];
    }
    const std::size_t qq = static_cast<std::size_t>(q) * q;
    for (std::size_t k = 0; k < fit.bond_two_point.size(); k += qq)
        for (int a = 0; a < q; ++a)
            for (int b = 0; b < q; ++b)
                out.bond_two_point[k + perm[a] * q + perm[b]] = fit.bond_two_point[k + a * q + b];
    for (auto& s : out.map_labels) s = perm[s];
    return out;
}

std::string fit_to_json(const OpinionGraph& graph, const FitResult& fit) {
    using nlohmann::json;
    const int q = fit.q();
    auto matrix = [q](const SquareMatrix& m) {
        json rows = json::array();
        for (int a = 0; a < q; ++a) {
            json row = json::array();
            for (int b = 0; b < q; ++b) row.push_back(m(a, b));
            rows.push_back(std::move(row));
        }
        return rows;
    };
    json doc;
    doc["q"] = q;
    doc["degree_corrected"] = fit.params.degree_corrected;
    doc["gamma"] = fit.params.gamma;
    doc["omega_pos"] = matrix(fit.params.omega_pos);
    doc["omega_neg"] = matrix(fit.params.omega_neg);
    doc["bethe_free_energy"] = fit.bethe_free_energy;
    doc["converged"] = fit.converged;
    doc["restarts_used"] = fit.restarts_used;
    doc["em_iterations"] = fit.em_iterations;
    doc["typical_threshold"] = fit.typical_threshold;
    json vertices = json::array();
    for (std::size_t i = 0; i < graph.num_vertices(); ++i) {
        const auto m = fit.marginal(i);
        vertices.push_back({{"id", graph.vertices()[i].id},
                            {"seed", graph.vertices()[i].is_seed},
                            {"marginals", std::vector<double>(m.begin(), m.end())},
                            {"label", fit.map_labels[i]},
                            {"typical", static_cast<bool>(fit.typical[i])}});
    }
    doc["vertices"] = std::move(vertices);
    return doc.dump(2) + "\n";
}

}  // namespace opingraph
