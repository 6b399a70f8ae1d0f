#include "opingraph/model_selection.hpp"

#include "opingraph/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <tuple>

namespace opingraph {

namespace {

ErrorStat summarize(const std::vector<double>& terms) {
    ErrorStat s;
    const auto m = static_cast<double>(terms.size());
    if (terms.empty()) return s;
    double sum = 0.0;
    for (double t : terms) sum += t;
    s.mean = sum / m;
    if (terms.size() > 1) {
        double ss = 0.0;
        for (double t : terms) ss += (t - s.mean) * (t - s.mean);
        s.se = std::sqrt(ss / (m - 1.0)) / std::sqrt(m);
    }
    return s;
}

}  // namespace

ErrorEstimates loocv_errors(const OpinionGraph& graph, const FitResult& fit) {
    const int q = fit.q();
    if (fit.marginals.size() != graph.num_vertices() * static_cast<std::size_t>(q))
        throw InferenceError("fit does not match the graph");
    BpEngine engine(graph, fit.params);

    std::vector<double> gibbs, map, bayes, training;
    const auto& edges = graph.edges();
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto& edge = edges[e];
        if (edge.label == EdgeLabel::Neutral) continue;
        const SquareMatrix cav = engine.cavity_predictive(fit.state, e);
        const SquareMatrix nu = engine.edge_two_point(fit.state, e);

        std::vector<double> left(q, 0.0), right(q, 0.0);
        double g = 0.0, b = 0.0, t = 0.0;
        for (int s = 0; s < q; ++s)
            for (int r = 0; r < q; ++r) {
                const double p = engine.pair_probability(edge.label, edge.src, edge.dst, s, r);
                const double lp = std::log(p);
                g -= cav(s, r) * lp;
                b += cav(s, r) * p;
                t -= nu(s, r) * lp;
                left[s] += cav(s, r);
                right[r] += cav(s, r);
            }
        const int ms = argmax(left), mr = argmax(right);
        gibbs.push_back(g);
        bayes.push_back(-std::log(b));
        training.push_back(t);
        map.push_back(-std::log(engine.pair_probability(edge.label, edge.src, edge.dst, ms, mr)));
    }

    ErrorEstimates out;
    out.q = q;
    out.edges = gibbs.size();
    out.converged = fit.converged;
    out.gibbs = summarize(gibbs);
    out.map = summarize(map);
    out.bayes = summarize(bayes);
    out.training = summarize(training);
    return out;
}

std::vector<int> alignment_permutation(std::span<const int> reference, int q_reference,
                                       std::span<const int> next, int q_next) {
    if (reference.size() != next.size()) throw InferenceError("partitions cover different vertex sets");
    const int width = std::max(q_reference, q_next);
    std::vector<std::vector<long>> overlap(q_reference, std::vector<long>(q_next, 0));
    for (std::size_t i = 0; i < next.size(); ++i) {
        if (reference[i] < 0 || reference[i] >= q_reference || next[i] < 0 || next[i] >= q_next)
            throw InferenceError("group index out of range");
        ++overlap[reference[i]][next[i]];
    }

    std::vector<std::tuple<long, int, int>> cells;
    for (int a = 0; a < q_reference; ++a)
        for (int b = 0; b < q_next; ++b)
            if (overlap[a][b] > 0) cells.emplace_back(-overlap[a][b], a, b);
    std::sort(cells.begin(), cells.end());

    std::vector<int> perm(width, -1);
    std::vector<bool> taken(width, false);
    for (const auto& [neg, a, b] : cells) {
        if (perm[b] >= 0 || taken[a]) continue;
        perm[b] = a;
        taken[a] = true;
    }
    int next_free = 0;
    for (int b = 0; b < width; ++b) {
        if (perm[b] >= 0) continue;
        while (taken[next_free]) ++next_free;
        perm[b] = next_free;
        taken[next_free] = true;
    }
    return perm;
}

std::vector<std::vector<int>> align_partitions(const std::vector<std::vector<int>>& partitions) {
    std::vector<std::vector<int>> out;
    auto groups = [](const std::vector<int>& v) {
        int k = 0;
        for (int s : v) {
            if (s < 0) throw InferenceError("group labels must be non-negative");
            k = std::max(k, s + 1);
        }
        return k;
    };
    for (const auto& p : partitions) {
        if (out.empty()) {
            groups(p);
            out.push_back(p);
            continue;
        }
        const auto& prev = out.back();
        const auto perm = alignment_permutation(prev, groups(prev), p, groups(p));
        std::vector<int> relabelled(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) relabelled[i] = perm[p[i]];
        out.push_back(std::move(relabelled));
    }
    return out;
}

std::vector<FlowRecord> flows_between(const FitResult& from, const FitResult& to, double threshold) {
    const std::size_t n = from.map_labels.size();
    if (to.map_labels.size() != n) throw InferenceError("fits cover different vertex sets");
    const int qa = from.q(), qb = to.q();
    auto typical = [threshold](const FitResult& f, std::size_t i) {
        const auto m = f.marginal(i);
        return *std::max_element(m.begin(), m.end()) >= threshold;
    };
    std::vector<long> dark(static_cast<std::size_t>(qa) * qb, 0), pale(dark.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cell = static_cast<std::size_t>(from.map_labels[i]) * qb + to.map_labels[i];
        if (typical(from, i) && typical(to, i))
            ++dark[cell];
        else
            ++pale[cell];
    }
    std::vector<FlowRecord> out;
    for (int a = 0; a < qa; ++a)
        for (int b = 0; b < qb; ++b) {
            const std::size_t cell = static_cast<std::size_t>(a) * qb + b;
            if (dark[cell] > 0) out.push_back({qa, a, qb, b, dark[cell], true});
            if (pale[cell] > 0) out.push_back({qa, a, qb, b, pale[cell], false});
        }
    return out;
}

std::vector<FlowRecord> alluvial_flows(const SweepResult& sweep, double typical_threshold) {
    std::vector<FlowRecord> out;
    for (std::size_t k = 0; k + 1 < sweep.fits.size(); ++k) {
        auto f = flows_between(sweep.fits[k], sweep.fits[k + 1], typical_threshold);
        out.insert(out.end(), f.begin(), f.end());
    }
    return out;
}

SweepResult sweep(const OpinionGraph& graph, const SweepOptions& options) {
    if (options.q_min < 1 || options.q_min > options.q_max ||
        static_cast<std::size_t>(options.q_max) > graph.num_vertices())
        throw InferenceError("q range must satisfy 1 <= q_min <= q_max <= N");
    SweepResult out;
    out.q_min = options.q_min;
    for (int q = options.q_min; q <= options.q_max; ++q) {
        FitOptions fo = options.fit;
        fo.rng_seed = derive_seed(options.fit.rng_seed, static_cast<std::uint64_t>(q));
        FitResult fit = run_em(graph, q, fo);
        if (!fit.converged) std::clog << "warning: BP did not converge at q=" << q << "\n";

        std::vector<int> perm(q);
        for (int a = 0; a < q; ++a) perm[a] = a;
        if (!out.fits.empty()) {
            const auto& prev = out.fits.back();
            perm = alignment_permutation(prev.map_labels, prev.q(), fit.map_labels, q);
            fit = permute_groups(fit, perm);
        }
        out.errors.push_back(loocv_errors(graph, fit));
        out.fits.push_back(std::move(fit));
        out.permutations.push_back(std::move(perm));
    }
    out.flows = alluvial_flows(out, options.fit.typical_threshold);
    return out;
}

Recommendation recommend_q(const std::vector<ErrorEstimates>& errors, const std::vector<FlowRecord>& flows,
                           double min_refinement) {
    Recommendation rec;
    if (errors.empty()) return rec;
    const auto best = std::min_element(errors.begin(), errors.end(), [](const auto& x, const auto& y) {
        return x.gibbs.mean < y.gibbs.mean;
    });
    for (const auto& e : errors)
        if (e.gibbs.mean - best->gibbs.mean <= best->gibbs.se) rec.q_candidates.push_back(e.q);

    rec.q_hierarchical = errors.front().q;
    bool intact = true;
    for (std::size_t k = 1; k < errors.size(); ++k) {
        const int q = errors[k].q;
        // dark(a, b) for the step (q-1) -> q.
        std::vector<std::vector<long>> dark(q - 1, std::vector<long>(q, 0));
        long total = 0;
        for (const auto& f : flows)
            if (f.to_q == q && f.from_q == q - 1 && f.dark) {
                dark.at(f.from_group).at(f.to_group) += f.count;
                total += f.count;
            }
        long consistent = 0;
        bool every_group_dark = true;
        for (int b = 0; b < q; ++b) {
            long mx = 0, into = 0;
            for (int a = 0; a < q - 1; ++a) {
                mx = std::max(mx, dark[a][b]);
                into += dark[a][b];
            }
            consistent += mx;
            // A group made of pale vertices only is not a split of typical ones.
            if (into == 0) every_group_dark = false;
        }
        const double rate = total > 0 ? static_cast<double>(consistent) / total : 1.0;
        rec.refinement.push_back(rate);
        if (intact && rate >= min_refinement && (total == 0 || every_group_dark))
            rec.q_hierarchical = q;
        else
            intact = false;
    }

    rec.q_final = rec.q_hierarchical;
    int chosen = 0;
    for (int q : rec.q_candidates)
        if (q <= rec.q_hierarchical) chosen = std::max(chosen, q);
    if (chosen > 0) rec.q_final = chosen;
    return rec;
}

Recommendation recommend_q(const SweepResult& sweep, double min_refinement) {
    return recommend_q(sweep.errors, sweep.flows, min_refinement);
}

}  // namespace opingraph
