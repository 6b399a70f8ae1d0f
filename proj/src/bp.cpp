#include "opingraph/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace opingraph {

namespace {

// Floor for affinities and pair probabilities; keeps every log finite.
constexpr double kTiny = 1e-300;

double safe_log(double x) { return std::log(std::max(x, kTiny)); }

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

// In-place softmax of log-weights into a probability vector.
void softmax(std::span<double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        z += x;
    }
    for (double& x : v) x /= z;
}

void normalize(std::span<double> v) {
    double z = std::accumulate(v.begin(), v.end(), 0.0);
    for (double& x : v) x /= z;
}

}  // namespace

BpEngine::BpEngine(const OpinionGraph& graph, BlockModelParams params)
    : graph_(&graph), q_(params.q), n_(graph.num_vertices()) {
    const auto& bonds = graph.bonds();
    std::vector<std::size_t> deg(n_, 0);
    for (const auto& b : bonds) {
        ++deg[b.i];
        ++deg[b.j];
    }
    adj_offset_.assign(n_ + 1, 0);
    for (std::size_t i = 0; i < n_; ++i) adj_offset_[i + 1] = adj_offset_[i] + deg[i];
    adj_.resize(adj_offset_[n_]);
    std::vector<std::size_t> fill(adj_offset_.begin(), adj_offset_.end() - 1);
    for (std::size_t b = 0; b < bonds.size(); ++b) {
        adj_[fill[bonds[b].i]++] = {b, true};
        adj_[fill[bonds[b].j]++] = {b, false};
    }

    std::map<std::pair<int, int>, std::uint32_t> types;
    bond_type_.reserve(bonds.size());
    for (const auto& b : bonds) {
        auto [it, inserted] = types.try_emplace({b.n_pos, b.n_neg},
                                                static_cast<std::uint32_t>(factor_counts_.size()));
        if (inserted) factor_counts_.push_back({b.n_pos, b.n_neg});
        bond_type_.push_back(it->second);
    }
    set_params(std::move(params));
}

void BpEngine::set_params(BlockModelParams params) {
    params.validate(false);
    if (params.q != q_ && !factor_types_.empty())
        throw InferenceError("cannot change q of an existing engine");
    q_ = params.q;
    params_ = std::move(params);

    const auto& dp = graph_->degree_positive();
    const auto& dn = graph_->degree_negative();
    g_pos_.assign(n_, 1.0);
    g_neg_.assign(n_, 1.0);
    if (params_.degree_corrected)
        for (std::size_t i = 0; i < n_; ++i) {
            g_pos_[i] = dp[i];
            g_neg_[i] = dn[i];
        }
    log_gamma_.resize(q_);
    for (int a = 0; a < q_; ++a) log_gamma_[a] = safe_log(params_.gamma[a]);
    compute_bond_factors();
}

SquareMatrix BpEngine::bond_factor(int n_pos, int n_neg) const {
    SquareMatrix f(q_, 1.0);
    for (int a = 0; a < q_; ++a)
        for (int b = 0; b < q_; ++b) {
            double v = 1.0;
            if (n_pos > 0) v *= std::pow(std::max(params_.omega_pos(a, b), kTiny), n_pos);
            if (n_neg > 0) v *= std::pow(std::max(params_.omega_neg(a, b), kTiny), n_neg);
            f(a, b) = std::max(v, kTiny);
        }
    return f;
}

void BpEngine::compute_bond_factors() {
    factor_types_.clear();
    for (auto [np, nn] : factor_counts_) factor_types_.push_back(bond_factor(np, nn));
}

double BpEngine::degree_factor(EdgeLabel label, std::size_t vertex) const {
    return label == EdgeLabel::Positive ? g_pos_[vertex] : g_neg_[vertex];
}

double BpEngine::pair_probability(EdgeLabel label, std::size_t i, std::size_t j, int a, int b) const {
    const double w = label == EdgeLabel::Positive
                         ? g_pos_[i] * params_.omega_pos(a, b) * g_pos_[j]
                         : g_neg_[i] * params_.omega_neg(a, b) * g_neg_[j];
    return std::clamp(w, kTiny, 1.0);
}

BpState BpEngine::uniform_state() const {
    BpState s;
    s.q = q_;
    s.messages.assign(2 * graph_->bonds().size() * q_, 1.0 / q_);
    s.marginals.assign(n_ * q_, 1.0 / q_);
    s.order.resize(n_);
    std::iota(s.order.begin(), s.order.end(), std::size_t{0});
    recompute_theta(s);
    return s;
}

BpState BpEngine::random_state(Rng& rng) const {
    BpState s = uniform_state();
    auto dirichlet = [&](std::span<double> v) {
        for (double& x : v) x = -std::log1p(-uniform01(rng));
        normalize(v);
    };
    for (std::size_t k = 0; k < s.messages.size(); k += q_)
        dirichlet({s.messages.data() + k, static_cast<std::size_t>(q_)});
    for (std::size_t k = 0; k < s.marginals.size(); k += q_)
        dirichlet({s.marginals.data() + k, static_cast<std::size_t>(q_)});
    shuffle_range(s.order.begin(), s.order.end(), rng);
    recompute_theta(s);
    return s;
}

void BpEngine::recompute_theta(BpState& s) const {
    s.theta_pos.assign(q_, 0.0);
    s.theta_neg.assign(q_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
        for (int a = 0; a < q_; ++a) {
            const double p = s.marginals[i * q_ + a];
            s.theta_pos[a] += g_pos_[i] * p;
            s.theta_neg[a] += g_neg_[i] * p;
        }
}

std::vector<double> BpEngine::external_field(const BpState& s, std::size_t i) const {
    std::vector<double> h(q_, 0.0);
    field_into(s, i, h.data());
    return h;
}

void BpEngine::field_into(const BpState& s, std::size_t i, double* h) const {
    const double* psi = s.marginals.data() + i * q_;
    const double gp = g_pos_[i], gn = g_neg_[i];
    for (int a = 0; a < q_; ++a) {
        double acc = 0.0;
        for (int b = 0; b < q_; ++b) {
            if (gp != 0.0) acc += gp * params_.omega_pos(a, b) * (s.theta_pos[b] - gp * psi[b]);
            if (gn != 0.0) acc += gn * params_.omega_neg(a, b) * (s.theta_neg[b] - gn * psi[b]);
        }
        h[a] = acc;
    }
}

double BpEngine::sweep(BpState& s) const {
    if (s.q != q_) throw InferenceError("state has a different group count than the engine");
    recompute_theta(s);
    const std::size_t q = q_;
    std::vector<double> log_t;
    std::vector<double> total(q), out(q), fresh(q), h(q);
    double residual = 0.0;

    for (std::size_t i : s.order) {
        const std::size_t begin = adj_offset_[i], end = adj_offset_[i + 1];
        field_into(s, i, h.data());
        for (std::size_t a = 0; a < q; ++a) total[a] = log_gamma_[a] - h[a];

        log_t.resize((end - begin) * q);
        for (std::size_t k = begin; k < end; ++k) {
            const auto& inc = adj_[k];
            const std::size_t in_slot = 2 * inc.bond + (inc.first ? 1 : 0);
            const double* m = s.messages.data() + in_slot * q;
            const SquareMatrix& f = factor_types_[bond_type_[inc.bond]];
            double* lt = log_t.data() + (k - begin) * q;
            for (std::size_t a = 0; a < q; ++a) {
                double t = 0.0;
                for (std::size_t b = 0; b < q; ++b) t += m[b] * f(static_cast<int>(a), static_cast<int>(b));
                lt[a] = std::log(std::max(t, kTiny));
                total[a] += lt[a];
            }
        }

        for (std::size_t k = begin; k < end; ++k) {
            const auto& inc = adj_[k];
            const std::size_t out_slot = 2 * inc.bond + (inc.first ? 0 : 1);
            const double* lt = log_t.data() + (k - begin) * q;
            for (std::size_t a = 0; a < q; ++a) out[a] = total[a] - lt[a];
            softmax(out);
            double* m = s.messages.data() + out_slot * q;
            if (s.damping > 0.0) {
                for (std::size_t a = 0; a < q; ++a) out[a] = (1.0 - s.damping) * out[a] + s.damping * m[a];
                normalize(out);
            }
            for (std::size_t a = 0; a < q; ++a) {
                residual = std::max(residual, std::abs(out[a] - m[a]));
                m[a] = out[a];
            }
        }

        std::copy(total.begin(), total.end(), fresh.begin());
        softmax(fresh);
        double* psi = s.marginals.data() + i * q;
        for (std::size_t a = 0; a < q; ++a) {
            const double delta = fresh[a] - psi[a];
            s.theta_pos[a] += g_pos_[i] * delta;
            s.theta_neg[a] += g_neg_[i] * delta;
            psi[a] = fresh[a];
        }
    }
    ++s.sweeps;
    s.residual = residual;
    return residual;
}

ConvergeInfo BpEngine::converge(BpState& s, double tol, int max_sweeps) const {
    ConvergeInfo info;
    double prev = std::numeric_limits<double>::infinity();
    int increases = 0;
    for (int t = 0; t < max_sweeps; ++t) {
        const double r = sweep(s);
        ++info.sweeps;
        info.residual = r;
        if (r < tol) {
            info.converged = true;
            break;
        }
        increases = r > prev ? increases + 1 : 0;
        if (increases >= 2) s.damping = 0.5;
        prev = r;
    }
    // Leave theta consistent with the final marginals.
    recompute_theta(s);
    return info;
}

SquareMatrix BpEngine::oriented(const SquareMatrix& m, std::size_t edge) const {
    const auto& e = graph_->edges()[edge];
    const auto& bond = graph_->bonds()[graph_->bond_of_edge(edge)];
    if (e.src == bond.i) return m;
    SquareMatrix t(q_);
    for (int a = 0; a < q_; ++a)
        for (int b = 0; b < q_; ++b) t(a, b) = m(b, a);
    return t;
}

namespace {

SquareMatrix joint(std::span<const double> left, std::span<const double> right, const SquareMatrix& f) {
    const int q = f.size();
    SquareMatrix nu(q);
    double z = 0.0;
    for (int a = 0; a < q; ++a)
        for (int b = 0; b < q; ++b) {
            nu(a, b) = left[a] * right[b] * f(a, b);
            z += nu(a, b);
        }
    if (!(z > 0.0)) {
        // Degenerate factor mass; fall back to the factor-free joint.
        z = 0.0;
        for (int a = 0; a < q; ++a)
            for (int b = 0; b < q; ++b) z += (nu(a, b) = left[a] * right[b]);
    }
    for (int a = 0; a < q; ++a)
        for (int b = 0; b < q; ++b) nu(a, b) /= z;
    return nu;
}

}  // namespace

SquareMatrix BpEngine::edge_two_point(const BpState& s, std::size_t edge) const {
    if (edge >= graph_->edges().size()) throw InferenceError("edge index out of range");
    const std::size_t b = graph_->bond_of_edge(edge);
    if (b == OpinionGraph::npos) throw InferenceError("neutral edges carry no factor");
    const SquareMatrix nu = joint(s.message(2 * b), s.message(2 * b + 1), factor_types_[bond_type_[b]]);
    return oriented(nu, edge);
}

SquareMatrix BpEngine::cavity_predictive(const BpState& s, std::size_t edge) const {
    if (edge >= graph_->edges().size()) throw InferenceError("edge index out of range");
    const std::size_t b = graph_->bond_of_edge(edge);
    if (b == OpinionGraph::npos) throw InferenceError("neutral edges carry no factor");
    const auto& bond = graph_->bonds()[b];
    const bool pos = graph_->edges()[edge].label == EdgeLabel::Positive;
    const SquareMatrix rest = bond_factor(bond.n_pos - (pos ? 1 : 0), bond.n_neg - (pos ? 0 : 1));
    return oriented(joint(s.message(2 * b), s.message(2 * b + 1), rest), edge);
}

Beliefs BpEngine::beliefs(const BpState& s) const {
    Beliefs out;
    out.q = q_;
    out.vertex = s.marginals;
    const auto& bonds = graph_->bonds();
    out.bond.resize(bonds.size() * q_ * q_);
    for (std::size_t b = 0; b < bonds.size(); ++b) {
        const SquareMatrix nu = joint(s.message(2 * b), s.message(2 * b + 1), factor_types_[bond_type_[b]]);
        std::copy(nu.data().begin(), nu.data().end(), out.bond.begin() + b * q_ * q_);
    }
    return out;
}

double BpEngine::bethe_free_energy(const Beliefs& bel, const BlockModelParams& p) const {
    const std::size_t q = q_;
    const auto& bonds = graph_->bonds();
    const auto& dp = graph_->degree_positive();
    const auto& dn = graph_->degree_negative();
    auto gpos = [&](std::size_t i) { return p.degree_corrected ? static_cast<double>(dp[i]) : 1.0; };
    auto gneg = [&](std::size_t i) { return p.degree_corrected ? static_cast<double>(dn[i]) : 1.0; };

    std::vector<double> log_gamma(q);
    for (std::size_t a = 0; a < q; ++a) log_gamma[a] = safe_log(p.gamma[a]);

    double energy = 0.0, entropy_terms = 0.0;
    std::vector<double> th_pos(q, 0.0), th_neg(q, 0.0);
    std::vector<std::size_t> deg(n_, 0);
    for (const auto& b : bonds) {
        ++deg[b.i];
        ++deg[b.j];
    }

    double self_mf = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
        const double* bi = bel.vertex.data() + i * q;
        double h = 0.0;
        for (std::size_t a = 0; a < q; ++a) {
            energy -= bi[a] * log_gamma[a];
            h += xlogx(bi[a]);
            th_pos[a] += gpos(i) * bi[a];
            th_neg[a] += gneg(i) * bi[a];
        }
        entropy_terms -= (static_cast<double>(deg[i]) - 1.0) * h;
        const double g2p = gpos(i) * gpos(i), g2n = gneg(i) * gneg(i);
        for (std::size_t a = 0; a < q; ++a)
            for (std::size_t c = 0; c < q; ++c)
                self_mf += bi[a] * bi[c] *
                           (g2p * p.omega_pos(static_cast<int>(a), static_cast<int>(c)) +
                            g2n * p.omega_neg(static_cast<int>(a), static_cast<int>(c)));
    }

    double mf = 0.0;
    for (std::size_t a = 0; a < q; ++a)
        for (std::size_t c = 0; c < q; ++c)
            mf += th_pos[a] * p.omega_pos(static_cast<int>(a), static_cast<int>(c)) * th_pos[c] +
                  th_neg[a] * p.omega_neg(static_cast<int>(a), static_cast<int>(c)) * th_neg[c];
    energy += 0.5 * (mf - self_mf);

    for (std::size_t b = 0; b < bonds.size(); ++b) {
        const auto& bond = bonds[b];
        const double* nu = bel.bond.data() + b * q * q;
        const double kp = gpos(bond.i) * gpos(bond.j), kn = gneg(bond.i) * gneg(bond.j);
        for (std::size_t a = 0; a < q; ++a)
            for (std::size_t c = 0; c < q; ++c) {
                const double v = nu[a * q + c];
                if (v <= 0.0) continue;
                double lf = 0.0;
                if (bond.n_pos) lf += bond.n_pos * safe_log(kp * p.omega_pos(static_cast<int>(a), static_cast<int>(c)));
                if (bond.n_neg) lf += bond.n_neg * safe_log(kn * p.omega_neg(static_cast<int>(a), static_cast<int>(c)));
                energy -= v * lf;
                entropy_terms += v * std::log(v);
            }
    }
    return energy + entropy_terms;
}

BlockModelParams BpEngine::m_step(const Beliefs& bel) const {
    const int q = q_;
    const auto& bonds = graph_->bonds();
    BlockModelParams p;
    p.q = q;
    p.degree_corrected = params_.degree_corrected;
    p.gamma.assign(q, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
        for (int a = 0; a < q; ++a) p.gamma[a] += bel.vertex[i * q + a];
    normalize(p.gamma);

    SquareMatrix c_pos(q), c_neg(q), self_pos(q), self_neg(q);
    std::vector<double> th_pos(q, 0.0), th_neg(q, 0.0);
    for (std::size_t b = 0; b < bonds.size(); ++b) {
        const double* nu = bel.bond.data() + b * q * q;
        for (int a = 0; a < q; ++a)
            for (int c = 0; c < q; ++c) {
                const double sym = nu[a * q + c] + nu[c * q + a];
                c_pos(a, c) += bonds[b].n_pos * sym;
                c_neg(a, c) += bonds[b].n_neg * sym;
            }
    }
    for (std::size_t i = 0; i < n_; ++i) {
        const double* bi = bel.vertex.data() + i * q;
        for (int a = 0; a < q; ++a) {
            th_pos[a] += g_pos_[i] * bi[a];
            th_neg[a] += g_neg_[i] * bi[a];
            for (int c = 0; c < q; ++c) {
                self_pos(a, c) += g_pos_[i] * g_pos_[i] * bi[a] * bi[c];
                self_neg(a, c) += g_neg_[i] * g_neg_[i] * bi[a] * bi[c];
            }
        }
    }
    p.omega_pos = SquareMatrix(q);
    p.omega_neg = SquareMatrix(q);
    for (int a = 0; a < q; ++a)
        for (int c = a; c < q; ++c) {
            const double pp = th_pos[a] * th_pos[c] - self_pos(a, c);
            const double pn = th_neg[a] * th_neg[c] - self_neg(a, c);
            const double wp = pp > 0.0 ? c_pos(a, c) / pp : 0.0;
            const double wn = pn > 0.0 ? c_neg(a, c) / pn : 0.0;
            p.omega_pos(a, c) = p.omega_pos(c, a) = wp;
            p.omega_neg(a, c) = p.omega_neg(c, a) = wn;
        }
    return p;
}

double bp_sweep(const OpinionGraph& graph, const BlockModelParams& params, BpState& state) {
    BpEngine engine(graph, params);
    return engine.sweep(state);
}

SquareMatrix edge_two_point(const OpinionGraph& graph, const BlockModelParams& params,
                            const BpState& state, std::size_t edge) {
    return BpEngine(graph, params).edge_two_point(state, edge);
}

SquareMatrix cavity_predictive(const OpinionGraph& graph, const BlockModelParams& params,
                               const BpState& state, std::size_t edge) {
    return BpEngine(graph, params).cavity_predictive(state, edge);
}

}  // namespace opingraph
