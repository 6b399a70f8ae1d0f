#include "opingraph/graph.hpp"

#include "opingraph/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

namespace opingraph {

using json = nlohmann::json;

EdgeLabel edge_label_from_int(long value) {
    switch (value) {
    case 1: return EdgeLabel::Positive;
    case -1: return EdgeLabel::Negative;
    case 0: return EdgeLabel::Neutral;
    default: throw GraphError("edge label must be one of 1, -1, 0; got " + std::to_string(value));
    }
}

std::string normalize_text(std::string_view text) {
    auto is_space = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    };
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

OpinionGraph::OpinionGraph(std::string question, std::vector<Vertex> vertices,
                           std::vector<Edge> edges, std::map<std::string, std::string> metadata)
    : question_(std::move(question)),
      vertices_(std::move(vertices)),
      edges_(std::move(edges)),
      metadata_(std::move(metadata)) {
    build();
}

OpinionGraph OpinionGraph::from_records(std::string question, std::vector<Vertex> vertices,
                                        const std::vector<EdgeRecord>& records,
                                        std::map<std::string, std::string> metadata) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < vertices.size(); ++i) {
        if (!index.emplace(vertices[i].id, i).second)
            throw GraphError("duplicate vertex id '" + vertices[i].id + "'");
    }
    std::vector<Edge> edges;
    edges.reserve(records.size());
    for (std::size_t e = 0; e < records.size(); ++e) {
        const auto& r = records[e];
        auto s = index.find(r.src);
        auto d = index.find(r.dst);
        if (s == index.end() || d == index.end())
            throw GraphError("edge " + std::to_string(e) + " (" + r.src + " -> " + r.dst +
                             ") references an unknown vertex");
        edges.push_back({s->second, d->second, r.label});
    }
    return OpinionGraph(std::move(question), std::move(vertices), std::move(edges),
                        std::move(metadata));
}

void OpinionGraph::build() {
    const std::size_t n = vertices_.size();
    index_.clear();
    index_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& v = vertices_[i];
        if (v.id.empty()) throw GraphError("vertex " + std::to_string(i) + " has an empty id");
        if (v.text.empty()) throw GraphError("vertex '" + v.id + "' has empty text");
        if (!index_.emplace(v.id, i).second) throw GraphError("duplicate vertex id '" + v.id + "'");
        v.text_key = normalize_text(v.text);
    }

    d_pos_.assign(n, 0);
    d_neg_.assign(n, 0);
    count_pos_ = count_neg_ = 0;
    bonds_.clear();
    edge_bond_.assign(edges_.size(), npos);

    std::map<std::pair<std::size_t, std::size_t>, std::size_t> bond_index;
    for (std::size_t e = 0; e < edges_.size(); ++e) {
        const auto& edge = edges_[e];
        if (edge.src >= n || edge.dst >= n)
            throw GraphError("edge " + std::to_string(e) + " references a vertex out of range");
        if (edge.src == edge.dst)
            throw GraphError("edge " + std::to_string(e) + " is a self-loop on '" +
                             vertices_[edge.src].id + "'");
        if (edge.label == EdgeLabel::Neutral) continue;

        const auto key = std::minmax(edge.src, edge.dst);
        auto [it, inserted] = bond_index.try_emplace({key.first, key.second}, bonds_.size());
        if (inserted) bonds_.push_back({key.first, key.second, 0, 0});
        auto& bond = bonds_[it->second];
        edge_bond_[e] = it->second;
        if (edge.label == EdgeLabel::Positive) {
            ++bond.n_pos;
            ++d_pos_[edge.src];
            ++d_pos_[edge.dst];
            ++count_pos_;
        } else {
            ++bond.n_neg;
            ++d_neg_[edge.src];
            ++d_neg_[edge.dst];
            ++count_neg_;
        }
    }
}

std::optional<std::size_t> OpinionGraph::index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

OpinionGraph OpinionGraph::with_labels(const std::vector<EdgeLabel>& labels) const {
    if (labels.size() != edges_.size()) throw GraphError("label count does not match edge count");
    auto edges = edges_;
    for (std::size_t e = 0; e < edges.size(); ++e) edges[e].label = labels[e];
    OpinionGraph out(question_, vertices_, std::move(edges), metadata_);
    out.exclude_seeds_ = exclude_seeds_;
    return out;
}

std::vector<std::size_t> OpinionGraph::report_vertices() const {
    std::vector<std::size_t> out;
    out.reserve(vertices_.size());
    for (std::size_t i = 0; i < vertices_.size(); ++i)
        if (!(exclude_seeds_ && vertices_[i].is_seed)) out.push_back(i);
    return out;
}

// --- serialization -------------------------------------------------------

OpinionGraph parse_graph(std::string_view document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw GraphError(std::string("graph document does not parse: ") + e.what());
    }
    if (!doc.is_object()) throw GraphError("graph document must be an object");

    try {
        std::string question = doc.value("question", std::string{});
        std::vector<Vertex> vertices;
        const auto& jv = doc.at("vertices");
        if (!jv.is_array()) throw GraphError("'vertices' must be an array");
        vertices.reserve(jv.size());
        for (std::size_t i = 0; i < jv.size(); ++i) {
            const auto& v = jv[i];
            Vertex vertex;
            const auto& id = v.at("id");
            vertex.id = id.is_string() ? id.get<std::string>() : id.dump();
            vertex.text = v.at("text").get<std::string>();
            if (v.contains("respondent") && !v.at("respondent").is_null()) {
                const auto& r = v.at("respondent");
                vertex.respondent_id = r.is_string() ? r.get<std::string>() : r.dump();
            }
            vertex.is_seed = v.value("seed", false);
            vertices.push_back(std::move(vertex));
        }

        std::vector<OpinionGraph::EdgeRecord> edges;
        const auto& je = doc.at("edges");
        if (!je.is_array()) throw GraphError("'edges' must be an array");
        edges.reserve(je.size());
        for (const auto& e : je) {
            auto endpoint = [](const json& x) { return x.is_string() ? x.get<std::string>() : x.dump(); };
            edges.push_back({endpoint(e.at("src")), endpoint(e.at("dst")),
                             edge_label_from_int(e.at("label").get<long>())});
        }

        std::map<std::string, std::string> metadata;
        if (doc.contains("metadata") && doc["metadata"].is_object())
            for (auto& [k, v] : doc["metadata"].items())
                metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();

        return OpinionGraph::from_records(std::move(question), std::move(vertices), edges,
                                          std::move(metadata));
    } catch (const json::exception& e) {
        throw GraphError(std::string("malformed graph document: ") + e.what());
    }
}

std::string serialize_graph(const OpinionGraph& graph) {
    json doc;
    doc["question"] = graph.question();
    json vertices = json::array();
    for (const auto& v : graph.vertices()) {
        json jv = {{"id", v.id}, {"text", v.text}, {"seed", v.is_seed}};
        jv["respondent"] = v.respondent_id ? json(*v.respondent_id) : json(nullptr);
        vertices.push_back(std::move(jv));
    }
    doc["vertices"] = std::move(vertices);
    json edges = json::array();
    for (const auto& e : graph.edges())
        edges.push_back({{"src", graph.vertices()[e.src].id},
                         {"dst", graph.vertices()[e.dst].id},
                         {"label", to_int(e.label)}});
    doc["edges"] = std::move(edges);
    if (!graph.metadata().empty()) doc["metadata"] = graph.metadata();
    return doc.dump(2) + "\n";
}

OpinionGraph load_graph(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw GraphError("cannot open graph file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_graph(buf.str());
}

void save_graph(const OpinionGraph& graph, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_graph(graph));
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw std::runtime_error("cannot rename onto " + path.string() + ": " + ec.message());
    }
}

OpinionGraph import_edge_list(const std::filesystem::path& edges_path,
                              const std::filesystem::path& vertices_path, std::string question) {
    std::ifstream vin(vertices_path);
    if (!vin) throw GraphError("cannot open vertex table " + vertices_path.string());
    std::vector<Vertex> vertices;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(vin, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (int c = 0; c < 3; ++c) {
            auto tab = line.find('\t', start);
            if (tab == std::string::npos)
                throw GraphError("vertex table line " + std::to_string(lineno) +
                                 ": expected 4 tab-separated columns");
            cols.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        Vertex v;
        v.id = cols[0];
        if (!cols[1].empty() && cols[1] != "-") v.respondent_id = cols[1];
        v.is_seed = cols[2] == "1" || cols[2] == "true";
        v.text = line.substr(start);
        vertices.push_back(std::move(v));
    }

    std::ifstream ein(edges_path);
    if (!ein) throw GraphError("cannot open edge list " + edges_path.string());
    std::vector<OpinionGraph::EdgeRecord> edges;
    lineno = 0;
    while (std::getline(ein, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string src, dst;
        long label;
        if (!(ss >> src)) continue;
        if (!(ss >> dst >> label))
            throw GraphError("edge list line " + std::to_string(lineno) + ": expected 'src dst label'");
        edges.push_back({src, dst, edge_label_from_int(label)});
    }
    return OpinionGraph::from_records(std::move(question), std::move(vertices), edges);
}

// --- preprocessing ------------------------------------------------------

OpinionGraph neutralize_excess(const OpinionGraph& graph, std::uint64_t rng_seed) {
    const auto n_pos = graph.count_positive();
    const auto n_neg = graph.count_negative();
    if (n_neg <= n_pos) return graph;

    std::vector<std::size_t> negatives;
    for (std::size_t e = 0; e < graph.edges().size(); ++e)
        if (graph.edges()[e].label == EdgeLabel::Negative) negatives.push_back(e);

    Rng rng(rng_seed);
    // Partial Fisher-Yates: the first (n_neg - n_pos) slots form a uniform subset.
    const std::size_t excess = n_neg - n_pos;
    for (std::size_t k = 0; k < excess; ++k) {
        auto j = k + uniform_index(rng, negatives.size() - k);
        std::swap(negatives[k], negatives[j]);
    }

    std::vector<EdgeLabel> labels;
    labels.reserve(graph.edges().size());
    for (const auto& e : graph.edges()) labels.push_back(e.label);
    for (std::size_t k = 0; k < excess; ++k) labels[negatives[k]] = EdgeLabel::Neutral;
    return graph.with_labels(labels);
}

OpinionGraph induced_analysis_graph(const OpinionGraph& graph, bool exclude_seeds) {
    OpinionGraph out = graph;
    out.exclude_seeds_ = graph.exclude_seeds_ || exclude_seeds;
    return out;
}

}  // namespace opingraph
