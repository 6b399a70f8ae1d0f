#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace opingraph {

/// Raised when a graph document fails to parse or violates a structural invariant.
class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class EdgeLabel : int { Negative = -1, Neutral = 0, Positive = 1 };

EdgeLabel edge_label_from_int(long value);
inline int to_int(EdgeLabel label) { return static_cast<int>(label); }

/// Trims and collapses internal whitespace runs to a single ASCII space.
/// Case and non-ASCII bytes are preserved.
std::string normalize_text(std::string_view text);

struct Vertex {
    std::string id;
    std::string text;
    std::optional<std::string> respondent_id;
    bool is_seed = false;
    std::string text_key;
};

struct Edge {
    std::size_t src = 0;
    std::size_t dst = 0;
    EdgeLabel label = EdgeLabel::Positive;
};

/// Unordered vertex pair carrying the multiplicity of each non-neutral label
/// between its endpoints (i < j).
struct Bond {
    std::size_t i = 0;
    std::size_t j = 0;
    int n_pos = 0;
    int n_neg = 0;
};

/// Signed multigraph of survey responses. Immutable once built; the degree
/// tables and bond list are derived from the edge records at construction.
class OpinionGraph {
public:
    struct EdgeRecord {
        std::string src;
        std::string dst;
        EdgeLabel label;
    };

    OpinionGraph() = default;
    OpinionGraph(std::string question, std::vector<Vertex> vertices, std::vector<Edge> edges,
                 std::map<std::string, std::string> metadata = {});

    /// Builds a graph from id-addressed edge records, validating every invariant.
    static OpinionGraph from_records(std::string question, std::vector<Vertex> vertices,
                                     const std::vector<EdgeRecord>& edges,
                                     std::map<std::string, std::string> metadata = {});

    const std::string& question() const { return question_; }
    const std::vector<Vertex>& vertices() const { return vertices_; }
    const std::vector<Edge>& edges() const { return edges_; }
    const std::vector<Bond>& bonds() const { return bonds_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

    std::size_t num_vertices() const { return vertices_.size(); }
    /// Number of non-neutral edges.
    std::size_t num_informative_edges() const { return count_pos_ + count_neg_; }
    std::size_t count_positive() const { return count_pos_; }
    std::size_t count_negative() const { return count_neg_; }
    std::size_t count_neutral() const { return edges_.size() - count_pos_ - count_neg_; }

    const std::vector<int>& degree_positive() const { return d_pos_; }
    const std::vector<int>& degree_negative() const { return d_neg_; }

    /// Index of the bond carrying edge `e`; npos for neutral edges.
    std::size_t bond_of_edge(std::size_t e) const { return edge_bond_[e]; }
    std::optional<std::size_t> index_of(std::string_view id) const;

    /// Copy with the given edge labels replaced; same vertices and edge order.
    OpinionGraph with_labels(const std::vector<EdgeLabel>& labels) const;

    /// Vertices retained for reporting (seeds dropped when requested).
    std::vector<std::size_t> report_vertices() const;
    bool excludes_seeds_from_reports() const { return exclude_seeds_; }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    friend OpinionGraph induced_analysis_graph(const OpinionGraph& graph, bool exclude_seeds);

    void build();

    std::string question_;
    std::vector<Vertex> vertices_;
    std::vector<Edge> edges_;
    std::map<std::string, std::string> metadata_;
    bool exclude_seeds_ = false;

    std::unordered_map<std::string, std::size_t> index_;
    std::vector<int> d_pos_;
    std::vector<int> d_neg_;
    std::vector<Bond> bonds_;
    std::vector<std::size_t> edge_bond_;
    std::size_t count_pos_ = 0;
    std::size_t count_neg_ = 0;
};

OpinionGraph load_graph(const std::filesystem::path& path);
OpinionGraph parse_graph(std::string_view document);
std::string serialize_graph(const OpinionGraph& graph);
void save_graph(const OpinionGraph& graph, const std::filesystem::path& path);

/// Reads a whitespace-separated edge list (`src dst label` per line, `#` comments)
/// together with a tab-separated vertex table (`id  respondent  seed  text`).
/// An empty respondent column or `-` means no respondent.
OpinionGraph import_edge_list(const std::filesystem::path& edges_path,
                              const std::filesystem::path& vertices_path,
                              std::string question = {});

/// Relabels surplus negative edges as neutral until both signs are equally
/// frequent. Deterministic in `rng_seed`.
OpinionGraph neutralize_excess(const OpinionGraph& graph, std::uint64_t rng_seed);

/// Marks seed vertices as excluded from reports. Inference still uses all vertices.
OpinionGraph induced_analysis_graph(const OpinionGraph& graph, bool exclude_seeds);

/// Writes `contents` to `path` via a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace opingraph
