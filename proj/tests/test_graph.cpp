#include "opingraph/graph.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

using namespace opingraph;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("opingraph_test_graph_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

OpinionGraph signed_counts(int n_pos, int n_neg) {
    std::vector<Vertex> vs(6);
    for (int i = 0; i < 6; ++i) {
        vs[i].id = "v" + std::to_string(i);
        vs[i].text = "text " + std::to_string(i);
    }
    std::vector<Edge> es;
    for (int k = 0; k < n_pos; ++k) es.push_back({std::size_t(k % 6), std::size_t((k + 1) % 6), EdgeLabel::Positive});
    for (int k = 0; k < n_neg; ++k) es.push_back({std::size_t(k % 6), std::size_t((k + 2) % 6), EdgeLabel::Negative});
    return OpinionGraph("q", vs, es);
}

}  // namespace

TEST_CASE("normalize_text trims and collapses whitespace, keeps case") {
    CHECK(normalize_text("  Hello \t  World\n") == "Hello World");
    CHECK(normalize_text("already clean") == "already clean");
    CHECK(normalize_text("   ") == "");
    CHECK(normalize_text("日本  語") == "日本 語");
}

TEST_CASE("two vertices and one positive edge") {
    const auto g = parse_graph(R"({"question":"q","vertices":[{"id":"a","text":"x","respondent":"r1","seed":false},
        {"id":"b","text":"y","respondent":null,"seed":true}],"edges":[{"src":"a","dst":"b","label":1}]})");
    CHECK(g.num_vertices() == 2);
    CHECK(g.num_informative_edges() == 1);
    CHECK(g.degree_positive() == std::vector<int>{1, 1});
    CHECK(g.degree_negative() == std::vector<int>{0, 0});
    CHECK(g.vertices()[1].is_seed);
    CHECK_FALSE(g.vertices()[1].respondent_id.has_value());
}

TEST_CASE("invalid documents are rejected") {
    SUBCASE("self-loop names the edge") {
        try {
            parse_graph(R"({"vertices":[{"id":"a","text":"x"}],"edges":[{"src":"a","dst":"a","label":1}]})");
            FAIL("expected an error");
        } catch (const GraphError& e) {
            CHECK(std::string(e.what()).find("self-loop") != std::string::npos);
            CHECK(std::string(e.what()).find("edge 0") != std::string::npos);
        }
    }
    SUBCASE("unknown endpoint") {
        CHECK_THROWS_AS(parse_graph(R"({"vertices":[{"id":"a","text":"x"}],"edges":[{"src":"a","dst":"b","label":1}]})"),
                        GraphError);
    }
    SUBCASE("duplicate id") {
        CHECK_THROWS_AS(parse_graph(R"({"vertices":[{"id":"a","text":"x"},{"id":"a","text":"y"}],"edges":[]})"),
                        GraphError);
    }
    SUBCASE("bad label") {
        CHECK_THROWS_AS(parse_graph(R"({"vertices":[{"id":"a","text":"x"},{"id":"b","text":"y"}],
            "edges":[{"src":"a","dst":"b","label":2}]})"),
                        GraphError);
    }
    SUBCASE("empty text") {
        CHECK_THROWS_AS(parse_graph(R"({"vertices":[{"id":"a","text":""}],"edges":[]})"), GraphError);
    }
    SUBCASE("not json") { CHECK_THROWS_AS(parse_graph("{"), GraphError); }
    SUBCASE("missing field") { CHECK_THROWS_AS(parse_graph(R"({"vertices":[]})"), GraphError); }
}

TEST_CASE("degrees and bonds follow the edge multiset") {
    std::vector<Vertex> vs(3);
    for (int i = 0; i < 3; ++i) {
        vs[i].id = std::to_string(i);
        vs[i].text = "t";
    }
    const OpinionGraph g("q", vs,
                         {{0, 1, EdgeLabel::Positive},
                          {1, 0, EdgeLabel::Positive},
                          {0, 1, EdgeLabel::Negative},
                          {2, 1, EdgeLabel::Neutral},
                          {1, 2, EdgeLabel::Negative}});
    CHECK(g.count_positive() == 2);
    CHECK(g.count_negative() == 2);
    CHECK(g.count_neutral() == 1);
    CHECK(g.degree_positive() == std::vector<int>{2, 2, 0});
    CHECK(g.degree_negative() == std::vector<int>{1, 2, 1});
    REQUIRE(g.bonds().size() == 2);
    CHECK(g.bonds()[0].n_pos == 2);
    CHECK(g.bonds()[0].n_neg == 1);
    CHECK(g.bond_of_edge(3) == OpinionGraph::npos);
    CHECK(g.bond_of_edge(4) == 1);
    int dp = 0, dn = 0;
    for (int d : g.degree_positive()) dp += d;
    for (int d : g.degree_negative()) dn += d;
    CHECK(dp == 2 * static_cast<int>(g.count_positive()));
    CHECK(dn == 2 * static_cast<int>(g.count_negative()));
}

TEST_CASE("save then load reproduces the graph") {
    const auto dir = scratch_dir("roundtrip");
    std::vector<Vertex> vs(3);
    for (int i = 0; i < 3; ++i) {
        vs[i].id = "id" + std::to_string(i);
        vs[i].text = "réponse  " + std::to_string(i);
        vs[i].is_seed = i == 0;
        if (i) vs[i].respondent_id = "resp" + std::to_string(i);
    }
    const OpinionGraph g("How?", vs,
                         {{0, 1, EdgeLabel::Positive}, {2, 1, EdgeLabel::Negative}, {2, 0, EdgeLabel::Neutral}},
                         {{"source", "unit"}});
    save_graph(g, dir / "g.json");
    const auto h = load_graph(dir / "g.json");
    CHECK(serialize_graph(h) == serialize_graph(g));
    CHECK(h.question() == "How?");
    REQUIRE(h.edges().size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
        CHECK(h.edges()[e].src == g.edges()[e].src);
        CHECK(h.edges()[e].dst == g.edges()[e].dst);
        CHECK(h.edges()[e].label == g.edges()[e].label);
    }
    CHECK(h.metadata().at("source") == "unit");
    CHECK(h.vertices()[1].text_key == "réponse 1");
    fs::remove_all(dir);
}

TEST_CASE("neutralize_excess") {
    SUBCASE("4 positive, 10 negative -> 6 neutral") {
        const auto g = signed_counts(4, 10);
        const auto h = neutralize_excess(g, 7);
        CHECK(h.count_positive() == 4);
        CHECK(h.count_negative() == 4);
        CHECK(h.count_neutral() == 6);
        CHECK(h.num_vertices() == g.num_vertices());
        for (std::size_t e = 0; e < g.edges().size(); ++e)
            if (g.edges()[e].label == EdgeLabel::Positive) CHECK(h.edges()[e].label == EdgeLabel::Positive);
    }
    SUBCASE("10 positive, 7 negative -> unchanged") {
        const auto g = signed_counts(10, 7);
        CHECK(serialize_graph(neutralize_excess(g, 3)) == serialize_graph(g));
    }
    SUBCASE("same seed gives the same edges") {
        const auto g = signed_counts(3, 12);
        CHECK(serialize_graph(neutralize_excess(g, 11)) == serialize_graph(neutralize_excess(g, 11)));
    }
    SUBCASE("every negative edge can be chosen") {
        const auto g = signed_counts(1, 6);
        std::set<std::size_t> hit;
        for (std::uint64_t s = 0; s < 200; ++s) {
            const auto h = neutralize_excess(g, s);
            for (std::size_t e = 0; e < h.edges().size(); ++e)
                if (h.edges()[e].label == EdgeLabel::Neutral) hit.insert(e);
        }
        CHECK(hit.size() == 6);
    }
}

TEST_CASE("induced_analysis_graph hides seeds from reports only") {
    std::vector<Vertex> vs(15);
    for (int i = 0; i < 15; ++i) {
        vs[i].id = std::to_string(i);
        vs[i].text = "t";
        vs[i].is_seed = i < 12;
    }
    const OpinionGraph g("q", vs, {{0, 13, EdgeLabel::Positive}});
    const auto h = induced_analysis_graph(g, true);
    CHECK(h.report_vertices().size() == 3);
    CHECK(h.num_vertices() == 15);
    CHECK(h.num_informative_edges() == 1);
    CHECK(induced_analysis_graph(g, false).report_vertices().size() == 15);

    std::vector<Vertex> plain(2);
    plain[0] = {"a", "x", std::nullopt, false, ""};
    plain[1] = {"b", "y", std::nullopt, false, ""};
    const OpinionGraph p("q", plain, {});
    CHECK(induced_analysis_graph(p, true).report_vertices().size() == 2);
    CHECK(induced_analysis_graph(p, false).report_vertices().size() == 2);
}

TEST_CASE("edge list import") {
    const auto dir = scratch_dir("import");
    {
        std::ofstream v(dir / "v.tsv");
        v << "# id\trespondent\tseed\ttext\n";
        v << "a\tr1\t0\tfirst answer\n";
        v << "b\t-\t1\tseed answer\n";
        v << "c\t\t0\tthird\twith tab\n";
        std::ofstream e(dir / "e.txt");
        e << "# src dst label\n"
          << "a b 1\n"
          << "c b -1\n"
          << "\n"
          << "a c 0\n";
    }
    const auto g = import_edge_list(dir / "e.txt", dir / "v.tsv", "Q");
    CHECK(g.num_vertices() == 3);
    CHECK(g.count_positive() == 1);
    CHECK(g.count_negative() == 1);
    CHECK(g.count_neutral() == 1);
    CHECK(g.vertices()[1].is_seed);
    CHECK_FALSE(g.vertices()[1].respondent_id.has_value());
    CHECK(*g.vertices()[0].respondent_id == "r1");

    {
        std::ofstream e(dir / "bad.txt");
        e << "a b seven\n";
    }
    CHECK_THROWS_AS(import_edge_list(dir / "bad.txt", dir / "v.tsv"), GraphError);
    fs::remove_all(dir);
}

TEST_CASE("write_file_atomic replaces the file and leaves no temporary") {
    const auto dir = scratch_dir("atomic");
    write_file_atomic(dir / "f.txt", "one");
    write_file_atomic(dir / "f.txt", "two");
    std::ifstream in(dir / "f.txt");
    std::string s;
    std::getline(in, s);
    CHECK(s == "two");
    CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator()) == 1);
    fs::remove_all(dir);
}
