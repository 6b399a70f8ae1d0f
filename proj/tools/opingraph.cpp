// Command-line entry points: survey service, fitting, sweeps and reports.

#include "opingraph/graph.hpp"
#include "opingraph/inference.hpp"
#include "opingraph/metrics.hpp"
#include "opingraph/model_selection.hpp"
#include "opingraph/report.hpp"
#include "opingraph/survey.hpp"
#include "opingraph/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>
#include <pthread.h>
#include <thread>

namespace fs = std::filesystem;
using namespace opingraph;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Args {
    std::string graph;
    int qmin = 1;
    int qmax = 6;
    int q = 2;
    int restarts = 10;
    std::uint64_t seed = 1;
    bool dc = false;
    bool exclude_seeds = false;
    double threshold = 0.9;
    std::string out = ".";
    int port = 8080;
    std::string host = "127.0.0.1";
    std::string data_dir = "survey-data";
    std::string labels_a, labels_b;
    int n_random = 1000;
    std::string edges, vertices, question;
    std::size_t n = 1000;
    double c_pos = 6.0, c_neg = 6.0, strength = 0.8;
    std::vector<double> strengths;
    int trials = 5;
};

OpinionGraph read_graph(const Args& a) {
    auto g = load_graph(a.graph);
    return a.exclude_seeds ? induced_analysis_graph(g, true) : g;
}

FitOptions fit_options(const Args& a) {
    FitOptions fo;
    fo.degree_corrected = a.dc;
    fo.restarts = a.restarts;
    fo.rng_seed = a.seed;
    fo.typical_threshold = a.threshold;
    return fo;
}

void prepare_out(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

int cmd_sweep(const Args& a) {
    if (a.qmin < 1 || a.qmax < a.qmin) throw UsageError("need 1 <= --qmin <= --qmax");
    if (a.restarts < 1) throw UsageError("--restarts must be at least 1");
    const auto graph = read_graph(a);
    if (static_cast<std::size_t>(a.qmax) > graph.num_vertices())
        throw UsageError("--qmax exceeds the number of vertices");

    SweepOptions so;
    so.q_min = a.qmin;
    so.q_max = a.qmax;
    so.fit = fit_options(a);
    const auto result = sweep(graph, so);

    // Everything is computed before the first file is written.
    std::map<std::string, std::string> files;
    files["errors.tsv"] = errors_tsv(result.errors);
    files["flows.tsv"] = flows_tsv(result.flows);
    for (int q = a.qmin; q <= a.qmax; ++q) {
        files["labels_q" + std::to_string(q) + ".tsv"] = labels_tsv(graph, result.fit_at(q));
        files["fit_q" + std::to_string(q) + ".json"] = fit_to_json(graph, result.fit_at(q));
    }
    if (a.qmax > a.qmin) {
        const auto rec = recommend_q(result);
        nlohmann::json j = {{"q_candidates", rec.q_candidates},
                            {"q_final", rec.q_final},
                            {"q_hierarchical", rec.q_hierarchical},
                            {"refinement", rec.refinement}};
        files["recommendation.json"] = j.dump(2) + "\n";
        std::cout << "recommended q: " << rec.q_final << "\n";
    }
    prepare_out(a.out);
    for (const auto& [name, body] : files) write_file_atomic(fs::path(a.out) / name, body);
    for (const auto& e : result.errors)
        if (!e.converged) std::cerr << "warning: q=" << e.q << " fit did not converge\n";
    return kOk;
}

int cmd_fit(const Args& a) {
    if (a.q < 1) throw UsageError("--q must be at least 1");
    const auto graph = read_graph(a);
    if (static_cast<std::size_t>(a.q) > graph.num_vertices()) throw UsageError("--q exceeds the number of vertices");
    const auto fit = run_em(graph, a.q, fit_options(a));
    const auto err = loocv_errors(graph, fit);
    const std::string fit_json = fit_to_json(graph, fit);
    const std::string labels = labels_tsv(graph, fit);
    const std::string errors = errors_tsv({err});
    prepare_out(a.out);
    const auto suffix = std::to_string(a.q);
    write_file_atomic(fs::path(a.out) / ("fit_q" + suffix + ".json"), fit_json);
    write_file_atomic(fs::path(a.out) / ("labels_q" + suffix + ".tsv"), labels);
    write_file_atomic(fs::path(a.out) / ("errors_q" + suffix + ".tsv"), errors);
    if (!fit.converged) std::cerr << "warning: fit did not converge\n";
    return kOk;
}

int cmd_compare(const Args& a) {
    const auto la = read_labels(a.labels_a);
    const auto lb = read_labels(a.labels_b);
    std::map<std::string, int> mb(lb.begin(), lb.end());
    if (la.size() != lb.size()) throw MetricsError("label files cover different vertex sets");
    std::vector<int> va, vb;
    for (const auto& [id, g] : la) {
        auto it = mb.find(id);
        if (it == mb.end()) throw MetricsError("vertex '" + id + "' missing from " + a.labels_b);
        va.push_back(g);
        vb.push_back(it->second);
    }
    std::cout.precision(12);
    std::cout << "nmi\t" << nmi(va, vb) << "\n";
    std::cout << "ari\t" << ari(va, vb) << "\n";
    if (!a.graph.empty()) {
        const auto graph = load_graph(a.graph);
        std::map<std::string, int> ma(la.begin(), la.end());
        auto cover = [&](const std::map<std::string, int>& m, const char* which) {
            std::vector<int> v;
            for (const auto& vert : graph.vertices()) {
                auto it = m.find(vert.id);
                if (it == m.end()) throw MetricsError(std::string(which) + " has no label for vertex '" + vert.id + "'");
                v.push_back(it->second);
            }
            return v;
        };
        const auto ga = cover(ma, "first label file");
        const auto gb = cover(mb, "second label file");
        std::cout << "agreement_a\t" << agreement_score(graph, ga) << "\n";
        std::cout << "agreement_b\t" << agreement_score(graph, gb) << "\n";
        std::cout << "adjusted_agreement_a\t" << adjusted_agreement_score(graph, ga, a.n_random, a.seed) << "\n";
        std::cout << "adjusted_agreement_b\t" << adjusted_agreement_score(graph, gb, a.n_random, a.seed) << "\n";
    }
    return kOk;
}

int cmd_convert(const Args& a) {
    const auto g = import_edge_list(a.edges, a.vertices, a.question);
    save_graph(g, a.out);
    return kOk;
}

int cmd_generate(const Args& a) {
    if (a.q < 1 || a.n < static_cast<std::size_t>(a.q)) throw UsageError("need 1 <= --q <= --n");
    const auto planted = sample_graph(planted_signed_spec(a.n, a.q, a.c_pos, a.c_neg, a.strength, a.seed));
    std::string labels = "vertex_id\tgroup\n";
    for (std::size_t i = 0; i < a.n; ++i)
        labels += planted.graph.vertices()[i].id + "\t" + std::to_string(planted.labels[i]) + "\n";
    prepare_out(a.out);
    save_graph(planted.graph, fs::path(a.out) / "graph.json");
    write_file_atomic(fs::path(a.out) / "planted_labels.tsv", labels);
    return kOk;
}

int cmd_recover(const Args& a) {
    if (a.q < 1 || a.trials < 1 || a.strengths.empty()) throw UsageError("need --q >= 1, --trials >= 1 and --strength values");
    RecoveryConfig rc;
    rc.n = a.n;
    rc.q = a.q;
    rc.c_pos = a.c_pos;
    rc.c_neg = a.c_neg;
    rc.strengths = a.strengths;
    rc.trials = a.trials;
    rc.rng_seed = a.seed;
    rc.fit = fit_options(a);
    const auto rows = recovery_experiment(rc);
    const auto body = recovery_table_tsv(rows);
    if (a.out == "-") {
        std::cout << body;
    } else {
        prepare_out(fs::path(a.out).parent_path().empty() ? "." : fs::path(a.out).parent_path().string());
        write_file_atomic(a.out, body);
    }
    for (const auto& [s, m] : mean_nmi_by_strength(rows)) std::cerr << "strength " << s << " mean nmi " << m << "\n";
    return kOk;
}

int cmd_serve(const Args& a) {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    SurveyStore::Options so;
    so.data_dir = a.data_dir;
    so.seed = a.seed;
    SurveyStore store(std::move(so));
    SurveyServer server(store);
    const int port = server.bind(a.host, a.port);
    if (port < 0) {
        std::cerr << "error: cannot listen on " << a.host << ":" << a.port << " (port in use?)\n";
        return kRuntime;
    }
    std::cerr << "listening on " << a.host << ":" << port << "\n" << std::flush;
    std::thread worker([&] { server.listen(); });
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
    worker.join();
    store.snapshot();
    std::cerr << "shut down on signal " << sig << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Opinion-graph survey service and clustering tools"};
    app.require_subcommand(1);
    Args a;

    auto add_fit_flags = [&](CLI::App* c) {
        c->add_option("--restarts", a.restarts, "EM restarts per q")->envname("OPINGRAPH_RESTARTS");
        c->add_option("--seed", a.seed, "RNG seed")->envname("OPINGRAPH_SEED");
        c->add_flag("--dc", a.dc, "degree-corrected model");
        c->add_option("--threshold", a.threshold, "typicality threshold on the largest marginal");
        c->add_flag("--exclude-seeds", a.exclude_seeds, "drop seed responses from reports");
    };

    auto* serve = app.add_subcommand("serve", "run the survey HTTP service");
    serve->add_option("--port", a.port, "listen port")->envname("OPINGRAPH_PORT");
    serve->add_option("--host", a.host, "listen address")->envname("OPINGRAPH_HOST");
    serve->add_option("--data-dir", a.data_dir, "event log directory")->envname("OPINGRAPH_DATA_DIR");
    serve->add_option("--seed", a.seed, "sampling seed")->envname("OPINGRAPH_SEED");

    auto* sw = app.add_subcommand("sweep", "fit q = qmin..qmax and write error curves, flows and labels");
    sw->add_option("--graph", a.graph, "graph file")->required()->envname("OPINGRAPH_GRAPH");
    sw->add_option("--qmin", a.qmin, "smallest q");
    sw->add_option("--qmax", a.qmax, "largest q");
    sw->add_option("--out", a.out, "output directory")->envname("OPINGRAPH_OUT");
    add_fit_flags(sw);

    auto* fit = app.add_subcommand("fit", "fit a single q");
    fit->add_option("--graph", a.graph, "graph file")->required()->envname("OPINGRAPH_GRAPH");
    fit->add_option("--q", a.q, "number of groups")->required();
    fit->add_option("--out", a.out, "output directory")->envname("OPINGRAPH_OUT");
    add_fit_flags(fit);

    auto* cmp = app.add_subcommand("compare", "compare two label files");
    cmp->add_option("labels_a", a.labels_a, "first label file")->required();
    cmp->add_option("labels_b", a.labels_b, "second label file")->required();
    cmp->add_option("--graph", a.graph, "graph for agreement scores");
    cmp->add_option("--random", a.n_random, "shuffles for the adjusted agreement score");
    cmp->add_option("--seed", a.seed, "shuffle seed")->envname("OPINGRAPH_SEED");

    auto* conv = app.add_subcommand("convert", "edge list + vertex table to a graph file");
    conv->add_option("--edges", a.edges, "edge list")->required();
    conv->add_option("--vertices", a.vertices, "vertex table")->required();
    conv->add_option("--question", a.question, "question text");
    conv->add_option("--out", a.out, "graph file to write")->required();

    auto* gen = app.add_subcommand("generate", "sample a planted signed graph");
    gen->add_option("--n", a.n, "vertices");
    gen->add_option("--q", a.q, "groups");
    gen->add_option("--cpos", a.c_pos, "mean positive degree");
    gen->add_option("--cneg", a.c_neg, "mean negative degree");
    gen->add_option("--strength", a.strength, "planted strength in [0, 1]");
    gen->add_option("--seed", a.seed, "RNG seed")->envname("OPINGRAPH_SEED");
    gen->add_option("--out", a.out, "output directory")->envname("OPINGRAPH_OUT");

    auto* rec = app.add_subcommand("recover", "planted-partition recovery table");
    rec->add_option("--n", a.n, "vertices");
    rec->add_option("--q", a.q, "groups");
    rec->add_option("--cpos", a.c_pos, "mean positive degree");
    rec->add_option("--cneg", a.c_neg, "mean negative degree");
    rec->add_option("--strength", a.strengths, "strength levels")->required();
    rec->add_option("--trials", a.trials, "trials per level");
    rec->add_option("--out", a.out, "table path, - for stdout");
    add_fit_flags(rec);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*serve) return cmd_serve(a);
        if (*sw) return cmd_sweep(a);
        if (*fit) return cmd_fit(a);
        if (*cmp) return cmd_compare(a);
        if (*conv) return cmd_convert(a);
        if (*gen) return cmd_generate(a);
        if (*rec) return cmd_recover(a);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const GraphError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const MetricsError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
    return kUsage;
}
