#include "opingraph/report.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace opingraph {

namespace {

std::ostringstream precise() {
    std::ostringstream os;
    os.precision(17);
    return os;
}

}  // namespace

std::string errors_tsv(const std::vector<ErrorEstimates>& errors) {
    auto os = precise();
    os << "q\tgibbs\tmap\tbayes\ttraining\tgibbs_se\tmap_se\tbayes_se\ttraining_se\n";
    for (const auto& e : errors)
        os << e.q << '\t' << e.gibbs.mean << '\t' << e.map.mean << '\t' << e.bayes.mean << '\t'
           << e.training.mean << '\t' << e.gibbs.se << '\t' << e.map.se << '\t' << e.bayes.se << '\t'
           << e.training.se << '\n';
    return os.str();
}

std::string flows_tsv(const std::vector<FlowRecord>& flows) {
    std::ostringstream os;
    os << "from_q\tfrom_group\tto_q\tto_group\tcount\tdark\n";
    for (const auto& f : flows)
        os << f.from_q << '\t' << f.from_group << '\t' << f.to_q << '\t' << f.to_group << '\t' << f.count
           << '\t' << (f.dark ? 1 : 0) << '\n';
    return os.str();
}

std::string labels_tsv(const OpinionGraph& graph, const FitResult& fit) {
    auto os = precise();
    os << "vertex_id\tgroup\tmax_probability\ttypical\n";
    for (std::size_t i : graph.report_vertices()) {
        const auto m = fit.marginal(i);
        os << graph.vertices()[i].id << '\t' << fit.map_labels[i] << '\t'
           << *std::max_element(m.begin(), m.end()) << '\t' << (fit.typical[i] ? 1 : 0) << '\n';
    }
    return os.str();
}

std::vector<std::pair<std::string, int>> read_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw GraphError("cannot open label file " + path.string());
    std::vector<std::pair<std::string, int>> out;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (lineno == 1 && line.rfind("vertex_id\t", 0) == 0) continue;
        const auto tab = line.find('\t');
        const auto where = path.string() + ":" + std::to_string(lineno);
        if (tab == std::string::npos || tab == 0) throw GraphError(where + ": expected `id<TAB>group`");
        std::string id = line.substr(0, tab);
        const auto end = line.find('\t', tab + 1);
        const std::string field = line.substr(tab + 1, end == std::string::npos ? std::string::npos : end - tab - 1);
        int group = 0;
        auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), group);
        if (ec != std::errc() || ptr != field.data() + field.size() || group < 0)
            throw GraphError(where + ": bad group '" + field + "'");
        if (!seen.insert(id).second) throw GraphError(where + ": repeated vertex id '" + id + "'");
        out.emplace_back(std::move(id), group);
    }
    return out;
}

}  // namespace opingraph
