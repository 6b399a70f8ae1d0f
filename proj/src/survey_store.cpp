#include "opingraph/survey.hpp"

#include "opingraph/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

namespace opingraph {

using nlohmann::json;

void to_json(json& j, const QuestionDef& q) {
    j = {{"id", q.id}, {"prompt", q.prompt}, {"k", q.k}, {"seeds", q.seeds}};
}

void from_json(const json& j, QuestionDef& q) {
    q.id = j.at("id").get<std::string>();
    q.prompt = j.at("prompt").get<std::string>();
    q.k = j.value("k", 6);
    q.seeds = j.value("seeds", std::vector<std::string>{});
}

void to_json(json& j, const SurveyDef& s) {
    j = {{"id", s.id}, {"title", s.title}, {"questions", s.questions}};
}

void from_json(const json& j, SurveyDef& s) {
    s.id = j.at("id").get<std::string>();
    s.title = j.value("title", std::string{});
    s.questions = j.at("questions").get<std::vector<QuestionDef>>();
}

namespace {

constexpr const char* kLogName = "events.jsonl";
constexpr const char* kSnapshotName = "snapshot.json";

struct Ticket {
    std::string id;
    std::string respondent;
    std::vector<std::string> shown;
    std::int64_t expires_at = 0;
    bool used = false;
};

struct Judgment {
    std::string ticket;
    std::string respondent;
    std::optional<std::string> own;
    std::vector<std::pair<std::string, bool>> shown;
    std::int64_t created_at = 0;
};

struct QuestionState {
    QuestionDef def;
    std::vector<ResponseRecord> responses;
    std::map<std::string, std::size_t> by_respondent;
    std::map<std::string, std::size_t> by_id;
    std::map<std::string, Ticket> tickets;
    std::map<std::string, std::string> ticket_of;  // respondent -> latest ticket
    std::vector<Judgment> judgments;
    std::size_t dropped = 0;  // skipped Step 1 and selected nothing
};

struct SurveyState {
    SurveyDef def;
    std::map<std::string, QuestionState> questions;
};

template <class T>
json optional_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> optional_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

bool valid_id(const std::string& id) {
    static const std::regex pattern("[A-Za-z0-9_.-]{1,128}");
    return std::regex_match(id, pattern);
}

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

}  // namespace

struct SurveyStore::State {
    std::map<std::string, SurveyState> surveys;
    std::uint64_t sample_counter = 0;
    std::size_t events = 0;

    QuestionState& question(const std::string& s, const std::string& q) {
        auto it = surveys.find(s);
        if (it == surveys.end()) throw SurveyError(404, "unknown survey '" + s + "'");
        auto qt = it->second.questions.find(q);
        if (qt == it->second.questions.end()) throw SurveyError(404, "unknown question '" + q + "'");
        return qt->second;
    }
    const QuestionState& question(const std::string& s, const std::string& q) const {
        return const_cast<State*>(this)->question(s, q);
    }

    static void add_response(QuestionState& qs, ResponseRecord r) {
        qs.by_id[r.id] = qs.responses.size();
        if (r.respondent) qs.by_respondent[*r.respondent] = qs.responses.size();
        qs.responses.push_back(std::move(r));
    }

    // Events are validated before they are logged, so applying one never fails.
    void apply(const json& ev) {
        const auto type = ev.at("type").get<std::string>();
        if (type == "survey") {
            SurveyState st;
            st.def = ev.at("def").get<SurveyDef>();
            const auto at = ev.at("at").get<std::int64_t>();
            for (const auto& qd : st.def.questions) {
                QuestionState qs;
                qs.def = qd;
                for (const auto& text : qd.seeds) {
                    ResponseRecord r;
                    r.id = "s" + std::to_string(qs.responses.size());
                    r.question_id = qd.id;
                    r.text = text;
                    r.is_seed = true;
                    r.created_at = at;
                    r.text_key = normalize_text(text);
                    add_response(qs, std::move(r));
                }
                st.questions.emplace(qd.id, std::move(qs));
            }
            surveys.emplace(st.def.id, std::move(st));
        } else if (type == "response") {
            auto& qs = question(ev.at("survey"), ev.at("question"));
            ResponseRecord r;
            r.id = "r" + std::to_string(qs.responses.size());
            r.question_id = qs.def.id;
            r.respondent = ev.at("respondent").get<std::string>();
            r.text = optional_from<std::string>(ev, "text");
            r.created_at = ev.at("at").get<std::int64_t>();
            if (r.text) r.text_key = normalize_text(*r.text);
            add_response(qs, std::move(r));
        } else if (type == "ticket") {
            auto& qs = question(ev.at("survey"), ev.at("question"));
            Ticket t;
            t.id = ev.at("ticket").get<std::string>();
            t.respondent = ev.at("respondent").get<std::string>();
            t.shown = ev.at("shown").get<std::vector<std::string>>();
            t.expires_at = ev.at("expires_at").get<std::int64_t>();
            qs.ticket_of[t.respondent] = t.id;
            qs.tickets[t.id] = std::move(t);
            sample_counter = std::max(sample_counter, ev.at("counter").get<std::uint64_t>() + 1);
        } else if (type == "judgment") {
            auto& qs = question(ev.at("survey"), ev.at("question"));
            auto& t = qs.tickets.at(ev.at("ticket").get<std::string>());
            t.used = true;
            Judgment j;
            j.ticket = t.id;
            j.respondent = t.respondent;
            j.created_at = ev.at("at").get<std::int64_t>();
            const auto similar = ev.at("similar").get<std::vector<bool>>();
            for (std::size_t k = 0; k < t.shown.size(); ++k) j.shown.emplace_back(t.shown[k], similar[k]);

            auto& own = qs.responses[qs.by_respondent.at(t.respondent)];
            if (!own.text) {
                // Deferred vertex: adopt the first selected response's text.
                for (const auto& [id, sim] : j.shown)
                    if (sim) {
                        own.text = qs.responses[qs.by_id.at(id)].text;
                        own.text_key = normalize_text(*own.text);
                        break;
                    }
            }
            if (own.text)
                j.own = own.id;
            else
                ++qs.dropped;
            qs.judgments.push_back(std::move(j));
        } else {
            throw std::runtime_error("unknown event type '" + type + "'");
        }
        ++events;
    }

    json to_json_doc() const {
        json doc;
        doc["sample_counter"] = sample_counter;
        doc["events"] = events;
        json ss = json::array();
        for (const auto& [sid, st] : surveys) {
            json js;
            js["def"] = st.def;
            json qs = json::object();
            for (const auto& [qid, q] : st.questions) {
                json jq;
                json rs = json::array();
                for (const auto& r : q.responses)
                    rs.push_back({{"id", r.id}, {"respondent", optional_json(r.respondent)},
                                  {"text", optional_json(r.text)}, {"seed", r.is_seed}, {"at", r.created_at}});
                jq["responses"] = std::move(rs);
                json ts = json::array();
                for (const auto& [tid, t] : q.tickets)
                    ts.push_back({{"id", t.id}, {"respondent", t.respondent}, {"shown", t.shown},
                                  {"expires_at", t.expires_at}, {"used", t.used}});
                jq["tickets"] = std::move(ts);
                jq["ticket_of"] = q.ticket_of;
                json js_j = json::array();
                for (const auto& j : q.judgments) {
                    json shown = json::array();
                    for (const auto& [id, sim] : j.shown) shown.push_back({id, sim});
                    js_j.push_back({{"ticket", j.ticket}, {"respondent", j.respondent}, {"own", optional_json(j.own)},
                                    {"shown", std::move(shown)}, {"at", j.created_at}});
                }
                jq["judgments"] = std::move(js_j);
                jq["dropped"] = q.dropped;
                qs[qid] = std::move(jq);
            }
            js["questions"] = std::move(qs);
            ss.push_back(std::move(js));
        }
        doc["surveys"] = std::move(ss);
        return doc;
    }

    static State from_json_doc(const json& doc) {
        State s;
        s.sample_counter = doc.at("sample_counter").get<std::uint64_t>();
        s.events = doc.at("events").get<std::size_t>();
        for (const auto& js : doc.at("surveys")) {
            SurveyState st;
            st.def = js.at("def").get<SurveyDef>();
            for (const auto& qd : st.def.questions) {
                const auto& jq = js.at("questions").at(qd.id);
                QuestionState q;
                q.def = qd;
                for (const auto& jr : jq.at("responses")) {
                    ResponseRecord r;
                    r.id = jr.at("id").get<std::string>();
                    r.question_id = qd.id;
                    r.respondent = optional_from<std::string>(jr, "respondent");
                    r.text = optional_from<std::string>(jr, "text");
                    r.is_seed = jr.at("seed").get<bool>();
                    r.created_at = jr.at("at").get<std::int64_t>();
                    if (r.text) r.text_key = normalize_text(*r.text);
                    add_response(q, std::move(r));
                }
                for (const auto& jt : jq.at("tickets")) {
                    Ticket t;
                    t.id = jt.at("id").get<std::string>();
                    t.respondent = jt.at("respondent").get<std::string>();
                    t.shown = jt.at("shown").get<std::vector<std::string>>();
                    t.expires_at = jt.at("expires_at").get<std::int64_t>();
                    t.used = jt.at("used").get<bool>();
                    q.tickets[t.id] = std::move(t);
                }
                q.ticket_of = jq.at("ticket_of").get<std::map<std::string, std::string>>();
                for (const auto& jj : jq.at("judgments")) {
                    Judgment j;
                    j.ticket = jj.at("ticket").get<std::string>();
                    j.respondent = jj.at("respondent").get<std::string>();
                    j.own = optional_from<std::string>(jj, "own");
                    for (const auto& p : jj.at("shown")) j.shown.emplace_back(p.at(0).get<std::string>(), p.at(1).get<bool>());
                    j.created_at = jj.at("at").get<std::int64_t>();
                    q.judgments.push_back(std::move(j));
                }
                q.dropped = jq.at("dropped").get<std::size_t>();
                st.questions.emplace(qd.id, std::move(q));
            }
            s.surveys.emplace(st.def.id, std::move(st));
        }
        return s;
    }
};

SurveyStore::SurveyStore(Options options) : options_(std::move(options)), state_(std::make_unique<State>()) {
    if (!options_.clock)
        options_.clock = [] {
            return std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                .count();
        };
    if (options_.snapshot_every == 0) options_.snapshot_every = 1;
    std::filesystem::create_directories(options_.data_dir);
    const auto log_path = options_.data_dir / kLogName;
    const auto snap_path = options_.data_dir / kSnapshotName;

    std::size_t skip = 0;
    if (std::filesystem::exists(snap_path)) {
        try {
            std::ifstream in(snap_path);
            *state_ = State::from_json_doc(json::parse(in));
            skip = state_->events;
        } catch (const std::exception&) {
            // A damaged snapshot is only an optimisation; rebuild from the log.
            *state_ = State{};
            skip = 0;
        }
    }

    if (std::filesystem::exists(log_path)) {
        std::ifstream in(log_path, std::ios::binary);
        const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto replay = [&](std::size_t from) {
            std::size_t pos = 0, index = 0;
            while (pos < content.size()) {
                const auto nl = content.find('\n', pos);
                if (nl == std::string::npos) break;  // torn final write
                json ev;
                try {
                    ev = json::parse(content.substr(pos, nl - pos));
                } catch (const json::exception&) {
                    throw std::runtime_error("corrupt event log line " + std::to_string(index + 1) + " in " +
                                             log_path.string());
                }
                if (index >= from) state_->apply(ev);
                ++index;
                pos = nl + 1;
            }
            return std::make_pair(index, pos);
        };
        auto [lines, good_end] = replay(skip);
        if (lines < skip) {
            // Snapshot is ahead of the log; trust the log alone.
            *state_ = State{};
            replay(0);
        }
        if (good_end < content.size()) std::filesystem::resize_file(log_path, good_end);
    }

    log_ = std::fopen(log_path.c_str(), "ab");
    if (!log_) throw std::runtime_error("cannot open event log " + log_path.string());
}

SurveyStore::~SurveyStore() {
    if (log_) {
        std::fflush(log_);
        ::fsync(::fileno(log_));
        std::fclose(log_);
    }
}

std::int64_t SurveyStore::now() const { return options_.clock(); }

void SurveyStore::append(const std::string& line) {
    const std::string out = line + "\n";
    if (std::fwrite(out.data(), 1, out.size(), log_) != out.size() || std::fflush(log_) != 0 ||
        ::fsync(::fileno(log_)) != 0)
        throw SurveyError(500, "failed to persist event");
}

void SurveyStore::write_snapshot_locked() {
    write_file_atomic(options_.data_dir / kSnapshotName, state_->to_json_doc().dump() + "\n");
}

void SurveyStore::snapshot() {
    std::unique_lock lock(mutex_);
    write_snapshot_locked();
}

std::size_t SurveyStore::events_applied() const {
    std::shared_lock lock(mutex_);
    return state_->events;
}

namespace {

void commit(SurveyStore::State& state, const json& ev, const std::function<void(const std::string&)>& log,
            std::size_t snapshot_every, const std::function<void()>& snap) {
    log(ev.dump());
    state.apply(ev);
    if (state.events % snapshot_every == 0) snap();
}

}  // namespace

SurveyDef SurveyStore::create_survey(const SurveyDef& def) {
    if (!valid_id(def.id)) throw SurveyError(400, "survey id must match [A-Za-z0-9_.-]+");
    if (def.questions.empty()) throw SurveyError(400, "a survey needs at least one question");
    std::set<std::string> ids;
    for (const auto& q : def.questions) {
        if (!valid_id(q.id)) throw SurveyError(400, "question id must match [A-Za-z0-9_.-]+");
        if (!ids.insert(q.id).second) throw SurveyError(400, "duplicate question id '" + q.id + "'");
        if (normalize_text(q.prompt).empty()) throw SurveyError(400, "question '" + q.id + "' has an empty prompt");
        if (q.k < 1) throw SurveyError(400, "question '" + q.id + "' needs k >= 1");
        for (const auto& s : q.seeds)
            if (normalize_text(s).empty()) throw SurveyError(400, "question '" + q.id + "' has an empty seed");
    }
    std::unique_lock lock(mutex_);
    if (state_->surveys.count(def.id)) throw SurveyError(409, "survey '" + def.id + "' already exists");
    json ev = {{"type", "survey"}, {"def", def}, {"at", now()}};
    commit(*state_, ev, [this](const std::string& l) { append(l); }, options_.snapshot_every,
           [this] { write_snapshot_locked(); });
    return def;
}

std::optional<SurveyDef> SurveyStore::survey(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = state_->surveys.find(id);
    if (it == state_->surveys.end()) return std::nullopt;
    return it->second.def;
}

std::vector<std::string> SurveyStore::survey_ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, s] : state_->surveys) out.push_back(id);
    return out;
}

ResponseRecord SurveyStore::submit_response(const std::string& survey, const std::string& question,
                                            const std::string& respondent, const std::optional<std::string>& text) {
    if (respondent.empty()) throw SurveyError(400, "respondent token is required");
    if (text && normalize_text(*text).empty())
        throw SurveyError(400, "empty response text; omit the text to skip this step");
    std::unique_lock lock(mutex_);
    auto& qs = state_->question(survey, question);
    if (qs.by_respondent.count(respondent))
        throw SurveyError(409, "respondent already answered this question");
    json ev = {{"type", "response"}, {"survey", survey}, {"question", question},
               {"respondent", respondent}, {"text", optional_json(text)}, {"at", now()}};
    commit(*state_, ev, [this](const std::string& l) { append(l); }, options_.snapshot_every,
           [this] { write_snapshot_locked(); });
    return qs.responses[qs.by_respondent.at(respondent)];
}

SampleTicket SurveyStore::sample(const std::string& survey, const std::string& question,
                                 const std::string& respondent, std::optional<int> k) {
    if (k && *k < 1) throw SurveyError(400, "k must be at least 1");
    std::unique_lock lock(mutex_);
    auto& qs = state_->question(survey, question);
    auto own_it = qs.by_respondent.find(respondent);
    if (own_it == qs.by_respondent.end())
        throw SurveyError(404, "respondent has not submitted or skipped a response to this question");
    const std::int64_t t_now = now();

    auto summary = [&](const Ticket& t) {
        SampleTicket out{t.id, {}, t.expires_at};
        for (const auto& id : t.shown) out.items.push_back({id, *qs.responses[qs.by_id.at(id)].text});
        return out;
    };
    if (auto prev = qs.ticket_of.find(respondent); prev != qs.ticket_of.end()) {
        const Ticket& t = qs.tickets.at(prev->second);
        if (t.used) throw SurveyError(409, "respondent has already judged this question");
        if (t.expires_at > t_now) return summary(t);
    }

    const auto& own = qs.responses[own_it->second];
    std::vector<std::size_t> pool;
    std::set<std::string> keys;
    for (std::size_t r = 0; r < qs.responses.size(); ++r) {
        const auto& rec = qs.responses[r];
        if (!rec.text) continue;
        if (own.text && rec.text_key == own.text_key) continue;
        if (keys.insert(rec.text_key).second) pool.push_back(r);
    }

    const std::uint64_t counter = state_->sample_counter;
    Rng rng(derive_seed(options_.seed, counter));
    const std::size_t take = std::min<std::size_t>(k.value_or(qs.def.k), pool.size());
    for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    std::vector<std::string> shown;
    for (std::size_t i = 0; i < take; ++i) shown.push_back(qs.responses[pool[i]].id);

    const std::string ticket = "t" + std::to_string(counter) + "-" + hex(rng());
    json ev = {{"type", "ticket"},   {"survey", survey},   {"question", question},
               {"respondent", respondent}, {"ticket", ticket}, {"shown", shown},
               {"expires_at", t_now + options_.ticket_ttl}, {"counter", counter}};
    commit(*state_, ev, [this](const std::string& l) { append(l); }, options_.snapshot_every,
           [this] { write_snapshot_locked(); });
    return summary(qs.tickets.at(ticket));
}

JudgmentOutcome SurveyStore::submit_judgments(const std::string& survey, const std::string& question,
                                              const std::string& ticket, const std::vector<Selection>& selections) {
    std::unique_lock lock(mutex_);
    auto& qs = state_->question(survey, question);
    auto it = qs.tickets.find(ticket);
    if (it == qs.tickets.end()) throw SurveyError(404, "unknown ticket");
    const Ticket& t = it->second;
    if (t.used) throw SurveyError(409, "ticket already used");
    if (qs.ticket_of.at(t.respondent) != t.id || t.expires_at <= now())
        throw SurveyError(410, "ticket expired; request a new sample");

    std::map<std::string, bool> chosen;
    for (const auto& s : selections) {
        if (std::find(t.shown.begin(), t.shown.end(), s.id) == t.shown.end())
            throw SurveyError(400, "selection for response '" + s.id + "' that was not served");
        auto [pos, inserted] = chosen.emplace(s.id, s.similar);
        if (!inserted && pos->second != s.similar)
            throw SurveyError(400, "conflicting selections for response '" + s.id + "'");
    }
    std::vector<bool> similar;
    for (const auto& id : t.shown) {
        auto c = chosen.find(id);
        similar.push_back(c != chosen.end() && c->second);
    }
    json ev = {{"type", "judgment"}, {"survey", survey}, {"question", question},
               {"ticket", ticket},   {"similar", similar}, {"at", now()}};
    commit(*state_, ev, [this](const std::string& l) { append(l); }, options_.snapshot_every,
           [this] { write_snapshot_locked(); });

    const auto& j = qs.judgments.back();
    JudgmentOutcome out;
    out.vertex = j.own;
    for (bool s : similar) (s ? out.positive : out.negative) += 1;
    return out;
}

std::vector<ResponseRecord> SurveyStore::responses(const std::string& survey, const std::string& question) const {
    std::shared_lock lock(mutex_);
    return state_->question(survey, question).responses;
}

OpinionGraph SurveyStore::export_graph(const std::string& survey, const std::string& question,
                                       const ExportOptions& options) const {
    std::shared_lock lock(mutex_);
    const auto& qs = state_->question(survey, question);
    std::vector<Vertex> vertices;
    std::map<std::string, std::size_t> index;
    for (const auto& r : qs.responses) {
        if (!r.text) continue;
        index[r.id] = vertices.size();
        Vertex v;
        v.id = r.id;
        v.text = *r.text;
        v.respondent_id = r.respondent;
        v.is_seed = r.is_seed;
        vertices.push_back(std::move(v));
    }
    std::vector<Edge> edges;
    for (const auto& j : qs.judgments) {
        if (!j.own) continue;
        const std::size_t src = index.at(*j.own);
        for (const auto& [id, sim] : j.shown)
            edges.push_back({src, index.at(id), sim ? EdgeLabel::Positive : EdgeLabel::Negative});
    }
    std::map<std::string, std::string> meta{
        {"survey", survey},
        {"question_id", question},
        {"dropped_skipped_respondents", std::to_string(qs.dropped)},
        {"neutralized", options.neutralize ? "true" : "false"},
    };
    std::string prompt = qs.def.prompt;
    lock.unlock();
    OpinionGraph g(std::move(prompt), std::move(vertices), std::move(edges), std::move(meta));
    if (options.neutralize) g = neutralize_excess(g, options.rng_seed);
    return g;
}

}  // namespace opingraph
