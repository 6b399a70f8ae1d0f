#include "opingraph/survey.hpp"

#include <httplib.h>
#include <json.hpp>

#include <charconv>

namespace opingraph {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump() + "\n", "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

json parse_body(const httplib::Request& req) {
    try {
        json body = json::parse(req.body);
        if (!body.is_object()) throw SurveyError(400, "request body must be a JSON object");
        return body;
    } catch (const json::parse_error& e) {
        throw SurveyError(400, std::string("malformed JSON body: ") + e.what());
    }
}

bool parse_flag(const std::string& v) {
    if (v.empty() || v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw SurveyError(400, "bad boolean '" + v + "'");
}

template <class T>
T parse_number(const std::string& v, const char* name) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw SurveyError(400, std::string("bad ") + name);
    return out;
}

json survey_json(const SurveyDef& def) {
    json qs = json::array();
    for (const auto& q : def.questions)
        qs.push_back({{"id", q.id}, {"prompt", q.prompt}, {"k", q.k}, {"seeds", q.seeds}});
    return {{"id", def.id}, {"title", def.title}, {"questions", qs}};
}

SurveyDef survey_from_json(const json& body) {
    SurveyDef def;
    try {
        def.id = body.at("id").get<std::string>();
        def.title = body.value("title", std::string{});
        for (const auto& jq : body.at("questions")) {
            QuestionDef q;
            q.id = jq.at("id").get<std::string>();
            q.prompt = jq.at("prompt").get<std::string>();
            q.k = jq.value("k", 6);
            q.seeds = jq.value("seeds", std::vector<std::string>{});
            def.questions.push_back(std::move(q));
        }
    } catch (const json::exception& e) {
        throw SurveyError(400, std::string("invalid survey definition: ") + e.what());
    }
    return def;
}

}  // namespace

struct SurveyServer::Impl {
    SurveyStore& store;
    httplib::Server server;

    explicit Impl(SurveyStore& s) : store(s) {
        // The library default sets SO_REUSEPORT, which lets a second server
        // share a busy port silently.
        server.set_socket_options([](socket_t sock) {
            int yes = 1;
            ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
        });
    }

    template <class F>
    httplib::Server::Handler guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const SurveyError& e) {
                send_error(res, e.status(), e.what());
            } catch (const json::exception& e) {
                send_error(res, 400, e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            }
        };
    }

    void routes() {
        server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, {{"status", "ok"}});
        });

        server.Post("/surveys", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 201, survey_json(store.create_survey(survey_from_json(parse_body(req)))));
        }));

        server.Get(R"(/surveys/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto def = store.survey(req.matches[1]);
            if (!def) throw SurveyError(404, "unknown survey");
            send_json(res, 200, survey_json(*def));
        }));

        server.Post(R"(/surveys/([^/]+)/questions/([^/]+)/responses)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const json body = parse_body(req);
                        if (!body.contains("respondent") || !body["respondent"].is_string())
                            throw SurveyError(400, "respondent is required");
                        std::optional<std::string> text;
                        if (body.contains("text") && !body["text"].is_null()) text = body["text"].get<std::string>();
                        const auto r = store.submit_response(req.matches[1], req.matches[2],
                                                             body["respondent"].get<std::string>(), text);
                        send_json(res, 201, {{"id", r.id}, {"deferred", !r.text.has_value()}});
                    }));

        server.Get(R"(/surveys/([^/]+)/questions/([^/]+)/sample)",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       if (!req.has_param("respondent")) throw SurveyError(400, "respondent is required");
                       std::optional<int> k;
                       if (req.has_param("k")) k = parse_number<int>(req.get_param_value("k"), "k");
                       const auto t = store.sample(req.matches[1], req.matches[2],
                                                   req.get_param_value("respondent"), k);
                       json items = json::array();
                       for (const auto& it : t.items) items.push_back({{"id", it.id}, {"text", it.text}});
                       send_json(res, 200, {{"ticket", t.ticket}, {"items", items}, {"expires_at", t.expires_at}});
                   }));

        server.Post(R"(/surveys/([^/]+)/questions/([^/]+)/judgments)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const json body = parse_body(req);
                        std::vector<Selection> sel;
                        std::string ticket;
                        try {
                            ticket = body.at("ticket").get<std::string>();
                            for (const auto& s : body.value("selections", json::array()))
                                sel.push_back({s.at("id").get<std::string>(), s.at("similar").get<bool>()});
                        } catch (const json::exception& e) {
                            throw SurveyError(400, std::string("invalid judgment: ") + e.what());
                        }
                        const auto out = store.submit_judgments(req.matches[1], req.matches[2], ticket, sel);
                        json vertex = out.vertex ? json(*out.vertex) : json(nullptr);
                        send_json(res, 201, {{"positive", out.positive}, {"negative", out.negative}, {"vertex", vertex}});
                    }));

        server.Get(R"(/surveys/([^/]+)/questions/([^/]+)/graph)",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       ExportOptions opt;
                       if (req.has_param("neutralize")) opt.neutralize = parse_flag(req.get_param_value("neutralize"));
                       if (req.has_param("seed"))
                           opt.rng_seed = parse_number<std::uint64_t>(req.get_param_value("seed"), "seed");
                       const auto g = store.export_graph(req.matches[1], req.matches[2], opt);
                       res.status = 200;
                       res.set_content(serialize_graph(g), "application/json");
                   }));
    }
};

SurveyServer::SurveyServer(SurveyStore& store) : impl_(std::make_unique<Impl>(store)) { impl_->routes(); }

SurveyServer::~SurveyServer() { stop(); }

int SurveyServer::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    return impl_->server.bind_to_port(host, port) ? port : -1;
}

void SurveyServer::listen() { impl_->server.listen_after_bind(); }

void SurveyServer::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace opingraph
