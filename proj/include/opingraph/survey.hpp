#pragma once

#include "opingraph/graph.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace opingraph {

/// Protocol violation; `status` is the HTTP status the service answers with.
class SurveyError : public std::runtime_error {
public:
    SurveyError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

struct QuestionDef {
    std::string id;
    std::string prompt;
    int k = 6;
    std::vector<std::string> seeds;
};

struct SurveyDef {
    std::string id;
    std::string title;
    std::vector<QuestionDef> questions;
};

struct ResponseRecord {
    std::string id;
    std::string question_id;
    std::optional<std::string> respondent;  // empty for seeds
    std::optional<std::string> text;        // empty while deferred
    bool is_seed = false;
    std::int64_t created_at = 0;
    std::string text_key;
};

struct ShownItem {
    std::string id;
    std::string text;
};

struct SampleTicket {
    std::string ticket;
    std::vector<ShownItem> items;
    std::int64_t expires_at = 0;
};

struct Selection {
    std::string id;
    bool similar = false;
};

struct JudgmentOutcome {
    int positive = 0;
    int negative = 0;
    std::optional<std::string> vertex;  // respondent's vertex, if one exists
};

struct ExportOptions {
    bool neutralize = false;
    std::uint64_t rng_seed = 1;
};

/// Survey state backed by an append-only JSON-lines event log. Every
/// mutating call is durable (fsync) before it returns. A snapshot of the
/// full state is written every `snapshot_every` events; on open the
/// snapshot is loaded and the log tail replayed. A torn final log line from
/// a crash is dropped.
class SurveyStore {
public:
    struct Options {
        std::filesystem::path data_dir;
        std::uint64_t seed = 1;
        std::size_t snapshot_every = 256;
        std::int64_t ticket_ttl = 24 * 3600;  // seconds
        /// Seconds since the epoch; replaceable for tests.
        std::function<std::int64_t()> clock;
    };

    explicit SurveyStore(Options options);
    ~SurveyStore();
    SurveyStore(const SurveyStore&) = delete;
    SurveyStore& operator=(const SurveyStore&) = delete;

    SurveyDef create_survey(const SurveyDef& def);
    std::optional<SurveyDef> survey(const std::string& id) const;
    std::vector<std::string> survey_ids() const;

    /// A missing text defers the respondent's vertex to judgment time.
    ResponseRecord submit_response(const std::string& survey, const std::string& question,
                                   const std::string& respondent, const std::optional<std::string>& text);

    /// Uniform sample of distinct response texts, excluding the respondent's
    /// own. A respondent holding an unused, unexpired ticket gets it back.
    SampleTicket sample(const std::string& survey, const std::string& question,
                        const std::string& respondent, std::optional<int> k = std::nullopt);

    /// Selections must name served items; served items left out count as
    /// not similar.
    JudgmentOutcome submit_judgments(const std::string& survey, const std::string& question,
                                     const std::string& ticket, const std::vector<Selection>& selections);

    OpinionGraph export_graph(const std::string& survey, const std::string& question,
                              const ExportOptions& options = {}) const;

    std::vector<ResponseRecord> responses(const std::string& survey, const std::string& question) const;

    /// Writes a snapshot now.
    void snapshot();
    std::size_t events_applied() const;

    struct State;

private:
    void append(const std::string& line);
    void write_snapshot_locked();
    std::int64_t now() const;

    Options options_;
    mutable std::shared_mutex mutex_;
    std::unique_ptr<State> state_;
    std::FILE* log_ = nullptr;
};

/// HTTP front end for a SurveyStore.
class SurveyServer {
public:
    explicit SurveyServer(SurveyStore& store);
    ~SurveyServer();

    /// Binds the port (0 picks a free one). Returns the bound port, or -1.
    int bind(const std::string& host, int port);
    /// Serves until stop() is called. Requires a successful bind().
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace opingraph
