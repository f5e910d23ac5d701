#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facedyn/corpus.hpp"
#include "facedyn/taxonomy.hpp"

namespace httplib {
class Server;
}

namespace facedyn {

// One persisted state transition. Sessions are the fold of their events.
struct SessionEvent {
    enum class Kind { Create, Answer, Label, Undo };
    Kind kind = Kind::Create;
    std::string annotator;    // create
    std::string conv_id;      // create
    std::string node;         // answer: node the answer was given at
    std::string answer;       // answer
    std::size_t index = 0;    // label
    std::vector<FaceAct> labels;  // label

    nlohmann::json to_json() const;
    static SessionEvent from_json(const nlohmann::json& j);
};

struct AnnotationSession {
    std::string id;
    std::string annotator;
    std::string conv_id;
    std::size_t cursor = 0;        // next utterance to label
    std::string node;              // current flowchart node for the cursor
    std::vector<std::string> path; // answers given for the cursor so far
    std::map<std::size_t, std::vector<FaceAct>> labels;
    std::uint64_t version = 0;     // number of events applied
    std::vector<SessionEvent> events;
};

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
    std::optional<std::string> text;  // plain-text payload instead of body (exports)
};

struct ServiceRequest {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::map<std::string, std::string> headers;  // lower-case names
    std::string body;
};

// Transport-independent core of the annotation API. Sessions persist as
// append-only JSONL event logs under `state_dir` (empty: in memory only) and
// are replayed on construction. Thread-safe.
class AnnotationService {
public:
    AnnotationService(Corpus corpus, Flowchart flowchart, std::string state_dir = {});

    ServiceResponse handle(const ServiceRequest& request);

    // The annotated corpus of one annotator in the corpus wire format: every
    // conversation they opened a session on, labels from their latest session
    // per conversation (unlabelled utterances carry no labels).
    Corpus annotated_corpus(const std::string& annotator) const;
    std::string export_text(const std::string& annotator) const;

    std::optional<AnnotationSession> session(const std::string& id) const;
    const Corpus& corpus() const { return corpus_; }
    const Flowchart& flowchart() const { return flowchart_; }

private:
    ServiceResponse route(const ServiceRequest& request);
    ServiceResponse list_conversations() const;
    ServiceResponse get_conversation(const std::string& id) const;
    ServiceResponse create_session(const std::string& annotator, const nlohmann::json& body);
    ServiceResponse next(const AnnotationSession& s) const;
    ServiceResponse answer(AnnotationSession& s, const nlohmann::json& body);
    ServiceResponse label(AnnotationSession& s, const nlohmann::json& body);
    ServiceResponse undo(AnnotationSession& s, const nlohmann::json& body);
    ServiceResponse agreement(const std::string& a, const std::string& b) const;

    // Validates and applies without persisting; returns an error response or
    // nothing on success.
    std::optional<ServiceResponse> apply(AnnotationSession& s, const SessionEvent& e) const;
    void rebuild(AnnotationSession& s) const;
    void persist(const AnnotationSession& s, const SessionEvent& e) const;
    void replay();
    nlohmann::json session_json(const AnnotationSession& s) const;

    Corpus corpus_;
    Flowchart flowchart_;
    std::string state_dir_;
    std::map<std::string, AnnotationSession> sessions_;
    std::uint64_t next_id_ = 1;
    mutable std::mutex mutex_;
};

// Mounts the service on an HTTP server, with CORS for `allow_origin`.
void mount_annotation_service(httplib::Server& server, AnnotationService& service,
                              const std::string& allow_origin = "*");

// Blocking; returns when the server stops.
void serve_annotation_service(AnnotationService& service, const std::string& host, int port,
                              const std::string& allow_origin = "*");

}  // namespace facedyn
