#include "facedyn/annotation_service.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "facedyn/error.hpp"

namespace facedyn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ServiceResponse error(int status, const std::string& msg) { return {status, json{{"error", msg}}, std::nullopt}; }

const char* kind_name(SessionEvent::Kind k) {
    switch (k) {
        case SessionEvent::Kind::Create: return "create";
        case SessionEvent::Kind::Answer: return "answer";
        case SessionEvent::Kind::Label: return "label";
        case SessionEvent::Kind::Undo: return "undo";
    }
    return "?";
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : path) {
        if (c == '/') {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

json labels_json(const std::vector<FaceAct>& acts) {
    json a = json::array();
    for (FaceAct x : acts) a.push_back(std::string(to_string(x)));
    return a;
}

json node_json(const FlowNode& n) {
    json answers = json::array();
    for (const auto& [text, target] : n.answers) {
        json a{{"answer", text}};
        if (const auto* next = std::get_if<std::string>(&target))
            a["next"] = *next;
        else
            a["label"] = std::string(to_string(std::get<FaceAct>(target)));
        answers.push_back(std::move(a));
    }
    return json{{"id", n.id}, {"question", n.question}, {"answers", answers}};
}

std::optional<std::uint64_t> body_version(const json& body) {
    if (!body.contains("version")) return std::nullopt;
    return body.at("version").get<std::uint64_t>();
}

}  // namespace

json SessionEvent::to_json() const {
    json j{{"event", kind_name(kind)}};
    switch (kind) {
        case Kind::Create:
            j["annotator"] = annotator;
            j["conv_id"] = conv_id;
            break;
        case Kind::Answer:
            j["node"] = node;
            j["answer"] = answer;
            break;
        case Kind::Label:
            j["index"] = index;
            j["labels"] = labels_json(labels);
            break;
        case Kind::Undo: break;
    }
    return j;
}

SessionEvent SessionEvent::from_json(const json& j) {
    SessionEvent e;
    const auto k = j.at("event").get<std::string>();
    if (k == "create") {
        e.kind = Kind::Create;
        e.annotator = j.at("annotator").get<std::string>();
        e.conv_id = j.at("conv_id").get<std::string>();
    } else if (k == "answer") {
        e.kind = Kind::Answer;
        e.node = j.at("node").get<std::string>();
        e.answer = j.at("answer").get<std::string>();
    } else if (k == "label") {
        e.kind = Kind::Label;
        e.index = j.at("index").get<std::size_t>();
        for (const auto& s : j.at("labels")) {
            auto act = parse_face_act(s.get<std::string>());
            if (!act) throw ValidationError("unknown face act in event log: " + s.get<std::string>());
            e.labels.push_back(*act);
        }
    } else if (k == "undo") {
        e.kind = Kind::Undo;
    } else {
        throw ValidationError("unknown session event: " + k);
    }
    return e;
}

AnnotationService::AnnotationService(Corpus corpus, Flowchart flowchart, std::string state_dir)
    : corpus_(std::move(corpus)), flowchart_(std::move(flowchart)), state_dir_(std::move(state_dir)) {
    replay();
}

void AnnotationService::replay() {
    if (state_dir_.empty()) return;
    const fs::path dir = fs::path(state_dir_) / "sessions";
    fs::create_directories(dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        const std::string data = ss.str();
        AnnotationSession s;
        s.id = f.stem().string();
        std::size_t pos = 0;
        std::size_t line = 0;
        while (pos < data.size()) {
            const auto nl = data.find('\n', pos);
            if (nl == std::string::npos) break;  // torn final write, never acknowledged
            ++line;
            const auto text = data.substr(pos, nl - pos);
            pos = nl + 1;
            if (text.empty()) continue;
            SessionEvent e;
            try {
                e = SessionEvent::from_json(json::parse(text));
            } catch (const json::exception& ex) {
                throw ParseError(f.string() + ": " + ex.what(), line);
            }
            s.events.push_back(std::move(e));
        }
        if (s.events.empty() || s.events.front().kind != SessionEvent::Kind::Create)
            throw ValidationError(f.string() + ": session log does not start with a create event");
        rebuild(s);
        if (s.id.size() > 1 && s.id[0] == 's') {
            try {
                next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(s.id.substr(1)) + 1);
            } catch (const std::exception&) {
            }
        }
        sessions_.emplace(s.id, std::move(s));
    }
}

void AnnotationService::rebuild(AnnotationSession& s) const {
    std::vector<const SessionEvent*> effective;
    for (const auto& e : s.events) {
        if (e.kind == SessionEvent::Kind::Undo) {
            if (effective.size() > 1) effective.pop_back();
        } else {
            effective.push_back(&e);
        }
    }
    const auto& create = *effective.front();
    s.annotator = create.annotator;
    s.conv_id = create.conv_id;
    s.cursor = 0;
    s.node = flowchart_.root().id;
    s.path.clear();
    s.labels.clear();
    for (std::size_t i = 1; i < effective.size(); ++i) {
        if (auto err = apply(s, *effective[i]))
            throw ValidationError("session " + s.id + ": replayed event rejected: " + err->body.at("error").get<std::string>());
    }
    s.version = s.events.size();
}

std::optional<ServiceResponse> AnnotationService::apply(AnnotationSession& s, const SessionEvent& e) const {
    const Conversation& conv = corpus_.find(s.conv_id);
    const std::size_t n = conv.utterances.size();
    switch (e.kind) {
        case SessionEvent::Kind::Create:
        case SessionEvent::Kind::Undo: return error(500, "internal: apply on create/undo");
        case SessionEvent::Kind::Answer: {
            if (s.cursor >= n) return error(409, "every utterance of the session is labelled");
            if (e.node != s.node) return error(409, "answer given at node '" + e.node + "' but the session is at '" + s.node + "'");
            Flowchart::Step step;
            try {
                step = flowchart_.step(flowchart_.node(s.node), e.answer);
            } catch (const ContractViolation& ex) {
                return error(400, ex.what());
            }
            if (const auto* next = std::get_if<const FlowNode*>(&step)) {
                s.node = (*next)->id;
                s.path.push_back(e.answer);
                return std::nullopt;
            }
            const FaceAct act = std::get<FaceAct>(step);
            const Role role = conv.utterances[s.cursor].role;
            if (!is_valid_for(role, act))
                return error(422, std::string(to_string(act)) + " is not a valid act for " + std::string(to_string(role)));
            s.labels[s.cursor] = {act};
            ++s.cursor;
            s.node = flowchart_.root().id;
            s.path.clear();
            return std::nullopt;
        }
        case SessionEvent::Kind::Label: {
            if (e.index >= n || e.index > s.cursor)
                return error(409, "utterance " + std::to_string(e.index) + " cannot be labelled before utterance " +
                                      std::to_string(s.cursor));
            if (e.labels.empty()) return error(422, "at least one label is required");
            const Role role = conv.utterances[e.index].role;
            for (FaceAct a : e.labels)
                if (!is_valid_for(role, a))
                    return error(422, std::string(to_string(a)) + " is not a valid act for " + std::string(to_string(role)));
            std::vector<FaceAct> acts = e.labels;
            std::sort(acts.begin(), acts.end());
            acts.erase(std::unique(acts.begin(), acts.end()), acts.end());
            s.labels[e.index] = acts;
            if (e.index == s.cursor) {
                ++s.cursor;
                s.node = flowchart_.root().id;
                s.path.clear();
            }
            return std::nullopt;
        }
    }
    return std::nullopt;
}

void AnnotationService::persist(const AnnotationSession& s, const SessionEvent& e) const {
    if (state_dir_.empty()) return;
    const fs::path file = fs::path(state_dir_) / "sessions" / (s.id + ".jsonl");
    // One write per event; a torn tail is dropped on replay.
    const std::string line = e.to_json().dump() + "\n";
    std::FILE* f = std::fopen(file.c_str(), "ab");
    if (!f) throw Error("cannot open session log " + file.string());
    const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0;
    std::fclose(f);
    if (!ok) throw Error("cannot append to session log " + file.string());
}

json AnnotationService::session_json(const AnnotationSession& s) const {
    json labels = json::array();
    for (const auto& [idx, acts] : s.labels) labels.push_back({{"index", idx}, {"labels", labels_json(acts)}});
    const auto n = corpus_.find(s.conv_id).utterances.size();
    return json{{"id", s.id},         {"annotator", s.annotator}, {"conv_id", s.conv_id},
                {"cursor", s.cursor}, {"node", s.node},           {"path", s.path},
                {"labels", labels},   {"version", s.version},     {"total", n},
                {"done", s.cursor >= n}};
}

std::optional<AnnotationSession> AnnotationService::session(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return std::nullopt;
    return it->second;
}

ServiceResponse AnnotationService::handle(const ServiceRequest& request) {
    std::lock_guard lock(mutex_);
    try {
        return route(request);
    } catch (const json::exception& e) {
        return error(400, std::string("malformed request: ") + e.what());
    } catch (const ValidationError& e) {
        return error(422, e.what());
    }
}

ServiceResponse AnnotationService::route(const ServiceRequest& req) {
    const auto parts = split_path(req.path);
    const auto& m = req.method;
    auto query = [&](const char* k) -> std::string {
        auto it = req.query.find(k);
        return it == req.query.end() ? std::string() : it->second;
    };

    if (m == "GET" && parts.size() == 1 && parts[0] == "taxonomy") {
        json spaces;
        for (Scope sc : {Scope::ER, Scope::EE, Scope::All}) spaces[std::string(to_string(sc))] = labels_json(label_space(sc));
        return {200, json{{"label_spaces", spaces}}, std::nullopt};
    }
    if (m == "GET" && parts.size() == 1 && parts[0] == "flowchart") {
        json nodes = json::array();
        std::vector<std::string> todo{flowchart_.root().id};
        std::set<std::string> seen;
        while (!todo.empty()) {
            auto id = todo.back();
            todo.pop_back();
            if (!seen.insert(id).second) continue;
            const auto& n = flowchart_.node(id);
            nodes.push_back(node_json(n));
            for (const auto& [_, t] : n.answers)
                if (const auto* next = std::get_if<std::string>(&t)) todo.push_back(*next);
        }
        std::sort(nodes.begin(), nodes.end(), [](const json& a, const json& b) { return a["id"] < b["id"]; });
        return {200, json{{"version", flowchart_.version()}, {"root", flowchart_.root().id}, {"nodes", nodes}},
                std::nullopt};
    }

    const auto hdr = req.headers.find("x-annotator-id");
    const std::string annotator = hdr == req.headers.end() ? std::string() : hdr->second;
    if (annotator.empty()) return error(401, "missing X-Annotator-Id header");

    if (m == "GET" && parts.size() == 1 && parts[0] == "conversations") return list_conversations();
    if (m == "GET" && parts.size() == 2 && parts[0] == "conversations") return get_conversation(parts[1]);
    if (m == "GET" && parts.size() == 1 && parts[0] == "agreement") {
        if (query("a").empty() || query("b").empty()) return error(400, "agreement needs ?a=<annotator>&b=<annotator>");
        return agreement(query("a"), query("b"));
    }
    if (m == "GET" && parts.size() == 1 && parts[0] == "export") {
        const std::string who = query("annotator").empty() ? annotator : query("annotator");
        return {200, json(), export_text(who)};
    }
    if (parts.empty() || parts[0] != "sessions") return error(404, "no route for " + m + " " + req.path);

    const json body = req.body.empty() ? json::object() : json::parse(req.body);
    if (parts.size() == 1) {
        if (m == "POST") return create_session(annotator, body);
        if (m == "GET") {
            json out = json::array();
            for (const auto& [id, s] : sessions_)
                if (s.annotator == annotator) out.push_back(session_json(s));
            return {200, json{{"sessions", out}}, std::nullopt};
        }
        return error(405, "method not allowed");
    }

    auto it = sessions_.find(parts[1]);
    if (it == sessions_.end()) return error(404, "unknown session " + parts[1]);
    AnnotationSession& s = it->second;
    if (s.annotator != annotator) return error(403, "session " + s.id + " belongs to another annotator");

    if (parts.size() == 2 && m == "GET") return {200, session_json(s), std::nullopt};
    if (parts.size() == 3) {
        const auto& action = parts[2];
        if (m == "GET" && action == "next") return next(s);
        if (m == "POST" && action == "answer") return answer(s, body);
        if (m == "POST" && action == "label") return label(s, body);
        if (m == "POST" && action == "undo") return undo(s, body);
    }
    return error(404, "no route for " + m + " " + req.path);
}

ServiceResponse AnnotationService::list_conversations() const {
    json out = json::array();
    for (const auto& c : corpus_.conversations) {
        std::size_t labelled = 0;
        for (const auto& u : c.utterances) labelled += u.labeled();
        out.push_back({{"id", c.id},
                       {"outcome", static_cast<int>(c.outcome)},
                       {"utterances", c.utterances.size()},
                       {"labelled", labelled}});
    }
    return {200, json{{"conversations", out}}, std::nullopt};
}

ServiceResponse AnnotationService::get_conversation(const std::string& id) const {
    auto it = std::find_if(corpus_.conversations.begin(), corpus_.conversations.end(),
                           [&](const Conversation& c) { return c.id == id; });
    if (it == corpus_.conversations.end()) return error(404, "unknown conversation " + id);
    json utts = json::array();
    for (const auto& u : it->utterances)
        utts.push_back({{"index", u.index},
                        {"turn", u.turn},
                        {"role", std::string(to_string(u.role))},
                        {"text", u.text},
                        {"labels", labels_json(u.gold_labels)}});
    return {200, json{{"id", it->id}, {"outcome", static_cast<int>(it->outcome)}, {"utterances", utts}}, std::nullopt};
}

ServiceResponse AnnotationService::create_session(const std::string& annotator, const json& body) {
    const auto conv_id = body.at("conv_id").get<std::string>();
    const bool known = std::any_of(corpus_.conversations.begin(), corpus_.conversations.end(),
                                   [&](const Conversation& c) { return c.id == conv_id; });
    if (!known) return error(404, "unknown conversation " + conv_id);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(next_id_++));
    AnnotationSession s;
    s.id = buf;
    SessionEvent e;
    e.kind = SessionEvent::Kind::Create;
    e.annotator = annotator;
    e.conv_id = conv_id;
    s.events.push_back(e);
    rebuild(s);
    persist(s, e);
    auto [it, _] = sessions_.emplace(s.id, std::move(s));
    return {201, session_json(it->second), std::nullopt};
}

ServiceResponse AnnotationService::next(const AnnotationSession& s) const {
    const Conversation& conv = corpus_.find(s.conv_id);
    json out{{"session", session_json(s)}};
    if (s.cursor >= conv.utterances.size()) {
        out["utterance"] = nullptr;
        out["node"] = nullptr;
        out["valid_labels"] = json::array();
        return {200, out, std::nullopt};
    }
    const Utterance& u = conv.utterances[s.cursor];
    out["utterance"] = {{"index", u.index}, {"turn", u.turn}, {"role", std::string(to_string(u.role))}, {"text", u.text}};
    out["node"] = node_json(flowchart_.node(s.node));
    out["valid_labels"] = labels_json(label_space(scope_of(u.role)));
    return {200, out, std::nullopt};
}

namespace {

std::optional<ServiceResponse> check_version(const AnnotationSession& s, const json& body) {
    const auto v = body_version(body);
    if (v && *v != s.version)
        return error(409, "version " + std::to_string(*v) + " is stale; session is at " + std::to_string(s.version));
    return std::nullopt;
}

}  // namespace

ServiceResponse AnnotationService::answer(AnnotationSession& s, const json& body) {
    if (auto err = check_version(s, body)) return *err;
    SessionEvent e;
    e.kind = SessionEvent::Kind::Answer;
    e.node = body.contains("node") ? body.at("node").get<std::string>() : s.node;
    e.answer = body.at("answer").get<std::string>();
    AnnotationSession trial = s;
    const std::size_t before = s.cursor;
    if (auto err = apply(trial, e)) return *err;
    s = std::move(trial);
    s.events.push_back(e);
    s.version = s.events.size();
    persist(s, e);
    json out = session_json(s);
    if (s.cursor != before) {
        out["recorded"] = {{"index", before}, {"labels", labels_json(s.labels.at(before))}};
    } else {
        out["next_node"] = node_json(flowchart_.node(s.node));
    }
    return {200, out, std::nullopt};
}

ServiceResponse AnnotationService::label(AnnotationSession& s, const json& body) {
    if (auto err = check_version(s, body)) return *err;
    SessionEvent e;
    e.kind = SessionEvent::Kind::Label;
    e.index = body.contains("index") ? body.at("index").get<std::size_t>() : s.cursor;
    for (const auto& name : body.at("labels")) {
        auto act = parse_face_act(name.get<std::string>());
        if (!act) return error(400, "unknown face act " + name.get<std::string>());
        e.labels.push_back(*act);
    }
    AnnotationSession trial = s;
    if (auto err = apply(trial, e)) return *err;
    s = std::move(trial);
    s.events.push_back(e);
    s.version = s.events.size();
    persist(s, e);
    return {200, session_json(s), std::nullopt};
}

ServiceResponse AnnotationService::undo(AnnotationSession& s, const json& body) {
    if (auto err = check_version(s, body)) return *err;
    std::size_t live = 0;
    for (const auto& e : s.events) {
        if (e.kind == SessionEvent::Kind::Undo)
            live -= live > 0;
        else if (e.kind != SessionEvent::Kind::Create)
            ++live;
    }
    if (live == 0) return error(409, "nothing to undo");
    SessionEvent e;
    e.kind = SessionEvent::Kind::Undo;
    s.events.push_back(e);
    rebuild(s);
    persist(s, e);
    return {200, session_json(s), std::nullopt};
}

Corpus AnnotationService::annotated_corpus(const std::string& annotator) const {
    // latest session per conversation; ids sort chronologically
    std::map<std::string, const AnnotationSession*> latest;
    for (const auto& [id, s] : sessions_)
        if (s.annotator == annotator) latest[s.conv_id] = &s;
    Corpus out;
    for (const auto& [conv_id, s] : latest) {
        Conversation c = corpus_.find(conv_id);
        for (auto& u : c.utterances) {
            auto it = s->labels.find(u.index);
            u.gold_labels = it == s->labels.end() ? std::vector<FaceAct>{} : it->second;
            u.selected_gold = u.labeled() ? select_gold_label(u, kDefaultSeed) : FaceAct::Other;
        }
        out.conversations.push_back(std::move(c));
    }
    return out;
}

std::string AnnotationService::export_text(const std::string& annotator) const {
    return serialize_corpus(annotated_corpus(annotator));
}

ServiceResponse AnnotationService::agreement(const std::string& a, const std::string& b) const {
    for (const auto* who : {&a, &b}) {
        const bool any = std::any_of(sessions_.begin(), sessions_.end(),
                                     [&](const auto& kv) { return kv.second.annotator == *who; });
        if (!any) return error(404, "annotator " + *who + " has no sessions");
    }
    const auto r = corpus_agreement(annotated_corpus(a), annotated_corpus(b));
    return {200, json{{"a", a}, {"b", b}, {"items", r.items}, {"kappa", r.kappa}}, std::nullopt};
}

void mount_annotation_service(httplib::Server& server, AnnotationService& service, const std::string& allow_origin) {
    auto cors = [allow_origin](httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", allow_origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Annotator-Id");
    };
    auto handler = [&service, cors](const httplib::Request& req, httplib::Response& res) {
        ServiceRequest r;
        r.method = req.method;
        r.path = req.path;
        for (const auto& [k, v] : req.params) r.query[k] = v;
        for (const auto& [k, v] : req.headers) {
            std::string key = k;
            std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
            r.headers[key] = v;
        }
        r.body = req.body;
        const auto out = service.handle(r);
        cors(res);
        res.status = out.status;
        if (out.text)
            res.set_content(*out.text, "application/x-ndjson");
        else
            res.set_content(out.body.dump(), "application/json");
    };
    server.Get(".*", handler);
    server.Post(".*", handler);
    server.Options(".*", [cors](const httplib::Request&, httplib::Response& res) {
        cors(res);
        res.status = 204;
    });
}

void serve_annotation_service(AnnotationService& service, const std::string& host, int port,
                              const std::string& allow_origin) {
    httplib::Server server;
    mount_annotation_service(server, service, allow_origin);
    if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace facedyn
