#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "facedyn/annotation_service.hpp"
#include "facedyn/error.hpp"

using namespace facedyn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kCorpus = std::string(FACEDYN_TEST_DATA) + "/mini_corpus.jsonl";

Corpus load_corpus() { return parse_corpus(kCorpus, {kDefaultSeed, LabelPolicy::Optional}); }

ServiceResponse call(AnnotationService& svc, const std::string& method, const std::string& path,
                     const json& body = nullptr, const std::string& who = "ann1",
                     std::map<std::string, std::string> query = {}) {
    ServiceRequest r;
    r.method = method;
    r.path = path;
    r.query = std::move(query);
    if (!who.empty()) r.headers["x-annotator-id"] = who;
    if (!body.is_null()) r.body = body.dump();
    return svc.handle(r);
}

std::string open_session(AnnotationService& svc, const std::string& conv, const std::string& who = "ann1") {
    auto r = call(svc, "POST", "/sessions", {{"conv_id", conv}}, who);
    REQUIRE(r.status == 201);
    return r.body["id"];
}

void answer_path(AnnotationService& svc, const std::string& id, const std::vector<std::string>& answers,
                 const std::string& who = "ann1") {
    for (const auto& a : answers) {
        auto r = call(svc, "POST", "/sessions/" + id + "/answer", {{"answer", a}}, who);
        REQUIRE_MESSAGE(r.status == 200, r.body.dump());
    }
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("facedyn_svc_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("terminal answer at SNeg+ records the label and advances the cursor") {
    AnnotationService svc(load_corpus(), Flowchart::load(default_flowchart_path()));
    const auto id = open_session(svc, "c1");
    // label the first three directly, then walk the flowchart for utterance 3
    CHECK(call(svc, "POST", "/sessions/" + id + "/label", {{"labels", {"HPos+"}}}).status == 200);
    CHECK(call(svc, "POST", "/sessions/" + id + "/label", {{"labels", {"SPos+"}}}).status == 200);
    CHECK(call(svc, "POST", "/sessions/" + id + "/label", {{"labels", {"HNeg-"}}}).status == 200);

    auto next = call(svc, "GET", "/sessions/" + id + "/next");
    CHECK(next.body["utterance"]["text"] == "I do not wish to donate.");
    CHECK(next.body["node"]["id"] == "task_content");
    answer_path(svc, id, {"task-specific content", "speaker", "negative"});
    CHECK(svc.session(id)->cursor == 3);
    auto r = call(svc, "POST", "/sessions/" + id + "/answer", {{"answer", "yes"}});
    CHECK(r.status == 200);
    CHECK(r.body["recorded"]["labels"] == json{"SNeg+"});
    CHECK(r.body["cursor"] == 4);
    CHECK(r.body["done"] == true);
}

TEST_CASE("scripted wizard answers agree with direct flowchart evaluation") {
    const auto fc = Flowchart::load(default_flowchart_path());
    AnnotationService svc(load_corpus(), fc);
    const auto id = open_session(svc, "c1");
    const std::vector<std::string> path = {"task-specific content", "hearer", "positive", "yes"};
    answer_path(svc, id, path);
    const auto step = fc.walk(path);
    REQUIRE(std::holds_alternative<FaceAct>(step));
    CHECK(svc.session(id)->labels.at(0) == std::vector<FaceAct>{std::get<FaceAct>(step)});
}

TEST_CASE("error statuses") {
    AnnotationService svc(load_corpus(), Flowchart::load(default_flowchart_path()));
    CHECK(call(svc, "GET", "/conversations", nullptr, "").status == 401);
    CHECK(call(svc, "GET", "/conversations/nope").status == 404);
    CHECK(call(svc, "POST", "/sessions", {{"conv_id", "nope"}}).status == 404);
    CHECK(call(svc, "GET", "/sessions/s999999/next").status == 404);

    const auto id = open_session(svc, "c1");
    CHECK(call(svc, "GET", "/sessions/" + id + "/next", nullptr, "intruder").status == 403);
    // ER utterance cannot carry SPos-
    CHECK(call(svc, "POST", "/sessions/" + id + "/label", {{"labels", {"SPos-"}}}).status == 422);
    // flowchart reaching an act invalid for the role
    answer_path(svc, id, {"task-specific content", "speaker", "positive", "no"});
    CHECK(call(svc, "POST", "/sessions/" + id + "/answer", {{"answer", "yes"}}).status == 422);
    // stale node
    CHECK(call(svc, "POST", "/sessions/" + id + "/answer", {{"node", "task_content"}, {"answer", "speaker"}}).status ==
          409);
    // stale version
    const auto v = svc.session(id)->version;
    CHECK(call(svc, "POST", "/sessions/" + id + "/undo", {{"version", v + 5}}).status == 409);
    CHECK(call(svc, "POST", "/sessions/" + id + "/answer", {{"answer", "maybe"}}).status == 400);
    // labelling ahead of the cursor
    CHECK(call(svc, "POST", "/sessions/" + id + "/label", {{"index", 2}, {"labels", {"HNeg-"}}}).status == 409);
}

TEST_CASE("undo rewinds answers and committed labels") {
    AnnotationService svc(load_corpus(), Flowchart::load(default_flowchart_path()));
    const auto id = open_session(svc, "c2");
    CHECK(call(svc, "POST", "/sessions/" + id + "/undo").status == 409);
    answer_path(svc, id, {"no task-specific content"});
    CHECK(svc.session(id)->cursor == 1);
    CHECK(call(svc, "POST", "/sessions/" + id + "/undo").status == 200);
    auto s = *svc.session(id);
    CHECK(s.cursor == 0);
    CHECK(s.labels.empty());
    CHECK(s.version == 3);  // create, answer, undo
    answer_path(svc, id, {"task-specific content", "hearer"});
    CHECK(call(svc, "POST", "/sessions/" + id + "/undo").status == 200);
    CHECK(svc.session(id)->node == "whose_face");
}

TEST_CASE("sessions persist as event logs and replay") {
    TempDir dir;
    std::string id;
    {
        AnnotationService svc(load_corpus(), Flowchart::load(default_flowchart_path()), dir.path.string());
        id = open_session(svc, "c1");
        answer_path(svc, id, {"task-specific content", "hearer", "positive", "yes"});
        CHECK(call(svc, "POST", "/sessions/" + id + "/label", {{"labels", {"SPos+", "Other"}}}).status == 200);
        answer_path(svc, id, {"task-specific content"});
    }
    // a torn tail write is ignored
    {
        std::ofstream f(dir.path / "sessions" / (id + ".jsonl"), std::ios::app);
        f << "{\"event\":\"ans";
    }
    AnnotationService again(load_corpus(), Flowchart::load(default_flowchart_path()), dir.path.string());
    auto s = again.session(id);
    REQUIRE(s);
    CHECK(s->cursor == 2);
    CHECK(s->node == "whose_face");
    CHECK(s->labels.at(1) == std::vector<FaceAct>{FaceAct::SPosPlus, FaceAct::Other});
    // new ids continue after replayed ones
    CHECK(open_session(again, "c2") > id);
}

TEST_CASE("export round-trips and identical annotators agree perfectly") {
    AnnotationService svc(load_corpus(), Flowchart::load(default_flowchart_path()));
    for (const std::string who : {"ann1", "ann2"}) {
        const auto id = open_session(svc, "c2", who);
        answer_path(svc, id, {"no task-specific content"}, who);
        CHECK(call(svc, "POST", "/sessions/" + id + "/label", {{"labels", {"SPos-", "Other"}}}, who).status == 200);
        answer_path(svc, id, {"task-specific content", "hearer", "negative", "yes"}, who);
    }
    auto ex = call(svc, "GET", "/export", nullptr, "ann1", {{"annotator", "ann1"}});
    REQUIRE(ex.text);
    const auto parsed = parse_corpus_text(*ex.text, {kDefaultSeed, LabelPolicy::Optional});
    CHECK(serialize_corpus(parsed) == *ex.text);
    CHECK(parsed.conversations.size() == 1);

    auto ag = call(svc, "GET", "/agreement", nullptr, "ann1", {{"a", "ann1"}, {"b", "ann2"}});
    CHECK(ag.status == 200);
    CHECK(ag.body["kappa"].get<double>() == doctest::Approx(1.0));
    CHECK(ag.body["items"] == 3);
    // the same number from the exported files
    auto other = parse_corpus_text(*call(svc, "GET", "/export", nullptr, "ann2").text, {kDefaultSeed, LabelPolicy::Optional});
    CHECK(corpus_agreement(parsed, other).kappa == doctest::Approx(1.0));
    CHECK(call(svc, "GET", "/agreement", nullptr, "ann1", {{"a", "ann1"}, {"b", "ghost"}}).status == 404);
}

TEST_CASE("http adapter serves the API with CORS") {
    AnnotationService svc(load_corpus(), Flowchart::load(default_flowchart_path()));
    httplib::Server server;
    mount_annotation_service(server, svc, "http://localhost:5173");
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    httplib::Headers h{{"X-Annotator-Id", "web"}};
    auto list = cli.Get("/conversations", h);
    REQUIRE(list);
    CHECK(list->status == 200);
    CHECK(list->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
    CHECK(json::parse(list->body)["conversations"].size() == 2);

    auto created = cli.Post("/sessions", h, R"({"conv_id":"c1"})", "application/json");
    REQUIRE(created);
    CHECK(created->status == 201);
    const auto id = json::parse(created->body)["id"].get<std::string>();
    auto next = cli.Get("/sessions/" + id + "/next", h);
    REQUIRE(next);
    CHECK(json::parse(next->body)["valid_labels"].size() == label_space(Scope::ER).size());

    auto pre = cli.Options("/sessions");
    REQUIRE(pre);
    CHECK(pre->status == 204);
    CHECK(pre->get_header_value("Access-Control-Allow-Headers").find("X-Annotator-Id") != std::string::npos);

    CHECK(cli.Get("/conversations")->status == 401);
    server.stop();
    t.join();
}
