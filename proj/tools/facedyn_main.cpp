#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "facedyn/analysis.hpp"
#include "facedyn/annotation_service.hpp"
#include "facedyn/config.hpp"
#include "facedyn/corpus.hpp"
#include "facedyn/digest.hpp"
#include "facedyn/embedding.hpp"
#include "facedyn/error.hpp"
#include "facedyn/regression.hpp"
#include "facedyn/stats.hpp"
#include "facedyn/training.hpp"
#include "facedyn/version.hpp"

using namespace facedyn;
using nlohmann::ordered_json;

namespace {

struct Common {
    std::string config;
    std::string corpus;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string scope, variant, embedder;
    std::vector<std::string> set;
    bool timestamps = false;
};

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ModelConfig resolve_config(const Common& c) {
    ModelConfig cfg = c.config.empty() ? ModelConfig{} : load_config(c.config);
    for (const auto& kv : c.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got " + kv);
        apply_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!c.corpus.empty()) cfg.corpus = c.corpus;
    if (c.seed) cfg.seed = *c.seed;
    if (!c.scope.empty()) {
        auto s = parse_scope(c.scope);
        if (!s) throw ValidationError("unknown scope " + c.scope);
        cfg.scope = *s;
    }
    if (!c.variant.empty()) cfg.variant = parse_variant(c.variant);
    if (!c.embedder.empty()) cfg.embedder = parse_embedder(c.embedder);
    cfg.validate();
    if (cfg.corpus.empty()) throw ValidationError("no corpus: pass --corpus or set corpus in the config");
    return cfg;
}

void emit(const std::string& text, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw Error("cannot write " + path);
        f << text;
        if (!f) throw Error("cannot write " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot write " + path);
}

void stamp(ordered_json& j, const Common& c, const std::string& started) {
    if (!c.timestamps) return;
    j["manifest"]["started"] = started;
    j["manifest"]["finished"] = utc_now();
}

void log_epochs(const std::string& tag, int epoch, double loss) {
    std::fprintf(stderr, "%s epoch %d loss %.6f\n", tag.c_str(), epoch + 1, loss);
}

int cmd_ingest(const std::string& path, bool allow_unlabelled, const Common& c) {
    const auto corpus = parse_corpus(path, {c.seed.value_or(kDefaultSeed),
                                            allow_unlabelled ? LabelPolicy::Optional : LabelPolicy::Required});
    emit(serialize_corpus(corpus), c.out);
    std::fprintf(stderr, "%zu conversations (%zu donor, %zu non-donor), %zu utterances, %.1f%% multi-label, sha256 %s\n",
                 corpus.conversations.size(), corpus.count(Outcome::Donor), corpus.count(Outcome::NonDonor),
                 corpus.num_utterances(), 100 * corpus.multi_label_fraction(), corpus.provenance.c_str());
    return 0;
}

int cmd_stats(const std::string& path, const std::string& format, const Common& c) {
    const auto corpus = parse_corpus(path, {c.seed.value_or(kDefaultSeed), LabelPolicy::Required});
    const auto table = face_act_distribution(corpus);
    if (format == "csv") {
        emit(table.to_csv(), c.out);
    } else {
        std::cout << table.to_text();
        if (!c.out.empty()) emit(table.to_csv(), c.out);
    }
    return 0;
}

int cmd_kappa(const std::string& a, const std::string& b, const Common& c) {
    const ParseOptions opts{c.seed.value_or(kDefaultSeed), LabelPolicy::Optional};
    const auto r = corpus_agreement(parse_corpus(a, opts), parse_corpus(b, opts));
    std::printf("kappa %.4f over %zu utterances\n", r.kappa, r.items);
    return 0;
}

int cmd_train(const Common& c) {
    const auto started = utc_now();
    const auto cfg = resolve_config(c);
    const auto corpus = parse_corpus(cfg.corpus, {cfg.seed, LabelPolicy::Required});
    auto embedder = make_embedder(cfg);
    const auto embedded = embed_corpus(corpus, *embedder, cfg.scope);
    std::vector<const EmbeddedConversation*> all;
    for (const auto& e : embedded) all.push_back(&e);
    TrainOptions opts;
    opts.on_epoch = [](int e, double l) { log_epochs("train", e, l); };
    const auto trained = train_model(cfg, all, opts);
    const std::string path = c.out.empty() ? "facedyn.ckpt" : c.out;
    save_checkpoint(trained.model, cfg, path);
    ordered_json manifest{{"command", "train"},
                          {"toolkit_version", kVersion},
                          {"config_digest", cfg.digest()},
                          {"corpus_digest", corpus.provenance},
                          {"seed", cfg.seed},
                          {"checkpoint", path},
                          {"checkpoint_digest", sha256_file(path)},
                          {"final_loss", trained.curve.empty() ? 0.0 : trained.curve.back().loss}};
    ordered_json j{{"manifest", manifest}};
    stamp(j, c, started);
    emit(j.dump(2) + "\n", path + ".json");
    std::fprintf(stderr, "wrote %s\n", path.c_str());
    return 0;
}

int cmd_cv(const Common& c) {
    const auto started = utc_now();
    const auto cfg = resolve_config(c);
    const auto corpus = parse_corpus(cfg.corpus, {cfg.seed, LabelPolicy::Required});
    TrainOptions opts;
    if (cfg.threads <= 1) opts.on_epoch = [](int e, double l) { log_epochs("cv", e, l); };
    const auto report = run_cv(cfg, corpus, opts);
    auto j = report.to_json();
    stamp(j, c, started);
    emit(j.dump(2) + "\n", c.out);
    std::fprintf(stderr, "accuracy %.4f  macro-F1 %.4f  donation F1 %.4f (threshold %.3f)\n", report.mean_accuracy,
                 report.mean_macro_f1, report.donation.macro_f1, report.donation.threshold);
    return 0;
}

int cmd_evaluate(const std::string& checkpoint, double threshold, const Common& c) {
    const auto started = utc_now();
    ModelConfig cfg = read_checkpoint_config(checkpoint);
    if (!c.corpus.empty()) cfg.corpus = c.corpus;
    if (cfg.corpus.empty()) throw ValidationError("no corpus: pass --corpus");
    HierarchicalModel model(ModelShape::from(cfg));
    load_checkpoint(model, checkpoint);
    const auto corpus = parse_corpus(cfg.corpus, {cfg.seed, LabelPolicy::Required});
    auto embedder = make_embedder(cfg);
    const auto embedded = embed_corpus(corpus, *embedder, cfg.scope);
    std::vector<std::string> ids;
    for (const auto& conv : corpus.conversations) ids.push_back(conv.id);
    std::vector<UtteranceRecord> utts;
    std::vector<TraceRecord> traces;
    predict_into(model, cfg, corpus, embedded, ids, 0, utts, traces);
    const auto ev = evaluate_predictions(utts, traces, cfg.scope, threshold);
    ordered_json j{{"manifest",
                    {{"command", "evaluate"},
                     {"toolkit_version", kVersion},
                     {"config_digest", cfg.digest()},
                     {"corpus_digest", corpus.provenance},
                     {"checkpoint_digest", sha256_file(checkpoint)},
                     {"seed", cfg.seed}}}};
    j["evaluation"] = to_json(ev, cfg.scope);
    stamp(j, c, started);
    emit(j.dump(2) + "\n", c.out);
    return 0;
}

int cmd_compare(const std::string& a, const std::string& b, const Common& c) {
    const auto r = compare_reports(CvReport::load(a), CvReport::load(b));
    ordered_json j{{"b", r.b}, {"c", r.c}, {"statistic", r.statistic}, {"p", r.p}, {"stars", significance_stars(r.p)}};
    emit(j.dump(2) + "\n", c.out);
    return 0;
}

int cmd_regress(const std::string& report_path, const Common& c) {
    const auto report = CvReport::load(report_path);
    const auto analyses = analyses_from_report(report);
    std::vector<RoleRegression> results;
    for (Role role : {Role::ER, Role::EE}) results.push_back(regress_role(analyses, role));
    emit(regression_csv(results), c.out);
    return 0;
}

int cmd_trend(const std::vector<std::string>& reports, const Common& c) {
    std::vector<TraceRecord> traces;
    for (const auto& p : reports) {
        auto r = CvReport::load(p);
        traces.insert(traces.end(), r.traces.begin(), r.traces.end());
    }
    emit(trend_csv(trend_export(traces)), c.out);
    return 0;
}

int cmd_serve(const std::string& host, int port, const std::string& state, const std::string& flowchart,
              const std::string& origin, const Common& c) {
    if (c.corpus.empty()) throw ValidationError("serve needs --corpus");
    auto corpus = parse_corpus(c.corpus, {c.seed.value_or(kDefaultSeed), LabelPolicy::Optional});
    AnnotationService svc(std::move(corpus), Flowchart::load(flowchart.empty() ? default_flowchart_path() : flowchart),
                          state);
    std::fprintf(stderr, "annotation service on http://%s:%d\n", host.c_str(), port);
    serve_annotation_service(svc, host, port, origin);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"facedyn: face acts and donation outcomes in persuasion dialogues"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.fallthrough();

    Common c;
    std::uint64_t seed = kDefaultSeed;
    app.add_option("--config", c.config, "model config file (key = value)")->check(CLI::ExistingFile);
    app.add_option("--corpus", c.corpus, "corpus JSONL")->check(CLI::ExistingFile);
    app.add_option("--out", c.out, "output file (default stdout)");
    auto* seed_opt = app.add_option("--seed", seed, "seed for every random choice (default 13)");
    app.add_option("--scope", c.scope, "label scope")->check(CLI::IsMember({"er", "ee", "all"}, CLI::ignore_case));
    app.add_option("--variant", c.variant, "fusion variant")->check(CLI::IsMember({"base", "f", "sf"}, CLI::ignore_case));
    app.add_option("--embedder", c.embedder, "token embedder")
        ->check(CLI::IsMember({"static", "contextual"}, CLI::ignore_case));
    app.add_option("--set", c.set, "override a config value, key=value (repeatable)");
    app.add_flag("--timestamps", c.timestamps, "record wall-clock times in manifests");

    std::string in_path, path_b, format = "text", checkpoint, report, host = "127.0.0.1", state, flowchart,
                                 origin = "*";
    std::vector<std::string> reports;
    bool allow_unlabelled = false;
    double threshold = 0.5;
    int port = 8080;

    auto* ingest = app.add_subcommand("ingest", "validate a corpus and write its canonical form");
    ingest->add_option("path", in_path)->required()->check(CLI::ExistingFile);
    ingest->add_flag("--allow-unlabelled", allow_unlabelled, "accept utterances without labels");

    auto* stats = app.add_subcommand("stats", "face-act distribution table with t-tests");
    stats->add_option("path", in_path)->required()->check(CLI::ExistingFile);
    stats->add_option("--format", format)->check(CLI::IsMember({"text", "csv"}));

    auto* kappa = app.add_subcommand("kappa", "Cohen's kappa between two annotated corpora");
    kappa->add_option("a", in_path)->required()->check(CLI::ExistingFile);
    kappa->add_option("b", path_b)->required()->check(CLI::ExistingFile);

    auto* train = app.add_subcommand("train", "train on the whole corpus and save a checkpoint");
    auto* cv = app.add_subcommand("cv", "stratified k-fold cross-validation report");

    auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a corpus");
    evaluate->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    evaluate->add_option("--threshold", threshold, "donation threshold")->check(CLI::Range(0.0, 1.0));

    auto* compare = app.add_subcommand("compare", "McNemar test between two cv reports");
    compare->add_option("a", in_path)->required()->check(CLI::ExistingFile);
    compare->add_option("b", path_b)->required()->check(CLI::ExistingFile);

    auto* regress = app.add_subcommand("regress", "donation-probability regression on predicted acts");
    regress->add_option("--report", report)->required()->check(CLI::ExistingFile);

    auto* trend = app.add_subcommand("trend-export", "mean donation probability per step, donor vs non-donor");
    trend->add_option("--report", reports)->required()->check(CLI::ExistingFile);

    auto* serve = app.add_subcommand("serve", "annotation HTTP service");
    serve->add_option("--port", port)->check(CLI::Range(0, 65535));
    serve->add_option("--host", host);
    serve->add_option("--state", state, "directory for session event logs");
    serve->add_option("--flowchart", flowchart)->check(CLI::ExistingFile);
    serve->add_option("--allow-origin", origin, "CORS origin");

    if (argc > 1 && argv[1][0] != '-') {
        bool known = false;
        for (const auto* sub : app.get_subcommands({})) known |= sub->get_name() == argv[1];
        if (!known) {
            std::cerr << "error: unknown command '" << argv[1] << "'\n\n" << app.help();
            return 2;
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }
    if (seed_opt->count()) c.seed = seed;

    try {
        if (*ingest) return cmd_ingest(in_path, allow_unlabelled, c);
        if (*stats) return cmd_stats(in_path, format, c);
        if (*kappa) return cmd_kappa(in_path, path_b, c);
        if (*train) return cmd_train(c);
        if (*cv) return cmd_cv(c);
        if (*evaluate) return cmd_evaluate(checkpoint, threshold, c);
        if (*compare) return cmd_compare(in_path, path_b, c);
        if (*regress) return cmd_regress(report, c);
        if (*trend) return cmd_trend(reports, c);
        if (*serve) return cmd_serve(host, port, state, flowchart, origin, c);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
