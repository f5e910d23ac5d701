#include "facedyn/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "facedyn/digest.hpp"
#include "facedyn/error.hpp"

namespace facedyn {

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::Base: return "base";
        case Variant::F: return "f";
        case Variant::SF: return "sf";
    }
    return "?";
}

Variant parse_variant(std::string_view s) {
    if (s == "base") return Variant::Base;
    if (s == "f") return Variant::F;
    if (s == "sf") return Variant::SF;
    throw ValidationError("unknown variant '" + std::string(s) + "' (expected base, f or sf)");
}

std::string_view to_string(EmbedderMode m) { return m == EmbedderMode::Static ? "static" : "contextual"; }

EmbedderMode parse_embedder(std::string_view s) {
    if (s == "static") return EmbedderMode::Static;
    if (s == "contextual") return EmbedderMode::Contextual;
    throw ValidationError("unknown embedder '" + std::string(s) + "' (expected static or contextual)");
}

std::string_view to_string(DonationLossKind k) { return k == DonationLossKind::MSE ? "MSE" : "BCE"; }

DonationLossKind parse_loss_kind(std::string_view s) {
    if (s == "MSE" || s == "mse") return DonationLossKind::MSE;
    if (s == "BCE" || s == "bce") return DonationLossKind::BCE;
    throw ValidationError("unknown donation loss '" + std::string(s) + "' (expected MSE or BCE)");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
    if (!(learning_rate > 0)) fail("learning_rate must be positive");
    if (epochs < 0) fail("epochs must be >= 0");
    if (!(lr_decay > 0 && lr_decay <= 1)) fail("lr_decay must be in (0, 1]");
    if (d_h1 < 1 || d_h2 < 1 || d_fc < 1 || embed_dim < 1) fail("dimensions must be positive");
    if (!(alpha >= 0 && alpha <= 1)) fail("alpha must be in [0, 1]");
    if (!(dropout >= 0 && dropout < 1)) fail("dropout must be in [0, 1)");
    if (!(initial_probability >= 0 && initial_probability <= 1)) fail("initial_probability must be in [0, 1]");
    if (folds < 2) fail("folds must be >= 2");
    if (threads < 1) fail("threads must be >= 1");
}

bool ModelConfig::within_reference_search_space() const {
    auto in = [](double v, std::initializer_list<double> xs) {
        for (double x : xs)
            if (v == x) return true;
        return false;
    };
    return in(learning_rate, {1e-3, 1e-4}) && in(epochs, {50, 100}) && in(d_h1, {300, 768}) && d_h2 == 300 &&
           d_fc == 100 && in(alpha, {0, 0.25, 0.5, 0.75, 0.9, 1.0});
}

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

long long to_int(const std::string& key, const std::string& v) {
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ValidationError("config: '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("config: '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace

void apply_config_value(ModelConfig& c, const std::string& key, const std::string& v) {
    if (key == "learning_rate") c.learning_rate = to_double(key, v);
    else if (key == "epochs") c.epochs = static_cast<int>(to_int(key, v));
    else if (key == "lr_decay") c.lr_decay = to_double(key, v);
    else if (key == "d_h1") c.d_h1 = static_cast<int>(to_int(key, v));
    else if (key == "d_h2") c.d_h2 = static_cast<int>(to_int(key, v));
    else if (key == "d_fc") c.d_fc = static_cast<int>(to_int(key, v));
    else if (key == "alpha") c.alpha = to_double(key, v);
    else if (key == "donation_loss") c.donation_loss = parse_loss_kind(v);
    else if (key == "variant") c.variant = parse_variant(v);
    else if (key == "context") c.context = to_bool(key, v);
    else if (key == "embedder") c.embedder = parse_embedder(v);
    else if (key == "scope") {
        auto s = parse_scope(v);
        if (!s) throw ValidationError("config: unknown scope '" + v + "'");
        c.scope = *s;
    } else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "dropout") c.dropout = to_double(key, v);
    else if (key == "initial_probability") c.initial_probability = to_double(key, v);
    else if (key == "folds") c.folds = static_cast<int>(to_int(key, v));
    else if (key == "threads") c.threads = static_cast<int>(to_int(key, v));
    else if (key == "embed_dim") c.embed_dim = static_cast<int>(to_int(key, v));
    else if (key == "corpus") c.corpus = v;
    else if (key == "vectors") c.vectors = v;
    else if (key == "cache") c.cache = v;
    else throw ValidationError("config: unknown key '" + key + "'");
}

ModelConfig parse_config_text(std::string_view text) {
    ModelConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty() || t.front() == '[') continue;  // tolerate TOML table headers
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
        const std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front())
            value = value.substr(1, value.size() - 2);
        try {
            apply_config_value(cfg, key, value);
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), lineno);
        }
    }
    cfg.validate();
    return cfg;
}

ModelConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string ModelConfig::to_text() const {
    std::vector<std::pair<std::string, std::string>> kv = {
        {"alpha", num(alpha)},
        {"cache", cache},
        {"context", context ? "true" : "false"},
        {"corpus", corpus},
        {"d_fc", std::to_string(d_fc)},
        {"d_h1", std::to_string(d_h1)},
        {"d_h2", std::to_string(d_h2)},
        {"donation_loss", std::string(to_string(donation_loss))},
        {"dropout", num(dropout)},
        {"embed_dim", std::to_string(embed_dim)},
        {"embedder", std::string(to_string(embedder))},
        {"epochs", std::to_string(epochs)},
        {"folds", std::to_string(folds)},
        {"initial_probability", num(initial_probability)},
        {"learning_rate", num(learning_rate)},
        {"lr_decay", num(lr_decay)},
        {"scope", std::string(to_string(scope))},
        {"seed", std::to_string(seed)},
        {"threads", std::to_string(threads)},
        {"variant", std::string(to_string(variant))},
        {"vectors", vectors},
    };
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = \"" + v + "\"\n";
    return out;
}

std::string ModelConfig::shape_digest() const {
    const std::string key = "d_e=" + std::to_string(embed_dim) + ";d_h1=" + std::to_string(d_h1) +
                            ";d_h2=" + std::to_string(d_h2) + ";d_fc=" + std::to_string(d_fc) +
                            ";variant=" + std::string(to_string(variant)) + ";context=" + (context ? "1" : "0") +
                            ";scope=" + std::string(to_string(scope));
    return sha256_hex(key);
}

std::string ModelConfig::digest() const { return sha256_hex(to_text()); }

}  // namespace facedyn
