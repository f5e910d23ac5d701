#include "facedyn/embedding.hpp"

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "facedyn/digest.hpp"
#include "facedyn/error.hpp"
#include "facedyn/rng.hpp"

namespace facedyn {

using nn::Vec;

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c == '\'' || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            flush();
        } else {
            flush();
            out.emplace_back(1, ch);
        }
    }
    flush();
    return out;
}

// ---------------------------------------------------------------------------

StaticEmbedder StaticEmbedder::load(const std::string& path, int expected_dim) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open word vectors " + path);
    std::string line;
    std::size_t lineno = 0;
    int dim = expected_dim;
    std::unordered_map<std::string, Vec> table;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        std::vector<double> values;
        double v;
        while (ss >> v) values.push_back(v);
        if (!ss.eof()) throw ParseError("word vectors: non-numeric component", lineno);
        if (lineno == 1 && values.size() == 1) continue;  // "count dim" header
        if (values.empty()) throw ParseError("word vectors: no components", lineno);
        if (dim == 0) dim = static_cast<int>(values.size());
        if (static_cast<int>(values.size()) != dim)
            throw ParseError("word vectors: expected " + std::to_string(dim) + " components, found " +
                                 std::to_string(values.size()),
                             lineno);
        table.emplace(word, Eigen::Map<Vec>(values.data(), static_cast<Eigen::Index>(values.size())));
    }
    if (dim == 0) throw ParseError("word vectors: empty file " + path, 0);
    StaticEmbedder e(dim);
    e.table_ = std::move(table);
    return e;
}

void StaticEmbedder::add(const std::string& word, Vec v) {
    if (v.size() != dim_) throw ContractViolation("StaticEmbedder::add: dimension mismatch for '" + word + "'");
    table_[word] = std::move(v);
}

Vec StaticEmbedder::lookup(const std::string& word) const {
    if (auto it = table_.find(word); it != table_.end()) return it->second;
    Rng rng(splitmix64(fnv1a64(word)));
    Vec v(dim_);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
    for (Eigen::Index i = 0; i < dim_; ++i) v(i) = rng.normal() * scale;
    return v;
}

std::vector<Vec> StaticEmbedder::embed(std::string_view text) {
    std::vector<Vec> out;
    for (const auto& w : tokenize(text)) out.push_back(lookup(w));
    if (out.empty()) out.push_back(Vec::Zero(dim_));
    return out;
}

// ---------------------------------------------------------------------------

std::vector<Vec> mean_pool_pieces(const PieceEmbeddings& p) {
    if (p.pieces.size() != p.word_of_piece.size())
        throw ContractViolation("mean_pool_pieces: pieces and word ids differ in length");
    if (p.pieces.empty() && !p.words.empty()) throw ContractViolation("mean_pool_pieces: no pieces");
    const Eigen::Index dim = p.pieces.empty() ? 0 : p.pieces.front().size();
    std::vector<Vec> sums(p.words.size(), Vec::Zero(dim));
    std::vector<int> counts(p.words.size(), 0);
    for (std::size_t i = 0; i < p.pieces.size(); ++i) {
        const int w = p.word_of_piece[i];
        if (w < 0) continue;
        if (static_cast<std::size_t>(w) >= p.words.size())
            throw ContractViolation("mean_pool_pieces: word id out of range");
        sums[static_cast<std::size_t>(w)] += p.pieces[i];
        ++counts[static_cast<std::size_t>(w)];
    }
    for (std::size_t w = 0; w < sums.size(); ++w) {
        if (counts[w] == 0) throw ContractViolation("mean_pool_pieces: word '" + p.words[w] + "' has no pieces");
        sums[w] /= counts[w];
    }
    return sums;
}

ContextualEmbedder::ContextualEmbedder(std::string cache_dir, int dim, std::shared_ptr<ContextualProvider> provider)
    : dir_(std::move(cache_dir)), dim_(dim), provider_(std::move(provider)) {
    if (dir_.empty()) throw ContractViolation("contextual embedder needs a cache directory (set FACEDYN_CACHE)");
}

std::string ContextualEmbedder::cache_key(std::string_view text) { return sha256_hex(text); }

std::string ContextualEmbedder::cache_path(std::string_view text) const {
    return (std::filesystem::path(dir_) / (cache_key(text) + ".json")).string();
}

std::vector<Vec> ContextualEmbedder::embed(std::string_view text) {
    const std::string path = cache_path(text);
    std::vector<Vec> out;
    if (std::ifstream in(path); in) {
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("embedding cache " + path + ": " + e.what(), 0);
        }
        for (const auto& row : j.at("vectors")) {
            auto values = row.get<std::vector<double>>();
            if (static_cast<int>(values.size()) != dim_)
                throw ValidationError("embedding cache " + path + ": vector has " + std::to_string(values.size()) +
                                      " components, expected " + std::to_string(dim_));
            out.emplace_back(Eigen::Map<Vec>(values.data(), static_cast<Eigen::Index>(values.size())));
        }
        ++hits_;
    } else {
        if (!provider_)
            throw Error("contextual embedding for text digest " + cache_key(text) + " is not cached in " + dir_ +
                        " and no provider is configured");
        ++misses_;
        const PieceEmbeddings pieces = provider_->embed_pieces(text);
        out = mean_pool_pieces(pieces);
        nlohmann::json j;
        j["text"] = std::string(text);
        j["words"] = pieces.words;
        j["vectors"] = nlohmann::json::array();
        for (const Vec& v : out) j["vectors"].push_back(std::vector<double>(v.data(), v.data() + v.size()));
        std::filesystem::create_directories(dir_);
        const std::string tmp = path + ".tmp";
        {
            std::ofstream o(tmp, std::ios::trunc);
            o << j.dump();
        }
        std::filesystem::rename(tmp, path);
    }
    if (out.empty()) out.push_back(Vec::Zero(dim_));
    return out;
}

std::unique_ptr<TokenEmbedder> make_embedder(const ModelConfig& cfg) {
    if (cfg.embedder == EmbedderMode::Static) {
        if (cfg.vectors.empty()) return std::make_unique<StaticEmbedder>(cfg.embed_dim);
        auto e = std::make_unique<StaticEmbedder>(StaticEmbedder::load(cfg.vectors, cfg.embed_dim));
        return e;
    }
    std::string dir = cfg.cache;
    if (dir.empty())
        if (const char* env = std::getenv("FACEDYN_CACHE")) dir = env;
    return std::make_unique<ContextualEmbedder>(dir, cfg.embed_dim);
}

EmbeddedConversation embed_conversation(const Conversation& conv, TokenEmbedder& embedder, Scope scope) {
    EmbeddedConversation out;
    out.id = conv.id;
    out.outcome = conv.outcome;
    for (const auto& u : conv.utterances) {
        EmbeddedUtterance e;
        e.tokens = embedder.embed(u.text);
        e.role = u.role;
        const bool in_scope = scope == Scope::All || scope == scope_of(u.role);
        if (in_scope && u.labeled()) {
            auto idx = label_index(scope, u.selected_gold);
            if (idx) e.target = static_cast<Eigen::Index>(*idx);
        }
        out.utterances.push_back(std::move(e));
    }
    return out;
}

std::vector<EmbeddedConversation> embed_corpus(const Corpus& corpus, TokenEmbedder& embedder, Scope scope) {
    std::vector<EmbeddedConversation> out;
    out.reserve(corpus.conversations.size());
    for (const auto& c : corpus.conversations) out.push_back(embed_conversation(c, embedder, scope));
    return out;
}

}  // namespace facedyn
