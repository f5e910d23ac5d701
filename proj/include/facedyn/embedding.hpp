#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "facedyn/autograd.hpp"
#include "facedyn/config.hpp"
#include "facedyn/corpus.hpp"
#include "facedyn/dialogue_model.hpp"

namespace facedyn {

// Lowercased word tokens; runs of letters/digits/apostrophes form words, any
// other non-space byte is its own token.
std::vector<std::string> tokenize(std::string_view text);

// Frozen token embedder: no trainable weights, deterministic per text.
class TokenEmbedder {
public:
    virtual ~TokenEmbedder() = default;
    virtual int dim() const = 0;
    virtual EmbedderMode mode() const = 0;
    // One vector per word; never empty (an empty text yields one zero vector).
    virtual std::vector<nn::Vec> embed(std::string_view text) = 0;
};

// Word -> vector table in the common text format ("word v1 ... vd" per line,
// an optional "count dim" header line). Out-of-vocabulary words get a fixed
// pseudo-random vector derived from the word, so distinct unknown words stay
// distinguishable.
class StaticEmbedder final : public TokenEmbedder {
public:
    explicit StaticEmbedder(int dim) : dim_(dim) {}
    static StaticEmbedder load(const std::string& path, int expected_dim = 0);

    int dim() const override { return dim_; }
    EmbedderMode mode() const override { return EmbedderMode::Static; }
    std::vector<nn::Vec> embed(std::string_view text) override;

    void add(const std::string& word, nn::Vec v);
    bool contains(const std::string& word) const { return table_.count(word) != 0; }
    std::size_t vocabulary_size() const { return table_.size(); }
    nn::Vec lookup(const std::string& word) const;

private:
    int dim_;
    std::unordered_map<std::string, nn::Vec> table_;
};

// Subword output of a contextual encoder for one text.
struct PieceEmbeddings {
    std::vector<std::string> words;
    std::vector<nn::Vec> pieces;
    std::vector<int> word_of_piece;  // -1 for special pieces ([CLS], [SEP])
};

// Mean of the pieces belonging to each word.
std::vector<nn::Vec> mean_pool_pieces(const PieceEmbeddings& p);

// Source of contextual piece vectors (e.g. a pretrained encoder behind an
// RPC or subprocess). Only consulted on cache misses.
class ContextualProvider {
public:
    virtual ~ContextualProvider() = default;
    virtual int dim() const = 0;
    virtual PieceEmbeddings embed_pieces(std::string_view text) = 0;
};

// Contextual embedder backed by an on-disk cache: <dir>/<sha256(text)>.json
// holding {"text", "words", "vectors"} with word-aligned vectors.
class ContextualEmbedder final : public TokenEmbedder {
public:
    ContextualEmbedder(std::string cache_dir, int dim, std::shared_ptr<ContextualProvider> provider = nullptr);

    int dim() const override { return dim_; }
    EmbedderMode mode() const override { return EmbedderMode::Contextual; }
    std::vector<nn::Vec> embed(std::string_view text) override;

    static std::string cache_key(std::string_view text);
    std::string cache_path(std::string_view text) const;
    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }

private:
    std::string dir_;
    int dim_;
    std::shared_ptr<ContextualProvider> provider_;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

// Builds the embedder a config asks for. Contextual uses `cache` (or the
// FACEDYN_CACHE environment variable) and no live provider.
std::unique_ptr<TokenEmbedder> make_embedder(const ModelConfig& cfg);

EmbeddedConversation embed_conversation(const Conversation& conv, TokenEmbedder& embedder, Scope scope);
std::vector<EmbeddedConversation> embed_corpus(const Corpus& corpus, TokenEmbedder& embedder, Scope scope);

}  // namespace facedyn
