#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "facedyn/taxonomy.hpp"

namespace facedyn {

inline constexpr std::uint64_t kDefaultSeed = 13;

struct Utterance {
    std::string conv_id;
    int turn = 0;        // metadata only; the model sees the flat utterance sequence
    std::size_t index = 0;
    Role role = Role::ER;
    std::string text;
    std::vector<FaceAct> gold_labels;  // canonical order, unique; empty only for unannotated input
    FaceAct selected_gold = FaceAct::Other;

    bool labeled() const { return !gold_labels.empty(); }
};

enum class Outcome : int { NonDonor = 0, Donor = 1 };

struct Conversation {
    std::string id;
    std::vector<Utterance> utterances;
    Outcome outcome = Outcome::NonDonor;

    bool donor() const { return outcome == Outcome::Donor; }
};

struct Corpus {
    std::vector<Conversation> conversations;  // sorted by id
    std::string provenance;                   // sha256 of the source bytes

    std::size_t count(Outcome o) const;
    std::size_t num_utterances() const;
    // Fraction of labelled utterances carrying more than one gold label.
    double multi_label_fraction() const;
    const Conversation& find(std::string_view id) const;
};

enum class LabelPolicy { Required, Optional };

struct ParseOptions {
    std::uint64_t seed = kDefaultSeed;
    LabelPolicy labels = LabelPolicy::Required;
};

// One JSON object per line:
//   {"conv_id": str, "turn": int, "index": int, "role": "ER"|"EE",
//    "text": str, "labels": [str...], "outcome": 0|1}
// Blank lines are skipped. Throws ParseError (with line) or ValidationError.
Corpus parse_corpus_text(std::string_view text, const ParseOptions& opts = {});
Corpus parse_corpus(const std::string& path, const ParseOptions& opts = {});

// Canonical form: conversations by id, utterances by index, sorted keys,
// labels in canonical order, UTF-8 passed through unescaped.
std::string serialize_corpus(const Corpus& corpus);
void write_corpus(const Corpus& corpus, const std::string& path);

// Deterministic pick from gold_labels keyed by (conv_id, index, seed).
FaceAct select_gold_label(const Utterance& utterance, std::uint64_t seed);

// Re-run gold reduction for every utterance under `seed`.
void reduce_gold_labels(Corpus& corpus, std::uint64_t seed);

// Cohen's kappa over the utterances labelled in both corpora, matched by
// (conv_id, index), comparing selected gold labels.
struct Agreement {
    std::size_t items = 0;
    double kappa = 0.0;
};
Agreement corpus_agreement(const Corpus& a, const Corpus& b);

struct FoldSplit {
    std::size_t fold_index = 0;
    std::vector<std::string> train_ids;  // sorted
    std::vector<std::string> val_ids;    // sorted
};

// Outcome-stratified k-fold partition; validation sets are disjoint and
// exhaustive, per-class validation sizes differ by at most one.
std::vector<FoldSplit> stratified_folds(const Corpus& corpus, std::size_t k = 5,
                                        std::uint64_t seed = kDefaultSeed);

}  // namespace facedyn
