#include "facedyn/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "facedyn/digest.hpp"
#include "facedyn/error.hpp"
#include "facedyn/rng.hpp"

namespace facedyn {

using nlohmann::json;

std::size_t Corpus::count(Outcome o) const {
    return static_cast<std::size_t>(std::count_if(conversations.begin(), conversations.end(),
                                                  [o](const Conversation& c) { return c.outcome == o; }));
}

std::size_t Corpus::num_utterances() const {
    std::size_t n = 0;
    for (const auto& c : conversations) n += c.utterances.size();
    return n;
}

double Corpus::multi_label_fraction() const {
    std::size_t labeled = 0, multi = 0;
    for (const auto& c : conversations)
        for (const auto& u : c.utterances) {
            labeled += u.labeled();
            multi += u.gold_labels.size() > 1;
        }
    return labeled ? static_cast<double>(multi) / static_cast<double>(labeled) : 0.0;
}

const Conversation& Corpus::find(std::string_view id) const {
    auto it = std::lower_bound(conversations.begin(), conversations.end(), id,
                               [](const Conversation& c, std::string_view v) { return c.id < v; });
    if (it == conversations.end() || it->id != id)
        throw ContractViolation("unknown conversation '" + std::string(id) + "'");
    return *it;
}

FaceAct select_gold_label(const Utterance& u, std::uint64_t seed) {
    if (u.gold_labels.empty())
        throw ContractViolation("select_gold_label: utterance " + u.conv_id + "#" + std::to_string(u.index) +
                                " has no gold labels");
    if (u.gold_labels.size() == 1) return u.gold_labels.front();
    std::uint64_t key = splitmix64(fnv1a64(u.conv_id));
    key = splitmix64(key ^ static_cast<std::uint64_t>(u.index));
    key = splitmix64(key ^ seed);
    return u.gold_labels[key % u.gold_labels.size()];
}

void reduce_gold_labels(Corpus& corpus, std::uint64_t seed) {
    for (auto& c : corpus.conversations)
        for (auto& u : c.utterances)
            if (u.labeled()) u.selected_gold = select_gold_label(u, seed);
}

namespace {

struct Record {
    Utterance utt;
    Outcome outcome;
    std::size_t line;
};

template <typename T>
T field(const json& j, const char* key, std::size_t line) {
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(std::string("missing field '") + key + "'", line);
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ParseError(std::string("field '") + key + "' has the wrong type", line);
    }
}

Record parse_record(const std::string& line_text, std::size_t line, const ParseOptions& opts) {
    json j;
    try {
        j = json::parse(line_text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what(), line);
    }
    if (!j.is_object()) throw ParseError("record is not a JSON object", line);

    Record r{};
    r.line = line;
    Utterance& u = r.utt;
    u.conv_id = field<std::string>(j, "conv_id", line);
    u.turn = field<int>(j, "turn", line);
    const auto index = field<long long>(j, "index", line);
    if (index < 0) throw ParseError("negative utterance index", line);
    u.index = static_cast<std::size_t>(index);
    const auto role = field<std::string>(j, "role", line);
    u.text = field<std::string>(j, "text", line);
    const auto outcome = field<int>(j, "outcome", line);
    const auto labels = field<std::vector<std::string>>(j, "labels", line);

    const std::string where = "utterance " + u.conv_id + "#" + std::to_string(u.index) + " (line " +
                              std::to_string(line) + ")";
    auto parsed_role = parse_role(role);
    if (!parsed_role) throw ValidationError(where + ": unknown role '" + role + "'");
    u.role = *parsed_role;
    if (outcome != 0 && outcome != 1) throw ValidationError(where + ": outcome must be 0 or 1");
    r.outcome = static_cast<Outcome>(outcome);

    for (const auto& name : labels) {
        auto act = parse_face_act(name);
        if (!act) throw ValidationError(where + ": unknown face act '" + name + "'");
        if (!is_valid_for(u.role, *act))
            throw ValidationError(where + ": face act " + std::string(to_string(*act)) + " is not valid for role " +
                                  std::string(to_string(u.role)));
        u.gold_labels.push_back(*act);
    }
    std::sort(u.gold_labels.begin(), u.gold_labels.end());
    u.gold_labels.erase(std::unique(u.gold_labels.begin(), u.gold_labels.end()), u.gold_labels.end());
    if (u.gold_labels.empty() && opts.labels == LabelPolicy::Required)
        throw ValidationError(where + ": empty label set");
    if (u.labeled()) u.selected_gold = select_gold_label(u, opts.seed);
    return r;
}

}  // namespace

Corpus parse_corpus_text(std::string_view text, const ParseOptions& opts) {
    std::map<std::string, std::vector<Record>> grouped;
    std::istringstream in{std::string(text)};
    std::string line_text;
    std::size_t line = 0;
    while (std::getline(in, line_text)) {
        ++line;
        if (line_text.find_first_not_of(" \t\r") == std::string::npos) continue;
        Record r = parse_record(line_text, line, opts);
        grouped[r.utt.conv_id].push_back(std::move(r));
    }

    Corpus corpus;
    corpus.provenance = sha256_hex(text);
    for (auto& [id, records] : grouped) {
        std::stable_sort(records.begin(), records.end(),
                         [](const Record& a, const Record& b) { return a.utt.index < b.utt.index; });
        Conversation conv;
        conv.id = id;
        conv.outcome = records.front().outcome;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const Record& r = records[i];
            if (r.utt.index != i)
                throw ValidationError("conversation " + id + ": utterance indices must be 0.." +
                                      std::to_string(records.size() - 1) + " without gaps or repeats (line " +
                                      std::to_string(r.line) + " has index " + std::to_string(r.utt.index) + ")");
            if (r.outcome != conv.outcome)
                throw ValidationError("conversation " + id + ": inconsistent outcome at line " +
                                      std::to_string(r.line));
            conv.utterances.push_back(r.utt);
        }
        corpus.conversations.push_back(std::move(conv));
    }
    return corpus;
}

Corpus parse_corpus(const std::string& path, const ParseOptions& opts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open corpus " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_corpus_text(ss.str(), opts);
}

std::string serialize_corpus(const Corpus& corpus) {
    std::vector<const Conversation*> convs;
    for (const auto& c : corpus.conversations) convs.push_back(&c);
    std::sort(convs.begin(), convs.end(), [](auto* a, auto* b) { return a->id < b->id; });
    std::string out;
    for (const Conversation* c : convs) {
        std::vector<const Utterance*> utts;
        for (const auto& u : c->utterances) utts.push_back(&u);
        std::sort(utts.begin(), utts.end(), [](auto* a, auto* b) { return a->index < b->index; });
        for (const Utterance* u : utts) {
            json labels = json::array();
            std::vector<FaceAct> sorted = u->gold_labels;
            std::sort(sorted.begin(), sorted.end());
            for (FaceAct a : sorted) labels.push_back(std::string(to_string(a)));
            json rec = {{"conv_id", c->id},
                        {"turn", u->turn},
                        {"index", u->index},
                        {"role", std::string(to_string(u->role))},
                        {"text", u->text},
                        {"labels", labels},
                        {"outcome", static_cast<int>(c->outcome)}};
            out += rec.dump(-1, ' ', false, json::error_handler_t::strict);
            out += '\n';
        }
    }
    return out;
}

void write_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << serialize_corpus(corpus);
}

std::vector<FoldSplit> stratified_folds(const Corpus& corpus, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ContractViolation("stratified_folds: k must be at least 2");
    std::vector<std::string> donors, non_donors;
    for (const auto& c : corpus.conversations) (c.donor() ? donors : non_donors).push_back(c.id);

    std::vector<FoldSplit> folds(k);
    for (std::size_t f = 0; f < k; ++f) folds[f].fold_index = f;

    std::uint64_t tag = 0;
    for (auto* cls : {&donors, &non_donors}) {
        if (cls->size() < k)
            throw ValidationError("stratified_folds: class '" + std::string(tag == 0 ? "donor" : "non-donor") +
                                  "' has " + std::to_string(cls->size()) + " conversations, need at least " +
                                  std::to_string(k));
        std::sort(cls->begin(), cls->end());
        Rng rng(splitmix64(seed) ^ splitmix64(tag + 1));
        rng.shuffle(*cls);
        for (std::size_t i = 0; i < cls->size(); ++i) folds[i % k].val_ids.push_back((*cls)[i]);
        ++tag;
    }
    for (auto& fold : folds) {
        std::sort(fold.val_ids.begin(), fold.val_ids.end());
        for (const auto& c : corpus.conversations)
            if (!std::binary_search(fold.val_ids.begin(), fold.val_ids.end(), c.id)) fold.train_ids.push_back(c.id);
        std::sort(fold.train_ids.begin(), fold.train_ids.end());
    }
    return folds;
}

}  // namespace facedyn

namespace facedyn {

Agreement corpus_agreement(const Corpus& a, const Corpus& b) {
    std::vector<FaceAct> la, lb;
    for (const auto& ca : a.conversations) {
        auto it = std::lower_bound(b.conversations.begin(), b.conversations.end(), ca.id,
                                   [](const Conversation& c, const std::string& id) { return c.id < id; });
        if (it == b.conversations.end() || it->id != ca.id) continue;
        for (const auto& ua : ca.utterances) {
            if (!ua.labeled() || ua.index >= it->utterances.size()) continue;
            const Utterance& ub = it->utterances[ua.index];
            if (!ub.labeled()) continue;
            la.push_back(ua.selected_gold);
            lb.push_back(ub.selected_gold);
        }
    }
    if (la.empty()) throw ValidationError("no utterance is labelled in both corpora");
    return {la.size(), cohens_kappa(la, lb)};
}

}  // namespace facedyn
