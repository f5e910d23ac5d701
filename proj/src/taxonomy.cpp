#include "facedyn/taxonomy.hpp"

#include <cstdlib>
#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "facedyn/error.hpp"

namespace facedyn {

namespace {

constexpr std::array<std::string_view, kNumFaceActs> kNames = {
    "SPos+", "SPos-", "HPos+", "HPos-", "SNeg+", "SNeg-", "HNeg+", "HNeg-", "Other"};

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

std::optional<FaceComponents> components(FaceAct act) {
    if (act == FaceAct::Other) return std::nullopt;
    const auto i = static_cast<int>(act);
    // Enumerator layout: [S|H][Pos|Neg][+|-] with face as the outer axis.
    const Face face = i < 4 ? Face::Positive : Face::Negative;
    const Target target = (i % 4) < 2 ? Target::Speaker : Target::Hearer;
    const Polarity pol = (i % 2) == 0 ? Polarity::Raise : Polarity::Attack;
    return FaceComponents{target, face, pol};
}

FaceAct compose(Target target, Face face, Polarity polarity) {
    int i = face == Face::Positive ? 0 : 4;
    if (target == Target::Hearer) i += 2;
    if (polarity == Polarity::Attack) i += 1;
    return static_cast<FaceAct>(i);
}

std::string_view to_string(FaceAct act) { return kNames[static_cast<std::size_t>(act)]; }

std::optional<FaceAct> parse_face_act(std::string_view s) {
    std::string t(s);
    // U+2212 MINUS SIGN
    for (std::size_t p; (p = t.find("\xE2\x88\x92")) != std::string::npos;) t.replace(p, 3, "-");
    t = lower(t);
    for (std::size_t i = 0; i < kNumFaceActs; ++i) {
        if (t == lower(kNames[i])) return static_cast<FaceAct>(i);
    }
    return std::nullopt;
}

std::string_view to_string(Role role) { return role == Role::ER ? "ER" : "EE"; }

std::optional<Role> parse_role(std::string_view s) {
    if (s == "ER") return Role::ER;
    if (s == "EE") return Role::EE;
    return std::nullopt;
}

std::string_view to_string(Scope scope) {
    switch (scope) {
        case Scope::ER: return "ER";
        case Scope::EE: return "EE";
        case Scope::All: return "All";
    }
    return "?";
}

std::optional<Scope> parse_scope(std::string_view s) {
    const std::string t = lower(s);
    if (t == "er") return Scope::ER;
    if (t == "ee") return Scope::EE;
    if (t == "all") return Scope::All;
    return std::nullopt;
}

const std::vector<FaceAct>& label_space(Scope scope) {
    using F = FaceAct;
    static const std::vector<FaceAct> er = {F::SPosPlus, F::HPosPlus, F::HPosMinus,
                                            F::HNegPlus, F::HNegMinus, F::Other};
    static const std::vector<FaceAct> ee = {F::SPosPlus, F::SPosMinus, F::HPosPlus, F::HPosMinus,
                                            F::SNegPlus, F::HNegMinus, F::Other};
    static const std::vector<FaceAct> all = {F::SPosPlus, F::SPosMinus, F::HPosPlus, F::HPosMinus,
                                             F::SNegPlus, F::HNegPlus,  F::HNegMinus, F::Other};
    switch (scope) {
        case Scope::ER: return er;
        case Scope::EE: return ee;
        case Scope::All: return all;
    }
    return all;
}

Scope scope_of(Role role) { return role == Role::ER ? Scope::ER : Scope::EE; }

bool is_valid_for(Role role, FaceAct act) { return label_index(scope_of(role), act).has_value(); }

std::optional<std::size_t> label_index(Scope scope, FaceAct act) {
    const auto& space = label_space(scope);
    auto it = std::find(space.begin(), space.end(), act);
    if (it == space.end()) return std::nullopt;
    return static_cast<std::size_t>(it - space.begin());
}

// ---------------------------------------------------------------------------

std::vector<std::string> FlowNode::answer_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : answers) out.push_back(name);
    return out;
}

Flowchart Flowchart::from_json_text(std::string_view text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("flowchart: ") + e.what(), 0);
    }
    Flowchart fc;
    try {
        fc.version_ = j.value("version", "");
        fc.note_ = j.value("note", "");
        fc.root_ = j.at("root").get<std::string>();
        for (const auto& n : j.at("nodes")) {
            FlowNode node;
            node.id = n.at("id").get<std::string>();
            node.question = n.at("question").get<std::string>();
            for (const auto& [answer, dest] : n.at("answers").items()) {
                if (dest.contains("node")) {
                    node.answers.emplace_back(answer, dest.at("node").get<std::string>());
                } else if (dest.contains("label")) {
                    const auto label = dest.at("label").get<std::string>();
                    auto act = parse_face_act(label);
                    if (!act) throw ValidationError("flowchart node '" + node.id + "': unknown label '" + label + "'");
                    node.answers.emplace_back(answer, *act);
                } else {
                    throw ValidationError("flowchart node '" + node.id + "': answer '" + answer +
                                          "' needs \"node\" or \"label\"");
                }
            }
            if (node.answers.empty()) throw ValidationError("flowchart node '" + node.id + "' has no answers");
            const std::string id = node.id;
            if (!fc.nodes_.emplace(id, std::move(node)).second)
                throw ValidationError("flowchart: duplicate node id '" + id + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("flowchart: ") + e.what(), 0);
    }
    fc.validate();
    return fc;
}

Flowchart Flowchart::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open flowchart definition " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

void Flowchart::validate() {
    if (!nodes_.count(root_)) throw ValidationError("flowchart: root '" + root_ + "' is not a node");
    for (const auto& [id, node] : nodes_) {
        for (const auto& [answer, dest] : node.answers) {
            if (auto* next = std::get_if<std::string>(&dest); next && !nodes_.count(*next))
                throw ValidationError("flowchart node '" + id + "': answer '" + answer + "' points to unknown node '" +
                                      *next + "'");
        }
    }
    // DFS with colouring for cycle detection and depth.
    std::map<std::string, int, std::less<>> colour;  // 0 new, 1 on stack, 2 done
    std::map<std::string, std::size_t, std::less<>> depth;
    std::set<FaceAct> reached;
    std::function<std::size_t(const std::string&)> visit = [&](const std::string& id) -> std::size_t {
        if (colour[id] == 1) throw ValidationError("flowchart: cycle through node '" + id + "'");
        if (colour[id] == 2) return depth[id];
        colour[id] = 1;
        std::size_t d = 0;
        for (const auto& [answer, dest] : nodes_.at(id).answers) {
            if (auto* next = std::get_if<std::string>(&dest)) {
                d = std::max(d, 1 + visit(*next));
            } else {
                reached.insert(std::get<FaceAct>(dest));
                d = std::max<std::size_t>(d, 1);
            }
        }
        colour[id] = 2;
        depth[id] = d;
        return d;
    };
    depth_ = visit(root_);
    for (std::size_t i = 0; i < kNumFaceActs; ++i) {
        const auto act = static_cast<FaceAct>(i);
        if (!reached.count(act))
            throw ValidationError("flowchart: label " + std::string(to_string(act)) + " is unreachable");
    }
}

const FlowNode& Flowchart::root() const { return nodes_.at(root_); }

const FlowNode& Flowchart::node(std::string_view id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw ContractViolation("unknown flowchart node '" + std::string(id) + "'");
    return it->second;
}

bool Flowchart::has_node(std::string_view id) const { return nodes_.find(id) != nodes_.end(); }

Flowchart::Step Flowchart::step(const FlowNode& node, std::string_view answer) const {
    for (const auto& [name, dest] : node.answers) {
        if (name != answer) continue;
        if (auto* next = std::get_if<std::string>(&dest)) return &nodes_.at(*next);
        return std::get<FaceAct>(dest);
    }
    std::string valid;
    for (const auto& name : node.answer_names()) valid += (valid.empty() ? "" : ", ") + ("'" + name + "'");
    throw ContractViolation("answer '" + std::string(answer) + "' is not valid at node '" + node.id +
                            "'; valid answers: " + valid);
}

Flowchart::Step Flowchart::walk(std::span<const std::string> answers) const {
    Step cur = &root();
    for (const auto& a : answers) {
        auto* node = std::get_if<const FlowNode*>(&cur);
        if (!node) throw ContractViolation("answers continue past a terminal label");
        cur = step(**node, a);
    }
    return cur;
}

Flowchart::Step flowchart_step(const Flowchart& chart, const FlowNode& node, std::string_view answer) {
    return chart.step(node, answer);
}

double cohens_kappa(std::span<const FaceAct> a, std::span<const FaceAct> b) {
    if (a.size() != b.size())
        throw ContractViolation("cohens_kappa: length mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
    if (a.empty()) throw ContractViolation("cohens_kappa: empty sequences");
    std::array<double, kNumFaceActs> ca{}, cb{};
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca[static_cast<std::size_t>(a[i])] += 1;
        cb[static_cast<std::size_t>(b[i])] += 1;
        agree += a[i] == b[i];
    }
    const double n = static_cast<double>(a.size());
    const double po = static_cast<double>(agree) / n;
    double pe = 0;
    for (std::size_t c = 0; c < kNumFaceActs; ++c) pe += (ca[c] / n) * (cb[c] / n);
    if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;
    return (po - pe) / (1.0 - pe);
}

}  // namespace facedyn

namespace facedyn {

std::string default_flowchart_path() {
    if (const char* env = std::getenv("FACEDYN_FLOWCHART"); env && *env) return env;
    return std::string(FACEDYN_DATA_DIR) + "/flowchart.json";
}

}  // namespace facedyn
