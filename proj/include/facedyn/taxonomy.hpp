#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace facedyn {

// Eight composite face acts plus Other. Enumerator order is the canonical
// ordering used everywhere labels are listed (it follows the corpus
// distribution table, with SNeg- slotted beside SNeg+).
enum class FaceAct {
    SPosPlus,
    SPosMinus,
    HPosPlus,
    HPosMinus,
    SNegPlus,
    SNegMinus,
    HNegPlus,
    HNegMinus,
    Other,
};

inline constexpr std::size_t kNumFaceActs = 9;

enum class Target { Speaker, Hearer };
enum class Face { Positive, Negative };
enum class Polarity { Raise, Attack };

enum class Role { ER, EE };
enum class Scope { ER, EE, All };

struct FaceComponents {
    Target target;
    Face face;
    Polarity polarity;
};

// nullopt for Other.
std::optional<FaceComponents> components(FaceAct act);
FaceAct compose(Target target, Face face, Polarity polarity);

// ASCII display name: "SPos+", "HNeg-", "Other".
std::string_view to_string(FaceAct act);
// Accepts any case, ASCII '-' or U+2212 for attack, and "other".
std::optional<FaceAct> parse_face_act(std::string_view s);

std::string_view to_string(Role role);
std::optional<Role> parse_role(std::string_view s);
std::string_view to_string(Scope scope);
std::optional<Scope> parse_scope(std::string_view s);

// Label space in canonical order.
//   ER  -> SPos+ HPos+ HPos- HNeg+ HNeg- Other
//   EE  -> SPos+ SPos- HPos+ HPos- SNeg+ HNeg- Other
//   All -> SPos+ SPos- HPos+ HPos- SNeg+ HNeg+ HNeg- Other
// SNeg- never occurs in the corpus and is in no label space.
const std::vector<FaceAct>& label_space(Scope scope);
Scope scope_of(Role role);
bool is_valid_for(Role role, FaceAct act);
// Position of `act` in label_space(scope), or nullopt.
std::optional<std::size_t> label_index(Scope scope, FaceAct act);

// ---------------------------------------------------------------------------
// Annotation flowchart. Loaded from a JSON definition file:
//
//   { "version": "...", "note": "...", "root": "node_id",
//     "nodes": [ { "id": "...", "question": "...",
//                  "answers": { "yes": {"node": "next_id"},
//                               "no":  {"label": "SNeg+"} } } ] }
// ---------------------------------------------------------------------------

struct FlowNode {
    std::string id;
    std::string question;
    // Ordered by declaration in the definition file.
    std::vector<std::pair<std::string, std::variant<std::string, FaceAct>>> answers;

    std::vector<std::string> answer_names() const;
};

class Flowchart {
public:
    using Step = std::variant<const FlowNode*, FaceAct>;

    static Flowchart from_json_text(std::string_view text);
    static Flowchart load(const std::string& path);

    const FlowNode& root() const;
    const FlowNode& node(std::string_view id) const;
    bool has_node(std::string_view id) const;
    const std::string& version() const { return version_; }
    const std::string& note() const { return note_; }
    // Longest root-to-leaf path, counted in answered questions.
    std::size_t depth() const { return depth_; }
    std::size_t size() const { return nodes_.size(); }

    // Throws ContractViolation listing valid answers on an undeclared answer.
    Step step(const FlowNode& node, std::string_view answer) const;

    // Follows `answers` from the root; returns the terminal label or the node
    // where the answers ran out.
    Step walk(std::span<const std::string> answers) const;

private:
    void validate();

    std::string version_;
    std::string note_;
    std::string root_;
    std::map<std::string, FlowNode, std::less<>> nodes_;
    std::size_t depth_ = 0;
};

Flowchart::Step flowchart_step(const Flowchart& chart, const FlowNode& node, std::string_view answer);

// $FACEDYN_FLOWCHART if set, else the flowchart shipped in data/.
std::string default_flowchart_path();

// Chance-corrected agreement. Equal-length, non-empty sequences.
double cohens_kappa(std::span<const FaceAct> a, std::span<const FaceAct> b);

}  // namespace facedyn
