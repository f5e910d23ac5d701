#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "facedyn/dialogue_model.hpp"
#include "facedyn/taxonomy.hpp"

namespace facedyn {

// One conversation's donation trace with the predicted act of every utterance.
struct AnalysedConversation {
    std::string conv_id;
    std::size_t fold = 0;
    DonationTrace trace;          // probs aligned with utterances
    std::vector<Role> roles;      // per utterance
    std::vector<std::optional<FaceAct>> acts;  // per utterance, predicted; empty = no prediction (row skipped)
};

struct Design {
    Eigen::MatrixXd x;                 // column 0: lag o'_{i-1}; then one-hot acts
    Eigen::VectorXd y;                 // o'_i
    std::vector<std::string> columns;  // "lag", then act names
    std::vector<FaceAct> acts;         // acts for columns 1..
    std::vector<std::size_t> folds;    // per row
};

// One row per utterance of `role`: y = o'_i, regressors = [o'_{i-1},
// onehot(act_i) over label_space(role)]. No intercept.
Design build_design(std::span<const AnalysedConversation> convs, Role role);

struct OlsResult {
    Eigen::VectorXd beta;
    Eigen::VectorXd std_error;
    Eigen::VectorXd t;
    Eigen::VectorXd p;  // two-sided, Student t with df = n - k
    int df = 0;
    double residual_variance = 0;
};

// beta = (X'X)^-1 X'y without an intercept. Throws ValidationError naming the
// collinear columns on rank deficiency (names default to "x0", "x1", ...).
OlsResult fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::span<const std::string> names = {});

struct FracEntry {
    FaceAct act = FaceAct::Other;
    std::size_t occurrences = 0;
    std::size_t increases = 0;
    double frac() const { return occurrences ? static_cast<double>(increases) / static_cast<double>(occurrences) : 0; }
};

// For every act of label_space(role): how often o'_i > o'_{i-1} when it was
// predicted (ties count as non-increase). Acts never predicted have
// occurrences == 0 and are printed as "-".
std::vector<FracEntry> frac_metric(std::span<const AnalysedConversation> convs, Role role);

struct RegressionRow {
    FaceAct act = FaceAct::Other;
    std::optional<double> beta, std_error, p;  // empty when the act never occurs
    FracEntry frac;
};

struct RoleRegression {
    Role role = Role::ER;
    std::size_t rows = 0;
    double lag_beta = 0, lag_std_error = 0, lag_p = 1;
    std::vector<RegressionRow> acts;
};

// Pooled regression for one role; acts that never occur are dropped from the
// design before fitting.
RoleRegression regress_role(std::span<const AnalysedConversation> convs, Role role);

std::string regression_csv(std::span<const RoleRegression> results);

}  // namespace facedyn
