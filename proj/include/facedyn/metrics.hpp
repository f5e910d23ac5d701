#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "facedyn/taxonomy.hpp"

namespace facedyn {

double accuracy(std::span<const FaceAct> pred, std::span<const FaceAct> gold);

// Rows: gold, columns: predicted, both indexed by position in `space`.
std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const FaceAct> pred, std::span<const FaceAct> gold,
                                                       std::span<const FaceAct> space);

enum class AbsentClasses {
    Include,  // every class of `space` is in the average; absent classes score 0
    Skip,     // classes absent from both pred and gold are left out
};

// Unweighted mean of per-class F1 over `space`.
double macro_f1(std::span<const FaceAct> pred, std::span<const FaceAct> gold, std::span<const FaceAct> space,
                AbsentClasses absent = AbsentClasses::Include);

// Macro F1 of a binary outcome (both classes always included).
double binary_macro_f1(std::span<const int> pred, std::span<const int> gold);

struct ThresholdChoice {
    double threshold = 0.5;
    double macro_f1 = 0.0;
};

// A conversation is predicted successful when its final probability exceeds
// the threshold. Sweeps every distinct cut between sorted probabilities and
// returns the midpoint of the first maximal run of best cuts, clamped to
// [0.001, 0.999].
ThresholdChoice threshold_select(std::span<const double> final_probs, std::span<const int> outcomes);

struct McNemarResult {
    std::size_t b = 0;  // A right, B wrong
    std::size_t c = 0;  // A wrong, B right
    double statistic = 0.0;
    double p = 1.0;
};

// Continuity-corrected McNemar test, chi-squared with one degree of freedom.
McNemarResult mcnemar(std::span<const FaceAct> pred_a, std::span<const FaceAct> pred_b, std::span<const FaceAct> gold);
McNemarResult mcnemar_from_counts(std::size_t b, std::size_t c);

}  // namespace facedyn
