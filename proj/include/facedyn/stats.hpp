#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "facedyn/corpus.hpp"

namespace facedyn {

struct TTestResult {
    double t = 0;
    double p = 1;
    int df = 0;
};

// Two-sided Student (pooled-variance) t-test, df = |A| + |B| - 2.
TTestResult independent_t_test(std::span<const double> a, std::span<const double> b);

// "***" p <= .001, "**" p <= .01, "*" p <= .05, else "".
std::string significance_stars(double p);

// Column order: ER-donor, ER-non-donor, EE-donor, EE-non-donor.
struct DistributionColumn {
    Role role;
    Outcome outcome;
};
inline constexpr std::array<DistributionColumn, 4> kDistributionColumns = {{
    {Role::ER, Outcome::Donor},
    {Role::ER, Outcome::NonDonor},
    {Role::EE, Outcome::Donor},
    {Role::EE, Outcome::NonDonor},
}};

struct DistributionRow {
    FaceAct act;
    std::array<double, 4> percent{};   // per kDistributionColumns
    std::array<TTestResult, 2> test{};  // per role (ER, EE): donor vs non-donor conversation proportions
    std::array<bool, 2> tested{};       // false when a class had < 2 conversations with that role
};

struct DistributionTable {
    std::vector<DistributionRow> rows;  // label_space(All) order
    std::array<std::size_t, 4> utterances{};

    const DistributionRow& row(FaceAct act) const;
    // Aligned text; stars sit on the larger of the two cells of a role.
    std::string to_text() const;
    std::string to_csv() const;
};

DistributionTable face_act_distribution(const Corpus& corpus);

}  // namespace facedyn
