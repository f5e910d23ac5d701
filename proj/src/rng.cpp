#include "facedyn/rng.hpp"

#include <cmath>
#include <numbers>

namespace facedyn {

double Rng::normal() {
    // Box-Muller; u1 kept away from 0.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace facedyn
