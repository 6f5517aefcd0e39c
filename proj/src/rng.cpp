#include "ipdma/rng.hpp"

#include <cmath>

namespace ipdma {

double Rng::next_normal() {
    // Box-Muller without caching the second variate: one fewer piece of
    // state to keep replicate streams independent.
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

} // namespace ipdma
