#include "dialhall/rng.hpp"

#include <cmath>

namespace dialhall {

double Rng::next_normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * next_double() - 1.0;
        v = 2.0 * next_double() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
}

}  // namespace dialhall
