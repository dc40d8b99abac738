#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mvloss/brownian.hpp"
#include "mvloss/errors.hpp"

namespace mvloss {

/// Loss L at the nodes of a time grid; nondecreasing with L(0) = 0.
/// Between nodes the path is read by linear interpolation.
struct LossPath {
    TimeGrid grid;
    std::vector<double> values;

    explicit LossPath(const TimeGrid& g) : grid(g), values(g.n_steps() + 1, 0.0) {}

    double terminal() const { return values.back(); }

    double at(double t) const {
        if (t <= 0.0) {
            return values.front();
        }
        if (t >= grid.horizon()) {
            return values.back();
        }
        const double s = t / grid.delta();
        const auto k = std::min(static_cast<std::size_t>(std::floor(s)), grid.n_steps() - 1);
        const double frac = s - static_cast<double>(k);
        return (1.0 - frac) * values[k] + frac * values[k + 1];
    }

    /// Number of steps k with values[k+1] < values[k] - tol.
    std::size_t monotonicity_violations(double tol = 0.0) const {
        std::size_t count = 0;
        for (std::size_t k = 0; k + 1 < values.size(); ++k) {
            if (values[k + 1] < values[k] - tol) {
                ++count;
            }
        }
        return count;
    }

    /// First grid time at which the loss reaches `level`, or a negative
    /// value if it never does.
    double hitting_time(double level) const {
        for (std::size_t k = 0; k < values.size(); ++k) {
            if (values[k] >= level) {
                return grid.time(k);
            }
        }
        return -1.0;
    }
};

inline void write_loss_csv(std::ostream& os, const LossPath& loss) {
    os << "t,L\n";
    char buf[64];
    for (std::size_t k = 0; k < loss.values.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", loss.grid.time(k), loss.values[k]);
        os << buf;
    }
}

/// Reads the "t,L" CSV written by write_loss_csv. The grid is rebuilt from
/// the last time and the row count.
inline LossPath read_loss_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("t,L", 0) != 0) {
        throw ConfigError("loss csv: missing 't,L' header");
    }
    std::vector<double> ts, ls;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw ConfigError("loss csv: malformed row '" + line + "'");
        }
        ts.push_back(std::stod(line.substr(0, comma)));
        ls.push_back(std::stod(line.substr(comma + 1)));
    }
    if (ts.size() < 2) {
        throw ConfigError("loss csv: need at least two rows");
    }
    LossPath loss(TimeGrid(ts.back(), ts.size() - 1));
    loss.values = std::move(ls);
    return loss;
}

}  // namespace mvloss
