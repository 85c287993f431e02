#pragma once

#include "advmem/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace advmem {

enum class ScheduleKind { constant, piecewise, cosine, linear_ramp, gaussian_ramp };

inline std::string to_string(ScheduleKind k)
{
    switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::piecewise: return "piecewise";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::linear_ramp: return "linear_ramp";
    case ScheduleKind::gaussian_ramp: return "gaussian_ramp";
    }
    return "?";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s)
{
    if (s == "constant") return ScheduleKind::constant;
    if (s == "piecewise") return ScheduleKind::piecewise;
    if (s == "cosine") return ScheduleKind::cosine;
    if (s == "linear_ramp") return ScheduleKind::linear_ramp;
    if (s == "gaussian_ramp") return ScheduleKind::gaussian_ramp;
    throw Error("unknown schedule kind: " + s);
}

/// A value as a function of the epoch. Every kind is scaled by `base`.
struct Schedule {
    ScheduleKind kind = ScheduleKind::constant;
    double base = 1.0;
    std::vector<double> milestones;
    double decay = 0.1;
    double total_epochs = 1.0;
    double ramp_length = 1.0;

    static Schedule constant(double v) { return Schedule{ScheduleKind::constant, v, {}, 0.1, 1.0, 1.0}; }
    static Schedule piecewise(double base, std::vector<double> milestones, double decay = 0.1)
    {
        return Schedule{ScheduleKind::piecewise, base, std::move(milestones), decay, 1.0, 1.0};
    }
    static Schedule cosine(double base, double total_epochs)
    {
        return Schedule{ScheduleKind::cosine, base, {}, 0.1, total_epochs, 1.0};
    }
    static Schedule linear_ramp(double ramp_length, double base = 1.0)
    {
        return Schedule{ScheduleKind::linear_ramp, base, {}, 0.1, 1.0, ramp_length};
    }
    static Schedule gaussian_ramp(double ramp_length, double base = 1.0)
    {
        return Schedule{ScheduleKind::gaussian_ramp, base, {}, 0.1, 1.0, ramp_length};
    }
};

namespace detail {
inline double ramp_fraction(double epoch, double length)
{
    if (length <= 0.0) {
        return 1.0;
    }
    return std::clamp(epoch / length, 0.0, 1.0);
}
}  // namespace detail

inline double schedule_value(const Schedule& s, double epoch)
{
    require(epoch >= 0.0, "schedule_value: epoch must be >= 0");
    switch (s.kind) {
    case ScheduleKind::constant:
        return s.base;
    case ScheduleKind::piecewise: {
        double v = s.base;
        for (double m : s.milestones) {
            if (epoch >= m) {
                v *= s.decay;
            }
        }
        return v;
    }
    case ScheduleKind::cosine:
        require(s.total_epochs > 0.0, "cosine schedule: total_epochs must be > 0");
        return s.base * 0.5 * (1.0 + std::cos(M_PI * std::min(epoch, s.total_epochs) / s.total_epochs));
    case ScheduleKind::linear_ramp:
        return s.base * detail::ramp_fraction(epoch, s.ramp_length);
    case ScheduleKind::gaussian_ramp: {
        const double t = detail::ramp_fraction(epoch, s.ramp_length);
        return s.base * std::exp(-5.0 * (1.0 - t) * (1.0 - t));
    }
    }
    throw Error("schedule_value: unknown kind");
}

}  // namespace advmem
