#include "sae/direct.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace sae {

namespace {

void validate_units(std::span<const UnitRecord> units) {
    if (units.empty()) {
        throw ValidationError("no sampled units in area");
    }
    for (const auto& u : units) {
        if (!(u.weight > 0.0) || !std::isfinite(u.weight)) {
            throw ValidationError("invalid weight for area '" + u.area_id + "'");
        }
        if (u.outcome != 0 && u.outcome != 1) {
            throw ValidationError("outcome must be 0 or 1 for area '" + u.area_id + "'");
        }
    }
}

}  // namespace

HajekMean hajek_mean(std::span<const UnitRecord> units) {
    validate_units(units);
    CompensatedSum num;
    CompensatedSum den;
    for (const auto& u : units) {
        den.add(u.weight);
        if (u.outcome == 1) {
            num.add(u.weight);
        }
    }
    HajekMean out;
    out.pop_size_hat = den.value();
    out.estimate = num.value() / out.pop_size_hat;
    out.estimate = std::clamp(out.estimate, 0.0, 1.0);
    return out;
}

double hajek_variance(std::span<const UnitRecord> units, double estimate,
                      double pop_size_hat) {
    validate_units(units);
    CompensatedSum acc;
    for (const auto& u : units) {
        const double r = static_cast<double>(u.outcome) - estimate;
        acc.add(u.weight * (u.weight - 1.0) * r * r);
    }
    const double v = acc.value() / (pop_size_hat * pop_size_hat);
    return std::max(v, 0.0);
}

std::optional<double> direct_cv(double estimate, double design_variance) {
    if (estimate <= 0.0) {
        return std::nullopt;
    }
    return std::sqrt(design_variance) / estimate;
}

std::vector<AreaDirect> direct_table(std::span<const UnitRecord> units) {
    // std::map keys give the sorted-by-area_id output order directly.
    std::map<std::string, std::vector<UnitRecord>> groups;
    for (const auto& u : units) {
        if (u.area_id.empty()) {
            throw ValidationError("unit record with empty area_id");
        }
        groups[u.area_id].push_back(u);
    }

    std::vector<AreaDirect> table;
    table.reserve(groups.size());
    for (auto& [area_id, members] : groups) {
        // Sort members so accumulation order does not depend on input order.
        std::stable_sort(members.begin(), members.end(),
                         [](const UnitRecord& a, const UnitRecord& b) {
                             if (a.weight != b.weight) return a.weight < b.weight;
                             return a.outcome < b.outcome;
                         });
        AreaDirect row;
        row.area_id = area_id;
        row.sample_size = members.size();
        try {
            const HajekMean m = hajek_mean(members);
            row.estimate = m.estimate;
            row.pop_size_hat = m.pop_size_hat;
            row.design_variance = hajek_variance(members, m.estimate, m.pop_size_hat);
        } catch (const ValidationError& e) {
            throw ValidationError("area '" + area_id + "': " + e.what());
        }
        row.cv = direct_cv(row.estimate, row.design_variance);
        row.degenerate_variance =
            members.size() == 1 || row.estimate == 0.0 || row.estimate == 1.0;
        table.push_back(std::move(row));
    }
    return table;
}

}  // namespace sae
