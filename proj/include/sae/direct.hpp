#ifndef SAE_DIRECT_HPP
#define SAE_DIRECT_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sae/common.hpp"

namespace sae {

// One sampled household: expansion factor w_j and binary outcome y_j.
struct UnitRecord {
    std::string area_id;
    double weight = 0.0;
    int outcome = 0;
};

// Per-area direct (Hajek) estimate with its design-variance estimate.
struct AreaDirect {
    std::string area_id;
    double estimate = 0.0;         // weighted prevalence in [0,1]
    double design_variance = 0.0;  // >= 0
    std::size_t sample_size = 0;
    double pop_size_hat = 0.0;     // sum of weights
    std::optional<double> cv;      // absent exactly when estimate == 0
    // Variance formula is uninformative here (single unit, or estimate at
    // 0 or 1 makes it collapse to zero); downstream GVF wants to know.
    bool degenerate_variance = false;
};

struct HajekMean {
    double estimate = 0.0;
    double pop_size_hat = 0.0;
};

/// Weighted prevalence of one area: (sum w_j y_j) / (sum w_j).
HajekMean hajek_mean(std::span<const UnitRecord> units);

/// Design-variance estimate: N_hat^{-2} sum w_j (w_j - 1) (y_j - mean)^2.
double hajek_variance(std::span<const UnitRecord> units, double estimate,
                      double pop_size_hat);

/// sqrt(variance)/estimate; absent when the estimate is zero.
std::optional<double> direct_cv(double estimate, double design_variance);

/// Groups unit records by area and computes one AreaDirect per area.
/// Output is sorted by area_id and independent of input record order.
std::vector<AreaDirect> direct_table(std::span<const UnitRecord> units);

}  // namespace sae

#endif
