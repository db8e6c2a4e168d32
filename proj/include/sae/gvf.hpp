#ifndef SAE_GVF_HPP
#define SAE_GVF_HPP

#include <array>
#include <span>
#include <string>
#include <vector>

#include "sae/direct.hpp"

namespace sae {

// Full covariate row of the log-linear variance model:
// (1, p, sqrt(p), n, sqrt(n), sqrt(p*n)).
using GVFDesignRow = std::array<double, 6>;

inline constexpr std::array<const char*, 6> kGvfColumnNames = {
    "intercept", "p", "sqrt_p", "n", "sqrt_n", "sqrt_pn"};

// A candidate design: indices into the full row. Must contain 0 (intercept).
struct GVFDesign {
    std::vector<int> columns;
};

inline GVFDesign full_gvf_design() { return GVFDesign{{0, 1, 2, 3, 4, 5}}; }

struct GVFFit {
    std::vector<double> coefficients;      // one per selected column
    std::vector<double> coef_std_errors;
    std::vector<int> columns;              // selected column indices
    std::vector<std::string> design_labels;
    double residual_variance = 0.0;        // RSS / (D - p)
    double delta = 0.0;                    // offset added inside the log
    double aic = 0.0;
    std::size_t num_areas = 0;
    bool bias_correction_enabled = false;
};

GVFDesignRow build_design_row(double estimate, std::size_t sample_size);

/// Mean of the estimated design variances; the default offset.
double default_delta(std::span<const AreaDirect> areas);

/// OLS of log(design_variance + delta) on the selected design columns.
GVFFit fit_gvf(std::span<const AreaDirect> areas, double delta,
               const GVFDesign& design = full_gvf_design(),
               bool bias_correction = false);

/// exp(x beta), times exp(residual_variance/2) when the log-normal
/// bias correction applies (enabled and delta == 0). When subtract_delta
/// is set the offset is removed again with a floor at 1e-10.
double predict_variance(const GVFFit& fit, const GVFDesignRow& row,
                        bool subtract_delta = false);

/// Fits every candidate and returns the minimum-AIC fit; ties go to the
/// design with fewer columns.
GVFFit select_gvf(std::span<const AreaDirect> areas,
                  std::span<const GVFDesign> candidates, double delta,
                  bool bias_correction = false);

}  // namespace sae

#endif
