#ifndef SAE_FH_HPP
#define SAE_FH_HPP

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sae/common.hpp"

namespace sae {

// One area's row of the Fay-Herriot model: direct estimate, smoothed
// sampling-error variance and p covariates (first entry 1).
struct AreaModelRow {
    std::string area_id;
    double direct = 0.0;
    double error_variance = 0.0;  // sigma_d^2, > 0
    std::vector<double> covariates;
};

struct FHFit {
    Eigen::VectorXd beta_hat;
    double sigma_u2_hat = 0.0;
    double reml_loglik = 0.0;
    double ml_loglik = 0.0;
    double aic = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<double> objective_trace;  // profile loglik per scoring step
};

struct MseComponents {
    double g1 = 0.0;
    double g2 = 0.0;
    double g3 = 0.0;
    double mse = 0.0;
};

struct AreaPrediction {
    std::string area_id;
    double eblup = 0.0;
    double gamma = 0.0;    // shrinkage weight, in [0,1]
    double u_hat = 0.0;    // predicted random effect
    double g1 = 0.0, g2 = 0.0, g3 = 0.0;
    double mse = 0.0;
    std::optional<double> cv;
    double residual = 0.0;  // direct - eblup
    bool synthetic_only = false;
    bool out_of_range = false;  // eblup outside [0,1]; flagged, never clamped
};

/// GLS coefficients at a fixed variance component:
/// (X' V^-1 X)^-1 X' V^-1 y with V = diag(sigma_u2 + sigma_d^2).
Eigen::VectorXd gls_beta(std::span<const AreaModelRow> rows, double sigma_u2);

/// REML fit of the area random-effect variance. Fisher scoring with
/// step halving, golden-section fallback; sigma_u2 = 0 is a legal
/// boundary estimate.
FHFit reml_fit(std::span<const AreaModelRow> rows, int max_iterations = 200,
               double tolerance = 1e-8);

double random_effect(const FHFit& fit, const AreaModelRow& row);

/// (X' V^-1 X)^-1 at the fitted variance; shared input of g2 and of
/// unsampled-area prediction variances.
Eigen::MatrixXd beta_information_inverse(std::span<const AreaModelRow> rows,
                                         double sigma_u2);

/// Asymptotic variance of sigma_u2_hat: 2 / sum_d (sigma_u2+sigma_d2)^-2.
double avar_sigma_u(const FHFit& fit, std::span<const AreaModelRow> rows);

MseComponents mse_prasad_rao(const FHFit& fit, const AreaModelRow& row,
                             const Eigen::MatrixXd& info_inv, double avar);

/// EBLUP with its Prasad-Rao uncertainty for one sampled area.
AreaPrediction predict_area(const FHFit& fit, const AreaModelRow& row,
                            const Eigen::MatrixXd& info_inv, double avar);

/// Synthetic-only prediction for an area with no sample.
AreaPrediction predict_unsampled(const FHFit& fit, std::span<const double> covariates,
                                 const Eigen::MatrixXd& info_inv,
                                 const std::string& area_id = {});

std::optional<double> predict_cv(const AreaPrediction& pred);

double fh_aic(const FHFit& fit, std::size_t p);

/// REML profile log-likelihood at a given sigma_u2 (exposed for the
/// optimizer monotonicity checks).
double reml_profile_loglik(std::span<const AreaModelRow> rows, double sigma_u2);

}  // namespace sae

#endif
