#include "sae/gvf.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace sae {

GVFDesignRow build_design_row(double estimate, std::size_t sample_size) {
    if (estimate < 0.0 || !std::isfinite(estimate)) {
        throw ValidationError("invalid prevalence");
    }
    if (sample_size < 1) {
        throw ValidationError("sample size must be positive");
    }
    const double n = static_cast<double>(sample_size);
    return {1.0, estimate, std::sqrt(estimate), n, std::sqrt(n), std::sqrt(estimate * n)};
}

double default_delta(std::span<const AreaDirect> areas) {
    if (areas.empty()) {
        throw ValidationError("no areas for delta computation");
    }
    CompensatedSum acc;
    for (const auto& a : areas) {
        acc.add(a.design_variance);
    }
    return acc.value() / static_cast<double>(areas.size());
}

GVFFit fit_gvf(std::span<const AreaDirect> areas, double delta,
               const GVFDesign& design, bool bias_correction) {
    const std::size_t d = areas.size();
    const std::size_t p = design.columns.size();
    if (p == 0 || design.columns.front() != 0) {
        throw ValidationError("GVF design must contain the intercept column first");
    }
    if (delta < 0.0) {
        throw ValidationError("delta must be nonnegative");
    }
    if (d < p + 1) {
        throw ValidationError("too few areas for the GVF design");
    }

    Eigen::MatrixXd x(d, p);
    Eigen::VectorXd z(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double arg = areas[i].design_variance + delta;
        if (!(arg > 0.0)) {
            throw ValidationError("delta too small: log of nonpositive variance for area '" +
                                  areas[i].area_id + "'");
        }
        z(i) = std::log(arg);
        const GVFDesignRow row = build_design_row(areas[i].estimate, areas[i].sample_size);
        for (std::size_t j = 0; j < p; ++j) {
            x(i, j) = row[static_cast<std::size_t>(design.columns[j])];
        }
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < static_cast<Eigen::Index>(p)) {
        throw NumericalError("collinear GVF covariates");
    }
    const Eigen::VectorXd beta = qr.solve(z);
    const Eigen::VectorXd resid = z - x * beta;
    double rss = resid.squaredNorm();
    // Roundoff-level residuals (exact interpolation, constant responses)
    // count as an exact fit; otherwise the AIC comparison below would be
    // driven by log of numerical noise.
    if (rss <= 1e-20 * std::max(1.0, z.squaredNorm())) {
        rss = 0.0;
    }

    GVFFit fit;
    fit.coefficients.assign(beta.data(), beta.data() + p);
    fit.columns = design.columns;
    for (int c : design.columns) {
        fit.design_labels.emplace_back(kGvfColumnNames[static_cast<std::size_t>(c)]);
    }
    fit.residual_variance = rss / static_cast<double>(d - p);
    fit.delta = delta;
    fit.num_areas = d;
    fit.bias_correction_enabled = bias_correction;

    const Eigen::MatrixXd xtx_inv =
        (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    fit.coef_std_errors.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
        fit.coef_std_errors[j] = std::sqrt(fit.residual_variance * xtx_inv(j, j));
    }

    // Gaussian ML log-likelihood of the log-scale regression; k = p + 1
    // counts the coefficients plus the error variance.
    const double n = static_cast<double>(d);
    const double sigma2_ml = std::max(rss / n, 1e-300);
    const double loglik = -0.5 * n * (std::log(2.0 * std::numbers::pi * sigma2_ml) + 1.0);
    fit.aic = -2.0 * loglik + 2.0 * static_cast<double>(p + 1);
    return fit;
}

double predict_variance(const GVFFit& fit, const GVFDesignRow& row,
                        bool subtract_delta) {
    double lin = 0.0;
    for (std::size_t j = 0; j < fit.columns.size(); ++j) {
        lin += fit.coefficients[j] * row[static_cast<std::size_t>(fit.columns[j])];
    }
    double pred = std::exp(lin);
    if (fit.bias_correction_enabled && fit.delta == 0.0) {
        pred *= std::exp(fit.residual_variance / 2.0);
    }
    if (subtract_delta) {
        pred = std::max(pred - fit.delta, 1e-10);
    }
    return pred;
}

GVFFit select_gvf(std::span<const AreaDirect> areas,
                  std::span<const GVFDesign> candidates, double delta,
                  bool bias_correction) {
    if (candidates.empty()) {
        throw ValidationError("empty GVF candidate list");
    }
    const GVFFit* best = nullptr;
    std::vector<GVFFit> fits;
    fits.reserve(candidates.size());
    for (const auto& cand : candidates) {
        fits.push_back(fit_gvf(areas, delta, cand, bias_correction));
        const GVFFit& f = fits.back();
        if (best == nullptr) {
            best = &f;
            continue;
        }
        const double tie_tol = 1e-12 * std::max(1.0, std::abs(best->aic));
        const bool tied = std::abs(f.aic - best->aic) <= tie_tol;
        if ((tied && f.columns.size() < best->columns.size()) ||
            (!tied && f.aic < best->aic)) {
            best = &f;
        }
    }
    return *best;
}

}  // namespace sae
