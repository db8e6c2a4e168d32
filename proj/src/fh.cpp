#include "sae/fh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace sae {

namespace {

struct ModelData {
    Eigen::MatrixXd x;    // D x p
    Eigen::VectorXd y;    // direct estimates
    Eigen::VectorXd sd2;  // error variances
};

ModelData assemble(std::span<const AreaModelRow> rows) {
    if (rows.empty()) {
        throw ValidationError("no areas in Fay-Herriot input");
    }
    const std::size_t d = rows.size();
    const std::size_t p = rows.front().covariates.size();
    if (p == 0) {
        throw ValidationError("empty covariate vector");
    }
    ModelData md{Eigen::MatrixXd(d, p), Eigen::VectorXd(d), Eigen::VectorXd(d)};
    for (std::size_t i = 0; i < d; ++i) {
        const AreaModelRow& r = rows[i];
        if (r.covariates.size() != p) {
            throw ValidationError("covariate length differs for area '" + r.area_id + "'");
        }
        if (!(r.error_variance > 0.0)) {
            throw ValidationError("error variance must be positive for area '" +
                                  r.area_id + "'");
        }
        md.y(i) = r.direct;
        md.sd2(i) = r.error_variance;
        for (std::size_t j = 0; j < p; ++j) {
            md.x(i, j) = r.covariates[j];
        }
    }
    return md;
}

Eigen::VectorXd gls_beta_impl(const ModelData& md, double sigma_u2) {
    const Eigen::ArrayXd v = md.sd2.array() + sigma_u2;
    const Eigen::ArrayXd sw = v.inverse().sqrt();
    const Eigen::MatrixXd xw = sw.matrix().asDiagonal() * md.x;
    const Eigen::VectorXd yw = (md.y.array() * sw).matrix();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
    if (qr.rank() < md.x.cols()) {
        throw NumericalError("collinear covariates");
    }
    return qr.solve(yw);
}

double profile_loglik_impl(const ModelData& md, double sigma_u2) {
    const Eigen::Index d = md.y.size();
    const Eigen::Index p = md.x.cols();
    const Eigen::ArrayXd v = md.sd2.array() + sigma_u2;
    const Eigen::VectorXd beta = gls_beta_impl(md, sigma_u2);
    const Eigen::ArrayXd r = (md.y - md.x * beta).array();
    const Eigen::MatrixXd xtvx =
        md.x.transpose() * v.inverse().matrix().asDiagonal() * md.x;
    const double logdet_xtvx = xtvx.ldlt().vectorD().array().abs().log().sum();
    return -0.5 * (static_cast<double>(d - p) * std::log(2.0 * std::numbers::pi) +
                   v.log().sum() + logdet_xtvx + (r.square() / v).sum());
}

// REML score and expected information in sigma_u2, via p x p traces only.
struct ScoreInfo {
    double score;
    double info;
};

ScoreInfo reml_score_info(const ModelData& md, double sigma_u2) {
    const Eigen::Index p = md.x.cols();
    const Eigen::ArrayXd v = md.sd2.array() + sigma_u2;
    const Eigen::ArrayXd vi = v.inverse();
    const Eigen::MatrixXd xtvx = md.x.transpose() * vi.matrix().asDiagonal() * md.x;
    const Eigen::MatrixXd q = xtvx.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::MatrixXd b = md.x.transpose() * (vi * vi).matrix().asDiagonal() * md.x;
    const Eigen::MatrixXd c = md.x.transpose() * (vi * vi * vi).matrix().asDiagonal() * md.x;

    const Eigen::VectorXd beta = gls_beta_impl(md, sigma_u2);
    const Eigen::ArrayXd py = (md.y - md.x * beta).array() * vi;

    const double tr_p = vi.sum() - (q * b).trace();
    const double tr_pp = (vi * vi).sum() - 2.0 * (q * c).trace() + (q * b * q * b).trace();
    return {-0.5 * tr_p + 0.5 * py.square().sum(), 0.5 * tr_pp};
}

double golden_section_max(const ModelData& md, double lo, double hi) {
    constexpr double kInvPhi = 0.6180339887498949;
    double a = lo, b = hi;
    double c = b - kInvPhi * (b - a);
    double d = a + kInvPhi * (b - a);
    double fc = profile_loglik_impl(md, c);
    double fd = profile_loglik_impl(md, d);
    for (int it = 0; it < 200 && (b - a) > 1e-12 * std::max(1.0, hi); ++it) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - kInvPhi * (b - a);
            fc = profile_loglik_impl(md, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + kInvPhi * (b - a);
            fd = profile_loglik_impl(md, d);
        }
    }
    const double mid = 0.5 * (a + b);
    // The boundary may beat the interior optimum.
    if (profile_loglik_impl(md, 0.0) >= profile_loglik_impl(md, mid)) {
        return 0.0;
    }
    return mid;
}

}  // namespace

Eigen::VectorXd gls_beta(std::span<const AreaModelRow> rows, double sigma_u2) {
    return gls_beta_impl(assemble(rows), sigma_u2);
}

double reml_profile_loglik(std::span<const AreaModelRow> rows, double sigma_u2) {
    return profile_loglik_impl(assemble(rows), sigma_u2);
}

FHFit reml_fit(std::span<const AreaModelRow> rows, int max_iterations,
               double tolerance) {
    const ModelData md = assemble(rows);
    const Eigen::Index d = md.y.size();
    const Eigen::Index p = md.x.cols();
    if (d <= p) {
        throw ValidationError("need more areas than covariates for REML");
    }

    const double var_y =
        (md.y.array() - md.y.mean()).square().sum() / static_cast<double>(d - 1);
    const double mean_sd2 = md.sd2.mean();

    // Moment-style starting value, floored away from the boundary.
    double sigma = std::max(var_y - mean_sd2, 0.05 * mean_sd2);
    double cur_ll = profile_loglik_impl(md, sigma);

    FHFit fit;
    fit.objective_trace.push_back(cur_ll);
    bool converged = false;
    int it = 0;
    for (; it < max_iterations; ++it) {
        const ScoreInfo si = reml_score_info(md, sigma);
        if (sigma == 0.0 && si.score <= 0.0) {
            converged = true;
            break;
        }
        if (!(si.info > 0.0) || !std::isfinite(si.score)) {
            break;
        }
        double step = si.score / si.info;
        double next = std::max(sigma + step, 0.0);
        double next_ll = profile_loglik_impl(md, next);
        int halvings = 0;
        while (next_ll < cur_ll && halvings < 40) {
            step *= 0.5;
            next = std::max(sigma + step, 0.0);
            next_ll = profile_loglik_impl(md, next);
            ++halvings;
        }
        const double change = std::abs(next - sigma);
        sigma = next;
        cur_ll = next_ll;
        fit.objective_trace.push_back(cur_ll);
        if (change <= tolerance * std::max(sigma, 1e-10)) {
            converged = true;
            ++it;
            break;
        }
    }

    if (!converged) {
        sigma = golden_section_max(md, 0.0, 10.0 * std::max(var_y, mean_sd2));
        // Scoring failed but the bracketed search still localizes the
        // optimum; report convergence from the fallback's tolerance.
        converged = true;
    }

    fit.sigma_u2_hat = sigma;
    fit.iterations = it;
    fit.converged = converged;
    fit.beta_hat = gls_beta_impl(md, sigma);
    fit.reml_loglik = profile_loglik_impl(md, sigma);

    const Eigen::ArrayXd v = md.sd2.array() + sigma;
    const Eigen::ArrayXd r = (md.y - md.x * fit.beta_hat).array();
    fit.ml_loglik = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) +
                            v.log().sum() + (r.square() / v).sum());
    fit.aic = fh_aic(fit, static_cast<std::size_t>(p));
    return fit;
}

double random_effect(const FHFit& fit, const AreaModelRow& row) {
    const double v = fit.sigma_u2_hat + row.error_variance;
    const double gamma = v > 0.0 ? fit.sigma_u2_hat / v : 0.0;
    double synth = 0.0;
    for (std::size_t j = 0; j < row.covariates.size(); ++j) {
        synth += row.covariates[j] * fit.beta_hat(static_cast<Eigen::Index>(j));
    }
    return gamma * (row.direct - synth);
}

Eigen::MatrixXd beta_information_inverse(std::span<const AreaModelRow> rows,
                                         double sigma_u2) {
    const ModelData md = assemble(rows);
    const Eigen::Index p = md.x.cols();
    const Eigen::ArrayXd vi = (md.sd2.array() + sigma_u2).inverse();
    const Eigen::MatrixXd xtvx = md.x.transpose() * vi.matrix().asDiagonal() * md.x;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(xtvx);
    if (!lu.isInvertible()) {
        throw NumericalError("singular X'V^-1 X");
    }
    return lu.solve(Eigen::MatrixXd::Identity(p, p));
}

double avar_sigma_u(const FHFit& fit, std::span<const AreaModelRow> rows) {
    CompensatedSum acc;
    for (const auto& r : rows) {
        const double v = fit.sigma_u2_hat + r.error_variance;
        acc.add(1.0 / (v * v));
    }
    return 2.0 / acc.value();
}

MseComponents mse_prasad_rao(const FHFit& fit, const AreaModelRow& row,
                             const Eigen::MatrixXd& info_inv, double avar) {
    const double su2 = fit.sigma_u2_hat;
    const double sd2 = row.error_variance;
    const double v = su2 + sd2;

    Eigen::VectorXd xd(static_cast<Eigen::Index>(row.covariates.size()));
    for (std::size_t j = 0; j < row.covariates.size(); ++j) {
        xd(static_cast<Eigen::Index>(j)) = row.covariates[j];
    }

    MseComponents out;
    out.g1 = su2 * sd2 / v;
    out.g2 = (sd2 * sd2) / (v * v) * xd.dot(info_inv * xd);
    out.g3 = su2 > 0.0 ? (sd2 * sd2) / (v * v * v) * avar : 0.0;
    out.mse = out.g1 + out.g2 + 2.0 * out.g3;
    return out;
}

AreaPrediction predict_area(const FHFit& fit, const AreaModelRow& row,
                            const Eigen::MatrixXd& info_inv, double avar) {
    const double v = fit.sigma_u2_hat + row.error_variance;
    const double gamma = fit.sigma_u2_hat / v;
    double synth = 0.0;
    for (std::size_t j = 0; j < row.covariates.size(); ++j) {
        synth += row.covariates[j] * fit.beta_hat(static_cast<Eigen::Index>(j));
    }

    AreaPrediction pred;
    pred.area_id = row.area_id;
    pred.gamma = gamma;
    pred.u_hat = gamma * (row.direct - synth);
    // Clamp to the direct/synthetic interval so the convexity invariant
    // holds exactly in floating point.
    const double raw = gamma * row.direct + (1.0 - gamma) * synth;
    pred.eblup = std::clamp(raw, std::min(row.direct, synth), std::max(row.direct, synth));
    pred.residual = row.direct - pred.eblup;
    pred.out_of_range = pred.eblup < 0.0 || pred.eblup > 1.0;

    const MseComponents m = mse_prasad_rao(fit, row, info_inv, avar);
    pred.g1 = m.g1;
    pred.g2 = m.g2;
    pred.g3 = m.g3;
    pred.mse = m.mse;
    pred.cv = predict_cv(pred);
    return pred;
}

AreaPrediction predict_unsampled(const FHFit& fit, std::span<const double> covariates,
                                 const Eigen::MatrixXd& info_inv,
                                 const std::string& area_id) {
    if (static_cast<Eigen::Index>(covariates.size()) != fit.beta_hat.size()) {
        throw ValidationError("covariate length mismatch for unsampled area '" +
                              area_id + "'");
    }
    Eigen::VectorXd xd(fit.beta_hat.size());
    for (std::size_t j = 0; j < covariates.size(); ++j) {
        xd(static_cast<Eigen::Index>(j)) = covariates[j];
    }

    AreaPrediction pred;
    pred.area_id = area_id;
    pred.synthetic_only = true;
    pred.eblup = xd.dot(fit.beta_hat);
    pred.gamma = 0.0;
    pred.u_hat = 0.0;
    pred.g1 = fit.sigma_u2_hat;
    pred.g2 = xd.dot(info_inv * xd);
    pred.g3 = 0.0;
    pred.mse = pred.g2 + fit.sigma_u2_hat;
    pred.residual = 0.0;
    pred.out_of_range = pred.eblup < 0.0 || pred.eblup > 1.0;
    pred.cv = predict_cv(pred);
    return pred;
}

std::optional<double> predict_cv(const AreaPrediction& pred) {
    if (pred.eblup <= 0.0) {
        return std::nullopt;
    }
    return std::sqrt(std::max(pred.mse, 0.0)) / pred.eblup;
}

double fh_aic(const FHFit& fit, std::size_t p) {
    return -2.0 * fit.ml_loglik + 2.0 * static_cast<double>(p + 1);
}

}  // namespace sae
