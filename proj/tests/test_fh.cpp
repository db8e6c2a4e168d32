#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "sae/fh.hpp"

using namespace sae;

namespace {

std::vector<AreaModelRow> make_rows(const std::vector<double>& y,
                                    const std::vector<double>& sd2,
                                    const std::vector<std::vector<double>>& x) {
    std::vector<AreaModelRow> rows(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        rows[i].area_id = "a" + std::to_string(i);
        rows[i].direct = y[i];
        rows[i].error_variance = sd2[i];
        rows[i].covariates = x[i];
    }
    return rows;
}

// Dense-matrix transcription of the GLS normal equations, independent of
// the QR-based implementation.
Eigen::VectorXd brute_force_gls(const std::vector<AreaModelRow>& rows, double su2) {
    const int d = static_cast<int>(rows.size());
    const int p = static_cast<int>(rows[0].covariates.size());
    Eigen::MatrixXd x(d, p);
    Eigen::VectorXd y(d);
    Eigen::MatrixXd vinv = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i) {
        y(i) = rows[i].direct;
        vinv(i, i) = 1.0 / (su2 + rows[i].error_variance);
        for (int j = 0; j < p; ++j) x(i, j) = rows[i].covariates[j];
    }
    return (x.transpose() * vinv * x).inverse() * x.transpose() * vinv * y;
}

FHFit fixed_fit(double beta0, double sigma_u2) {
    FHFit fit;
    fit.beta_hat = Eigen::VectorXd::Constant(1, beta0);
    fit.sigma_u2_hat = sigma_u2;
    fit.converged = true;
    return fit;
}

std::vector<AreaModelRow> random_rows(std::mt19937& rng, int d, double su2_truth) {
    std::uniform_real_distribution<double> x_dist(0.0, 1.0);
    std::uniform_real_distribution<double> sd2_dist(0.0005, 0.02);
    std::vector<AreaModelRow> rows(d);
    std::normal_distribution<double> std_normal(0.0, 1.0);
    for (int i = 0; i < d; ++i) {
        rows[i].area_id = "a" + std::to_string(i);
        rows[i].covariates = {1.0, x_dist(rng)};
        rows[i].error_variance = sd2_dist(rng);
        const double mean = 0.02 + 0.1 * rows[i].covariates[1];
        rows[i].direct = mean + std::sqrt(su2_truth) * std_normal(rng) +
                         std::sqrt(rows[i].error_variance) * std_normal(rng);
    }
    return rows;
}

}  // namespace

TEST_CASE("reml_fit reduces to RSS/(D-p) when error variances vanish") {
    auto rows = make_rows({0.0, 1.0}, {1e-12, 1e-12}, {{1.0}, {1.0}});
    FHFit fit = reml_fit(rows);
    CHECK(fit.converged);
    CHECK(fit.sigma_u2_hat == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(fit.beta_hat(0) == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("exact linear data gives the boundary estimate") {
    std::vector<double> y, sd2;
    std::vector<std::vector<double>> x;
    for (int i = 0; i < 20; ++i) {
        const double xi = 0.05 * i;
        x.push_back({1.0, xi});
        y.push_back(0.3 + 0.2 * xi);
        sd2.push_back(0.001 + 0.0001 * i);
    }
    FHFit fit = reml_fit(make_rows(y, sd2, x));
    CHECK(fit.sigma_u2_hat == 0.0);
    CHECK(fit.beta_hat(0) == doctest::Approx(0.3).epsilon(1e-8));
    CHECK(fit.beta_hat(1) == doctest::Approx(0.2).epsilon(1e-8));
}

TEST_CASE("reml_fit input validation") {
    CHECK_THROWS_AS(reml_fit({}), ValidationError);
    auto rows = make_rows({0.1, 0.2}, {0.01, -0.01}, {{1.0}, {1.0}});
    CHECK_THROWS_AS(reml_fit(rows), ValidationError);
    // Collinear design.
    auto bad = make_rows({0.1, 0.2, 0.3}, {0.01, 0.01, 0.01},
                         {{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}});
    CHECK_THROWS_AS(reml_fit(bad), NumericalError);
    // D <= p.
    auto small = make_rows({0.1, 0.2}, {0.01, 0.01}, {{1.0, 0.0}, {1.0, 1.0}});
    CHECK_THROWS_AS(reml_fit(small), ValidationError);
}

TEST_CASE("Monte-Carlo REML recovery at reduced scale") {
    std::mt19937 rng(31);
    const double truth = 0.001;
    std::vector<double> estimates;
    for (int rep = 0; rep < 60; ++rep) {
        auto rows = random_rows(rng, 300, truth);
        FHFit fit = reml_fit(rows);
        CHECK(fit.converged);
        estimates.push_back(fit.sigma_u2_hat);
    }
    std::sort(estimates.begin(), estimates.end());
    const double median = estimates[estimates.size() / 2];
    CHECK(median == doctest::Approx(truth).epsilon(0.15));
}

TEST_CASE("REML objective is non-decreasing under step control") {
    std::mt19937 rng(77);
    for (int rep = 0; rep < 10; ++rep) {
        auto rows = random_rows(rng, 80, 0.002);
        FHFit fit = reml_fit(rows);
        for (std::size_t i = 1; i < fit.objective_trace.size(); ++i) {
            const double slack = 1e-9 * std::max(1.0, std::abs(fit.objective_trace[i]));
            CHECK(fit.objective_trace[i] >= fit.objective_trace[i - 1] - slack);
        }
    }
}

TEST_CASE("gls_beta equals OLS under equal total variances") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> y, sd2;
    std::vector<std::vector<double>> x;
    for (int i = 0; i < 15; ++i) {
        x.push_back({1.0, unif(rng)});
        y.push_back(unif(rng));
        sd2.push_back(0.004);  // constant; V proportional to identity
    }
    auto rows = make_rows(y, sd2, x);
    Eigen::VectorXd gls = gls_beta(rows, 0.001);

    Eigen::MatrixXd xm(15, 2);
    Eigen::VectorXd yv(15);
    for (int i = 0; i < 15; ++i) {
        xm(i, 0) = 1.0;
        xm(i, 1) = x[i][1];
        yv(i) = y[i];
    }
    Eigen::VectorXd ols = (xm.transpose() * xm).ldlt().solve(xm.transpose() * yv);
    CHECK((gls - ols).norm() <= 1e-10 * ols.norm());
}

TEST_CASE("gls_beta intercept-only closed form and brute-force match") {
    std::mt19937 rng(6);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_real_distribution<double> v_dist(0.001, 0.02);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> y, sd2;
        std::vector<std::vector<double>> x1, x2;
        const int d = 5 + rep % 16;
        for (int i = 0; i < d; ++i) {
            y.push_back(unif(rng));
            sd2.push_back(v_dist(rng));
            x1.push_back({1.0});
            x2.push_back({1.0, unif(rng)});
        }
        const double su2 = 0.003;

        auto rows1 = make_rows(y, sd2, x1);
        double wsum = 0.0, wy = 0.0;
        for (int i = 0; i < d; ++i) {
            const double w = 1.0 / (su2 + sd2[static_cast<std::size_t>(i)]);
            wsum += w;
            wy += w * y[static_cast<std::size_t>(i)];
        }
        CHECK(gls_beta(rows1, su2)(0) == doctest::Approx(wy / wsum).epsilon(1e-12));

        auto rows2 = make_rows(y, sd2, x2);
        Eigen::VectorXd impl = gls_beta(rows2, su2);
        Eigen::VectorXd brute = brute_force_gls(rows2, su2);
        CHECK((impl - brute).norm() <= 1e-10 * (brute.norm() + 1.0));
    }
}

TEST_CASE("random_effect shrinks the residual") {
    AreaModelRow row{"a", 0.05, 0.002, {1.0}};
    CHECK(random_effect(fixed_fit(0.05, 0.002), row) == doctest::Approx(0.0));
    CHECK(random_effect(fixed_fit(0.01, 0.0), row) == 0.0);

    AreaModelRow row2{"a", 0.05, 0.002, {1.0}};
    FHFit half = fixed_fit(0.03, 0.002);  // gamma = 1/2, residual 0.02
    CHECK(random_effect(half, row2) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("eblup examples and limits") {
    const Eigen::MatrixXd zero_info = Eigen::MatrixXd::Zero(1, 1);

    AreaModelRow row{"a", 0.09, 0.003, {1.0}};
    AreaPrediction pred = predict_area(fixed_fit(0.05, 0.001), row, zero_info, 0.0);
    CHECK(pred.gamma == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(pred.eblup == doctest::Approx(0.06).epsilon(1e-12));
    CHECK(pred.residual == doctest::Approx(0.03).epsilon(1e-12));
    CHECK(pred.u_hat == doctest::Approx(0.01).epsilon(1e-12));

    AreaModelRow tight{"a", 0.09, 1e-12, {1.0}};
    AreaPrediction p2 = predict_area(fixed_fit(0.05, 0.001), tight, zero_info, 0.0);
    CHECK(std::abs(p2.eblup - 0.09) / 0.09 <= 1e-6);

    AreaModelRow any{"a", 0.09, 0.003, {1.0}};
    AreaPrediction p3 = predict_area(fixed_fit(0.05, 0.0), any, zero_info, 0.0);
    CHECK(p3.eblup == 0.05);
    CHECK(p3.gamma == 0.0);
}

TEST_CASE("Prasad-Rao components") {
    const Eigen::MatrixXd zero_info = Eigen::MatrixXd::Zero(1, 1);
    AreaModelRow row{"a", 0.1, 0.002, {1.0}};
    MseComponents m = mse_prasad_rao(fixed_fit(0.0, 0.002), row, zero_info, 0.0);
    CHECK(m.g1 == doctest::Approx(0.001).epsilon(1e-12));

    AreaModelRow tiny{"a", 0.1, 1e-14, {1.0}};
    Eigen::MatrixXd info = Eigen::MatrixXd::Constant(1, 1, 0.5);
    MseComponents m2 = mse_prasad_rao(fixed_fit(0.0, 0.002), tiny, info, 0.01);
    CHECK(m2.g1 <= 1e-13);
    CHECK(m2.g2 <= 1e-13);
    CHECK(m2.g3 <= 1e-13);
    CHECK(m2.mse <= 5e-13);
}

TEST_CASE("Prasad-Rao matches a dense-matrix oracle at D=3, p=1") {
    auto rows = make_rows({0.1, 0.3, 0.7}, {0.01, 0.02, 0.05}, {{1.0}, {1.0}, {1.0}});
    FHFit fit = reml_fit(rows);
    const Eigen::MatrixXd info_inv = beta_information_inverse(rows, fit.sigma_u2_hat);
    const double avar = avar_sigma_u(fit, rows);

    const double su2 = fit.sigma_u2_hat;
    for (const auto& row : rows) {
        const double sd2 = row.error_variance;
        const double v = su2 + sd2;
        // Hand transcription of the g components.
        double denom = 0.0;
        for (const auto& r : rows) denom += 1.0 / (su2 + r.error_variance);
        const double oracle_g2 = (sd2 * sd2) / (v * v) / denom;
        double avar_sum = 0.0;
        for (const auto& r : rows) {
            const double vv = su2 + r.error_variance;
            avar_sum += 1.0 / (vv * vv);
        }
        const double oracle_g3 =
            su2 > 0.0 ? (sd2 * sd2) / (v * v * v) * 2.0 / avar_sum : 0.0;
        const double oracle_g1 = su2 * sd2 / v;

        MseComponents m = mse_prasad_rao(fit, row, info_inv, avar);
        CHECK(m.g1 == doctest::Approx(oracle_g1).epsilon(1e-10));
        CHECK(m.g2 == doctest::Approx(oracle_g2).epsilon(1e-10));
        CHECK(m.g3 == doctest::Approx(oracle_g3).epsilon(1e-10));
        CHECK(m.mse == doctest::Approx(oracle_g1 + oracle_g2 + 2 * oracle_g3).epsilon(1e-12));
    }
}

TEST_CASE("avar closed forms") {
    auto rows = make_rows({0.1, 0.2}, {0.7, 0.7}, {{1.0}, {1.0}});
    FHFit fit = fixed_fit(0.0, 0.3);  // totals are 1 for both areas
    CHECK(avar_sigma_u(fit, rows) == doctest::Approx(1.0).epsilon(1e-14));

    for (int d : {5, 20, 100}) {
        const double c = 0.04;
        std::vector<double> y(d, 0.1), sd2(d, c - 0.01);
        std::vector<std::vector<double>> x(d, {1.0});
        auto r = make_rows(y, sd2, x);
        FHFit f = fixed_fit(0.0, 0.01);
        CHECK(avar_sigma_u(f, r) ==
              doctest::Approx(2.0 * c * c / d).epsilon(1e-13));
    }
}

TEST_CASE("predict_cv") {
    AreaPrediction pred;
    pred.eblup = 0.06;
    pred.mse = 0.000036;
    CHECK(*predict_cv(pred) == doctest::Approx(0.1).epsilon(1e-12));
    pred.mse = 0.0;
    CHECK(*predict_cv(pred) == 0.0);
    pred.eblup = 0.0;
    CHECK(!predict_cv(pred).has_value());
}

TEST_CASE("fh_aic definition and nested-model ordering") {
    FHFit fit;
    fit.ml_loglik = 0.0;
    CHECK(fh_aic(fit, 1) == doctest::Approx(4.0));

    std::mt19937 rng(13);
    auto rows = random_rows(rng, 200, 0.0005);  // strong x1 signal (slope 0.1)
    FHFit rich = reml_fit(rows);
    auto poor_rows = rows;
    for (auto& r : poor_rows) r.covariates = {1.0};
    FHFit poor = reml_fit(poor_rows);
    CHECK(rich.aic < poor.aic);
}

TEST_CASE("predict_unsampled") {
    std::mt19937 rng(21);
    auto rows = random_rows(rng, 100, 0.001);
    FHFit fit = reml_fit(rows);
    const Eigen::MatrixXd info_inv = beta_information_inverse(rows, fit.sigma_u2_hat);
    const double avar = avar_sigma_u(fit, rows);

    // Matches the synthetic part of a training row.
    const AreaModelRow& r0 = rows.front();
    AreaPrediction synth = predict_unsampled(fit, r0.covariates, info_inv, "new");
    double xb = 0.0;
    for (std::size_t j = 0; j < r0.covariates.size(); ++j) {
        xb += r0.covariates[j] * fit.beta_hat(static_cast<Eigen::Index>(j));
    }
    CHECK(synth.eblup == doctest::Approx(xb).epsilon(1e-12));
    CHECK(synth.gamma == 0.0);
    CHECK(synth.u_hat == 0.0);
    CHECK(synth.synthetic_only);
    CHECK(synth.mse == doctest::Approx(fit.sigma_u2_hat +
                                       synth.g2).epsilon(1e-12));

    AreaPrediction sampled = predict_area(fit, r0, info_inv, avar);
    (void)sampled;

    // Zero random-effect variance leaves only the leverage term.
    FHFit zero = fit;
    zero.sigma_u2_hat = 0.0;
    const Eigen::MatrixXd info0 = beta_information_inverse(rows, 0.0);
    AreaPrediction lev = predict_unsampled(fit, r0.covariates, info0, "new");
    lev = predict_unsampled(zero, r0.covariates, info0, "new");
    CHECK(lev.mse == doctest::Approx(lev.g2).epsilon(1e-12));

    CHECK_THROWS_AS(predict_unsampled(fit, std::vector<double>{1.0}, info_inv, "bad"),
                    ValidationError);
}

TEST_CASE("property: gamma bounds, convexity, mse composition") {
    std::mt19937 rng(55);
    for (int rep = 0; rep < 10; ++rep) {
        auto rows = random_rows(rng, 60, 0.002);
        FHFit fit = reml_fit(rows);
        const Eigen::MatrixXd info_inv = beta_information_inverse(rows, fit.sigma_u2_hat);
        const double avar = avar_sigma_u(fit, rows);
        for (const auto& row : rows) {
            AreaPrediction pred = predict_area(fit, row, info_inv, avar);
            CHECK(pred.gamma >= 0.0);
            CHECK(pred.gamma <= 1.0);
            double xb = 0.0;
            for (std::size_t j = 0; j < row.covariates.size(); ++j) {
                xb += row.covariates[j] * fit.beta_hat(static_cast<Eigen::Index>(j));
            }
            CHECK(pred.eblup >= std::min(row.direct, xb));
            CHECK(pred.eblup <= std::max(row.direct, xb));
            CHECK(pred.mse == doctest::Approx(pred.g1 + pred.g2 + 2 * pred.g3).epsilon(1e-12));
            CHECK(pred.mse >= pred.g1);
        }
    }
}

TEST_CASE("affine equivariance of the covariate columns") {
    std::mt19937 rng(88);
    auto rows = random_rows(rng, 80, 0.002);
    FHFit fit = reml_fit(rows);
    const Eigen::MatrixXd info = beta_information_inverse(rows, fit.sigma_u2_hat);
    const double avar = avar_sigma_u(fit, rows);

    const double a = 3.7;
    auto scaled = rows;
    for (auto& r : scaled) r.covariates[1] *= a;
    FHFit fit2 = reml_fit(scaled);
    const Eigen::MatrixXd info2 = beta_information_inverse(scaled, fit2.sigma_u2_hat);
    const double avar2 = avar_sigma_u(fit2, scaled);

    CHECK(fit2.beta_hat(1) == doctest::Approx(fit.beta_hat(1) / a).epsilon(1e-8));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        AreaPrediction p1 = predict_area(fit, rows[i], info, avar);
        AreaPrediction p2 = predict_area(fit2, scaled[i], info2, avar2);
        CHECK(p2.eblup == doctest::Approx(p1.eblup).epsilon(1e-8));
    }
}

TEST_CASE("eblup approaches the direct value monotonically as sigma_d2 shrinks") {
    FHFit fit = fixed_fit(0.05, 0.002);
    const Eigen::MatrixXd zero_info = Eigen::MatrixXd::Zero(1, 1);
    double prev_gap = 1e9;
    for (double sd2 : {0.05, 0.01, 0.002, 0.0005, 1e-5, 1e-9}) {
        AreaModelRow row{"a", 0.09, sd2, {1.0}};
        AreaPrediction pred = predict_area(fit, row, zero_info, 0.0);
        const double gap = std::abs(pred.eblup - row.direct);
        CHECK(gap <= prev_gap);
        prev_gap = gap;
    }
}
