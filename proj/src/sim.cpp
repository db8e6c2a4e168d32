#include "sae/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sae/fh.hpp"
#include "sae/gvf.hpp"

namespace sae {

namespace {

std::string area_name(std::size_t index, std::size_t total) {
    std::size_t width = 1;
    for (std::size_t t = total; t >= 10; t /= 10) {
        ++width;
    }
    std::string digits = std::to_string(index + 1);
    return "area_" + std::string(width > digits.size() ? width - digits.size() : 0, '0') +
           digits;
}

std::size_t draw_size(const SizeLaw& law, std::size_t area, std::mt19937_64& rng) {
    switch (law.kind) {
        case SizeLaw::Kind::Fixed:
            return std::max<std::size_t>(law.fixed, 1);
        case SizeLaw::Kind::UniformInt: {
            if (law.lo > law.hi) {
                throw ValidationError("invalid size law: lo > hi");
            }
            std::uniform_int_distribution<std::size_t> dist(law.lo, law.hi);
            return std::max<std::size_t>(dist(rng), 1);
        }
        case SizeLaw::Kind::Explicit:
            if (area >= law.sizes.size()) {
                throw ValidationError("size law list shorter than number of areas");
            }
            return std::max<std::size_t>(law.sizes[area], 1);
    }
    throw ValidationError("invalid size law");
}

// Fixed-size SRS without replacement over [0, n): selection sampling.
std::vector<std::size_t> srs_indices(std::size_t population, std::size_t sample,
                                     std::mt19937_64& rng) {
    std::vector<std::size_t> out;
    out.reserve(sample);
    std::size_t remaining = population;
    std::size_t needed = sample;
    for (std::size_t i = 0; i < population && needed > 0; ++i) {
        std::uniform_int_distribution<std::size_t> dist(0, remaining - 1);
        if (dist(rng) < needed) {
            out.push_back(i);
            --needed;
        }
        --remaining;
    }
    return out;
}

}  // namespace

SyntheticPopulation generate_population(const PopulationSpec& spec) {
    if (spec.num_areas < 1) {
        throw ValidationError("need at least one area");
    }
    if (spec.beta.empty()) {
        throw ValidationError("empty beta");
    }
    const std::size_t p = spec.beta.size();

    SyntheticPopulation pop;
    pop.beta = spec.beta;
    pop.sigma_u2 = spec.sigma_u2;
    pop.seed = spec.seed;
    pop.areas.resize(spec.num_areas);

    for (std::size_t a = 0; a < spec.num_areas; ++a) {
        std::mt19937_64 rng(mix_seed(spec.seed, 0x706f70ULL, a));
        SimArea& area = pop.areas[a];
        area.area_id = area_name(a, spec.num_areas);

        area.covariates.resize(p);
        area.covariates[0] = 1.0;
        if (!spec.covariates.empty()) {
            const auto& given = spec.covariates.at(a);
            if (given.size() != p - 1) {
                throw ValidationError("covariate row length mismatch");
            }
            std::copy(given.begin(), given.end(), area.covariates.begin() + 1);
        } else {
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            for (std::size_t j = 1; j < p; ++j) {
                area.covariates[j] = unif(rng);
            }
        }

        double lin = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            lin += area.covariates[j] * spec.beta[j];
        }
        if (spec.sigma_u2 > 0.0) {
            std::normal_distribution<double> normal(0.0, std::sqrt(spec.sigma_u2));
            area.u = normal(rng);
        }
        area.linear_probability = std::clamp(lin + area.u, 0.001, 0.999);

        const std::size_t n_pop = draw_size(spec.size_law, a, rng);
        area.outcomes.resize(n_pop);
        std::bernoulli_distribution bern(area.linear_probability);
        std::size_t ones = 0;
        for (auto& y : area.outcomes) {
            y = bern(rng) ? 1 : 0;
            ones += y;
        }
        area.truth = static_cast<double>(ones) / static_cast<double>(n_pop);
    }
    return pop;
}

std::vector<UnitRecord> draw_sample(const SyntheticPopulation& pop,
                                    const SampleDesign& design) {
    if (design.sample_sizes.empty()) {
        throw ValidationError("sample design without sample sizes");
    }
    std::vector<UnitRecord> sample;
    for (std::size_t a = 0; a < pop.areas.size(); ++a) {
        const SimArea& area = pop.areas[a];
        const std::size_t n_pop = area.outcomes.size();
        std::size_t n = design.sample_sizes.size() == 1
                            ? design.sample_sizes.front()
                            : design.sample_sizes.at(a);
        if (n < 1 || n > n_pop) {
            throw ValidationError("sample size out of range for area '" + area.area_id +
                                  "'");
        }
        std::mt19937_64 rng(mix_seed(design.seed, 0x736d70ULL, a));

        if (design.kind == SampleDesign::Kind::SimpleRandom) {
            const double w = static_cast<double>(n_pop) / static_cast<double>(n);
            for (std::size_t i : srs_indices(n_pop, n, rng)) {
                sample.push_back({area.area_id, w, area.outcomes[i]});
            }
        } else {
            // Two strata, sampled so the weight ratio is roughly 4:1.
            const std::size_t n1_pop = (n_pop + 1) / 2;
            const std::size_t n2_pop = n_pop - n1_pop;
            std::size_t n1 = std::max<std::size_t>(1, n / 5);
            std::size_t n2 = n - n1;
            n1 = std::min(n1, n1_pop);
            n2 = std::min(n2, n2_pop);
            if (n2 == 0 && n2_pop > 0) {
                n2 = 1;
            }
            const double w1 = static_cast<double>(n1_pop) / static_cast<double>(n1);
            for (std::size_t i : srs_indices(n1_pop, n1, rng)) {
                sample.push_back({area.area_id, w1, area.outcomes[i]});
            }
            if (n2_pop > 0 && n2 > 0) {
                const double w2 = static_cast<double>(n2_pop) / static_cast<double>(n2);
                for (std::size_t i : srs_indices(n2_pop, n2, rng)) {
                    sample.push_back({area.area_id, w2, area.outcomes[n1_pop + i]});
                }
            }
        }
    }
    return sample;
}

StudyReport run_study(const StudyConfig& config) {
    if (config.replicates < 1) {
        throw ValidationError("need at least one replicate");
    }
    const std::size_t d = config.population.num_areas;

    StudyReport report;
    report.replicates = config.replicates;
    report.areas.resize(d);

    std::vector<double> truth_sum(d, 0.0), dir_err(d, 0.0), dir_err2(d, 0.0);
    std::vector<double> eb_err(d, 0.0), eb_err2(d, 0.0), pr_sum(d, 0.0);
    std::vector<double> dcv_sum(d, 0.0), ecv_sum(d, 0.0), gamma_sum(d, 0.0);
    std::vector<std::size_t> dcv_n(d, 0), ecv_n(d, 0), lower_n(d, 0), lower_den(d, 0);
    std::vector<std::size_t> n_sample(d, 0);
    double sigma_sum = 0.0;
    std::size_t ok = 0;

    SyntheticPopulation fixed_pop;
    if (!config.redraw_population) {
        fixed_pop = generate_population(config.population);
    }

    SyntheticPopulation rep_pop;
    for (std::size_t rep = 0; rep < config.replicates; ++rep) {
        try {
            if (config.redraw_population) {
                PopulationSpec spec = config.population;
                spec.seed = mix_seed(config.population.seed, 0x726570ULL, rep);
                rep_pop = generate_population(spec);
            }
            const SyntheticPopulation& pop = config.redraw_population ? rep_pop : fixed_pop;

            SampleDesign design = config.design;
            design.seed = mix_seed(config.design.seed, 0x647367ULL, rep);
            const std::vector<UnitRecord> units = draw_sample(pop, design);
            const std::vector<AreaDirect> directs = direct_table(units);
            if (directs.size() != d) {
                throw NumericalError("missing areas in direct table");
            }

            const double delta =
                config.delta >= 0.0 ? config.delta : default_delta(directs);
            const GVFFit gvf = fit_gvf(directs, delta);

            std::vector<AreaModelRow> rows(d);
            for (std::size_t a = 0; a < d; ++a) {
                rows[a].area_id = directs[a].area_id;
                rows[a].direct = directs[a].estimate;
                rows[a].error_variance = predict_variance(
                    gvf, build_design_row(directs[a].estimate, directs[a].sample_size));
                rows[a].covariates = pop.areas[a].covariates;
            }

            const FHFit fit = reml_fit(rows);
            const Eigen::MatrixXd info_inv =
                beta_information_inverse(rows, fit.sigma_u2_hat);
            const double avar = avar_sigma_u(fit, rows);

            for (std::size_t a = 0; a < d; ++a) {
                const AreaPrediction pred = predict_area(fit, rows[a], info_inv, avar);
                const double truth = pop.areas[a].truth;
                truth_sum[a] += truth;
                n_sample[a] = directs[a].sample_size;
                const double de = directs[a].estimate - truth;
                const double ee = pred.eblup - truth;
                dir_err[a] += de;
                dir_err2[a] += de * de;
                eb_err[a] += ee;
                eb_err2[a] += ee * ee;
                pr_sum[a] += pred.mse;
                gamma_sum[a] += pred.gamma;
                if (directs[a].cv) {
                    dcv_sum[a] += *directs[a].cv;
                    ++dcv_n[a];
                }
                if (pred.cv) {
                    ecv_sum[a] += *pred.cv;
                    ++ecv_n[a];
                    ++lower_den[a];
                    // An absent direct CV means the direct estimate carries
                    // no usable precision statement; the EBLUP wins.
                    if (!directs[a].cv || *pred.cv < *directs[a].cv) {
                        ++lower_n[a];
                    }
                }
            }
            sigma_sum += fit.sigma_u2_hat;
            ++ok;
        } catch (const std::exception&) {
            ++report.failed_replicates;
        }
    }

    if (ok == 0) {
        throw NumericalError("all study replicates failed");
    }
    const double r = static_cast<double>(ok);
    std::size_t lower_total = 0, lower_den_total = 0;
    for (std::size_t a = 0; a < d; ++a) {
        StudyAreaRow& row = report.areas[a];
        row.area_id = area_name(a, d);
        row.sample_size = n_sample[a];
        row.mean_truth = truth_sum[a] / r;
        row.direct_bias = dir_err[a] / r;
        row.eblup_bias = eb_err[a] / r;
        row.direct_emp_mse = dir_err2[a] / r;
        row.eblup_emp_mse = eb_err2[a] / r;
        row.mean_pr_mse = pr_sum[a] / r;
        row.mean_direct_cv = dcv_n[a] ? dcv_sum[a] / static_cast<double>(dcv_n[a]) : 0.0;
        row.mean_eblup_cv = ecv_n[a] ? ecv_sum[a] / static_cast<double>(ecv_n[a]) : 0.0;
        row.mean_gamma = gamma_sum[a] / r;
        row.frac_eblup_cv_lower =
            lower_den[a] ? static_cast<double>(lower_n[a]) / static_cast<double>(lower_den[a])
                         : 0.0;
        lower_total += lower_n[a];
        lower_den_total += lower_den[a];
    }
    report.mean_sigma_u2_hat = sigma_sum / r;
    report.frac_eblup_cv_lower_overall =
        lower_den_total ? static_cast<double>(lower_total) / static_cast<double>(lower_den_total)
                        : 0.0;
    return report;
}

}  // namespace sae
