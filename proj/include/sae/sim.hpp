#ifndef SAE_SIM_HPP
#define SAE_SIM_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sae/direct.hpp"

namespace sae {

// Per-area population sizes: a fixed size, a uniform integer range, or an
// explicit list (one entry per area).
struct SizeLaw {
    enum class Kind { Fixed, UniformInt, Explicit };
    Kind kind = Kind::Fixed;
    std::size_t fixed = 100;
    std::size_t lo = 50, hi = 500;
    std::vector<std::size_t> sizes;
};

struct SimArea {
    std::string area_id;
    std::vector<std::uint8_t> outcomes;  // one per household
    std::vector<double> covariates;      // first entry 1
    double truth = 0.0;                  // exact population prevalence
    double linear_probability = 0.0;     // clip(x beta + u)
    double u = 0.0;                      // realized random effect
};

struct SyntheticPopulation {
    std::vector<SimArea> areas;
    std::vector<double> beta;
    double sigma_u2 = 0.0;
    std::uint64_t seed = 0;
};

struct PopulationSpec {
    std::size_t num_areas = 1;
    SizeLaw size_law;
    std::vector<double> beta;  // includes intercept
    double sigma_u2 = 0.0;
    std::uint64_t seed = 0;
    // Optional explicit covariate rows (without intercept); generated
    // uniform(0,1) when empty.
    std::vector<std::vector<double>> covariates;
};

struct SampleDesign {
    enum class Kind { SimpleRandom, WeightStratified };
    Kind kind = Kind::SimpleRandom;
    // Per-area sample sizes; a single entry is broadcast to all areas.
    std::vector<std::size_t> sample_sizes;
    std::uint64_t seed = 0;
};

SyntheticPopulation generate_population(const PopulationSpec& spec);

/// Draws a weighted sample from the population. Simple random sampling
/// gives weights N_d/n_d; the stratified design splits each area into two
/// strata with a 4:1 weight ratio. Sum of weights estimates N_d
/// unbiasedly under both designs.
std::vector<UnitRecord> draw_sample(const SyntheticPopulation& pop,
                                    const SampleDesign& design);

struct StudyConfig {
    PopulationSpec population;
    SampleDesign design;
    std::size_t replicates = 1;
    double delta = -1.0;  // < 0 means the per-replicate mean (auto)
    // Regenerate random effects (a fresh population) every replicate.
    bool redraw_population = true;
};

struct StudyAreaRow {
    std::string area_id;
    std::size_t sample_size = 0;
    double mean_truth = 0.0;
    double direct_bias = 0.0;
    double eblup_bias = 0.0;
    double direct_emp_mse = 0.0;
    double eblup_emp_mse = 0.0;
    double mean_pr_mse = 0.0;    // mean Prasad-Rao MSE estimate
    double mean_direct_cv = 0.0; // over replicates where defined
    double mean_eblup_cv = 0.0;
    double mean_gamma = 0.0;
    double frac_eblup_cv_lower = 0.0;
};

struct StudyReport {
    std::vector<StudyAreaRow> areas;
    std::size_t replicates = 0;
    std::size_t failed_replicates = 0;
    double mean_sigma_u2_hat = 0.0;
    double frac_eblup_cv_lower_overall = 0.0;
};

/// Monte-Carlo study: population -> sample -> direct -> GVF -> REML ->
/// EBLUP pipeline per replicate, aggregated per area. Deterministic
/// given the seeds in the config.
StudyReport run_study(const StudyConfig& config);

}  // namespace sae

#endif
