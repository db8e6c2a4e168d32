#ifndef SAE_PIPELINE_HPP
#define SAE_PIPELINE_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sae/direct.hpp"
#include "sae/fh.hpp"
#include "sae/gvf.hpp"

namespace sae {

// Area-level covariates keyed by area id; intercept is synthesized.
struct CovariateTable {
    std::vector<std::string> column_names;  // without area_id
    std::map<std::string, std::vector<double>> values;
};

struct PipelineConfig {
    std::filesystem::path units_path;
    std::filesystem::path areas_path;
    std::filesystem::path out_dir;
    // delta < 0 means auto (mean of the design variances).
    double delta = -1.0;
    bool bias_correction = false;
    // Covariate columns used in the Fay-Herriot stage; empty = all.
    std::vector<std::string> fh_columns;
    // GVF candidates as lists of column names from kGvfColumnNames;
    // empty = full design only.
    std::vector<std::vector<std::string>> gvf_candidates;
    // Sensitivity override: force sigma_d^2 for specific areas.
    std::map<std::string, double> variance_overrides;
    bool strict = false;
    std::uint64_t seed = 0;
};

struct ResultRow {
    std::string area_id;
    std::size_t sample_size = 0;
    double direct = 0.0;
    std::optional<double> direct_cv;
    double sigma_d2_gvf = 0.0;
    AreaPrediction prediction;
    bool degenerate_variance = false;
};

struct PipelineResult {
    std::vector<AreaDirect> directs;
    GVFFit gvf;
    FHFit fh;
    std::vector<AreaModelRow> model_rows;
    std::vector<ResultRow> rows;  // sampled areas first, then synthetic-only
    std::vector<std::string> warnings;
    double delta_used = 0.0;
};

std::vector<UnitRecord> ingest_units(const std::filesystem::path& path);

CovariateTable ingest_areas(const std::filesystem::path& path);

/// Runs direct -> GVF -> REML -> prediction in memory.
PipelineResult run_pipeline(const PipelineConfig& config);

/// Writes results.csv, model.txt and the diagnostics bundle into
/// config.out_dir. All files appear atomically; a failure leaves no
/// partial outputs.
void write_outputs(const PipelineResult& result, const std::filesystem::path& out_dir);

/// Diagnostics bundle only (four tidy CSVs for plotting).
void write_diagnostics(const PipelineResult& result,
                       const std::filesystem::path& out_dir);

void write_model_file(const PipelineResult& result, const std::filesystem::path& path);

}  // namespace sae

#endif
