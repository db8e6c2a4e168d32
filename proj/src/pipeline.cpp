#include "sae/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

#include "sae/csv.hpp"

namespace sae {

namespace {

std::uint64_t fnv1a(const std::string& data, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string cv_pct_or_na(const std::optional<double>& cv, int decimals) {
    if (!cv) {
        return "NA";
    }
    return decimals < 0 ? csv::format_double(*cv * 100.0)
                        : csv::format_fixed(*cv * 100.0, decimals);
}

class AtomicWriter {
  public:
    explicit AtomicWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

    void add(const std::string& name, const std::string& content) {
        files_.emplace_back(name, content);
    }

    // Stage every file under a temporary name, then rename. A throw
    // before commit leaves the target names untouched.
    void commit() {
        std::filesystem::create_directories(dir_);
        std::vector<std::filesystem::path> staged;
        try {
            for (const auto& [name, content] : files_) {
                const auto tmp = dir_ / (name + ".tmp");
                std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
                if (!out) {
                    throw ValidationError("cannot write " + tmp.string());
                }
                out << content;
                out.close();
                if (!out) {
                    throw ValidationError("write failed: " + tmp.string());
                }
                staged.push_back(tmp);
            }
        } catch (...) {
            for (const auto& tmp : staged) {
                std::error_code ec;
                std::filesystem::remove(tmp, ec);
            }
            throw;
        }
        for (std::size_t i = 0; i < files_.size(); ++i) {
            std::filesystem::rename(staged[i], dir_ / files_[i].first);
        }
    }

  private:
    std::filesystem::path dir_;
    std::vector<std::pair<std::string, std::string>> files_;
};

GVFDesign design_from_names(const std::vector<std::string>& names) {
    GVFDesign design;
    for (const auto& name : names) {
        int idx = -1;
        for (std::size_t i = 0; i < kGvfColumnNames.size(); ++i) {
            if (name == kGvfColumnNames[i]) {
                idx = static_cast<int>(i);
                break;
            }
        }
        if (idx < 0) {
            throw ValidationError("unknown GVF column: '" + name + "'");
        }
        design.columns.push_back(idx);
    }
    std::sort(design.columns.begin(), design.columns.end());
    if (design.columns.empty() || design.columns.front() != 0) {
        throw ValidationError("GVF candidate must include the intercept");
    }
    return design;
}

std::string results_csv(const PipelineResult& result) {
    std::ostringstream out;
    out << "area_id,n_d,direct,direct_cv_pct,direct_cv_pct_full,sigma_d2_gvf,"
           "eblup,eblup_cv_pct,eblup_cv_pct_full,gamma,mse,residual,flags\n";
    for (const auto& row : result.rows) {
        std::vector<std::string> flags;
        if (row.degenerate_variance) flags.push_back("degenerate_variance");
        if (row.prediction.out_of_range) flags.push_back("out_of_range_eblup");
        if (row.prediction.synthetic_only) flags.push_back("synthetic_only");
        std::string flag_field;
        for (std::size_t i = 0; i < flags.size(); ++i) {
            flag_field += (i ? ";" : "") + flags[i];
        }
        out << row.area_id << ',' << row.sample_size << ','
            << csv::format_double(row.direct) << ','
            << cv_pct_or_na(row.direct_cv, 2) << ','
            << cv_pct_or_na(row.direct_cv, -1) << ','
            << csv::format_double(row.sigma_d2_gvf) << ','
            << csv::format_double(row.prediction.eblup) << ','
            << cv_pct_or_na(row.prediction.cv, 2) << ','
            << cv_pct_or_na(row.prediction.cv, -1) << ','
            << csv::format_double(row.prediction.gamma) << ','
            << csv::format_double(row.prediction.mse) << ','
            << csv::format_double(row.prediction.residual) << ',' << flag_field << '\n';
    }
    return out.str();
}

std::string model_txt(const PipelineResult& result) {
    std::ostringstream out;
    out << "format: sae-model 1\n";
    out << "num_areas: " << result.model_rows.size() << "\n";
    out << "gvf_delta: " << csv::format_double(result.delta_used) << "\n";
    out << "gvf_columns:";
    for (const auto& label : result.gvf.design_labels) {
        out << ' ' << label;
    }
    out << "\n";
    for (std::size_t j = 0; j < result.gvf.coefficients.size(); ++j) {
        out << "gvf_coef_" << result.gvf.design_labels[j] << ": "
            << csv::format_double(result.gvf.coefficients[j]) << "\n";
    }
    out << "gvf_residual_variance: " << csv::format_double(result.gvf.residual_variance)
        << "\n";
    out << "gvf_aic: " << csv::format_double(result.gvf.aic) << "\n";
    out << "fh_p: " << result.fh.beta_hat.size() << "\n";
    for (Eigen::Index j = 0; j < result.fh.beta_hat.size(); ++j) {
        out << "fh_beta_" << j << ": " << csv::format_double(result.fh.beta_hat(j)) << "\n";
    }
    out << "fh_sigma_u2: " << csv::format_double(result.fh.sigma_u2_hat) << "\n";
    out << "fh_reml_loglik: " << csv::format_double(result.fh.reml_loglik) << "\n";
    out << "fh_ml_loglik: " << csv::format_double(result.fh.ml_loglik) << "\n";
    out << "fh_aic: " << csv::format_double(result.fh.aic) << "\n";
    out << "fh_converged: " << (result.fh.converged ? "true" : "false") << "\n";
    out << "fh_iterations: " << result.fh.iterations << "\n";

    std::uint64_t digest = 0xcbf29ce484222325ULL;
    for (const auto& row : result.model_rows) {
        digest = fnv1a(row.area_id + ":" + csv::format_double(row.error_variance) + "\n",
                       digest);
    }
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(digest));
    out << "error_variance_digest: " << hex << "\n";
    return out.str();
}

void add_diagnostics_files(const PipelineResult& result, AtomicWriter& writer) {
    std::ostringstream gvf_res, gvf_obs, scatter, fh_res;
    gvf_res << "area_id,fitted_log_variance,residual\n";
    gvf_obs << "area_id,observed_log_variance,predicted_log_variance\n";
    for (const auto& a : result.directs) {
        const double observed = std::log(a.design_variance + result.delta_used);
        double fitted = 0.0;
        const GVFDesignRow row = build_design_row(a.estimate, a.sample_size);
        for (std::size_t j = 0; j < result.gvf.columns.size(); ++j) {
            fitted += result.gvf.coefficients[j] *
                      row[static_cast<std::size_t>(result.gvf.columns[j])];
        }
        gvf_res << a.area_id << ',' << csv::format_double(fitted) << ','
                << csv::format_double(observed - fitted) << '\n';
        gvf_obs << a.area_id << ',' << csv::format_double(observed) << ','
                << csv::format_double(fitted) << '\n';
    }
    scatter << "area_id,n_d,direct,eblup\n";
    fh_res << "area_id,area_index,eblup,residual\n";
    std::size_t index = 0;
    for (const auto& row : result.rows) {
        if (row.prediction.synthetic_only) {
            continue;
        }
        scatter << row.area_id << ',' << row.sample_size << ','
                << csv::format_double(row.direct) << ','
                << csv::format_double(row.prediction.eblup) << '\n';
        fh_res << row.area_id << ',' << index << ','
               << csv::format_double(row.prediction.eblup) << ','
               << csv::format_double(row.prediction.residual) << '\n';
        ++index;
    }
    writer.add("gvf_residuals.csv", gvf_res.str());
    writer.add("gvf_log_variance.csv", gvf_obs.str());
    writer.add("direct_vs_eblup.csv", scatter.str());
    writer.add("fh_residuals.csv", fh_res.str());
}

}  // namespace

std::vector<UnitRecord> ingest_units(const std::filesystem::path& path) {
    const csv::Table table = csv::read_file(path);
    const int c_area = table.column("area_id");
    const int c_weight = table.column("weight");
    const int c_y = table.column("y");
    if (c_area < 0 || c_weight < 0 || c_y < 0) {
        throw ValidationError("unit file must have columns area_id,weight,y");
    }
    if (table.rows.empty()) {
        throw ValidationError("unit file has no data rows: " + path.string());
    }
    std::vector<UnitRecord> units;
    units.reserve(table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& fields = table.rows[i];
        const std::size_t row_no = i + 2;  // header is row 1
        UnitRecord rec;
        rec.area_id = fields[static_cast<std::size_t>(c_area)];
        if (rec.area_id.empty()) {
            throw ValidationError("row " + std::to_string(row_no) + ": empty area_id");
        }
        rec.weight =
            csv::parse_double(fields[static_cast<std::size_t>(c_weight)], row_no, "weight");
        if (!(rec.weight > 0.0)) {
            throw ValidationError("row " + std::to_string(row_no) +
                                  ": weight must be positive");
        }
        const std::string& y = fields[static_cast<std::size_t>(c_y)];
        if (y == "0") {
            rec.outcome = 0;
        } else if (y == "1") {
            rec.outcome = 1;
        } else {
            throw ValidationError("row " + std::to_string(row_no) +
                                  ": outcome must be 0 or 1");
        }
        units.push_back(std::move(rec));
    }
    return units;
}

CovariateTable ingest_areas(const std::filesystem::path& path) {
    const csv::Table table = csv::read_file(path);
    const int c_area = table.column("area_id");
    if (c_area != 0) {
        throw ValidationError("area file must start with an area_id column");
    }
    CovariateTable cov;
    cov.column_names.assign(table.header.begin() + 1, table.header.end());
    if (cov.column_names.empty()) {
        throw ValidationError("area file has no covariate columns");
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& fields = table.rows[i];
        const std::size_t row_no = i + 2;
        const std::string& id = fields[0];
        if (cov.values.count(id)) {
            throw ValidationError("row " + std::to_string(row_no) +
                                  ": duplicate area_id '" + id + "'");
        }
        std::vector<double> vals;
        vals.reserve(cov.column_names.size());
        for (std::size_t j = 1; j < fields.size(); ++j) {
            vals.push_back(csv::parse_double(fields[j], row_no, table.header[j]));
        }
        cov.values.emplace(id, std::move(vals));
    }
    if (cov.values.empty()) {
        throw ValidationError("area file has no data rows: " + path.string());
    }
    return cov;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
    PipelineResult result;

    const std::vector<UnitRecord> units = ingest_units(config.units_path);
    const CovariateTable cov = ingest_areas(config.areas_path);

    // Covariate columns for the FH stage.
    std::vector<std::size_t> fh_idx;
    if (config.fh_columns.empty()) {
        for (std::size_t j = 0; j < cov.column_names.size(); ++j) {
            fh_idx.push_back(j);
        }
    } else {
        for (const auto& name : config.fh_columns) {
            auto it = std::find(cov.column_names.begin(), cov.column_names.end(), name);
            if (it == cov.column_names.end()) {
                throw ValidationError("covariate column '" + name +
                                      "' missing from area file");
            }
            fh_idx.push_back(static_cast<std::size_t>(it - cov.column_names.begin()));
        }
    }

    // Percent-scale sanity check (warning only).
    for (const auto& [id, vals] : cov.values) {
        for (std::size_t k = 0; k < fh_idx.size(); ++k) {
            if (cov.column_names[fh_idx[k]] == "x2" &&
                (vals[fh_idx[k]] < 0.0 || vals[fh_idx[k]] > 100.0)) {
                result.warnings.push_back("area '" + id + "': x2 outside [0,100]");
            }
        }
    }

    result.directs = direct_table(units);

    // Every sampled area must have covariates.
    std::vector<std::string> missing;
    for (const auto& a : result.directs) {
        if (!cov.values.count(a.area_id)) {
            missing.push_back(a.area_id);
        }
    }
    if (!missing.empty()) {
        std::string ids;
        for (const auto& id : missing) {
            ids += (ids.empty() ? "" : ", ") + id;
        }
        throw ValidationError("sampled areas missing from covariate file: " + ids);
    }

    result.delta_used =
        config.delta >= 0.0 ? config.delta : default_delta(result.directs);

    std::vector<GVFDesign> candidates;
    if (config.gvf_candidates.empty()) {
        candidates.push_back(full_gvf_design());
    } else {
        for (const auto& names : config.gvf_candidates) {
            candidates.push_back(design_from_names(names));
        }
    }
    result.gvf =
        select_gvf(result.directs, candidates, result.delta_used, config.bias_correction);

    result.model_rows.reserve(result.directs.size());
    for (const auto& a : result.directs) {
        AreaModelRow row;
        row.area_id = a.area_id;
        row.direct = a.estimate;
        auto over = config.variance_overrides.find(a.area_id);
        row.error_variance =
            over != config.variance_overrides.end()
                ? over->second
                : predict_variance(result.gvf, build_design_row(a.estimate, a.sample_size));
        const auto& vals = cov.values.at(a.area_id);
        row.covariates.push_back(1.0);
        for (std::size_t j : fh_idx) {
            row.covariates.push_back(vals[j]);
        }
        result.model_rows.push_back(std::move(row));
    }

    result.fh = reml_fit(result.model_rows);
    if (config.strict && !result.fh.converged) {
        throw NumericalError("REML did not converge");
    }
    const Eigen::MatrixXd info_inv =
        beta_information_inverse(result.model_rows, result.fh.sigma_u2_hat);
    const double avar = avar_sigma_u(result.fh, result.model_rows);

    for (std::size_t i = 0; i < result.model_rows.size(); ++i) {
        ResultRow row;
        row.area_id = result.model_rows[i].area_id;
        row.sample_size = result.directs[i].sample_size;
        row.direct = result.directs[i].estimate;
        row.direct_cv = result.directs[i].cv;
        row.sigma_d2_gvf = result.model_rows[i].error_variance;
        row.degenerate_variance = result.directs[i].degenerate_variance;
        row.prediction = predict_area(result.fh, result.model_rows[i], info_inv, avar);
        result.rows.push_back(std::move(row));
    }

    // Covariate-only areas get synthetic predictions.
    std::set<std::string> sampled;
    for (const auto& a : result.directs) {
        sampled.insert(a.area_id);
    }
    for (const auto& [id, vals] : cov.values) {
        if (sampled.count(id)) {
            continue;
        }
        std::vector<double> x{1.0};
        for (std::size_t j : fh_idx) {
            x.push_back(vals[j]);
        }
        ResultRow row;
        row.area_id = id;
        row.prediction = predict_unsampled(result.fh, x, info_inv, id);
        result.rows.push_back(std::move(row));
    }
    return result;
}

void write_outputs(const PipelineResult& result, const std::filesystem::path& out_dir) {
    AtomicWriter writer(out_dir);
    writer.add("results.csv", results_csv(result));
    writer.add("model.txt", model_txt(result));
    add_diagnostics_files(result, writer);
    writer.commit();
}

void write_diagnostics(const PipelineResult& result,
                       const std::filesystem::path& out_dir) {
    AtomicWriter writer(out_dir);
    add_diagnostics_files(result, writer);
    writer.commit();
}

void write_model_file(const PipelineResult& result, const std::filesystem::path& path) {
    AtomicWriter writer(path.parent_path());
    writer.add(path.filename().string(), model_txt(result));
    writer.commit();
}

}  // namespace sae
