// Command-line front end: direct estimation, GVF smoothing, Fay-Herriot
// fitting, prediction, simulation studies and diagnostics export.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "sae/csv.hpp"
#include "sae/pipeline.hpp"
#include "sae/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliOptions {
    std::string units;
    std::string areas;
    std::string out = "sae_out";
    std::string delta = "auto";
    std::string bias_correction = "off";
    std::string config;
    std::uint64_t seed = 0;
    bool strict = false;
};

void add_common_flags(CLI::App* cmd, CliOptions& opt) {
    cmd->add_option("--units", opt.units, "Unit-level CSV (area_id,weight,y)");
    cmd->add_option("--areas", opt.areas, "Area covariate CSV (area_id,x1,...)");
    cmd->add_option("--delta", opt.delta, "GVF offset: 'auto' or a value >= 0");
    cmd->add_option("--bias-correction", opt.bias_correction,
                    "Log-normal correction: on|off");
    cmd->add_option("--out", opt.out, "Output directory");
    cmd->add_option("--seed", opt.seed, "Random seed (simulate only)");
    cmd->add_option("--config", opt.config, "JSON config overriding flags");
    cmd->add_flag("--strict", opt.strict, "Exit 2 on numerical non-convergence");
}

sae::PipelineConfig build_config(const CliOptions& opt) {
    sae::PipelineConfig cfg;
    cfg.units_path = opt.units;
    cfg.areas_path = opt.areas;
    cfg.out_dir = opt.out;
    cfg.strict = opt.strict;
    cfg.seed = opt.seed;
    cfg.bias_correction = opt.bias_correction == "on";
    if (opt.delta != "auto") {
        cfg.delta = sae::csv::parse_double(opt.delta, 0, "--delta");
        if (cfg.delta < 0.0) {
            throw sae::ValidationError("--delta must be 'auto' or nonnegative");
        }
    }

    if (!opt.config.empty()) {
        std::ifstream in(opt.config);
        if (!in) {
            throw sae::ValidationError("cannot open config: " + opt.config);
        }
        json j = json::parse(in);
        if (j.contains("units")) cfg.units_path = j["units"].get<std::string>();
        if (j.contains("areas")) cfg.areas_path = j["areas"].get<std::string>();
        if (j.contains("out")) cfg.out_dir = j["out"].get<std::string>();
        if (j.contains("strict")) cfg.strict = j["strict"].get<bool>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("bias_correction"))
            cfg.bias_correction = j["bias_correction"].get<bool>();
        if (j.contains("delta")) {
            if (j["delta"].is_string()) {
                if (j["delta"] != "auto") {
                    throw sae::ValidationError("config delta must be 'auto' or a number");
                }
                cfg.delta = -1.0;
            } else {
                cfg.delta = j["delta"].get<double>();
            }
        }
        if (j.contains("fh_columns"))
            cfg.fh_columns = j["fh_columns"].get<std::vector<std::string>>();
        if (j.contains("gvf_candidates"))
            cfg.gvf_candidates =
                j["gvf_candidates"].get<std::vector<std::vector<std::string>>>();
        if (j.contains("variance_overrides")) {
            for (auto& [k, v] : j["variance_overrides"].items()) {
                cfg.variance_overrides[k] = v.get<double>();
            }
        }
    }
    if (cfg.units_path.empty()) {
        throw sae::ValidationError("--units is required");
    }
    return cfg;
}

void write_text(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.close();
    if (!out) {
        throw sae::ValidationError("cannot write " + path.string());
    }
    fs::rename(tmp, path);
}

int cmd_direct(const CliOptions& opt) {
    const auto units = sae::ingest_units(opt.units);
    const auto table = sae::direct_table(units);
    std::ostringstream out;
    out << "area_id,n_d,estimate,design_variance,pop_size_hat,cv,degenerate_variance\n";
    for (const auto& a : table) {
        out << a.area_id << ',' << a.sample_size << ','
            << sae::csv::format_double(a.estimate) << ','
            << sae::csv::format_double(a.design_variance) << ','
            << sae::csv::format_double(a.pop_size_hat) << ','
            << (a.cv ? sae::csv::format_double(*a.cv) : std::string("NA")) << ','
            << (a.degenerate_variance ? "1" : "0") << '\n';
    }
    write_text(fs::path(opt.out) / "direct_table.csv", out.str());
    std::cout << table.size() << " areas written to " << opt.out << "/direct_table.csv\n";
    return 0;
}

int cmd_gvf(const CliOptions& opt) {
    const auto units = sae::ingest_units(opt.units);
    const auto table = sae::direct_table(units);
    const double delta = opt.delta == "auto"
                             ? sae::default_delta(table)
                             : sae::csv::parse_double(opt.delta, 0, "--delta");
    const sae::GVFFit fit =
        sae::fit_gvf(table, delta, sae::full_gvf_design(), opt.bias_correction == "on");

    std::ostringstream out;
    out << "format: sae-gvf 1\n";
    out << "delta: " << sae::csv::format_double(delta) << "\n";
    for (std::size_t j = 0; j < fit.coefficients.size(); ++j) {
        out << "coef_" << fit.design_labels[j] << ": "
            << sae::csv::format_double(fit.coefficients[j]) << " (se "
            << sae::csv::format_double(fit.coef_std_errors[j]) << ")\n";
    }
    out << "residual_variance: " << sae::csv::format_double(fit.residual_variance) << "\n";
    out << "aic: " << sae::csv::format_double(fit.aic) << "\n";
    write_text(fs::path(opt.out) / "gvf_fit.txt", out.str());

    std::ostringstream smoothed;
    smoothed << "area_id,design_variance,sigma_d2_gvf\n";
    for (const auto& a : table) {
        const double pred = sae::predict_variance(
            fit, sae::build_design_row(a.estimate, a.sample_size));
        smoothed << a.area_id << ',' << sae::csv::format_double(a.design_variance) << ','
                 << sae::csv::format_double(pred) << '\n';
    }
    write_text(fs::path(opt.out) / "smoothed_variances.csv", smoothed.str());
    std::cout << "GVF fit written to " << opt.out << "/gvf_fit.txt\n";
    return 0;
}

int cmd_fit(const CliOptions& opt) {
    const sae::PipelineConfig cfg = build_config(opt);
    const sae::PipelineResult result = sae::run_pipeline(cfg);
    sae::write_model_file(result, fs::path(cfg.out_dir) / "model.txt");
    std::cout << "model written to " << (fs::path(cfg.out_dir) / "model.txt").string()
              << "\n";
    return 0;
}

int cmd_predict(const CliOptions& opt) {
    const sae::PipelineConfig cfg = build_config(opt);
    const sae::PipelineResult result = sae::run_pipeline(cfg);
    for (const auto& w : result.warnings) {
        std::cerr << "warning: " << w << "\n";
    }
    sae::write_outputs(result, cfg.out_dir);
    std::cout << result.rows.size() << " areas written to " << cfg.out_dir
              << "/results.csv\n";
    return 0;
}

int cmd_report(const CliOptions& opt) {
    const sae::PipelineConfig cfg = build_config(opt);
    const sae::PipelineResult result = sae::run_pipeline(cfg);
    sae::write_diagnostics(result, cfg.out_dir);
    std::cout << "diagnostics written to " << cfg.out_dir << "\n";
    return 0;
}

sae::StudyConfig parse_study_config(const std::string& path, std::uint64_t cli_seed) {
    std::ifstream in(path);
    if (!in) {
        throw sae::ValidationError("cannot open config: " + path);
    }
    json j = json::parse(in);
    sae::StudyConfig cfg;
    cfg.population.num_areas = j.at("num_areas").get<std::size_t>();
    cfg.population.beta = j.at("beta").get<std::vector<double>>();
    cfg.population.sigma_u2 = j.at("sigma_u2").get<double>();
    cfg.population.seed = j.value("seed", cli_seed);

    const json& law = j.at("size_law");
    const std::string kind = law.at("kind").get<std::string>();
    if (kind == "fixed") {
        cfg.population.size_law.kind = sae::SizeLaw::Kind::Fixed;
        cfg.population.size_law.fixed = law.at("value").get<std::size_t>();
    } else if (kind == "uniform") {
        cfg.population.size_law.kind = sae::SizeLaw::Kind::UniformInt;
        cfg.population.size_law.lo = law.at("lo").get<std::size_t>();
        cfg.population.size_law.hi = law.at("hi").get<std::size_t>();
    } else if (kind == "explicit") {
        cfg.population.size_law.kind = sae::SizeLaw::Kind::Explicit;
        cfg.population.size_law.sizes = law.at("sizes").get<std::vector<std::size_t>>();
    } else {
        throw sae::ValidationError("unknown size law: " + kind);
    }

    const json& design = j.at("design");
    const std::string dk = design.at("kind").get<std::string>();
    if (dk == "srs") {
        cfg.design.kind = sae::SampleDesign::Kind::SimpleRandom;
    } else if (dk == "stratified") {
        cfg.design.kind = sae::SampleDesign::Kind::WeightStratified;
    } else {
        throw sae::ValidationError("unknown sample design: " + dk);
    }
    cfg.design.sample_sizes = design.at("sample_sizes").get<std::vector<std::size_t>>();
    cfg.design.seed = design.value("seed", cfg.population.seed + 1);

    cfg.replicates = j.value("replicates", std::size_t{1});
    if (j.contains("delta") && j["delta"].is_number()) {
        cfg.delta = j["delta"].get<double>();
    }
    cfg.redraw_population = j.value("redraw_population", true);
    return cfg;
}

int cmd_simulate(const CliOptions& opt) {
    if (opt.config.empty()) {
        throw sae::ValidationError("simulate requires --config");
    }
    const sae::StudyConfig cfg = parse_study_config(opt.config, opt.seed);
    const sae::StudyReport report = sae::run_study(cfg);

    std::ostringstream out;
    out << "area_id,n_d,mean_truth,direct_bias,eblup_bias,direct_emp_mse,"
           "eblup_emp_mse,mean_pr_mse,mean_direct_cv,mean_eblup_cv,"
           "frac_eblup_cv_lower\n";
    for (const auto& a : report.areas) {
        out << a.area_id << ',' << a.sample_size << ','
            << sae::csv::format_double(a.mean_truth) << ','
            << sae::csv::format_double(a.direct_bias) << ','
            << sae::csv::format_double(a.eblup_bias) << ','
            << sae::csv::format_double(a.direct_emp_mse) << ','
            << sae::csv::format_double(a.eblup_emp_mse) << ','
            << sae::csv::format_double(a.mean_pr_mse) << ','
            << sae::csv::format_double(a.mean_direct_cv) << ','
            << sae::csv::format_double(a.mean_eblup_cv) << ','
            << sae::csv::format_double(a.frac_eblup_cv_lower) << '\n';
    }
    write_text(fs::path(opt.out) / "study_report.csv", out.str());

    std::ostringstream summary;
    summary << "replicates: " << report.replicates << "\n"
            << "failed_replicates: " << report.failed_replicates << "\n"
            << "mean_sigma_u2_hat: " << sae::csv::format_double(report.mean_sigma_u2_hat)
            << "\n"
            << "frac_eblup_cv_lower_overall: "
            << sae::csv::format_double(report.frac_eblup_cv_lower_overall) << "\n";
    write_text(fs::path(opt.out) / "study_summary.txt", summary.str());
    std::cout << summary.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Small-area prevalence estimation (direct / GVF / Fay-Herriot)"};
    app.require_subcommand(1);

    CliOptions opt;
    auto* direct = app.add_subcommand("direct", "Per-area direct estimates");
    auto* gvf = app.add_subcommand("gvf", "Fit the variance-smoothing model");
    auto* fit = app.add_subcommand("fit", "Fit the full model, write model file");
    auto* predict = app.add_subcommand("predict", "Full pipeline with results and diagnostics");
    auto* simulate = app.add_subcommand("simulate", "Monte-Carlo study from a config file");
    auto* report = app.add_subcommand("report", "Diagnostics CSV bundle only");
    for (auto* cmd : {direct, gvf, fit, predict, simulate, report}) {
        add_common_flags(cmd, opt);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (direct->parsed()) return cmd_direct(opt);
        if (gvf->parsed()) return cmd_gvf(opt);
        if (fit->parsed()) return cmd_fit(opt);
        if (predict->parsed()) return cmd_predict(opt);
        if (simulate->parsed()) return cmd_simulate(opt);
        if (report->parsed()) return cmd_report(opt);
    } catch (const sae::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
