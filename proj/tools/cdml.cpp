#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cdml/cdml.hpp"

namespace {

using namespace cdml;
using learners::LearnerKind;
using learners::LearnerSpec;
using learners::Task;

using KeyValues = std::map<std::string, std::string>;

std::string trimmed(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw Error(fmt::format("expected key=value, got '{}'", text));
    return {trimmed(text.substr(0, eq)), trimmed(text.substr(eq + 1))};
}

/// key=value lines; '#' starts a comment.
KeyValues read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open config '{}'", path));
    KeyValues kv;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trimmed(line).empty()) continue;
        auto [k, v] = split_assignment(line);
        kv[k] = v;
    }
    return kv;
}

double to_double(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw Error(fmt::format("{}: '{}' is not a number", what, s));
    return v;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trimmed(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

/// Options shared by every subcommand. Values given on the command line win
/// over the config file.
struct Common {
    std::string config_path;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    std::string out;
    std::string format = "csv";
    std::string learner = "rf";
    std::size_t k = 5;
    std::size_t j = 2;
    std::vector<std::string> outcome_params;
    std::vector<std::string> control_params;
    std::vector<std::string> propensity_params;
    KeyValues config;

    void add(CLI::App* app) {
        app->add_option("--config", config_path, "key=value file; command-line flags take precedence");
        app->add_option("--seed", seed, "seed for all randomness");
        app->add_option("--workers", workers, "worker threads (results do not depend on this)");
        app->add_option("--out", out, "output path (default stdout)");
        app->add_option("--format", format, "csv or md")->check(CLI::IsMember({"csv", "md", "markdown"}));
        app->add_option("--learner", learner, "rf, gb or lasso")->check(CLI::IsMember({"rf", "gb", "lasso"}));
        app->add_option("--k", k, "outer cross-fitting folds");
        app->add_option("--j", j, "calibration sub-folds per fold");
        app->add_option("--outcome-param", outcome_params, "outcome learner hyperparameter name=value");
        app->add_option("--control-param", control_params, "control-outcome learner hyperparameter name=value");
        app->add_option("--propensity-param", propensity_params, "propensity learner hyperparameter name=value");
    }

    /// Fills options not given on the command line from the config file.
    void load(CLI::App* app) {
        if (config_path.empty()) return;
        config = read_config(config_path);
        for (const auto& [key, value] : config) {
            const auto dot = key.find('.');
            if (dot != std::string::npos) {
                const std::string group = key.substr(0, dot);
                if (group != "outcome" && group != "control" && group != "propensity")
                    throw Error(fmt::format("unknown config key '{}'", key));
                continue;
            }
            CLI::Option* opt = app->get_option_no_throw("--" + key);
            if (!opt) throw Error(fmt::format("unknown config key '{}'", key));
            if (opt->count() == 0) {
                opt->clear();
                opt->add_result(opt->get_expected_max() > 1 ? split_list(value) : std::vector<std::string>{value});
                opt->run_callback();
            }
        }
    }

    std::vector<std::pair<std::string, double>> params(const std::string& group,
                                                        const std::vector<std::string>& flags) const {
        std::map<std::string, double> merged;
        const std::string prefix = group + ".";
        for (const auto& [key, value] : config)
            if (key.rfind(prefix, 0) == 0) merged[key.substr(prefix.size())] = to_double(value, key);
        for (const auto& f : flags) {
            auto [k, v] = split_assignment(f);
            merged[k] = to_double(v, group + " parameter " + k);
        }
        return {merged.begin(), merged.end()};
    }

    EstimationConfig estimation() const {
        const LearnerKind kind = learners::parse_learner_kind(learner);
        EstimationConfig c;
        c.k_folds = k;
        c.j_subfolds = j;
        c.seed = seed;
        c.workers = workers;
        c.outcome_learner = LearnerSpec{kind, Task::regression, {}, 0};
        c.propensity_learner = LearnerSpec{kind, Task::classification, {}, 0};
        for (const auto& [name, v] : params("outcome", outcome_params))
            c.outcome_learner = c.outcome_learner.with(name, v);
        for (const auto& [name, v] : params("propensity", propensity_params))
            c.propensity_learner = c.propensity_learner.with(name, v);
        const auto control = params("control", control_params);
        if (!control.empty()) {
            LearnerSpec spec = c.outcome_learner;
            for (const auto& [name, v] : control) spec = spec.with(name, v);
            c.control_outcome_learner = spec;
        }
        return c;
    }

    void emit(const report::Table& table) const {
        const auto fmt_kind = report::parse_format(format);
        if (out.empty()) {
            table.write(std::cout, fmt_kind);
            return;
        }
        std::ofstream os(out);
        if (!os) throw Error(fmt::format("cannot write '{}'", out));
        table.write(os, fmt_kind);
    }
};

const std::vector<std::string> kDefaultMethods = {"oracle", "none",        "reweight", "platt", "beta",
                                                  "isotonic", "venn-abers", "temperature", "ec", "brier"};

int run_simulate(const Common& common, int dgp, std::size_t n, std::size_t reps, bool full,
                 const std::vector<std::string>& method_names) {
    if (full && reps == 0) reps = 1000;
    if (reps == 0) reps = 100;
    const auto spec = simulation::DgpSpec::from_id(dgp, n, common.seed);
    const EstimationConfig base = common.estimation();
    std::vector<simulation::StudyMethod> methods;
    for (const auto& name : method_names) {
        if (name == "oracle") {
            methods.push_back(simulation::StudyMethod::oracle());
        } else if (name == "brier") {
            methods.push_back(simulation::StudyMethod::brier("brier", base));
        } else {
            EstimationConfig c = base;
            c.calibrator = parse_calibrator(name);
            methods.push_back(simulation::StudyMethod::estimator(std::string(to_string(c.calibrator)), c));
        }
    }
    const auto report = simulation::run_study(spec, methods, reps, common.workers);
    common.emit(report::simulation_table(report));
    return 0;
}

/// Nested stratified sub-samples: within each treatment group the rows are
/// shuffled once, and a fraction f keeps the first round(f * group size).
std::vector<IndexList> nested_subsamples(const Dataset& data, const std::vector<double>& fractions,
                                         std::uint64_t seed) {
    IndexList groups[2];
    for (Index i = 0; i < data.size(); ++i) groups[data.treatment[i]].push_back(i);
    for (int g = 0; g < 2; ++g) {
        Rng rng(derive_seed(seed, Stream::subsample, {static_cast<std::uint64_t>(g)}));
        std::shuffle(groups[g].begin(), groups[g].end(), rng);
    }
    std::vector<IndexList> out;
    for (double f : fractions) {
        IndexList rows;
        for (const auto& group : groups) {
            const auto take = static_cast<Index>(std::llround(f * static_cast<double>(group.size())));
            rows.insert(rows.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(take));
        }
        std::sort(rows.begin(), rows.end());
        out.push_back(std::move(rows));
    }
    return out;
}

int run_estimate(const Common& common, const std::string& data_path, const std::string& treatment_col,
                 const std::string& outcome_col, std::vector<double> fractions,
                 const std::vector<std::string>& method_names) {
    if (fractions.empty()) fractions = {1.0};
    for (Index i = 0; i < fractions.size(); ++i) {
        if (!(fractions[i] > 0.0 && fractions[i] <= 1.0)) throw Error("fractions must lie in (0, 1]");
        if (i > 0 && !(fractions[i] > fractions[i - 1])) throw Error("fractions must be strictly increasing");
    }
    const Dataset data = csv::read_dataset(data_path, treatment_col, outcome_col);
    const EstimationConfig base = common.estimation();
    const auto samples = nested_subsamples(data, fractions, common.seed);
    std::vector<report::EstimateRow> rows;
    for (Index s = 0; s < samples.size(); ++s) {
        const Dataset sub = data.subset(samples[s]);
        const CrossFit cf = cross_fit(sub, base);
        for (const auto& name : method_names) {
            AteResult r;
            std::string label = name;
            if (name == "brier") {
                const auto sel = simulation::select_by_brier(sub, cf, base, simulation::default_brier_candidates());
                r = sel.result;
                label = fmt::format("brier:{}", to_string(sel.chosen));
            } else {
                EstimationConfig c = base;
                c.calibrator = parse_calibrator(name);
                label = std::string(to_string(c.calibrator));
                r = estimate_from_cross_fit(sub, cf, c);
            }
            rows.push_back({label, fractions[s], r.theta_hat, r.se, r.diagnostics.at("brier")});
        }
    }
    common.emit(report::estimate_table(rows));
    return 0;
}

/// Grid file: one line per hyperparameter, name=v1,v2,...
std::vector<std::pair<std::string, std::vector<double>>> read_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open grid '{}'", path));
    std::vector<std::pair<std::string, std::vector<double>>> axes;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trimmed(line).empty()) continue;
        auto [name, values] = split_assignment(line);
        std::vector<double> vs;
        for (const auto& v : split_list(values)) vs.push_back(to_double(v, "grid " + name));
        if (vs.empty()) throw Error(fmt::format("grid '{}' has no values", name));
        axes.emplace_back(name, vs);
    }
    if (axes.empty()) throw Error("grid file is empty");
    return axes;
}

int run_tune(const Common& common, int dgp, std::size_t n, std::size_t tuning_reps, std::size_t cv_folds,
             const std::string& grid_path, const std::string& metric_name, const std::string& nuisance) {
    const LearnerKind kind = learners::parse_learner_kind(common.learner);
    const auto axes = grid_path.empty() ? learners::default_grid_axes(kind) : read_grid(grid_path);
    const auto metric = learners::parse_cv_metric(metric_name);

    std::vector<simulation::SimulatedSample> samples;
    for (Index r = 0; r < tuning_reps; ++r)
        samples.push_back(simulation::generate(
            simulation::DgpSpec::from_id(dgp, n, derive_seed(common.seed, Stream::tuning, {r, 0xD47A}))));

    // group: -1 all rows (propensity), 1 treated, 0 control.
    auto tune_role = [&](const std::string& role, Task task, int group) {
        std::vector<learners::TuningSample> reps;
        for (const auto& s : samples) {
            IndexList rows;
            for (Index i = 0; i < s.dataset.size(); ++i)
                if (group < 0 || s.dataset.treatment[i] == group) rows.push_back(i);
            Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
            for (Index i = 0; i < rows.size(); ++i)
                y[static_cast<Eigen::Index>(i)] = task == Task::classification
                                                       ? s.dataset.treatment[rows[i]]
                                                       : s.dataset.outcome[static_cast<Eigen::Index>(rows[i])];
            reps.push_back({select_rows(s.dataset.covariates, rows), y});
        }
        const auto grid = learners::make_grid(kind, task, axes);
        const auto result = learners::tune(grid, reps, cv_folds, derive_seed(common.seed, {static_cast<std::uint64_t>(group + 1)}),
                                           metric, common.workers);
        std::string out = fmt::format("# {}: {} of {} replications, mean CV loss {:.6f}\n", role,
                                      result.wins[result.selected_index], reps.size(),
                                      result.mean_cv_loss[result.selected_index]);
        for (const auto& [name, value] : result.selected.hyperparameters) out += fmt::format("{}.{}={}\n", role, name, value);
        return out;
    };

    std::string snippet = fmt::format("# tuned on DGP {}, n={}, metric {}\nlearner={}\n", dgp, n,
                                      to_string(metric), common.learner);
    if (nuisance == "all" || nuisance == "outcome") snippet += tune_role("outcome", Task::regression, 1);
    if (nuisance == "all" || nuisance == "control") snippet += tune_role("control", Task::regression, 0);
    if (nuisance == "all" || nuisance == "propensity") snippet += tune_role("propensity", Task::classification, -1);
    if (common.out.empty()) {
        std::cout << snippet;
    } else {
        std::ofstream os(common.out);
        if (!os) throw Error(fmt::format("cannot write '{}'", common.out));
        os << snippet;
    }
    return 0;
}

int run_overlap(const Common& common, int dgp, std::size_t n, std::size_t bins, const std::string& data_path,
                const std::string& treatment_col, const std::string& propensity_col) {
    std::vector<double> p;
    std::vector<int> d;
    if (!data_path.empty()) {
        // The propensity column is read in the outcome slot.
        const Dataset data = csv::read_dataset(data_path, treatment_col, propensity_col);
        p.assign(data.outcome.data(), data.outcome.data() + data.outcome.size());
        d = data.treatment;
    } else {
        const auto s = simulation::generate(simulation::DgpSpec::from_id(dgp, n, common.seed));
        p = s.true_propensity;
        d = s.dataset.treatment;
    }
    common.emit(report::overlap_table(simulation::overlap_report(p, d, bins)));
    return 0;
}

int run_generate(const Common& common, int dgp, std::size_t n, const std::string& treatment_col,
                 const std::string& outcome_col) {
    const auto s = simulation::generate(simulation::DgpSpec::from_id(dgp, n, common.seed));
    if (common.out.empty()) {
        csv::write_dataset(std::cout, s.dataset, treatment_col, outcome_col);
    } else {
        csv::write_dataset(common.out, s.dataset, treatment_col, outcome_col);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Calibrated double machine learning for the average treatment effect"};
    app.require_subcommand(1);

    Common common;
    int dgp = 1;
    std::size_t n = 2000;
    std::size_t reps = 0;
    bool full = false;
    std::vector<std::string> methods;
    std::string data_path;
    std::string treatment_col = "d";
    std::string outcome_col = "y";
    std::vector<double> fractions;
    std::size_t tuning_reps = 20;
    std::size_t cv_folds = 5;
    std::string grid_path;
    std::string metric = "auto";
    std::string nuisance = "all";
    std::size_t bins = 50;
    std::string propensity_col = "p";

    auto add_dgp = [&](CLI::App* sub) {
        sub->add_option("--dgp", dgp, "data generating process 1-6")->check(CLI::Range(1, 6));
        sub->add_option("--n", n, "sample size")->check(CLI::PositiveNumber);
    };
    auto add_methods = [&](CLI::App* sub) {
        sub->add_option("--calibrator", methods,
                        "methods: oracle, none, reweight, platt, beta, isotonic, venn-abers, temperature, ec, brier")
            ->delimiter(',');
    };

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo study on one DGP");
    common.add(simulate);
    add_dgp(simulate);
    add_methods(simulate);
    simulate->add_option("--reps", reps, "replications (default 100)");
    simulate->add_flag("--full", full, "full-scale run with 1000 replications");

    auto* estimate = app.add_subcommand("estimate", "ATE on a CSV file, optionally on nested sub-samples");
    common.add(estimate);
    add_methods(estimate);
    estimate->add_option("--data", data_path, "input CSV")->required();
    estimate->add_option("--treatment-col", treatment_col, "treatment column (0/1)");
    estimate->add_option("--outcome-col", outcome_col, "outcome column");
    estimate->add_option("--fractions", fractions, "increasing sub-sample fractions in (0, 1]")->delimiter(',');

    auto* tune = app.add_subcommand("tune", "grid-search learner hyperparameters on DGP samples");
    common.add(tune);
    add_dgp(tune);
    tune->add_option("--tuning-reps", tuning_reps, "tuning replications")->check(CLI::PositiveNumber);
    tune->add_option("--cv-folds", cv_folds, "cross-validation folds")->check(CLI::Range(2, 1000));
    tune->add_option("--grid", grid_path, "grid file, lines of name=v1,v2,...");
    tune->add_option("--metric", metric, "auto, mse, log-loss or error-rate");
    tune->add_option("--nuisance", nuisance, "all, outcome, control or propensity")
        ->check(CLI::IsMember({"all", "outcome", "control", "propensity"}));

    auto* overlap = app.add_subcommand("overlap", "propensity densities by treatment group");
    common.add(overlap);
    add_dgp(overlap);
    overlap->add_option("--bins", bins, "evaluation points over [0, 1]")->check(CLI::Range(2, 100000));
    overlap->add_option("--data", data_path, "CSV with treatment and propensity columns");
    overlap->add_option("--treatment-col", treatment_col, "treatment column (0/1)");
    overlap->add_option("--propensity-col", propensity_col, "propensity column");

    auto* generate = app.add_subcommand("generate", "write a DGP sample as CSV");
    common.add(generate);
    add_dgp(generate);
    generate->add_option("--treatment-col", treatment_col, "treatment column name");
    generate->add_option("--outcome-col", outcome_col, "outcome column name");

    CLI11_PARSE(app, argc, argv);

    try {
        CLI::App* active = app.get_subcommands().front();
        common.load(active);
        if (methods.empty()) {
            methods = kDefaultMethods;
            if (active == estimate) methods.erase(methods.begin());  // no oracle on real data
        }
        if (active == simulate) return run_simulate(common, dgp, n, reps, full, methods);
        if (active == estimate) return run_estimate(common, data_path, treatment_col, outcome_col, fractions, methods);
        if (active == tune) return run_tune(common, dgp, n, tuning_reps, cv_folds, grid_path, metric, nuisance);
        if (active == overlap) return run_overlap(common, dgp, n, bins, data_path, treatment_col, propensity_col);
        if (active == generate) return run_generate(common, dgp, n, treatment_col, outcome_col);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
