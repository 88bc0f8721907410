#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cdml/dml.hpp"
#include "cdml/parallel.hpp"
#include "cdml/simulation/dgp.hpp"

namespace cdml::simulation {

/// Default Brier-selection candidates; isotonic is left out.
inline std::vector<Calibrator> default_brier_candidates() {
    return {Calibrator::platt, Calibrator::beta, Calibrator::venn_abers, Calibrator::temperature, Calibrator::ec};
}

struct BrierSelection {
    Calibrator chosen = Calibrator::none;
    AteResult result;
    std::vector<double> brier;  // per candidate
};

/// Calibrates the shared cross-fit with each candidate, keeps the one with the
/// lowest Brier score (first wins ties) and returns its estimate.
inline BrierSelection select_by_brier(const Dataset& data, const CrossFit& cf, const EstimationConfig& config,
                                      const std::vector<Calibrator>& candidates,
                                      std::span<const double> true_propensity = {}) {
    if (candidates.empty()) throw Error("select_by_brier: no candidates");
    BrierSelection out;
    Index best = 0;
    for (Index c = 0; c < candidates.size(); ++c) {
        // Reweighting leaves the propensities untouched, so it scores like plain DML.
        const double score =
            calibration::brier_score(calibrate_cross_fit(data, cf, candidates[c], config).pi, data.treatment);
        out.brier.push_back(score);
        if (score < out.brier[best]) best = c;
    }
    out.chosen = candidates[best];
    EstimationConfig chosen = config;
    chosen.calibrator = out.chosen;
    out.result = estimate_from_cross_fit(data, cf, chosen, true_propensity);
    out.result.diagnostics["selected_calibrator"] = static_cast<double>(out.chosen);
    return out;
}

inline BrierSelection select_by_brier(const Dataset& data, const EstimationConfig& config,
                                      const std::vector<Calibrator>& candidates = default_brier_candidates(),
                                      std::span<const double> true_propensity = {}) {
    return select_by_brier(data, cross_fit(data, config), config, candidates, true_propensity);
}

enum class MethodKind { oracle, estimator, brier_select };

struct StudyMethod {
    std::string label;
    MethodKind kind = MethodKind::estimator;
    EstimationConfig config;
    std::vector<Calibrator> candidates;  // brier_select only

    static StudyMethod oracle(std::string label = "oracle") {
        StudyMethod m;
        m.label = std::move(label);
        m.kind = MethodKind::oracle;
        return m;
    }
    static StudyMethod estimator(std::string label, EstimationConfig config) {
        return {std::move(label), MethodKind::estimator, std::move(config), {}};
    }
    static StudyMethod brier(std::string label, EstimationConfig config,
                             std::vector<Calibrator> candidates = default_brier_candidates()) {
        return {std::move(label), MethodKind::brier_select, std::move(config), std::move(candidates)};
    }
};

struct MethodRecord {
    std::vector<double> theta;
    std::vector<double> se;
    std::vector<int> covered;
    std::vector<double> brier;
    std::vector<double> cal_error;
    std::vector<int> failed;
    std::vector<std::string> errors;  // empty when the replication succeeded
};

struct SummaryRow {
    std::string method;
    double rmse = 0.0;
    double bias = 0.0;
    double std_dev = 0.0;
    double coverage = 0.0;
    double mean_brier = 0.0;
    double mean_cal_error = 0.0;
    Index replications = 0;
    Index failures = 0;
};

struct ReplicationReport {
    int dgp = 0;
    Index n = 0;
    double true_ate = kTrueAte;
    std::vector<std::string> methods;
    std::vector<MethodRecord> records;

    /// Population moments over successful replications, so rmse^2 = bias^2 + std_dev^2.
    std::vector<SummaryRow> summary() const {
        std::vector<SummaryRow> rows;
        for (Index m = 0; m < methods.size(); ++m) {
            const MethodRecord& rec = records[m];
            SummaryRow row;
            row.method = methods[m];
            double sum = 0.0, sum_brier = 0.0, sum_cal = 0.0;
            Index covered = 0, ok = 0;
            for (Index r = 0; r < rec.theta.size(); ++r) {
                if (rec.failed[r]) {
                    ++row.failures;
                    continue;
                }
                ++ok;
                sum += rec.theta[r];
                sum_brier += rec.brier[r];
                sum_cal += rec.cal_error[r];
                covered += static_cast<Index>(rec.covered[r]);
            }
            row.replications = ok;
            if (ok == 0) {
                const double nan = std::numeric_limits<double>::quiet_NaN();
                row.rmse = row.bias = row.std_dev = row.coverage = row.mean_brier = row.mean_cal_error = nan;
                rows.push_back(row);
                continue;
            }
            const double k = static_cast<double>(ok);
            const double mean_theta = sum / k;
            double ss = 0.0, se2 = 0.0;
            for (Index r = 0; r < rec.theta.size(); ++r) {
                if (rec.failed[r]) continue;
                ss += (rec.theta[r] - mean_theta) * (rec.theta[r] - mean_theta);
                se2 += (rec.theta[r] - true_ate) * (rec.theta[r] - true_ate);
            }
            row.bias = mean_theta - true_ate;
            row.std_dev = std::sqrt(ss / k);
            row.rmse = std::sqrt(se2 / k);
            row.coverage = static_cast<double>(covered) / k;
            row.mean_brier = sum_brier / k;
            row.mean_cal_error = sum_cal / k;
            rows.push_back(row);
        }
        return rows;
    }
};

inline std::uint64_t replication_seed(std::uint64_t seed, Index rep) {
    return derive_seed(seed, Stream::study, {rep});
}

namespace detail {

/// Methods whose learners and folds agree share one cross-fit per replication.
inline std::string cross_fit_key(const EstimationConfig& c) {
    return fmt::format("{}|{}|{}|{}|{}", c.k_folds, c.j_subfolds, c.outcome_learner.describe(),
                       c.control_learner().describe(), c.propensity_learner.describe());
}

struct RepOutcome {
    double theta = 0.0, se = 0.0, brier = 0.0, cal_error = 0.0;
    int covered = 0;
    int failed = 0;
    std::string error;
};

inline RepOutcome summarize(const AteResult& r, double true_ate) {
    RepOutcome o;
    o.theta = r.theta_hat;
    o.se = r.se;
    o.covered = r.ci_low <= true_ate && true_ate <= r.ci_high;
    const auto get = [&](const char* key) {
        const auto it = r.diagnostics.find(key);
        return it == r.diagnostics.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
    };
    o.brier = get("brier");
    o.cal_error = get("cal_error");
    return o;
}

} // namespace detail

/// Every method is run on the same fresh sample in each replication. All
/// randomness derives from (dgp.seed, replication); method configs' own seeds
/// are replaced by the replication's learner seed.
inline ReplicationReport run_study(const DgpSpec& dgp, const std::vector<StudyMethod>& methods, Index r,
                                   Index workers = 1) {
    if (r < 1) throw Error("run_study: need at least one replication");
    if (methods.empty()) throw Error("run_study: no methods");
    ReplicationReport report;
    report.dgp = dgp.id();
    report.n = dgp.n;
    for (const auto& m : methods) report.methods.push_back(m.label);

    std::vector<std::vector<detail::RepOutcome>> grid(r, std::vector<detail::RepOutcome>(methods.size()));
    parallel_for(r, workers, [&](Index rep) {
        const std::uint64_t rep_seed = replication_seed(dgp.seed, rep);
        DgpSpec spec = dgp;
        spec.seed = rep_seed;
        const SimulatedSample sample = generate(spec);
        const Dataset& data = sample.dataset;
        const std::uint64_t est_seed = derive_seed(rep_seed, Stream::learners);

        std::map<std::string, std::pair<CrossFit, std::string>> fits;
        for (Index m = 0; m < methods.size(); ++m) {
            const StudyMethod& method = methods[m];
            auto& out = grid[rep][m];
            try {
                if (method.kind == MethodKind::oracle) {
                    out = detail::summarize(estimate_with_oracle_nuisances(data, sample.mu1, sample.mu0,
                                                                           sample.true_propensity),
                                            sample.true_ate);
                    continue;
                }
                EstimationConfig config = method.config;
                config.seed = est_seed;
                config.workers = 1;
                const std::string key = detail::cross_fit_key(config);
                auto it = fits.find(key);
                if (it == fits.end()) {
                    std::pair<CrossFit, std::string> entry;
                    try {
                        entry.first = cross_fit(data, config);
                    } catch (const std::exception& e) {
                        entry.second = e.what();
                    }
                    it = fits.emplace(key, std::move(entry)).first;
                }
                if (!it->second.second.empty()) throw Error(it->second.second);
                const CrossFit& cf = it->second.first;
                const AteResult res =
                    method.kind == MethodKind::brier_select
                        ? select_by_brier(data, cf, config, method.candidates, sample.true_propensity).result
                        : estimate_from_cross_fit(data, cf, config, sample.true_propensity);
                out = detail::summarize(res, sample.true_ate);
            } catch (const std::exception& e) {
                out = {};
                out.failed = 1;
                out.error = e.what();
            }
        }
    });

    report.records.resize(methods.size());
    for (Index m = 0; m < methods.size(); ++m) {
        MethodRecord& rec = report.records[m];
        for (Index rep = 0; rep < r; ++rep) {
            const auto& o = grid[rep][m];
            rec.theta.push_back(o.failed ? std::numeric_limits<double>::quiet_NaN() : o.theta);
            rec.se.push_back(o.se);
            rec.covered.push_back(o.covered);
            rec.brier.push_back(o.brier);
            rec.cal_error.push_back(o.cal_error);
            rec.failed.push_back(o.failed);
            rec.errors.push_back(o.error);
        }
    }
    return report;
}

} // namespace cdml::simulation
