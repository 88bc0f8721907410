#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "cdml/calibration/calibrators.hpp"
#include "cdml/calibration/reweight.hpp"
#include "cdml/core.hpp"
#include "cdml/learners/learner.hpp"
#include "cdml/parallel.hpp"
#include "cdml/random.hpp"

namespace cdml {

/// How the cross-fitted propensity enters the score: unchanged (plain DML),
/// through one of the calibrators, or via normalised truncated weights.
enum class Calibrator { none, platt, beta, isotonic, venn_abers, temperature, ec, reweight };

inline constexpr Calibrator kAllCalibrators[] = {Calibrator::none,        Calibrator::reweight, Calibrator::platt,
                                                 Calibrator::beta,        Calibrator::isotonic, Calibrator::venn_abers,
                                                 Calibrator::temperature, Calibrator::ec};

inline std::string_view to_string(Calibrator c) {
    switch (c) {
    case Calibrator::none: return "none";
    case Calibrator::platt: return "platt";
    case Calibrator::beta: return "beta";
    case Calibrator::isotonic: return "isotonic";
    case Calibrator::venn_abers: return "venn-abers";
    case Calibrator::temperature: return "temperature";
    case Calibrator::ec: return "ec";
    case Calibrator::reweight: return "reweight";
    }
    return "?";
}

inline Calibrator parse_calibrator(std::string_view s) {
    if (s == "none" || s == "dml" || s == "identity") return Calibrator::none;
    if (s == "platt") return Calibrator::platt;
    if (s == "beta") return Calibrator::beta;
    if (s == "isotonic") return Calibrator::isotonic;
    if (s == "venn-abers" || s == "venn_abers" || s == "va") return Calibrator::venn_abers;
    if (s == "temperature") return Calibrator::temperature;
    if (s == "ec" || s == "expectation-consistent" || s == "expectation_consistent") return Calibrator::ec;
    if (s == "reweight") return Calibrator::reweight;
    throw Error(fmt::format("unknown calibrator '{}'", s));
}

inline std::optional<calibration::CalibrationMethod> calibration_method(Calibrator c) {
    using M = calibration::CalibrationMethod;
    switch (c) {
    case Calibrator::platt: return M::platt;
    case Calibrator::beta: return M::beta;
    case Calibrator::isotonic: return M::isotonic;
    case Calibrator::venn_abers: return M::venn_abers;
    case Calibrator::temperature: return M::temperature;
    case Calibrator::ec: return M::expectation_consistent;
    case Calibrator::none:
    case Calibrator::reweight: return std::nullopt;
    }
    return std::nullopt;
}

struct NuisanceEstimates {
    std::vector<double> mu1;
    std::vector<double> mu0;
    std::vector<double> propensity_raw;
    std::vector<double> propensity_cal;  // after calibration and the safety clip
};

inline constexpr double kDefaultClip = 1e-12;
inline constexpr int kMaxFoldRedraws = 10;

struct EstimationConfig {
    Index k_folds = 5;
    Index j_subfolds = 2;
    learners::LearnerSpec outcome_learner{learners::LearnerKind::random_forest, learners::Task::regression, {}, 0};
    learners::LearnerSpec propensity_learner{learners::LearnerKind::random_forest, learners::Task::classification, {}, 0};
    /// Separate learner for mu(0, x); falls back to outcome_learner.
    std::optional<learners::LearnerSpec> control_outcome_learner;
    Calibrator calibrator = Calibrator::none;
    std::uint64_t seed = 0;
    double clip = kDefaultClip;
    SeMode se_mode = SeMode::of_mean;
    calibration::CalibratorOptions calibrator_options;
    double trim_threshold = calibration::kDefaultTrimThreshold;
    Index workers = 1;

    const learners::LearnerSpec& control_learner() const {
        return control_outcome_learner ? *control_outcome_learner : outcome_learner;
    }

    void validate() const {
        if (k_folds < 2) throw Error("k_folds must be at least 2");
        if (j_subfolds < 1) throw Error("j_subfolds must be at least 1");
        if (j_subfolds == 1 && calibration_method(calibrator))
            throw Error("a calibrator needs j_subfolds >= 2 so calibration and evaluation sets differ");
        if (!(clip > 0.0 && clip < 0.5)) throw Error("clip must lie in (0, 0.5)");
        if (outcome_learner.task != learners::Task::regression || control_learner().task != learners::Task::regression)
            throw Error("outcome learners must be regression learners");
        if (propensity_learner.task != learners::Task::classification)
            throw Error("propensity learner must be a classification learner");
    }
};

/// Cross-fitted nuisance predictions; calibration happens afterwards so several
/// calibrators can share one set of learner fits.
struct CrossFit {
    FoldPlan plan;
    std::vector<double> mu1;
    std::vector<double> mu0;
    std::vector<double> propensity_raw;
    int attempts = 1;
};

enum class NuisanceRole : std::uint64_t { treated_outcome = 1, control_outcome = 2, propensity = 3 };

inline std::uint64_t learner_seed(std::uint64_t seed, Index fold, NuisanceRole role) {
    return derive_seed(seed, Stream::learners, {fold, static_cast<std::uint64_t>(role)});
}

inline std::uint64_t fold_seed(std::uint64_t seed, int attempt) {
    return derive_seed(seed, Stream::folds, {static_cast<std::uint64_t>(attempt)});
}

inline bool training_splits_have_both_groups(const Dataset& data, const FoldPlan& plan, Index min_per_group) {
    const Index n = data.size();
    const Index treated = data.n_treated();
    for (const auto& fold : plan.outer) {
        Index fold_treated = 0;
        for (Index i : fold) fold_treated += static_cast<Index>(data.treatment[i]);
        const Index train_treated = treated - fold_treated;
        const Index train_control = (n - fold.size()) - train_treated;
        if (train_treated < min_per_group || train_control < min_per_group) return false;
    }
    return true;
}

inline FoldPlan draw_fold_plan(const Dataset& data, const EstimationConfig& config, int* attempts = nullptr) {
    const Index need = std::max<Index>(1, std::max(learners::min_rows(config.outcome_learner),
                                                   learners::min_rows(config.control_learner())));
    for (int a = 0; a < kMaxFoldRedraws; ++a) {
        FoldPlan plan = make_fold_plan(data.size(), config.k_folds, config.j_subfolds, fold_seed(config.seed, a));
        if (training_splits_have_both_groups(data, plan, need)) {
            if (attempts) *attempts = a + 1;
            return plan;
        }
    }
    throw Error(fmt::format("no fold plan with both treatment groups in every training split after {} draws",
                            kMaxFoldRedraws));
}

/// Cross-fits on a given fold plan (its K and J override the config's).
inline CrossFit cross_fit(const Dataset& data, const EstimationConfig& config, FoldPlan plan) {
    data.validate();
    data.require_both_groups();
    config.validate();
    const Index n = data.size();
    {
        std::vector<int> seen(n, 0);
        for (const auto& fold : plan.outer)
            for (Index i : fold) {
                if (i >= n || seen[i]++) throw Error("fold plan is not a partition of the dataset");
            }
        if (std::count(seen.begin(), seen.end(), 1) != static_cast<std::ptrdiff_t>(n))
            throw Error("fold plan does not cover the dataset");
    }
    CrossFit cf;
    cf.plan = std::move(plan);
    cf.mu1.assign(n, 0.0);
    cf.mu0.assign(n, 0.0);
    cf.propensity_raw.assign(n, 0.0);

    Eigen::VectorXd d_all(static_cast<Eigen::Index>(n));
    for (Index i = 0; i < n; ++i) d_all[static_cast<Eigen::Index>(i)] = data.treatment[i];

    parallel_for(cf.plan.k(), config.workers, [&](Index k) {
        const IndexList train = cf.plan.training(k, n);
        IndexList treated, control;
        for (Index i : train) (data.treatment[i] == 1 ? treated : control).push_back(i);

        auto fit_on = [&](learners::LearnerSpec spec, NuisanceRole role, const IndexList& rows, const Eigen::VectorXd& y) {
            spec.seed = learner_seed(config.seed, k, role);
            return learners::fit(spec, select_rows(data.covariates, rows), select_rows(y, rows));
        };
        const auto m1 = fit_on(config.outcome_learner, NuisanceRole::treated_outcome, treated, data.outcome);
        const auto m0 = fit_on(config.control_learner(), NuisanceRole::control_outcome, control, data.outcome);
        const auto mp = fit_on(config.propensity_learner, NuisanceRole::propensity, train, d_all);

        const auto& eval = cf.plan.outer[k];
        const Eigen::MatrixXd x_eval = select_rows(data.covariates, eval);
        const Eigen::VectorXd p1 = m1.predict(x_eval);
        const Eigen::VectorXd p0 = m0.predict(x_eval);
        const Eigen::VectorXd pp = mp.predict(x_eval);
        for (Index i = 0; i < eval.size(); ++i) {
            const auto e = static_cast<Eigen::Index>(i);
            cf.mu1[eval[i]] = p1[e];
            cf.mu0[eval[i]] = p0[e];
            cf.propensity_raw[eval[i]] = pp[e];
        }
    });
    return cf;
}

inline CrossFit cross_fit(const Dataset& data, const EstimationConfig& config) {
    data.validate();
    data.require_both_groups();
    config.validate();
    int attempts = 1;
    FoldPlan plan = draw_fold_plan(data, config, &attempts);
    CrossFit cf = cross_fit(data, config, std::move(plan));
    cf.attempts = attempts;
    return cf;
}

struct CalibratedPropensity {
    std::vector<double> pi;  // clipped into [clip, 1 - clip]
    Index fallbacks = 0;     // sub-folds that fell back to the identity map
};

/// Per outer fold k and sub-fold j: fit the calibrator on the fold's other
/// sub-folds and apply it to sub-fold j.
inline CalibratedPropensity calibrate_cross_fit(const Dataset& data, const CrossFit& cf, Calibrator calibrator,
                                                const EstimationConfig& config) {
    CalibratedPropensity out;
    const Index n = data.size();
    out.pi = cf.propensity_raw;
    if (const auto method = calibration_method(calibrator)) {
        if (cf.plan.j() < 2) throw Error("calibration needs at least two sub-folds");
        for (Index k = 0; k < cf.plan.k(); ++k) {
            for (Index j = 0; j < cf.plan.j(); ++j) {
                calibration::CalibrationSet cal;
                for (Index i : cf.plan.calibration(k, j)) {
                    cal.raw_scores.push_back(cf.propensity_raw[i]);
                    cal.labels.push_back(data.treatment[i]);
                }
                calibration::FittedCalibrator fitted;
                try {
                    fitted = calibration::fit_calibrator(*method, cal, config.calibrator_options);
                } catch (const Error&) {
                    if (cal.has_both_classes()) throw;
                    fitted = calibration::FittedCalibrator::identity();
                    ++out.fallbacks;
                }
                for (Index i : cf.plan.inner[k][j]) out.pi[i] = fitted(cf.propensity_raw[i]);
            }
        }
    }
    for (Index i = 0; i < n; ++i) out.pi[i] = std::clamp(out.pi[i], config.clip, 1.0 - config.clip);
    return out;
}

namespace detail {

inline void add_diagnostics(AteResult& r, std::span<const double> raw, std::span<const double> pi,
                            std::span<const int> treatment, std::span<const double> true_propensity) {
    r.diagnostics["brier"] = calibration::brier_score(pi, treatment);
    r.diagnostics["brier_raw"] = calibration::brier_score(raw, treatment);
    r.diagnostics["min_propensity"] = *std::min_element(pi.begin(), pi.end());
    r.diagnostics["max_propensity"] = *std::max_element(pi.begin(), pi.end());
    if (!true_propensity.empty()) {
        r.diagnostics["cal_error"] = calibration::calibration_error(pi, true_propensity);
        r.diagnostics["cal_error_raw"] = calibration::calibration_error(raw, true_propensity);
    }
}

/// Scores with normalised, truncated inverse-probability weights: the
/// residual terms become group means weighted by the capped weights.
inline std::vector<double> reweighted_scores(const Dataset& data, std::span<const double> mu1, std::span<const double> mu0,
                                             std::span<const double> pi, double threshold) {
    const Index n = data.size();
    const auto w = calibration::reweight_truncate(pi, data.treatment, threshold);
    const double n_treated = static_cast<double>(data.n_treated());
    const double n_control = static_cast<double>(n) - n_treated;
    std::vector<double> tau(n);
    for (Index i = 0; i < n; ++i) {
        const double y = data.outcome[static_cast<Eigen::Index>(i)];
        tau[i] = mu1[i] - mu0[i];
        if (data.treatment[i] == 1)
            tau[i] += w[i] * (y - mu1[i]) * static_cast<double>(n) / n_treated;
        else
            tau[i] -= w[i] * (y - mu0[i]) * static_cast<double>(n) / n_control;
    }
    return tau;
}

} // namespace detail

inline AteResult estimate_from_cross_fit(const Dataset& data, const CrossFit& cf, const EstimationConfig& config,
                                         std::span<const double> true_propensity = {},
                                         NuisanceEstimates* nuisances = nullptr) {
    if (!true_propensity.empty() && true_propensity.size() != data.size())
        throw Error("true propensity length does not match the dataset");
    const Index n = data.size();
    const CalibratedPropensity cal = calibrate_cross_fit(data, cf, config.calibrator, config);
    std::vector<double> tau(n);
    if (config.calibrator == Calibrator::reweight) {
        tau = detail::reweighted_scores(data, cf.mu1, cf.mu0, cal.pi, config.trim_threshold);
    } else {
        for (Index i = 0; i < n; ++i)
            tau[i] = pseudo_outcome(data.treatment[i], data.outcome[static_cast<Eigen::Index>(i)], cf.mu1[i], cf.mu0[i],
                                    cal.pi[i]);
    }
    AteResult r = estimate_ate_from_pseudo(std::move(tau), config.se_mode);
    detail::add_diagnostics(r, cf.propensity_raw, cal.pi, data.treatment, true_propensity);
    r.diagnostics["calibration_fallbacks"] = static_cast<double>(cal.fallbacks);
    r.diagnostics["fold_draws"] = cf.attempts;
    if (nuisances) *nuisances = {cf.mu1, cf.mu0, cf.propensity_raw, cal.pi};
    return r;
}

/// Cross-fitted, optionally calibrated estimate of the average treatment effect.
inline AteResult estimate(const Dataset& data, const EstimationConfig& config,
                          std::span<const double> true_propensity = {}, NuisanceEstimates* nuisances = nullptr) {
    return estimate_from_cross_fit(data, cross_fit(data, config), config, true_propensity, nuisances);
}

/// Aggregates supplied nuisance values (no fitting, no calibration).
inline AteResult estimate_with_oracle_nuisances(const Dataset& data, std::span<const double> mu1,
                                                std::span<const double> mu0, std::span<const double> propensity,
                                                double clip = kDefaultClip, SeMode se_mode = SeMode::of_mean) {
    const Index n = data.size();
    if (mu1.size() != n || mu0.size() != n || propensity.size() != n)
        throw Error("oracle nuisances must have one entry per observation");
    std::vector<double> tau(n);
    std::vector<double> pi(n);
    for (Index i = 0; i < n; ++i) {
        pi[i] = std::clamp(propensity[i], clip, 1.0 - clip);
        tau[i] = pseudo_outcome(data.treatment[i], data.outcome[static_cast<Eigen::Index>(i)], mu1[i], mu0[i], pi[i]);
    }
    AteResult r = estimate_ate_from_pseudo(std::move(tau), se_mode);
    detail::add_diagnostics(r, propensity, pi, data.treatment, propensity);
    return r;
}

} // namespace cdml
