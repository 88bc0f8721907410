#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cdml/report.hpp"
#include "cdml/simulation/dgp.hpp"
#include "cdml/simulation/overlap.hpp"
#include "cdml/simulation/study.hpp"

using namespace cdml;
using namespace cdml::simulation;

TEST(Beta24, ClosedFormValues) {
    EXPECT_EQ(beta24_cdf(0.5), 0.8125);
    EXPECT_EQ(beta24_cdf(0.0), 0.0);
    EXPECT_EQ(beta24_cdf(1.0), 1.0);
    // Independent form: 1 - (1-x)^5 - 5x(1-x)^4.
    for (double x = 0.05; x < 1.0; x += 0.05)
        EXPECT_NEAR(beta24_cdf(x), 1.0 - std::pow(1 - x, 5) - 5 * x * std::pow(1 - x, 4), 1e-14);
}

TEST(Dgp, PropensityFormulas) {
    double x[kDgpFeatures] = {0.3, 0.3};
    EXPECT_EQ(propensity_score(Propensity::easy, x), 0.5);
    x[0] = 0.5;
    x[1] = 0.7;
    EXPECT_NEAR(propensity_score(Propensity::difficult, x), 0.5875, 1e-15);
    x[0] = 0.0;
    EXPECT_NEAR(propensity_score(Propensity::extreme, x), 0.05, 1e-15);
    x[0] = x[1] = 1.0;
    EXPECT_NEAR(propensity_score(Propensity::extreme, x), 0.95, 1e-15);
}

TEST(Dgp, IdsFollowOverviewTable) {
    const std::pair<Baseline, Propensity> expected[] = {
        {Baseline::easy, Propensity::easy},         {Baseline::easy, Propensity::difficult},
        {Baseline::difficult, Propensity::easy},    {Baseline::difficult, Propensity::difficult},
        {Baseline::easy, Propensity::extreme},      {Baseline::difficult, Propensity::extreme}};
    for (int id = 1; id <= 6; ++id) {
        const auto s = DgpSpec::from_id(id);
        EXPECT_EQ(s.baseline, expected[id - 1].first);
        EXPECT_EQ(s.propensity, expected[id - 1].second);
        EXPECT_EQ(s.id(), id);
    }
    EXPECT_THROW(DgpSpec::from_id(0), Error);
    EXPECT_THROW(DgpSpec::from_id(7), Error);
}

TEST(Dgp, SampleMatchesItsDefinition) {
    for (int id = 1; id <= 6; ++id) {
        const auto s = generate(DgpSpec::from_id(id, 500, 9));
        const Dataset& d = s.dataset;
        ASSERT_EQ(d.n_features(), 30u);
        EXPECT_NO_THROW(d.validate());
        EXPECT_EQ(s.true_ate, 0.5);
        for (Index i = 0; i < d.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const double x1 = d.covariates(r, 0), x2 = d.covariates(r, 1);
            EXPECT_NEAR(s.true_cate[i], 0.5 * (x1 + x2), 1e-15);
            EXPECT_NEAR(s.mu1[i] - s.mu0[i], s.true_cate[i], 1e-12);
            const double lead = id == 1 || id == 2 || id == 5 ? x1 * x2 : std::sin(M_PI * x1 * x2);
            const double b = lead + 2 * std::pow(d.covariates(r, 2) - 0.5, 2) + d.covariates(r, 3) +
                             0.5 * d.covariates(r, 4);
            EXPECT_NEAR(s.mu0[i], b - 0.25 * (x1 + x2), 1e-12);
            const double lo = id >= 5 ? 0.05 : (id == 2 || id == 4 ? 0.1 : 0.0);
            const double hi = id >= 5 ? 0.95 : (id == 2 || id == 4 ? 0.7 : 1.0);
            EXPECT_GE(s.true_propensity[i], lo);
            EXPECT_LE(s.true_propensity[i], hi);
        }
    }
}

TEST(Dgp, TreatmentShareMatchesMeanPropensity) {
    for (int id = 1; id <= 6; ++id) {
        const auto s = generate(DgpSpec::from_id(id, 20000, 10));
        const double share = static_cast<double>(s.dataset.n_treated()) / 20000.0;
        const double p = mean(s.true_propensity);
        EXPECT_LT(std::abs(share - p), 3.0 * std::sqrt(p * (1 - p) / 20000.0)) << id;
    }
}

TEST(Dgp, SampleCateMeanNearHalf) {
    const auto s = generate(DgpSpec::from_id(1, 50000, 11));
    const double se = std::sqrt(1.0 / 24.0 / 50000.0);  // sd of (X1 + X2) / 2 is sqrt(1/24)
    EXPECT_LT(std::abs(mean(s.true_cate) - 0.5), 3.0 * se);
}

TEST(Dgp, DeterministicPerSeed) {
    const auto a = generate(DgpSpec::from_id(4, 300, 5));
    const auto b = generate(DgpSpec::from_id(4, 300, 5));
    const auto c = generate(DgpSpec::from_id(4, 300, 6));
    EXPECT_TRUE((a.dataset.outcome.array() == b.dataset.outcome.array()).all());
    EXPECT_FALSE((a.dataset.outcome.array() == c.dataset.outcome.array()).all());
}

namespace {

EstimationConfig small_config() {
    EstimationConfig c;
    c.outcome_learner = {learners::LearnerKind::lasso, learners::Task::regression, {{"expand", 0}}, 0};
    c.propensity_learner = {learners::LearnerKind::lasso, learners::Task::classification, {{"expand", 0}}, 0};
    return c;
}

} // namespace

TEST(Study, OracleSummaryIdentities) {
    const auto report = run_study(DgpSpec::from_id(2, 500, 12), {StudyMethod::oracle()}, 30);
    for (const auto& row : report.summary()) {
        EXPECT_NEAR(row.rmse * row.rmse, row.bias * row.bias + row.std_dev * row.std_dev,
                    1e-10 * row.rmse * row.rmse);
        EXPECT_EQ(row.replications, 30u);
    }
}

TEST(Study, SingleReplication) {
    const auto report = run_study(DgpSpec::from_id(1, 300, 13), {StudyMethod::oracle()}, 1);
    const auto row = report.summary().front();
    EXPECT_EQ(row.std_dev, 0.0);
    EXPECT_NEAR(row.rmse, std::abs(row.bias), 1e-15);
}

TEST(Study, DeterministicAcrossRunsAndWorkers) {
    std::vector<StudyMethod> methods{StudyMethod::oracle(), StudyMethod::estimator("none", small_config())};
    auto c = small_config();
    c.calibrator = Calibrator::venn_abers;
    methods.push_back(StudyMethod::estimator("va", c));
    methods.push_back(StudyMethod::brier("brier", small_config()));
    const auto a = run_study(DgpSpec::from_id(3, 300, 14), methods, 4, 1);
    const auto b = run_study(DgpSpec::from_id(3, 300, 14), methods, 4, 3);
    for (Index m = 0; m < methods.size(); ++m) {
        EXPECT_EQ(a.records[m].theta, b.records[m].theta);
        EXPECT_EQ(a.records[m].se, b.records[m].se);
    }
}

TEST(Study, ReplicationSampleIndependentOfMethodList) {
    const auto one = run_study(DgpSpec::from_id(2, 300, 15), {StudyMethod::oracle()}, 3);
    const auto two = run_study(DgpSpec::from_id(2, 300, 15),
                               {StudyMethod::estimator("none", small_config()), StudyMethod::oracle()}, 3);
    EXPECT_EQ(one.records[0].theta, two.records[1].theta);
}

TEST(Study, FailuresAreRecordedNotThrown) {
    auto bad = small_config();
    bad.k_folds = 1000;  // more folds than rows
    const auto report = run_study(DgpSpec::from_id(1, 200, 16),
                                  {StudyMethod::oracle(), StudyMethod::estimator("bad", bad)}, 2);
    const auto rows = report.summary();
    EXPECT_EQ(rows[0].failures, 0u);
    EXPECT_EQ(rows[1].failures, 2u);
    EXPECT_FALSE(report.records[1].errors[0].empty());
}

TEST(Study, OracleUnbiasedAtModerateScale) {
    const auto report = run_study(DgpSpec::from_id(5, 2000, 17), {StudyMethod::oracle()}, 60);
    const auto row = report.summary().front();
    EXPECT_LT(std::abs(row.bias), 3.0 * row.std_dev / std::sqrt(60.0));
}

TEST(BrierSelection, SingleCandidate) {
    const auto s = generate(DgpSpec::from_id(2, 400, 18));
    const auto sel = select_by_brier(s.dataset, small_config(), {Calibrator::beta});
    EXPECT_EQ(sel.chosen, Calibrator::beta);
}

TEST(BrierSelection, IdenticalCandidatesPickFirst) {
    const auto s = generate(DgpSpec::from_id(2, 400, 19));
    const auto sel = select_by_brier(s.dataset, small_config(), {Calibrator::temperature, Calibrator::temperature});
    EXPECT_EQ(sel.brier[0], sel.brier[1]);
    EXPECT_EQ(sel.chosen, Calibrator::temperature);
}

TEST(BrierSelection, WinnerHasLowestBrierAndItsEstimateIsReturned) {
    const auto s = generate(DgpSpec::from_id(4, 600, 20));
    const auto config = small_config();
    const auto cf = cross_fit(s.dataset, config);
    const auto sel = select_by_brier(s.dataset, cf, config, default_brier_candidates());
    const auto best = std::min_element(sel.brier.begin(), sel.brier.end()) - sel.brier.begin();
    EXPECT_EQ(sel.chosen, default_brier_candidates()[static_cast<Index>(best)]);
    auto chosen = config;
    chosen.calibrator = sel.chosen;
    EXPECT_EQ(sel.result.theta_hat, estimate_from_cross_fit(s.dataset, cf, chosen).theta_hat);
}

TEST(BrierSelection, DefaultCandidatesExcludeIsotonic) {
    const auto c = default_brier_candidates();
    EXPECT_EQ(std::count(c.begin(), c.end(), Calibrator::isotonic), 0);
    EXPECT_EQ(std::count(c.begin(), c.end(), Calibrator::none), 0);
}

TEST(BrierSelection, TruePropensityMinimisesPopulationBrier) {
    // Brier of the true p against fresh labels is lower on average than that of a distorted p.
    int wins = 0;
    for (std::uint64_t rep = 0; rep < 30; ++rep) {
        const auto s = generate(DgpSpec::from_id(2, 2000, 100 + rep));
        std::vector<double> distorted = s.true_propensity;
        for (double& p : distorted) p = std::clamp(0.5 + 1.4 * (p - 0.5), 0.01, 0.99);
        wins += calibration::brier_score(s.true_propensity, s.dataset.treatment) <
                calibration::brier_score(distorted, s.dataset.treatment);
    }
    EXPECT_GE(wins, 25);
}

TEST(Overlap, ConstantPropensityIsASpike) {
    const std::vector<double> p(100, 0.37);
    std::vector<int> d(100, 0);
    for (int i = 0; i < 50; ++i) d[i] = 1;
    const auto rows = overlap_report(p, d, 10);
    ASSERT_EQ(rows.size(), 20u);
    for (const auto& r : rows) {
        if (std::abs(r.score - 0.35) < 1e-12)
            EXPECT_DOUBLE_EQ(r.density, 10.0);
        else
            EXPECT_EQ(r.density, 0.0);
    }
}

TEST(Overlap, TwoBinsGiveTwoRowsPerGroup) {
    const auto s = generate(DgpSpec::from_id(1, 200, 21));
    const auto rows = overlap_report(s.true_propensity, s.dataset.treatment, 2);
    EXPECT_EQ(rows.size(), 4u);
    EXPECT_THROW(overlap_report(s.true_propensity, s.dataset.treatment, 1), Error);
}

TEST(Overlap, EmptyGroupHasNoRows) {
    const std::vector<double> p = {0.2, 0.4, 0.6};
    const std::vector<int> d = {1, 1, 1};
    const auto rows = overlap_report(p, d, 5);
    EXPECT_EQ(rows.size(), 5u);
    for (const auto& r : rows) EXPECT_EQ(r.group, 1);
}

TEST(Overlap, EasyDesignIsMirrorSymmetric) {
    // p(x) = 1 / (1 + exp(x1 - x2)) is symmetric under swapping x1 and x2, so
    // the treated density at s matches the control density at 1 - s.
    const auto s = generate(DgpSpec::from_id(1, 40000, 22));
    const auto rows = overlap_report(s.true_propensity, s.dataset.treatment, 20);
    for (Index b = 0; b < 20; ++b) {
        const double control = rows[b].density;
        const double treated = rows[20 + (19 - b)].density;
        EXPECT_NEAR(control, treated, 0.1 * std::max(1.0, control)) << b;
    }
}

TEST(Overlap, DensityIntegratesToAboutOne) {
    const auto s = generate(DgpSpec::from_id(2, 5000, 23));
    const auto rows = overlap_report(s.true_propensity, s.dataset.treatment, 200);
    for (int g : {0, 1}) {
        double area = 0.0;
        for (const auto& r : rows)
            if (r.group == g) area += r.density / 200.0;
        EXPECT_NEAR(area, 1.0, 0.05);
    }
}

TEST(Report, CsvAndMarkdownCarryIdenticalNumbers) {
    std::vector<StudyMethod> methods{StudyMethod::oracle(), StudyMethod::estimator("none", small_config())};
    const auto report = run_study(DgpSpec::from_id(1, 200, 24), methods, 2);
    const auto table = report::simulation_table(report);
    std::stringstream csv, md;
    table.write(csv, report::Format::csv);
    table.write(md, report::Format::markdown);
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "method,rmse,bias,std_dev,coverage");
    std::vector<std::string> csv_cells, md_cells;
    while (std::getline(csv, line)) {
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) csv_cells.push_back(cell);
    }
    std::getline(md, line);
    std::getline(md, line);
    while (std::getline(md, line)) {
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, '|')) {
            const auto b = cell.find_first_not_of(' ');
            if (b == std::string::npos) continue;
            md_cells.push_back(cell.substr(b, cell.find_last_not_of(' ') - b + 1));
        }
    }
    EXPECT_EQ(csv_cells, md_cells);
}
