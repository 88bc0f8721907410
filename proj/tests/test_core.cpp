#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "cdml/core.hpp"
#include "cdml/csv.hpp"
#include "cdml/parallel.hpp"
#include "cdml/random.hpp"

using namespace cdml;

TEST(PseudoOutcome, TreatedUnitReducesToOutcomeOverPropensity) {
    EXPECT_DOUBLE_EQ(pseudo_outcome(1, 1.0, 0.0, 0.0, 0.5), 2.0);
}

TEST(PseudoOutcome, ControlUnitArithmetic) {
    EXPECT_NEAR(pseudo_outcome(0, 0.0, 0.3, 0.1, 0.5), 0.4, 1e-15);
}

TEST(PseudoOutcome, ResidualVanishesWhenOutcomeEqualsPrediction) {
    for (double pi : {0.01, 0.3, 0.9}) EXPECT_DOUBLE_EQ(pseudo_outcome(1, 1.7, 1.7, -0.4, pi), 1.7 + 0.4);
}

TEST(PseudoOutcome, RejectsPropensityOutsideOpenInterval) {
    EXPECT_THROW(pseudo_outcome(1, 1.0, 0.0, 0.0, 0.0), Error);
    EXPECT_THROW(pseudo_outcome(1, 1.0, 0.0, 0.0, 1.0), Error);
    EXPECT_THROW(pseudo_outcome(0, 1.0, 0.0, 0.0, std::nan("")), Error);
}

TEST(PseudoOutcome, LinearInOutcome) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::uniform_real_distribution<double> p(0.05, 0.95);
    for (int rep = 0; rep < 200; ++rep) {
        const int d = rep % 2;
        const double mu1 = u(rng), mu0 = u(rng), pi = p(rng), y1 = u(rng), y2 = u(rng), a = u(rng);
        const double lhs = pseudo_outcome(d, a * y1 + (1 - a) * y2, mu1, mu0, pi);
        const double rhs = a * pseudo_outcome(d, y1, mu1, mu0, pi) + (1 - a) * pseudo_outcome(d, y2, mu1, mu0, pi);
        EXPECT_NEAR(lhs, rhs, 1e-10);
    }
}

TEST(PseudoOutcome, ControlScoreUsesTreatedPredictionOnlyThroughDifference) {
    // For d = 0 the score is mu1 - mu0 - (y - mu0)/(1 - pi): shifting mu1 shifts it one-for-one.
    const double base = pseudo_outcome(0, 0.7, 0.2, 0.1, 0.4);
    EXPECT_NEAR(pseudo_outcome(0, 0.7, 1.2, 0.1, 0.4) - base, 1.0, 1e-14);
}

TEST(AteFromPseudo, ConstantScoresHaveZeroSe) {
    const auto r = estimate_ate_from_pseudo(std::vector<double>(17, 0.25));
    EXPECT_EQ(r.theta_hat, 0.25);
    EXPECT_EQ(r.se, 0.0);
    EXPECT_EQ(r.ci_low, 0.25);
    EXPECT_EQ(r.ci_high, 0.25);
}

TEST(AteFromPseudo, TwoPointHandComputation) {
    const auto r = estimate_ate_from_pseudo({0.0, 2.0});
    EXPECT_DOUBLE_EQ(r.theta_hat, 1.0);
    EXPECT_NEAR(r.se, std::sqrt(0.5), 1e-15);
    EXPECT_NEAR(r.ci_low, 1.0 - 1.96 * std::sqrt(0.5), 1e-14);
    EXPECT_NEAR(r.ci_high, 1.0 + 1.96 * std::sqrt(0.5), 1e-14);
}

TEST(AteFromPseudo, RawModeOmitsSampleSizeDivisor) {
    const auto r = estimate_ate_from_pseudo({0.0, 2.0}, SeMode::raw);
    EXPECT_NEAR(r.se, 1.0, 1e-15);
}

TEST(AteFromPseudo, SeMatchesSigmaOverRootN) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(1.5, 2.0);
    std::vector<double> tau(20000);
    for (double& t : tau) t = g(rng);
    const auto r = estimate_ate_from_pseudo(tau);
    EXPECT_NEAR(r.se / (2.0 / std::sqrt(20000.0)), 1.0, 0.1);
}

TEST(AteFromPseudo, ShiftMovesEstimateAndKeepsSe) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> tau(101);
    for (double& t : tau) t = u(rng);
    auto shifted = tau;
    for (double& t : shifted) t += 3.0;
    const auto a = estimate_ate_from_pseudo(tau);
    const auto b = estimate_ate_from_pseudo(shifted);
    EXPECT_NEAR(b.theta_hat - a.theta_hat, 3.0, 1e-12);
    EXPECT_NEAR(b.se, a.se, 1e-12);
}

TEST(AteFromPseudo, EstimateIsMeanOfScoresAndInsideInterval) {
    const std::vector<double> tau = {0.3, -1.2, 4.4, 0.0, 2.5};
    const auto r = estimate_ate_from_pseudo(tau);
    EXPECT_EQ(r.theta_hat, mean(r.pseudo_outcomes));
    EXPECT_LE(r.ci_low, r.theta_hat);
    EXPECT_GE(r.ci_high, r.theta_hat);
}

TEST(AteFromPseudo, RejectsEmptyOrNonFinite) {
    EXPECT_THROW(estimate_ate_from_pseudo({}), Error);
    EXPECT_THROW(estimate_ate_from_pseudo({1.0, INFINITY}), Error);
}

namespace {

void expect_valid_plan(const FoldPlan& plan, Index n, Index k, Index j) {
    ASSERT_EQ(plan.k(), k);
    ASSERT_EQ(plan.j(), j);
    std::vector<int> seen(n, 0);
    Index min_fold = n, max_fold = 0;
    for (Index f = 0; f < k; ++f) {
        min_fold = std::min(min_fold, plan.outer[f].size());
        max_fold = std::max(max_fold, plan.outer[f].size());
        std::multiset<Index> fold(plan.outer[f].begin(), plan.outer[f].end());
        std::multiset<Index> joined;
        Index min_sub = n, max_sub = 0;
        for (const auto& sub : plan.inner[f]) {
            joined.insert(sub.begin(), sub.end());
            min_sub = std::min(min_sub, sub.size());
            max_sub = std::max(max_sub, sub.size());
        }
        EXPECT_EQ(fold, joined);
        EXPECT_LE(max_sub - min_sub, 1u);
        for (Index i : plan.outer[f]) {
            ASSERT_LT(i, n);
            ++seen[i];
        }
    }
    EXPECT_LE(max_fold - min_fold, 1u);
    for (int s : seen) EXPECT_EQ(s, 1);
}

} // namespace

TEST(FoldPlan, TenIntoFiveByTwo) {
    const FoldPlan plan = make_fold_plan(10, 5, 2, 0);
    expect_valid_plan(plan, 10, 5, 2);
    for (Index f = 0; f < 5; ++f) {
        EXPECT_EQ(plan.outer[f].size(), 2u);
        for (const auto& sub : plan.inner[f]) EXPECT_EQ(sub.size(), 1u);
    }
}

TEST(FoldPlan, SevenIntoTwo) {
    const FoldPlan plan = make_fold_plan(7, 2, 1, 42);
    std::multiset<Index> sizes{plan.outer[0].size(), plan.outer[1].size()};
    EXPECT_EQ(sizes, (std::multiset<Index>{3, 4}));
}

TEST(FoldPlan, DeterministicGivenSeed) {
    const FoldPlan a = make_fold_plan(103, 5, 2, 99);
    const FoldPlan b = make_fold_plan(103, 5, 2, 99);
    EXPECT_EQ(a.outer, b.outer);
    EXPECT_EQ(a.inner, b.inner);
    const FoldPlan c = make_fold_plan(103, 5, 2, 100);
    EXPECT_NE(a.outer, c.outer);
}

TEST(FoldPlan, RandomShapesArePartitions) {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 200; ++rep) {
        const Index k = 1 + rng() % 7;
        const Index j = 1 + rng() % 4;
        const Index n = k * j + rng() % 60;
        expect_valid_plan(make_fold_plan(n, k, j, rng()), n, k, j);
    }
}

TEST(FoldPlan, TrainingIsComplementOfFold) {
    const FoldPlan plan = make_fold_plan(23, 4, 2, 1);
    for (Index f = 0; f < 4; ++f) {
        const IndexList train = plan.training(f, 23);
        EXPECT_EQ(train.size() + plan.outer[f].size(), 23u);
        for (Index i : plan.outer[f]) EXPECT_EQ(std::count(train.begin(), train.end(), i), 0);
        for (Index s = 0; s < 2; ++s) {
            const IndexList cal = plan.calibration(f, s);
            EXPECT_EQ(cal.size() + plan.inner[f][s].size(), plan.outer[f].size());
        }
    }
}

TEST(FoldPlan, RejectsTooManyParts) {
    EXPECT_THROW(make_fold_plan(9, 5, 2, 0), Error);
}

TEST(Dataset, ValidationCatchesBadInput) {
    Dataset d;
    d.covariates = Eigen::MatrixXd::Zero(3, 2);
    d.outcome = Eigen::VectorXd::Zero(3);
    d.treatment = {0, 1, 2};
    EXPECT_THROW(d.validate(), Error);
    d.treatment = {0, 1, 1};
    EXPECT_NO_THROW(d.validate());
    d.covariates(1, 1) = NAN;
    EXPECT_THROW(d.validate(), Error);
    d.covariates(1, 1) = 0.0;
    d.treatment = {1, 1, 1};
    EXPECT_THROW(d.require_both_groups(), Error);
}

TEST(Csv, RoundTripIsBitwise) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    Dataset d;
    d.covariates.resize(40, 3);
    d.outcome.resize(40);
    for (int i = 0; i < 40; ++i) {
        for (int c = 0; c < 3; ++c) d.covariates(i, c) = g(rng) * std::pow(10.0, c * 5 - 5);
        d.outcome[i] = g(rng);
        d.treatment.push_back(static_cast<int>(rng() % 2));
    }
    d.feature_names = {"a", "b", "c"};
    std::stringstream ss;
    csv::write_dataset(ss, d, "treat", "out");
    const Dataset back = csv::read_dataset(ss, "treat", "out");
    EXPECT_EQ(back.treatment, d.treatment);
    EXPECT_EQ(back.feature_names, d.feature_names);
    EXPECT_TRUE((back.outcome.array() == d.outcome.array()).all());
    EXPECT_TRUE((back.covariates.array() == d.covariates.array()).all());
}

TEST(Csv, ReportsMissingColumnAndNonBinaryTreatment) {
    std::stringstream missing("a,b\n1,2\n");
    EXPECT_THROW(csv::read_dataset(missing, "d", "y"), Error);
    std::stringstream bad("d,y,x\n2,1,0\n");
    EXPECT_THROW(csv::read_dataset(bad, "d", "y"), Error);
}

TEST(Seeds, StreamsAndPathsDiffer) {
    EXPECT_EQ(derive_seed(1, Stream::data, {3}), derive_seed(1, Stream::data, {3}));
    EXPECT_NE(derive_seed(1, Stream::data, {3}), derive_seed(1, Stream::folds, {3}));
    EXPECT_NE(derive_seed(1, Stream::data, {3}), derive_seed(1, Stream::data, {4}));
    EXPECT_NE(derive_seed(1, {0, 1}), derive_seed(1, {1, 0}));
}

TEST(ParallelFor, SlotsFilledForAnyWorkerCount) {
    for (std::size_t workers : {1u, 2u, 5u, 64u}) {
        std::vector<int> out(100, -1);
        parallel_for(out.size(), workers, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
        for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
    }
}

TEST(ParallelFor, PropagatesExceptions) {
    EXPECT_THROW(parallel_for(10, 3,
                              [](std::size_t i) {
                                  if (i == 7) throw Error("boom");
                              }),
                 Error);
}
