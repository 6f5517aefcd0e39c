#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ipdma/design.hpp"
#include "ipdma/errors.hpp"
#include "ipdma/kernel.hpp"
#include "ipdma/logistic.hpp"
#include "ipdma/ols.hpp"
#include "ipdma/rng.hpp"
#include "oracles.hpp"

using namespace ipdma;

namespace {

DesignMatrix matrix_of(const std::vector<std::vector<double>>& rows,
                       std::vector<std::string> names) {
    DesignMatrix d;
    d.column_names = std::move(names);
    d.X.resize(static_cast<Eigen::Index>(rows.size()),
               static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return d;
}

Eigen::VectorXd vec(const std::vector<double>& v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
    return out;
}

} // namespace

TEST_CASE("fit_ols recovers exact lines") {
    SUBCASE("y = 2x through three points") {
        const auto design = matrix_of({{1, 0}, {1, 1}, {1, 2}}, {"(intercept)", "x"});
        const auto fit = fit_ols(design, vec({0, 2, 4}));
        CHECK(fit.coefficients(0) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(fit.coefficients(1) == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(fit.residual_variance == doctest::Approx(0.0).epsilon(1e-20));
    }
    SUBCASE("constant response") {
        const auto design = matrix_of({{1, 0}, {1, 1}, {1, 2}}, {"(intercept)", "x"});
        const auto fit = fit_ols(design, vec({5, 5, 5}));
        CHECK(fit.coefficients(0) == doctest::Approx(5.0).epsilon(1e-12));
        CHECK(fit.coefficients(1) == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("fit_ols matches the normal-equations oracle on a 5-point toy") {
    const std::vector<std::vector<double>> rows = {
        {1.0, 0.3, -1.2}, {1.0, 1.7, 0.4}, {1.0, -0.6, 2.2}, {1.0, 2.4, -0.7}, {1.0, 0.9, 1.5}};
    const std::vector<double> y = {0.7, 2.1, -1.4, 3.3, 0.2};

    const auto design = matrix_of(rows, {"(intercept)", "a", "b"});
    const auto fit = fit_ols(design, vec(y));
    const auto expected = oracle::normal_equations(rows, y);
    for (std::size_t j = 0; j < expected.size(); ++j)
        CHECK(std::abs(fit.coefficients(static_cast<Eigen::Index>(j)) - expected[j]) <= 1e-8);
}

TEST_CASE("weighted fit_ols matches the weighted normal-equations oracle") {
    const std::vector<std::vector<double>> rows = {
        {1.0, 0.3}, {1.0, 1.7}, {1.0, -0.6}, {1.0, 2.4}, {1.0, 0.9}, {1.0, -1.3}};
    const std::vector<double> y = {0.7, 2.1, -1.4, 3.3, 0.2, 0.9};
    const std::vector<double> w = {1.0, 0.5, 2.0, 0.1, 3.0, 1.5};

    const auto design = matrix_of(rows, {"(intercept)", "x"});
    const auto wv = vec(w);
    const auto fit = fit_ols(design, vec(y), &wv);
    const auto expected = oracle::normal_equations(rows, y, &w);
    for (std::size_t j = 0; j < expected.size(); ++j)
        CHECK(std::abs(fit.coefficients(static_cast<Eigen::Index>(j)) - expected[j]) <= 1e-10);
}

TEST_CASE("fit_ols names collinear columns") {
    const auto design = matrix_of({{1, 1, 2}, {1, 2, 4}, {1, 3, 6}, {1, 4, 8}},
                                  {"(intercept)", "x", "x_doubled"});
    CHECK_THROWS_WITH_AS(fit_ols(design, vec({1, 2, 3, 4})),
                         doctest::Contains("rank deficient"), EstimationError);
    try {
        fit_ols(design, vec({1, 2, 3, 4}));
    } catch (const EstimationError& e) {
        // one of the two proportional columns must be named
        const std::string msg = e.what();
        CHECK((msg.find("'x'") != std::string::npos ||
               msg.find("'x_doubled'") != std::string::npos));
    }
    CHECK_THROWS_AS(fit_ols(matrix_of({{1, 2}}, {"(intercept)", "x"}), vec({1.0})),
                    EstimationError);
}

TEST_CASE("fit_ols residual orthogonality on random instances") {
    Rng rng(99, 0);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 12 + rng.bounded(30);
        std::vector<std::vector<double>> rows(n);
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            rows[i] = {1.0, rng.next_normal(), rng.next_normal(), rng.next_normal()};
            y[i] = 2.0 * rows[i][1] - rows[i][2] + 0.3 * rng.next_normal();
        }
        const auto design = matrix_of(rows, {"(intercept)", "a", "b", "c"});
        const auto fit = fit_ols(design, vec(y));

        const Eigen::VectorXd resid = vec(y) - design.X * fit.coefficients;
        const double gram = (design.X.transpose() * resid).lpNorm<Eigen::Infinity>();
        const double scale = 1.0 + vec(y).lpNorm<Eigen::Infinity>();
        CHECK(gram / scale <= 1e-8);
    }
}

TEST_CASE("fit_logistic intercept-only closed forms") {
    SUBCASE("3 of 10 gives ln(3/7)") {
        const auto design = matrix_of(std::vector<std::vector<double>>(10, {1.0}), {"(intercept)"});
        const auto fit = fit_logistic(design, vec({1, 1, 1, 0, 0, 0, 0, 0, 0, 0}));
        CHECK(fit.converged);
        CHECK_FALSE(fit.separation_detected);
        CHECK(std::abs(fit.coefficients(0) - std::log(3.0 / 7.0)) <= 1e-8);
    }
    SUBCASE("balanced gives 0") {
        const auto design = matrix_of(std::vector<std::vector<double>>(10, {1.0}), {"(intercept)"});
        const auto fit = fit_logistic(design, vec({1, 1, 1, 1, 1, 0, 0, 0, 0, 0}));
        CHECK(std::abs(fit.coefficients(0)) <= 1e-10);
    }
}

TEST_CASE("fit_logistic detects complete separation") {
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (int i = 0; i < 10; ++i) {
        const double x = i < 5 ? -1.0 - 0.1 * i : 1.0 + 0.1 * i;
        rows.push_back({1.0, x});
        y.push_back(x > 0.0 ? 1.0 : 0.0);
    }
    const auto fit = fit_logistic(matrix_of(rows, {"(intercept)", "x"}), vec(y));
    CHECK(fit.separation_detected);
}

TEST_CASE("fit_logistic rejects single-class input") {
    const auto design = matrix_of(std::vector<std::vector<double>>(6, {1.0}), {"(intercept)"});
    CHECK_THROWS_WITH_AS(fit_logistic(design, vec({1, 1, 1, 1, 1, 1})),
                         doctest::Contains("both classes"), EstimationError);
}

TEST_CASE("fit_logistic satisfies the score equations at convergence") {
    Rng rng(123, 0);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t n = 40 + rng.bounded(40);
        std::vector<std::vector<double>> rows(n);
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            rows[i] = {1.0, rng.next_normal(), rng.next_normal()};
            const double eta = -0.3 + 0.8 * rows[i][1] - 0.5 * rows[i][2];
            y[i] = rng.next_double() < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
        }
        bool both = false;
        for (std::size_t i = 1; i < n; ++i) both = both || y[i] != y[0];
        if (!both) continue;

        const auto design = matrix_of(rows, {"(intercept)", "a", "b"});
        const auto fit = fit_logistic(design, vec(y));
        REQUIRE(fit.converged);

        Eigen::VectorXd p(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
            p(static_cast<Eigen::Index>(i)) =
                fit.predict_probability(design.X.row(static_cast<Eigen::Index>(i)));
        const double score = (design.X.transpose() * (vec(y) - p)).lpNorm<Eigen::Infinity>();
        CHECK(score <= 1e-6 * static_cast<double>(n));

        // score ~ 0 must agree with central finite differences of the log-likelihood
        std::vector<double> beta(fit.coefficients.data(),
                                 fit.coefficients.data() + fit.coefficients.size());
        const double eps = 1e-6;
        for (std::size_t j = 0; j < beta.size(); ++j) {
            auto hi = beta, lo = beta;
            hi[j] += eps;
            lo[j] -= eps;
            const double fd =
                (oracle::logistic_loglik(rows, y, hi) - oracle::logistic_loglik(rows, y, lo)) /
                (2.0 * eps);
            CHECK(std::abs(fd) <= 1e-4 * (1.0 + static_cast<double>(n)));
        }
    }
}

namespace {

CovariateSchema continuous_x() { return CovariateSchema({{"x", CovariateKind::Continuous, {}}}); }

KernelModel model_1d(const std::vector<double>& x, const std::vector<int>& labels, double h) {
    KernelModel m;
    m.schema = continuous_x();
    m.train.resize(static_cast<Eigen::Index>(x.size()), 1);
    for (std::size_t i = 0; i < x.size(); ++i) m.train(static_cast<Eigen::Index>(i), 0) = x[i];
    m.labels = labels;
    m.bandwidths = {h};
    return m;
}

Eigen::RowVectorXd query1(double x) {
    Eigen::RowVectorXd q(1);
    q(0) = x;
    return q;
}

} // namespace

TEST_CASE("kernel_prob limits") {
    const std::vector<double> x = {0.1, 0.9, 1.7, 2.2, 3.0, 3.8, 4.1, 4.9, 5.5, 6.2};
    const std::vector<int> labels = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0};

    SUBCASE("huge bandwidth gives the marginal target share") {
        const auto m = model_1d(x, labels, 1e12);
        const auto p = kernel_prob(m, query1(2.7));
        CHECK_FALSE(p.no_local_support);
        CHECK(p.probability == doctest::Approx(0.4).epsilon(1e-9));
    }
    SUBCASE("vanishing bandwidth at a training point returns that label") {
        const auto m = model_1d(x, labels, 1e-9);
        CHECK(kernel_prob(m, query1(1.7)).probability == 1.0);
        CHECK(kernel_prob(m, query1(3.0)).probability == 0.0);
    }
    SUBCASE("no local support is flagged") {
        const auto m = model_1d(x, labels, 1e-9);
        const auto p = kernel_prob(m, query1(1000.0));
        CHECK(p.no_local_support);
        CHECK(p.probability == 0.0);
    }
}

TEST_CASE("kernel_prob matches a hand-computed Nadaraya-Watson ratio on 4 points") {
    const std::vector<double> x = {0.0, 1.0, 2.0, 3.0};
    const std::vector<int> labels = {1, 0, 1, 0};
    const double q = 1.2;

    // direct evaluation of the ratio, written out term by term (h = 1)
    const double w0 = std::exp(-0.5 * (q - 0.0) * (q - 0.0));
    const double w1 = std::exp(-0.5 * (q - 1.0) * (q - 1.0));
    const double w2 = std::exp(-0.5 * (q - 2.0) * (q - 2.0));
    const double w3 = std::exp(-0.5 * (q - 3.0) * (q - 3.0));
    const double expected = (w0 + w2) / (w0 + w1 + w2 + w3);

    const auto m = model_1d(x, labels, 1.0);
    CHECK(std::abs(kernel_prob(m, query1(q)).probability - expected) <= 1e-10);
}

TEST_CASE("kernel_prob is bounded and invariant under training permutation") {
    Rng rng(55, 0);
    std::vector<double> x(30);
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < 30; ++i) {
        x[i] = rng.next_normal();
        labels[i] = rng.bounded(2) ? 1 : 0;
    }
    const auto m = model_1d(x, labels, 0.7);

    std::vector<std::size_t> perm(30);
    for (std::size_t i = 0; i < 30; ++i) perm[i] = i;
    std::mt19937_64 mt(9);
    std::shuffle(perm.begin(), perm.end(), mt);
    std::vector<double> xp(30);
    std::vector<int> lp(30);
    for (std::size_t i = 0; i < 30; ++i) {
        xp[i] = x[perm[i]];
        lp[i] = labels[perm[i]];
    }
    const auto mp = model_1d(xp, lp, 0.7);

    for (double q : {-2.5, -0.5, 0.0, 0.3, 1.9}) {
        const auto p = kernel_prob(m, query1(q)).probability;
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        CHECK(kernel_prob(mp, query1(q)).probability == doctest::Approx(p).epsilon(1e-12));
    }
}

TEST_CASE("Aitchison-Aitken smoothing 0 gives differing levels exactly zero weight") {
    CovariateSchema schema({{"loc", CovariateKind::Categorical, {"back", "neck", "leg"}}});
    KernelModel m;
    m.schema = schema;
    m.train.resize(6, 1);
    m.labels = {1, 1, 0, 0, 0, 0};
    // targets all 'back' (0); contributing rows 'neck'/'leg'
    m.train << 0, 0, 1, 1, 2, 2;
    m.bandwidths = {0.0};

    // query 'neck': the target rows differ in level, so their contribution is
    // exactly zero -> probability exactly 0
    CHECK(kernel_prob(m, query1(1.0)).probability == 0.0);
    // query 'back': only target rows share the level -> exactly 1
    CHECK(kernel_prob(m, query1(0.0)).probability == 1.0);
}

TEST_CASE("select_bandwidths drives a perfect binary predictor to zero smoothing") {
    CovariateSchema schema({{"flag", CovariateKind::Categorical, {"no", "yes"}}});
    Eigen::MatrixXd covs(12, 1);
    std::vector<int> labels(12);
    for (int i = 0; i < 12; ++i) {
        covs(i, 0) = i < 6 ? 1.0 : 0.0;
        labels[static_cast<std::size_t>(i)] = i < 6 ? 1 : 0;
    }
    const auto sel = select_bandwidths(schema, covs, labels);
    CHECK(sel.bandwidths[0] == 0.0);
    CHECK(sel.loo_log_likelihood == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("select_bandwidths oversmooths when the label is independent of the covariate") {
    CovariateSchema schema = continuous_x();
    Eigen::MatrixXd covs(40, 1);
    std::vector<int> labels(40);
    for (int k = 0; k < 20; ++k) {
        covs(2 * k, 0) = static_cast<double>(k);
        covs(2 * k + 1, 0) = static_cast<double>(k);
        labels[static_cast<std::size_t>(2 * k)] = 1;
        labels[static_cast<std::size_t>(2 * k + 1)] = 0;
    }
    const auto sel = select_bandwidths(schema, covs, labels);
    CHECK(sel.bandwidths[0] == sel.search_bounds[0].second); // upper search bound
}

TEST_CASE("select_bandwidths matches an exhaustive 1-D grid oracle") {
    // 20-point toy with a soft covariate shift between the labels
    Rng rng(2024, 0);
    std::vector<double> x(20);
    std::vector<int> labels(20);
    Eigen::MatrixXd covs(20, 1);
    for (std::size_t i = 0; i < 20; ++i) {
        labels[i] = i < 8 ? 1 : 0;
        x[i] = rng.next_normal() + (labels[i] ? 0.8 : -0.4);
        covs(static_cast<Eigen::Index>(i), 0) = x[i];
    }

    const auto sel = select_bandwidths(continuous_x(), covs, labels);
    const double oracle_ll = oracle::best_loo_loglik_1d(x, labels, sel.search_bounds[0].first,
                                                        sel.search_bounds[0].second);
    CHECK(std::abs(sel.loo_log_likelihood - oracle_ll) <= 1e-6);

    // the reported likelihood must be reproducible from the bandwidths
    CHECK(loo_log_likelihood(continuous_x(), covs, labels, sel.bandwidths) ==
          doctest::Approx(sel.loo_log_likelihood).epsilon(1e-12));
}

TEST_CASE("select_bandwidths rejects zero-variance continuous covariates") {
    CovariateSchema schema = continuous_x();
    Eigen::MatrixXd covs = Eigen::MatrixXd::Ones(12, 1);
    std::vector<int> labels(12, 0);
    for (std::size_t i = 0; i < 6; ++i) labels[i] = 1;
    CHECK_THROWS_WITH_AS(select_bandwidths(schema, covs, labels),
                         doctest::Contains("zero variance"), EstimationError);
}

TEST_CASE("select_bandwidths preconditions") {
    CovariateSchema schema = continuous_x();
    Eigen::MatrixXd covs(4, 1);
    covs << 1, 2, 3, 4;
    CHECK_THROWS_WITH_AS(select_bandwidths(schema, covs, {1, 0, 1, 0}),
                         doctest::Contains("at least 10 rows"), EstimationError);

    Eigen::MatrixXd covs10(10, 1);
    for (int i = 0; i < 10; ++i) covs10(i, 0) = i;
    CHECK_THROWS_WITH_AS(select_bandwidths(schema, covs10, std::vector<int>(10, 1)),
                         doctest::Contains("both labels"), EstimationError);
}
