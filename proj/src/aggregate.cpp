#include "ipdma/aggregate.hpp"

#include <algorithm>
#include <cmath>

#include "ipdma/errors.hpp"
#include "ipdma/ols.hpp"

namespace ipdma {

namespace {

void validate_summaries(const std::vector<StudySummary>& summaries, const char* who) {
    if (summaries.size() < 2)
        throw EstimationError(std::string(who) + ": needs at least 2 study summaries, got " +
                              std::to_string(summaries.size()));
    for (const auto& s : summaries) {
        if (!(s.se_te > 0.0) || !std::isfinite(s.se_te))
            throw EstimationError(std::string(who) + ": study '" + s.study +
                                  "' has a degenerate standard error (" +
                                  std::to_string(s.se_te) + ")");
    }
}

struct InverseVariance {
    double sum_w = 0.0;
    double sum_w2 = 0.0;
    double estimate = 0.0;
    double q = 0.0;
};

InverseVariance inverse_variance_pool(const std::vector<StudySummary>& summaries, double tau2) {
    InverseVariance out;
    double sum_wt = 0.0;
    for (const auto& s : summaries) {
        const double w = 1.0 / (s.se_te * s.se_te + tau2);
        out.sum_w += w;
        out.sum_w2 += w * w;
        sum_wt += w * s.te;
    }
    out.estimate = sum_wt / out.sum_w;
    for (const auto& s : summaries) {
        const double w = 1.0 / (s.se_te * s.se_te + tau2);
        const double d = s.te - out.estimate;
        out.q += w * d * d;
    }
    return out;
}

std::vector<std::pair<std::string, double>> normalized_weights(
    const std::vector<StudySummary>& summaries, double tau2, double sum_w) {
    std::vector<std::pair<std::string, double>> out;
    out.reserve(summaries.size());
    for (const auto& s : summaries)
        out.emplace_back(s.study, (1.0 / (s.se_te * s.se_te + tau2)) / sum_w);
    return out;
}

} // namespace

PooledMAResult fixed_effect(const std::vector<StudySummary>& summaries) {
    validate_summaries(summaries, "fixed_effect");
    const auto pool = inverse_variance_pool(summaries, 0.0);

    PooledMAResult result;
    result.model = PooledMAResult::Model::Fixed;
    result.estimate = pool.estimate;
    result.se = 1.0 / std::sqrt(pool.sum_w);
    result.tau2 = 0.0;
    result.q = pool.q;
    result.weights = normalized_weights(summaries, 0.0, pool.sum_w);
    return result;
}

PooledMAResult random_effects_dl(const std::vector<StudySummary>& summaries) {
    validate_summaries(summaries, "random_effects");
    const auto fe = inverse_variance_pool(summaries, 0.0);

    const double k = static_cast<double>(summaries.size());
    const double denom = fe.sum_w - fe.sum_w2 / fe.sum_w;
    double tau2 = 0.0;
    if (denom > 0.0) tau2 = std::max(0.0, (fe.q - (k - 1.0)) / denom);

    const auto re = inverse_variance_pool(summaries, tau2);

    PooledMAResult result;
    result.model = PooledMAResult::Model::Random;
    result.estimate = re.estimate;
    result.se = 1.0 / std::sqrt(re.sum_w);
    result.tau2 = tau2;
    result.q = fe.q;
    result.weights = normalized_weights(summaries, tau2, re.sum_w);
    return result;
}

namespace {

/// Moderator columns: one per continuous covariate (study mean), one per
/// non-reference level of each categorical covariate (level proportion).
void moderator_columns(const CovariateSchema& schema, const std::vector<std::string>& covariates,
                       const std::vector<CovariateAggregate>& aggregates,
                       std::vector<double>* values, std::vector<std::string>* names) {
    for (const auto& name : covariates) {
        auto idx = schema.index_of(name);
        if (!idx) throw EstimationError("meta-regression: unknown covariate '" + name + "'");
        const auto& spec = schema.at(*idx);
        const auto& agg = aggregates.at(*idx);
        if (spec.kind == CovariateKind::Continuous) {
            values->push_back(agg.values.at(0));
            if (names) names->push_back(spec.name);
        } else {
            for (std::size_t l = 1; l < spec.levels.size(); ++l) {
                values->push_back(agg.values.at(l));
                if (names) names->push_back(spec.name + "=" + spec.levels[l]);
            }
        }
    }
}

} // namespace

MetaRegressionFit meta_regression(const std::vector<StudySummary>& summaries,
                                  const CovariateSchema& schema,
                                  const std::vector<std::string>& covariates,
                                  const std::vector<CovariateAggregate>& target_aggregates) {
    validate_summaries(summaries, "meta-regression");

    DesignMatrix design;
    design.column_names.push_back("(intercept)");
    std::vector<double> first_row;
    moderator_columns(schema, covariates, summaries.front().covariate_aggregates, &first_row,
                      &design.column_names);

    const std::size_t k = summaries.size();
    const std::size_t p = design.column_names.size();
    if (k < p)
        throw EstimationError("meta-regression: " + std::to_string(k) +
                              " studies cannot identify " + std::to_string(p) +
                              " coefficients (add studies or drop moderators)");

    design.X.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    Eigen::VectorXd y(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> row;
        moderator_columns(schema, covariates, summaries[i].covariate_aggregates, &row, nullptr);
        design.X(static_cast<Eigen::Index>(i), 0) = 1.0;
        for (std::size_t j = 0; j < row.size(); ++j)
            design.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = row[j];
        y(static_cast<Eigen::Index>(i)) = summaries[i].te;
    }

    Eigen::VectorXd w_fe(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) w_fe(static_cast<Eigen::Index>(i)) =
        1.0 / (summaries[i].se_te * summaries[i].se_te);

    // method-of-moments residual heterogeneity from the fixed-effect-weighted fit
    const LinearFit fe_fit = fit_ols(design, y, &w_fe);
    double q_e = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double r = y(static_cast<Eigen::Index>(i)) -
                         fe_fit.predict(design.X.row(static_cast<Eigen::Index>(i)));
        q_e += w_fe(static_cast<Eigen::Index>(i)) * r * r;
    }
    const Eigen::MatrixXd W = w_fe.asDiagonal();
    const Eigen::MatrixXd xtwx = design.X.transpose() * W * design.X;
    const Eigen::MatrixXd xtw2x = design.X.transpose() * W * W * design.X;
    const double trace_correction = xtwx.ldlt().solve(xtw2x).trace();
    const double c = w_fe.sum() - trace_correction;
    double tau2 = 0.0;
    if (c > 0.0 && k > p)
        tau2 = std::max(0.0, (q_e - static_cast<double>(k - p)) / c);

    Eigen::VectorXd w_re(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) w_re(static_cast<Eigen::Index>(i)) =
        1.0 / (summaries[i].se_te * summaries[i].se_te + tau2);

    const LinearFit re_fit = fit_ols(design, y, &w_re);

    MetaRegressionFit out;
    out.coefficients = re_fit.coefficients;
    out.column_names = design.column_names;
    out.tau2 = tau2;

    std::vector<double> target_row;
    moderator_columns(schema, covariates, target_aggregates, &target_row, nullptr);
    Eigen::RowVectorXd x0(static_cast<Eigen::Index>(p));
    x0(0) = 1.0;
    for (std::size_t j = 0; j < target_row.size(); ++j)
        x0(static_cast<Eigen::Index>(j + 1)) = target_row[j];
    out.prediction = re_fit.predict(x0);

    const Eigen::MatrixXd Wre = w_re.asDiagonal();
    const Eigen::MatrixXd cov =
        (design.X.transpose() * Wre * design.X)
            .ldlt()
            .solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p),
                                             static_cast<Eigen::Index>(p)));
    out.prediction_se = std::sqrt(std::max(0.0, double(x0 * cov * x0.transpose())));
    return out;
}

} // namespace ipdma
