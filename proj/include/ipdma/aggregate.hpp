#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ipdma/dataset.hpp"

namespace ipdma {

/// Inverse-variance pooled estimate. The fixed model covers both the
/// common-effect and fixed-effects readings (identical point estimate); the
/// random model is DerSimonian-Laird.
struct PooledMAResult {
    enum class Model { Fixed, Random };
    Model model = Model::Fixed;
    double estimate = 0.0;
    double se = 0.0;
    double tau2 = 0.0; // 0 under the fixed model
    double q = 0.0;    // Cochran's Q against the fixed-effect mean
    std::vector<std::pair<std::string, double>> weights; // normalized, sum 1
};

PooledMAResult fixed_effect(const std::vector<StudySummary>& summaries);
PooledMAResult random_effects_dl(const std::vector<StudySummary>& summaries);

/// Weighted linear regression of study effects on study-aggregate covariates,
/// with method-of-moments residual heterogeneity (0-truncated) and a normal
/// approximation for the prediction interval.
struct MetaRegressionFit {
    Eigen::VectorXd coefficients;
    std::vector<std::string> column_names;
    double tau2 = 0.0;
    double prediction = 0.0;    // fitted value at the target aggregates
    double prediction_se = 0.0;
};

/// `covariates` selects schema entries to use as moderators (continuous:
/// study mean; categorical: non-reference level proportions).
/// `target_aggregates` must come from aggregate_covariates() over the target
/// rows of the same dataset.
MetaRegressionFit meta_regression(const std::vector<StudySummary>& summaries,
                                  const CovariateSchema& schema,
                                  const std::vector<std::string>& covariates,
                                  const std::vector<CovariateAggregate>& target_aggregates);

} // namespace ipdma
