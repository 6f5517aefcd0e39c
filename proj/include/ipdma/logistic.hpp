#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ipdma/design.hpp"

namespace ipdma {

/// Numerically safe inverse logit.
double plogis(double eta);

struct LogisticFit {
    Eigen::VectorXd coefficients;
    bool converged = false;
    bool separation_detected = false;
    int iterations = 0;
    double deviance = 0.0;
    std::vector<std::string> column_names;

    /// Raw fitted probability; can reach 0 or 1 in floating point for extreme
    /// linear predictors (deliberately not clipped -- downstream weighting
    /// treats that as a finding, not something to mask).
    double predict_probability(const Eigen::RowVectorXd& x) const;
};

/// Logistic regression by iteratively reweighted least squares.
/// Convergence: relative deviance change < 1e-10, at most 50 iterations,
/// step-halving when a step increases the deviance. Probabilities are clipped
/// to [1e-10, 1 - 1e-10] inside the IRLS loop only. separation_detected is
/// set when fitted probabilities pin at the clipping bound or a coefficient
/// exceeds the divergence threshold; non-convergence without separation is an
/// error carrying the deviance trace.
LogisticFit fit_logistic(const DesignMatrix& design, const Eigen::VectorXd& y);

} // namespace ipdma
