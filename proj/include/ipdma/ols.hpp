#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ipdma/design.hpp"

namespace ipdma {

struct LinearFit {
    Eigen::VectorXd coefficients;
    double residual_variance = 0.0; // SSR / (n - p); 0 when saturated
    std::vector<std::string> column_names;

    double predict(const Eigen::RowVectorXd& x) const;
};

/// Ordinary / weighted least squares via column-pivoted QR. Weights, when
/// given, must be nonnegative; rows are scaled by sqrt(w). Rank deficiency is
/// an error naming the collinear columns.
LinearFit fit_ols(const DesignMatrix& design, const Eigen::VectorXd& y,
                  const Eigen::VectorXd* weights = nullptr);

/// Coefficient-level inference for a (weighted) least-squares fit.
struct LinearInference {
    LinearFit fit;
    Eigen::VectorXd standard_errors;
    Eigen::VectorXd t_values;
    Eigen::VectorXd p_values; // two-sided, t distribution with n-p df
    std::size_t df = 0;
};

LinearInference fit_ols_inference(const DesignMatrix& design, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd* weights = nullptr);

} // namespace ipdma
