#include "ipdma/ols.hpp"

#include <cmath>

#include <boost/math/distributions/students_t.hpp>

#include "ipdma/errors.hpp"

namespace ipdma {

namespace {

std::string collinear_column_list(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr,
                                  const std::vector<std::string>& names) {
    // columns moved past the numerical rank by the pivoting are the ones the
    // retained columns already span
    const auto perm = qr.colsPermutation().indices();
    std::string out;
    for (Eigen::Index j = qr.rank(); j < perm.size(); ++j) {
        if (!out.empty()) out += ", ";
        const auto idx = static_cast<std::size_t>(perm(j));
        out += idx < names.size() ? "'" + names[idx] + "'" : "#" + std::to_string(idx);
    }
    return out;
}

Eigen::MatrixXd apply_weights(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::VectorXd* weights, Eigen::VectorXd& yw) {
    if (!weights) {
        yw = y;
        return X;
    }
    if (weights->size() != y.size())
        throw EstimationError("ols: weight vector length does not match row count");
    Eigen::MatrixXd Xw = X;
    yw = y;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double w = (*weights)(i);
        if (w < 0.0 || !std::isfinite(w))
            throw EstimationError("ols: weights must be finite and nonnegative");
        const double s = std::sqrt(w);
        Xw.row(i) *= s;
        yw(i) *= s;
    }
    return Xw;
}

} // namespace

double LinearFit::predict(const Eigen::RowVectorXd& x) const {
    if (x.size() != coefficients.size())
        throw EstimationError("ols: prediction input has " + std::to_string(x.size()) +
                              " columns, fit has " + std::to_string(coefficients.size()));
    return x * coefficients;
}

LinearFit fit_ols(const DesignMatrix& design, const Eigen::VectorXd& y,
                  const Eigen::VectorXd* weights) {
    const Eigen::Index n = design.X.rows();
    const Eigen::Index p = design.X.cols();
    if (y.size() != n)
        throw EstimationError("ols: response length does not match design rows");
    if (n < p)
        throw EstimationError("ols: " + std::to_string(n) + " rows cannot identify " +
                              std::to_string(p) + " coefficients");

    // a constant column past the intercept aliases it; name it directly
    // rather than letting the pivoting blame the intercept
    for (Eigen::Index j = 1; j < p; ++j) {
        const double head = design.X(0, j);
        if ((design.X.col(j).array() == head).all())
            throw EstimationError(
                "ols: design is rank deficient; collinear columns: '" +
                (static_cast<std::size_t>(j) < design.column_names.size()
                     ? design.column_names[static_cast<std::size_t>(j)]
                     : "#" + std::to_string(j)) +
                "' is constant");
    }

    Eigen::VectorXd yw;
    const Eigen::MatrixXd Xw = apply_weights(design.X, y, weights, yw);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    qr.setThreshold(1e-10);
    if (qr.rank() < p)
        throw EstimationError("ols: design is rank deficient; collinear columns: " +
                              collinear_column_list(qr, design.column_names));

    LinearFit fit;
    fit.coefficients = qr.solve(yw);
    fit.column_names = design.column_names;
    const Eigen::VectorXd resid = yw - Xw * fit.coefficients;
    fit.residual_variance = n > p ? resid.squaredNorm() / static_cast<double>(n - p) : 0.0;
    return fit;
}

LinearInference fit_ols_inference(const DesignMatrix& design, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd* weights) {
    LinearInference out;
    out.fit = fit_ols(design, y, weights);

    const Eigen::Index n = design.X.rows();
    const Eigen::Index p = design.X.cols();
    if (n <= p)
        throw EstimationError("ols: inference needs residual degrees of freedom (n > p)");
    out.df = static_cast<std::size_t>(n - p);

    Eigen::VectorXd yw;
    const Eigen::MatrixXd Xw = apply_weights(design.X, y, weights, yw);
    const Eigen::MatrixXd xtx_inv =
        (Xw.transpose() * Xw).ldlt().solve(Eigen::MatrixXd::Identity(p, p));

    out.standard_errors.resize(p);
    out.t_values.resize(p);
    out.p_values.resize(p);
    const boost::math::students_t_distribution<double> tdist(static_cast<double>(out.df));
    for (Eigen::Index j = 0; j < p; ++j) {
        out.standard_errors(j) = std::sqrt(out.fit.residual_variance * xtx_inv(j, j));
        if (out.standard_errors(j) > 0.0) {
            out.t_values(j) = out.fit.coefficients(j) / out.standard_errors(j);
            out.p_values(j) = 2.0 * boost::math::cdf(tdist, -std::abs(out.t_values(j)));
        } else {
            out.t_values(j) = 0.0;
            out.p_values(j) = 1.0;
        }
    }
    return out;
}

} // namespace ipdma
