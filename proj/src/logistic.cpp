#include "ipdma/logistic.hpp"

#include <cmath>
#include <sstream>

#include "ipdma/errors.hpp"

namespace ipdma {

namespace {

constexpr double kProbClip = 1e-10;
constexpr double kRelTol = 1e-10;
constexpr int kMaxIterations = 50;
constexpr int kMaxHalvings = 30;
constexpr double kCoefDivergence = 1e3;
// |eta| at which the clipped probability pins at the bound
const double kEtaPin = std::log((1.0 - kProbClip) / kProbClip);

double clip_probability(double p) {
    if (p < kProbClip) return kProbClip;
    if (p > 1.0 - kProbClip) return 1.0 - kProbClip;
    return p;
}

double deviance(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double mu = clip_probability(plogis(eta(i)));
        dev -= 2.0 * (y(i) == 1.0 ? std::log(mu) : std::log(1.0 - mu));
    }
    return dev;
}

} // namespace

double plogis(double eta) {
    if (eta >= 0.0) {
        const double e = std::exp(-eta);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

double LogisticFit::predict_probability(const Eigen::RowVectorXd& x) const {
    if (x.size() != coefficients.size())
        throw EstimationError("logistic: prediction input has " + std::to_string(x.size()) +
                              " columns, fit has " + std::to_string(coefficients.size()));
    return plogis(x * coefficients);
}

LogisticFit fit_logistic(const DesignMatrix& design, const Eigen::VectorXd& y) {
    const Eigen::Index n = design.X.rows();
    const Eigen::Index p = design.X.cols();
    if (y.size() != n)
        throw EstimationError("logistic: response length does not match design rows");

    std::size_t ones = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (y(i) != 0.0 && y(i) != 1.0)
            throw EstimationError("logistic: response must be binary 0/1");
        if (y(i) == 1.0) ++ones;
    }
    if (ones == 0 || ones == static_cast<std::size_t>(n))
        throw EstimationError("logistic: both classes must be present (got " +
                              std::to_string(ones) + " of " + std::to_string(n) + " positives)");
    if (n < p)
        throw EstimationError("logistic: " + std::to_string(n) + " rows cannot identify " +
                              std::to_string(p) + " coefficients");

    LogisticFit fit;
    fit.column_names = design.column_names;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
    double dev_old = deviance(eta, y);
    std::vector<double> trace{dev_old};
    bool near_converged = false;

    for (int iter = 1; iter <= kMaxIterations; ++iter) {
        fit.iterations = iter;

        // weighted least squares on the working response
        Eigen::MatrixXd Xw(n, p);
        Eigen::VectorXd zw(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mu = clip_probability(plogis(eta(i)));
            const double w = mu * (1.0 - mu);
            const double sw = std::sqrt(w);
            const double z = eta(i) + (y(i) - mu) / w;
            Xw.row(i) = design.X.row(i) * sw;
            zw(i) = z * sw;
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
        qr.setThreshold(1e-12);
        if (qr.rank() < p)
            throw EstimationError("logistic: working design is rank deficient");
        Eigen::VectorXd beta_prop = qr.solve(zw);
        Eigen::VectorXd eta_prop = design.X * beta_prop;
        double dev_new = deviance(eta_prop, y);

        // step-halving safeguard; the slack keeps rounding noise near the
        // optimum from cancelling the final Newton step
        const double slack = 1e-12 * (std::abs(dev_old) + 1.0);
        for (int h = 0; h < kMaxHalvings && !(dev_new <= dev_old + slack); ++h) {
            beta_prop = 0.5 * (beta + beta_prop);
            eta_prop = design.X * beta_prop;
            dev_new = deviance(eta_prop, y);
        }

        beta = beta_prop;
        eta = eta_prop;
        trace.push_back(dev_new);

        if (std::abs(dev_new - dev_old) / (std::abs(dev_new) + 0.1) < kRelTol) {
            // one more Newton step after the deviance settles polishes the
            // coefficients to full accuracy before stopping
            if (near_converged) {
                fit.converged = true;
                dev_old = dev_new;
                break;
            }
            near_converged = true;
        } else {
            near_converged = false;
        }
        dev_old = dev_new;
    }
    if (near_converged) fit.converged = true;

    fit.coefficients = beta;
    fit.deviance = dev_old;
    for (Eigen::Index j = 0; j < p && !fit.separation_detected; ++j)
        if (std::abs(beta(j)) > kCoefDivergence) fit.separation_detected = true;
    for (Eigen::Index i = 0; i < n && !fit.separation_detected; ++i)
        if (std::abs(eta(i)) >= kEtaPin) fit.separation_detected = true;

    if (!fit.converged && !fit.separation_detected) {
        std::ostringstream msg;
        msg << "logistic: IRLS did not converge in " << kMaxIterations
            << " iterations without detected separation; deviance trace:";
        for (double d : trace) msg << ' ' << d;
        throw EstimationError(msg.str());
    }
    return fit;
}

} // namespace ipdma
