#include "ipdma/kernel.hpp"

#include <algorithm>
#include <cmath>

#include "ipdma/errors.hpp"
#include "ipdma/rng.hpp"

namespace ipdma {

namespace {

constexpr double kLikClip = 1e-12;    // probability floor inside the LOO likelihood
constexpr double kNoSupport = 1e-300; // kernel-mass underflow threshold
constexpr int kCoarseGridContinuous = 31;
constexpr int kCoarseGridCategorical = 21;
constexpr int kRefineGrid = 11;
constexpr int kRefineRounds = 5;
constexpr int kMaxSweeps = 12;
constexpr int kRestarts = 3;
constexpr double kBandwidthSpan = 1e3; // h searched in [sd/span, sd*span]

double continuous_kernel(double dx, double h) {
    const double t = dx / h;
    return std::exp(-0.5 * t * t);
}

double categorical_kernel(bool same, double lambda, std::size_t levels) {
    return same ? 1.0 - lambda : lambda / static_cast<double>(levels - 1);
}

double coordinate_kernel(const CovariateSpec& spec, double xi, double xj, double bw) {
    if (spec.kind == CovariateKind::Continuous) return continuous_kernel(xi - xj, bw);
    return categorical_kernel(xi == xj, bw, spec.levels.size());
}

void validate_inputs(const CovariateSchema& schema, const Eigen::MatrixXd& covs,
                     const std::vector<int>& labels) {
    if (static_cast<std::size_t>(covs.cols()) != schema.size())
        throw EstimationError("kernel: covariate matrix has " + std::to_string(covs.cols()) +
                              " columns, schema declares " + std::to_string(schema.size()));
    if (static_cast<std::size_t>(covs.rows()) != labels.size())
        throw EstimationError("kernel: label count does not match row count");
}

struct SearchBounds {
    double lo = 0.0;
    double hi = 0.0;
    bool log_scale = false;
};

std::vector<SearchBounds> search_bounds(const CovariateSchema& schema,
                                        const Eigen::MatrixXd& covs) {
    const auto n = covs.rows();
    std::vector<SearchBounds> bounds(schema.size());
    for (std::size_t k = 0; k < schema.size(); ++k) {
        const auto& spec = schema.at(k);
        if (spec.kind == CovariateKind::Continuous) {
            const double mean = covs.col(static_cast<Eigen::Index>(k)).mean();
            double ss = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double d = covs(i, static_cast<Eigen::Index>(k)) - mean;
                ss += d * d;
            }
            const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
            if (sd <= 0.0)
                throw EstimationError(
                    "kernel: covariate '" + spec.name +
                    "' has zero variance; remove it or declare it categorical");
            bounds[k] = {sd / kBandwidthSpan, sd * kBandwidthSpan, true};
        } else {
            const double L = static_cast<double>(spec.levels.size());
            bounds[k] = {0.0, (L - 1.0) / L, false};
        }
    }
    return bounds;
}

/// LOO label likelihood given per-pair kernel weights; rows with no leave-out
/// mass contribute the clipped floor (heavy penalty).
double loo_from_weights(const Eigen::MatrixXd& w, const std::vector<int>& labels) {
    const Eigen::Index n = w.rows();
    Eigen::VectorXd label_vec(n);
    for (Eigen::Index i = 0; i < n; ++i)
        label_vec(i) = labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : 0.0;
    const Eigen::VectorXd row_sums = w.rowwise().sum();
    const Eigen::VectorXd target_sums = w * label_vec;

    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double self = w(i, i);
        const double den = row_sums(i) - self;
        const double num = target_sums(i) - self * label_vec(i);
        double p_used;
        if (den < kNoSupport) {
            p_used = kLikClip;
        } else {
            const double p = num / den;
            p_used = label_vec(i) == 1.0 ? p : 1.0 - p;
            if (p_used < kLikClip) p_used = kLikClip;
        }
        ll += std::log(p_used);
    }
    return ll;
}

class Selector {
public:
    Selector(const CovariateSchema& schema, const Eigen::MatrixXd& covs,
             const std::vector<int>& labels, std::vector<SearchBounds> bounds)
        : schema_(schema), labels_(labels), bounds_(std::move(bounds)), n_(covs.rows()),
          d_(static_cast<std::size_t>(covs.cols())) {
        // per-coordinate pair statistics: squared distances for continuous
        // coordinates, same-level indicators for categorical ones
        pair_stats_.reserve(d_);
        for (std::size_t k = 0; k < d_; ++k) {
            const auto col = covs.col(static_cast<Eigen::Index>(k));
            Eigen::ArrayXXd stat(n_, n_);
            if (schema.at(k).kind == CovariateKind::Continuous) {
                for (Eigen::Index i = 0; i < n_; ++i)
                    for (Eigen::Index j = 0; j < n_; ++j) {
                        const double d = col(i) - col(j);
                        stat(i, j) = d * d;
                    }
            } else {
                for (Eigen::Index i = 0; i < n_; ++i)
                    for (Eigen::Index j = 0; j < n_; ++j)
                        stat(i, j) = col(i) == col(j) ? 1.0 : 0.0;
            }
            pair_stats_.push_back(std::move(stat));
        }
    }

    double evaluate(const std::vector<double>& bw) const {
        Eigen::MatrixXd w = Eigen::MatrixXd::Ones(n_, n_);
        for (std::size_t k = 0; k < d_; ++k) multiply_coordinate(w, k, bw[k]);
        return loo_from_weights(w, labels_);
    }

    /// One coordinate-descent pass from `bw`; returns the achieved LOO
    /// log-likelihood and updates bw in place.
    double descend(std::vector<double>& bw) const {
        double current = evaluate(bw);
        if (d_ == 0) return current;
        for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
            const double before = current;
            for (std::size_t k = 0; k < d_; ++k) {
                // partial product over the frozen coordinates
                Eigen::MatrixXd partial = Eigen::MatrixXd::Ones(n_, n_);
                for (std::size_t l = 0; l < d_; ++l)
                    if (l != k) multiply_coordinate(partial, l, bw[l]);
                current = line_search(partial, k, bw[k], current, &bw[k]);
            }
            if (current - before < 1e-10) break;
        }
        return current;
    }

private:
    void multiply_coordinate(Eigen::MatrixXd& w, std::size_t k, double bw) const {
        const auto& stat = pair_stats_[k];
        if (schema_.at(k).kind == CovariateKind::Continuous) {
            w.array() *= (stat * (-0.5 / (bw * bw))).exp();
        } else {
            const double L = static_cast<double>(schema_.at(k).levels.size());
            const double off = bw / (L - 1.0);
            // exact zeros for differing levels when bw == 0
            w.array() *= stat * (1.0 - bw) + (1.0 - stat) * off;
        }
    }

    double candidate_ll(const Eigen::MatrixXd& partial, std::size_t k, double value) const {
        Eigen::MatrixXd w = partial;
        multiply_coordinate(w, k, value);
        return loo_from_weights(w, labels_);
    }

    // Continuous grids run from large h to small so exact ties resolve toward
    // smoothing; categorical grids run from 0 up so ties resolve toward none.
    std::vector<double> grid(std::size_t k, double lo, double hi, int points) const {
        std::vector<double> values(static_cast<std::size_t>(points));
        if (bounds_[k].log_scale) {
            const double llo = std::log(lo), lhi = std::log(hi);
            for (int g = 0; g < points; ++g)
                values[static_cast<std::size_t>(g)] =
                    std::exp(lhi + (llo - lhi) * g / static_cast<double>(points - 1));
            values.front() = hi; // pin endpoints exactly (exp/log do not round-trip)
            values.back() = lo;
        } else {
            for (int g = 0; g < points; ++g)
                values[static_cast<std::size_t>(g)] =
                    lo + (hi - lo) * g / static_cast<double>(points - 1);
            values.front() = lo;
            values.back() = hi;
        }
        return values;
    }

    double line_search(const Eigen::MatrixXd& partial, std::size_t k, double current_value,
                       double current_ll, double* out) const {
        const auto& b = bounds_[k];
        const int coarse =
            b.log_scale ? kCoarseGridContinuous : kCoarseGridCategorical;

        double best_value = current_value;
        double best_ll = current_ll;
        auto consider = [&](const std::vector<double>& candidates) {
            for (double v : candidates) {
                const double ll = candidate_ll(partial, k, v);
                if (ll > best_ll) {
                    best_ll = ll;
                    best_value = v;
                }
            }
        };

        auto values = grid(k, b.lo, b.hi, coarse);
        consider(values);

        // shrink the grid around the incumbent
        double span_lo = b.lo, span_hi = b.hi;
        for (int round = 0; round < kRefineRounds; ++round) {
            double step;
            if (b.log_scale) {
                step = (std::log(span_hi) - std::log(span_lo)) / (round == 0 ? coarse - 1 : kRefineGrid - 1);
                span_lo = std::max(b.lo, best_value * std::exp(-step));
                span_hi = std::min(b.hi, best_value * std::exp(step));
            } else {
                step = (span_hi - span_lo) / (round == 0 ? coarse - 1 : kRefineGrid - 1);
                span_lo = std::max(b.lo, best_value - step);
                span_hi = std::min(b.hi, best_value + step);
            }
            if (span_hi <= span_lo) break;
            consider(grid(k, span_lo, span_hi, kRefineGrid));
        }

        *out = best_value;
        return best_ll;
    }

    const CovariateSchema& schema_;
    const std::vector<int>& labels_;
    std::vector<SearchBounds> bounds_;
    Eigen::Index n_;
    std::size_t d_;
    std::vector<Eigen::ArrayXXd> pair_stats_;
};

} // namespace

double loo_log_likelihood(const CovariateSchema& schema, const Eigen::MatrixXd& covs,
                          const std::vector<int>& labels, const std::vector<double>& bandwidths) {
    validate_inputs(schema, covs, labels);
    if (bandwidths.size() != schema.size())
        throw EstimationError("kernel: bandwidth vector length does not match schema size");
    Eigen::MatrixXd w = Eigen::MatrixXd::Ones(covs.rows(), covs.rows());
    for (std::size_t k = 0; k < schema.size(); ++k) {
        const auto& spec = schema.at(k);
        for (Eigen::Index i = 0; i < covs.rows(); ++i)
            for (Eigen::Index j = i + 1; j < covs.rows(); ++j) {
                const double kij = coordinate_kernel(
                    spec, covs(i, static_cast<Eigen::Index>(k)),
                    covs(j, static_cast<Eigen::Index>(k)), bandwidths[k]);
                w(i, j) *= kij;
                w(j, i) = w(i, j);
            }
    }
    return loo_from_weights(w, labels);
}

BandwidthSelection select_bandwidths(const CovariateSchema& schema, const Eigen::MatrixXd& covs,
                                     const std::vector<int>& labels, std::uint64_t seed) {
    validate_inputs(schema, covs, labels);
    const auto n = covs.rows();
    if (n < 10)
        throw EstimationError("kernel: bandwidth selection needs at least 10 rows, got " +
                              std::to_string(n));
    bool any_target = false, any_other = false;
    for (int l : labels) (l == 1 ? any_target : any_other) = true;
    if (!any_target || !any_other)
        throw EstimationError("kernel: both labels must be present for bandwidth selection");

    auto bounds = search_bounds(schema, covs);
    Selector selector(schema, covs, labels, bounds);

    const std::size_t d = schema.size();
    std::size_t d_cont = 0;
    for (const auto& spec : schema.entries())
        if (spec.kind == CovariateKind::Continuous) ++d_cont;

    BandwidthSelection best;
    best.loo_log_likelihood = -std::numeric_limits<double>::infinity();
    for (const auto& b : bounds) best.search_bounds.emplace_back(b.lo, b.hi);

    for (int restart = 0; restart < kRestarts; ++restart) {
        Rng rng(seed, static_cast<std::uint64_t>(restart));
        std::vector<double> bw(d);
        for (std::size_t k = 0; k < d; ++k) {
            const auto& b = bounds[k];
            if (b.log_scale) {
                // rule-of-thumb start, randomized on later restarts
                const double sd = b.hi / kBandwidthSpan;
                double h = sd * std::pow(static_cast<double>(n),
                                         -1.0 / (4.0 + static_cast<double>(std::max<std::size_t>(d_cont, 1))));
                if (restart > 0)
                    h = std::exp(std::log(b.lo) +
                                 rng.next_double() * (std::log(b.hi) - std::log(b.lo)));
                bw[k] = std::clamp(h, b.lo, b.hi);
            } else {
                bw[k] = restart == 0 ? 0.5 * b.hi : rng.next_double() * b.hi;
            }
        }
        const double ll = selector.descend(bw);
        if (ll > best.loo_log_likelihood) {
            best.loo_log_likelihood = ll;
            best.bandwidths = bw;
        }
    }
    return best;
}

KernelModel fit_kernel_model(const CovariateSchema& schema, const Eigen::MatrixXd& covs,
                             const std::vector<int>& labels, std::uint64_t seed) {
    KernelModel model;
    model.schema = schema;
    model.train = covs;
    model.labels = labels;
    model.bandwidths = select_bandwidths(schema, covs, labels, seed).bandwidths;
    return model;
}

KernelProb kernel_prob(const KernelModel& model, const Eigen::RowVectorXd& x) {
    if (static_cast<std::size_t>(x.size()) != model.schema.size())
        throw EstimationError("kernel: query vector length does not match schema size");
    if (model.bandwidths.size() != model.schema.size())
        throw EstimationError("kernel: bandwidth vector length does not match schema size");
    for (std::size_t k = 0; k < model.schema.size(); ++k) {
        const auto& spec = model.schema.at(k);
        const double bw = model.bandwidths[k];
        if (spec.kind == CovariateKind::Continuous) {
            if (!(bw > 0.0))
                throw EstimationError("kernel: bandwidth for '" + spec.name +
                                      "' must be positive");
        } else {
            const double L = static_cast<double>(spec.levels.size());
            if (bw < 0.0 || bw > (L - 1.0) / L)
                throw EstimationError("kernel: smoothing for '" + spec.name +
                                      "' must lie in [0, (L-1)/L]");
        }
    }
    const Eigen::Index n = model.train.rows();
    double den = 0.0, num = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double w = 1.0;
        for (std::size_t k = 0; k < model.schema.size(); ++k) {
            w *= coordinate_kernel(model.schema.at(k), x(static_cast<Eigen::Index>(k)),
                                   model.train(i, static_cast<Eigen::Index>(k)),
                                   model.bandwidths[k]);
            if (w == 0.0) break;
        }
        den += w;
        if (model.labels[static_cast<std::size_t>(i)] == 1) num += w;
    }
    if (den < kNoSupport) return {0.0, true};
    double p = num / den;
    if (p < 0.0) p = 0.0;
    if (p > 1.0) p = 1.0;
    return {p, false};
}

} // namespace ipdma
