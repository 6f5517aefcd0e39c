#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ipdma/schema.hpp"

namespace ipdma {

/// Nadaraya-Watson conditional probability model over mixed covariates:
/// Gaussian product kernel for continuous coordinates, Aitchison-Aitken for
/// categorical ones. Labels are binary (1 = target membership).
struct KernelModel {
    CovariateSchema schema;
    Eigen::MatrixXd train;          // n x d covariate values (level indices for categorical)
    std::vector<int> labels;        // 1 = target, 0 = contributing
    std::vector<double> bandwidths; // h > 0 (continuous), lambda in [0, (L-1)/L] (categorical)
};

struct KernelProb {
    double probability = 0.0;
    bool no_local_support = false; // every kernel weight underflowed
};

/// Pr[label = 1 | x]. Exactly-zero kernel contributions stay exactly zero
/// (an Aitchison-Aitken kernel with lambda = 0 gives rows whose level differs
/// from the query no weight at all).
KernelProb kernel_prob(const KernelModel& model, const Eigen::RowVectorXd& x);

struct BandwidthSelection {
    std::vector<double> bandwidths;
    double loo_log_likelihood = 0.0;
    std::vector<std::pair<double, double>> search_bounds; // per coordinate
};

inline constexpr std::uint64_t kBandwidthSeed = 0x9D2C5680u;

/// Leave-one-out conditional likelihood of the labels under given bandwidths;
/// exposed so selection results can be checked against independent searches.
double loo_log_likelihood(const CovariateSchema& schema, const Eigen::MatrixXd& covs,
                          const std::vector<int>& labels, const std::vector<double>& bandwidths);

/// Maximizes the leave-one-out label likelihood by log-spaced coordinate
/// descent with grid refinement and 3 restarts (fixed seed, deterministic).
/// Requires >= 10 rows and both labels present; a zero-variance continuous
/// covariate is an error instructing its removal or categorical
/// re-declaration.
BandwidthSelection select_bandwidths(const CovariateSchema& schema, const Eigen::MatrixXd& covs,
                                     const std::vector<int>& labels,
                                     std::uint64_t seed = kBandwidthSeed);

KernelModel fit_kernel_model(const CovariateSchema& schema, const Eigen::MatrixXd& covs,
                             const std::vector<int>& labels,
                             std::uint64_t seed = kBandwidthSeed);

} // namespace ipdma
