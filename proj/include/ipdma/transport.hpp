#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ipdma/dataset.hpp"
#include "ipdma/kernel.hpp"
#include "ipdma/logistic.hpp"
#include "ipdma/ols.hpp"

namespace ipdma {

/// Per-arm conditional outcome models E[Y | X, contributing, A], fit on the
/// pooled contributing rows of each arm.
struct OutcomeModels {
    LinearFit treatment;
    LinearFit comparator;

    double predict(const CovariateSchema& schema, const std::vector<double>& covariates,
                   bool treatment_arm) const;
};

enum class ParticipationMethod { Logistic, Kernel };

std::string to_string(ParticipationMethod m);

/// Model of target membership probability given covariates.
struct ParticipationModel {
    ParticipationMethod method = ParticipationMethod::Logistic;
    double clip_epsilon = 0.0; // 0 = no clipping
    std::optional<LogisticFit> logistic;
    std::optional<KernelModel> kernel;

    struct Probability {
        double value = 0.0;
        bool no_local_support = false;
    };
    Probability probability(const CovariateSchema& schema,
                            const std::vector<double>& covariates) const;
};

/// Logistic model of Pr[A = treatment | X, contributing] pooled over all
/// contributing rows (no study indicator).
struct TreatmentModel {
    LogisticFit fit;

    double probability(const CovariateSchema& schema, const std::vector<double>& covariates,
                       bool treatment_arm) const;
};

OutcomeModels fit_outcome_models(const MetaDataset& ds, const TargetAssignment& assign);

ParticipationModel fit_participation(const MetaDataset& ds, const TargetAssignment& assign,
                                     ParticipationMethod method, double clip_epsilon = 0.0,
                                     std::uint64_t bandwidth_seed = kBandwidthSeed);

TreatmentModel fit_treatment_model(const MetaDataset& ds, const TargetAssignment& assign);

struct StudyImpliedWeight {
    std::string study;
    double weight = 0.0; // implied aggregate-MA weight of this study
    double te = 0.0;     // weight-averaged within-study treatment effect
    bool te_defined = false;
};

/// Transport weights over contributing rows plus the aggregate-MA rewriting
/// diagnostics. implied_weight_sum near 1 indicates adequate covariate
/// overlap; deviations are reported, never corrected.
struct WeightDiagnostics {
    std::vector<std::size_t> rows; // contributing rows, ascending dataset index
    std::vector<double> weights;   // aligned with rows
    std::vector<StudyImpliedWeight> study_weights;
    double implied_weight_sum = 0.0;
    double ess_treatment = 0.0; // (sum w)^2 / sum w^2 per arm
    double ess_comparator = 0.0;
    std::size_t n_treatment = 0;
    std::size_t n_comparator = 0;
    std::size_t no_support_rows = 0; // kernel rows with no local support (weight 0)
    bool normalized = false;         // built from Hajek-normalized weights
};

/// w_i = [1 / e_{A_i}(X_i)] * p(X_i) / (1 - p(X_i)) for each contributing row.
/// A participation probability of 1 with clip_epsilon = 0 makes the weight
/// infinite; that is an error naming the offending rows.
WeightDiagnostics compute_transport_weights(const MetaDataset& ds, const TargetAssignment& assign,
                                            const ParticipationModel& participation,
                                            const TreatmentModel& treatment);

struct ConfidenceInterval {
    double level = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

struct TransportEstimate {
    std::string estimator;
    double point = 0.0;
    std::optional<std::pair<double, double>> arm_means; // (treatment, comparator)
    std::optional<ConfidenceInterval> ci;
    std::optional<WeightDiagnostics> diagnostics;
};

/// Outcome-model transport: target-averaged per-arm predictions, difference
/// taken between the two arm means.
TransportEstimate estimate_om(const MetaDataset& ds, const TargetAssignment& assign,
                              const OutcomeModels& models);

/// Inverse-probability-weighted transport. Unnormalized arms divide weighted
/// outcome sums by the target size; Hajek arms are weighted means (sample
/// bounded) with per-arm normalized diagnostics.
TransportEstimate estimate_ipw(const MetaDataset& ds, const TargetAssignment& assign,
                               const WeightDiagnostics& weights, bool hajek);

/// Doubly-robust transport: outcome-model arm means plus weighted residual
/// corrections from the contributing rows.
TransportEstimate estimate_dr(const MetaDataset& ds, const TargetAssignment& assign,
                              const OutcomeModels& models, const WeightDiagnostics& weights);

} // namespace ipdma
