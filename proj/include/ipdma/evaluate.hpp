#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ipdma/engine.hpp"

namespace ipdma {

struct ObservedEffect {
    double te = 0.0;
    double se = 0.0;
    std::size_t n_treatment = 0;
    std::size_t n_comparator = 0;
};

/// Difference of arm means within the target study (each arm needs n >= 2).
ObservedEffect observed_te(const MetaDataset& ds, const std::string& target_study);

/// One report cell; failures are first-class values, never silent zeros.
struct EvalCell {
    bool ok = false;
    double estimate = 0.0;
    std::string failure;
};

struct EvalSummary {
    std::string estimator;
    double aad = 0.0;     // mean |estimate - observed|
    double sad = 0.0;     // mean standardized absolute difference
    double sad_sum = 0.0; // un-averaged SAD sum, also reported
    std::size_t cells_used = 0;
};

/// Target-by-estimator estimate matrix with observed effects and summary
/// rows, the shape of the leave-one-study-out comparison tables.
struct EvalReport {
    std::vector<std::string> targets;
    std::vector<EvalCell> observed;               // .estimate = observed TE
    std::vector<ObservedEffect> observed_detail;  // se + arm sizes where ok
    std::vector<std::string> estimators;
    std::vector<std::vector<EvalCell>> cells;     // [estimator][target]
    std::vector<EvalSummary> summaries;           // aligned with estimators
};

/// Treats each study in turn as the target and runs every requested
/// estimator against the remainder. Cell failures are recorded and the
/// harness continues. Deterministic for a given dataset/options/seed,
/// independent of the thread count.
EvalReport loso_evaluate(const MetaDataset& ds, const std::vector<std::string>& estimators,
                         const EngineOptions& options, int threads = 1);

/// Mean absolute difference from the observed effect over non-failed cells.
double avg_abs_diff(const EvalReport& report, const std::string& estimator);

/// Mean of |estimate - observed| / sqrt(1/n_t + 1/n_c) over non-failed cells.
double st_abs_diff(const EvalReport& report, const std::string& estimator);

struct BootstrapSpec {
    std::size_t replicates = 0;
    std::uint64_t seed = 0;
};

using EstimatorClosure = std::function<double(const MetaDataset&, const std::string& target_study)>;

struct BootstrapResult {
    ConfidenceInterval ci;
    std::size_t replicates = 0;
    std::size_t failures = 0;
    std::vector<double> estimates; // successful replicates, replicate order
    std::string failure; // non-empty when the failure rate exceeded 20%
};

/// Percentile bootstrap resampling rows with replacement within each
/// study x arm stratum (target strata included) and refitting everything per
/// replicate. Identical seeds give identical intervals regardless of thread
/// count. A replicate failure rate above 20% is an error reporting the
/// collected reasons.
BootstrapResult bootstrap_ci(const EstimatorClosure& estimator, const MetaDataset& ds,
                             const TargetAssignment& assign, const BootstrapSpec& spec,
                             double level, int threads = 1);

/// One bootstrap value per estimator for a single resampled dataset.
struct ReplicateValue {
    bool ok = false;
    double value = 0.0;
    std::string error;
};
using MultiEstimatorClosure =
    std::function<std::vector<ReplicateValue>(const MetaDataset&, const std::string& target_study)>;

/// Shared-replicate variant: the closure evaluates several estimators on the
/// same resampled dataset, so expensive model fits can be reused across them.
/// Per-estimator failure rates above 20% are reported in that estimator's
/// `failure` field instead of throwing.
std::vector<BootstrapResult> bootstrap_ci_set(const MultiEstimatorClosure& estimators,
                                              std::size_t count, const MetaDataset& ds,
                                              const TargetAssignment& assign,
                                              const BootstrapSpec& spec, double level,
                                              int threads = 1);

struct InteractionTest {
    std::string covariate;
    std::string term; // design column name of the interaction
    double coefficient = 0.0;
    double p_value = 1.0;
};

struct ScreenResult {
    std::vector<InteractionTest> tests;  // one per interaction column
    std::vector<std::string> selected;   // candidates with any term p < alpha
};

/// Pooled linear screen Y ~ covariates + arm + covariate x arm over all rows
/// in the treatment pair; candidates with a significant interaction term are
/// retained as effect-modifier candidates.
ScreenResult screen_effect_modifiers(const MetaDataset& ds,
                                     const std::vector<std::string>& candidates, double alpha);

/// Renders the report as an aligned text table (3-decimal cells) mirroring
/// the LOSO comparison tables, and as line-delimited full-precision records.
std::string render_eval_table(const EvalReport& report);
std::string render_eval_records(const EvalReport& report);

} // namespace ipdma
