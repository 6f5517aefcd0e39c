#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ipdma/aggregate.hpp"
#include "ipdma/transport.hpp"

namespace ipdma {

/// Fixed estimator vocabulary, mirroring the report column abbreviations.
const std::vector<std::string>& estimator_vocabulary();
bool is_transport_estimator(const std::string& id);

struct EngineOptions {
    ParticipationMethod dr_participation = ParticipationMethod::Logistic;
    double clip_epsilon = 0.0;
    std::uint64_t bandwidth_seed = kBandwidthSeed;
    std::vector<std::string> meta_covariates; // empty = all schema covariates
};

/// Shared per-target estimation context. Component model fits (outcome,
/// participation, treatment, weights, summaries) are computed lazily and
/// cached -- including their failures, so every estimator that needs a broken
/// component reports the same reason. Instances are cheap to create per
/// (dataset, target) and not thread-safe; concurrent targets use separate
/// engines.
class TargetEngine {
public:
    TargetEngine(const MetaDataset& ds, std::string target_study, EngineOptions options);
    ~TargetEngine();

    TargetEngine(const TargetEngine&) = delete;
    TargetEngine& operator=(const TargetEngine&) = delete;

    const TargetAssignment& assignment() const;

    /// Point estimate for one estimator id; throws EstimationError with the
    /// cached component failure when a required model cannot be fit.
    TransportEstimate estimate(const std::string& estimator_id);

    /// Raw (unnormalized) weight diagnostics for a participation method.
    const WeightDiagnostics& weights(ParticipationMethod method);
    const ParticipationModel& participation(ParticipationMethod method);

    /// Pooled-MA inputs: summaries of the contributing studies.
    const std::vector<StudySummary>& contributing_summaries();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace ipdma
