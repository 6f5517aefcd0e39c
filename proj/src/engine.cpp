#include "ipdma/engine.hpp"

#include <algorithm>

#include "ipdma/errors.hpp"

namespace ipdma {

const std::vector<std::string>& estimator_vocabulary() {
    static const std::vector<std::string> ids = {"om",       "ipw",   "ipw-h", "np-ipw", "np-ipw-h",
                                                 "dr",       "fe-ma", "re-ma", "meta-reg"};
    return ids;
}

bool is_transport_estimator(const std::string& id) {
    return id == "om" || id == "ipw" || id == "ipw-h" || id == "np-ipw" || id == "np-ipw-h" ||
           id == "dr";
}

namespace {

template <typename T>
struct Slot {
    bool attempted = false;
    std::optional<T> value;
    std::string error;
};

} // namespace

struct TargetEngine::Impl {
    const MetaDataset& ds;
    EngineOptions options;
    TargetAssignment assign;

    Slot<OutcomeModels> outcome;
    Slot<ParticipationModel> participation_logistic;
    Slot<ParticipationModel> participation_kernel;
    Slot<TreatmentModel> treatment;
    Slot<WeightDiagnostics> weights_logistic;
    Slot<WeightDiagnostics> weights_kernel;
    Slot<std::vector<StudySummary>> summaries;

    Impl(const MetaDataset& dataset, std::string target, EngineOptions opts)
        : ds(dataset), options(std::move(opts)), assign(partition(dataset, std::move(target))) {}

    template <typename T, typename F>
    const T& get(Slot<T>& slot, F&& make) {
        if (!slot.attempted) {
            slot.attempted = true;
            try {
                slot.value = make();
            } catch (const std::exception& e) {
                slot.error = e.what();
            }
        }
        if (!slot.value) throw EstimationError(slot.error);
        return *slot.value;
    }

    const OutcomeModels& outcome_models() {
        return get(outcome, [&] { return fit_outcome_models(ds, assign); });
    }

    const ParticipationModel& participation(ParticipationMethod method) {
        auto& slot = method == ParticipationMethod::Logistic ? participation_logistic
                                                             : participation_kernel;
        return get(slot, [&] {
            return fit_participation(ds, assign, method, options.clip_epsilon,
                                     options.bandwidth_seed);
        });
    }

    const TreatmentModel& treatment_model() {
        return get(treatment, [&] { return fit_treatment_model(ds, assign); });
    }

    const WeightDiagnostics& weights(ParticipationMethod method) {
        auto& slot =
            method == ParticipationMethod::Logistic ? weights_logistic : weights_kernel;
        return get(slot, [&] {
            return compute_transport_weights(ds, assign, participation(method), treatment_model());
        });
    }

    const std::vector<StudySummary>& contributing_summaries() {
        return get(summaries, [&] {
            auto set = study_summaries(ds, assign.contributing_rows);
            // degenerate (zero-se) studies cannot enter inverse-variance pooling
            std::vector<StudySummary> usable;
            for (auto& s : set.summaries)
                if (!s.degenerate) usable.push_back(std::move(s));
            return usable;
        });
    }

    TransportEstimate estimate(const std::string& id) {
        if (id == "om") return estimate_om(ds, assign, outcome_models());
        if (id == "ipw") return estimate_ipw(ds, assign, weights(ParticipationMethod::Logistic), false);
        if (id == "ipw-h") return estimate_ipw(ds, assign, weights(ParticipationMethod::Logistic), true);
        if (id == "np-ipw") {
            auto est = estimate_ipw(ds, assign, weights(ParticipationMethod::Kernel), false);
            est.estimator = "np-ipw";
            return est;
        }
        if (id == "np-ipw-h") {
            auto est = estimate_ipw(ds, assign, weights(ParticipationMethod::Kernel), true);
            est.estimator = "np-ipw-h";
            return est;
        }
        if (id == "dr")
            return estimate_dr(ds, assign, outcome_models(), weights(options.dr_participation));
        if (id == "fe-ma") {
            const auto pooled = fixed_effect(contributing_summaries());
            TransportEstimate est;
            est.estimator = "fe-ma";
            est.point = pooled.estimate;
            return est;
        }
        if (id == "re-ma") {
            const auto pooled = random_effects_dl(contributing_summaries());
            TransportEstimate est;
            est.estimator = "re-ma";
            est.point = pooled.estimate;
            return est;
        }
        if (id == "meta-reg") {
            std::vector<std::string> moderators = options.meta_covariates;
            if (moderators.empty())
                for (const auto& spec : ds.schema().entries()) moderators.push_back(spec.name);
            const auto fit = meta_regression(contributing_summaries(), ds.schema(), moderators,
                                             aggregate_covariates(ds, assign.target_rows));
            TransportEstimate est;
            est.estimator = "meta-reg";
            est.point = fit.prediction;
            return est;
        }
        throw ConfigError("unknown estimator id '" + id + "'");
    }
};

TargetEngine::TargetEngine(const MetaDataset& ds, std::string target_study, EngineOptions options)
    : impl_(std::make_unique<Impl>(ds, std::move(target_study), std::move(options))) {}

TargetEngine::~TargetEngine() = default;

const TargetAssignment& TargetEngine::assignment() const { return impl_->assign; }

TransportEstimate TargetEngine::estimate(const std::string& estimator_id) {
    return impl_->estimate(estimator_id);
}

const WeightDiagnostics& TargetEngine::weights(ParticipationMethod method) {
    return impl_->weights(method);
}

const ParticipationModel& TargetEngine::participation(ParticipationMethod method) {
    return impl_->participation(method);
}

const std::vector<StudySummary>& TargetEngine::contributing_summaries() {
    return impl_->contributing_summaries();
}

} // namespace ipdma
