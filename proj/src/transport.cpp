#include "ipdma/transport.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "ipdma/errors.hpp"

namespace ipdma {

std::string to_string(ParticipationMethod m) {
    return m == ParticipationMethod::Logistic ? "logistic" : "kernel";
}

double OutcomeModels::predict(const CovariateSchema& schema, const std::vector<double>& covariates,
                              bool treatment_arm) const {
    const Eigen::RowVectorXd x = encode_row(schema, covariates);
    return treatment_arm ? treatment.predict(x) : comparator.predict(x);
}

ParticipationModel::Probability ParticipationModel::probability(
    const CovariateSchema& schema, const std::vector<double>& covariates) const {
    Probability out;
    if (method == ParticipationMethod::Logistic) {
        out.value = logistic->predict_probability(encode_row(schema, covariates));
    } else {
        Eigen::RowVectorXd x(static_cast<Eigen::Index>(covariates.size()));
        for (std::size_t k = 0; k < covariates.size(); ++k)
            x(static_cast<Eigen::Index>(k)) = covariates[k];
        const KernelProb kp = kernel_prob(*kernel, x);
        out.value = kp.probability;
        out.no_local_support = kp.no_local_support;
    }
    if (clip_epsilon > 0.0)
        out.value = std::clamp(out.value, clip_epsilon, 1.0 - clip_epsilon);
    return out;
}

double TreatmentModel::probability(const CovariateSchema& schema,
                                   const std::vector<double>& covariates,
                                   bool treatment_arm) const {
    const double p = fit.predict_probability(encode_row(schema, covariates));
    return treatment_arm ? p : 1.0 - p;
}

namespace {

std::vector<std::size_t> arm_rows(const MetaDataset& ds, const std::vector<std::size_t>& rows,
                                  const std::string& arm) {
    std::vector<std::size_t> out;
    for (auto i : rows)
        if (ds.records()[i].arm == arm) out.push_back(i);
    return out;
}

Eigen::VectorXd outcomes_of(const MetaDataset& ds, const std::vector<std::size_t>& rows) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        y(static_cast<Eigen::Index>(i)) = ds.records()[rows[i]].outcome;
    return y;
}

LinearFit fit_arm_outcome(const MetaDataset& ds, const std::vector<std::size_t>& rows,
                          const std::string& arm) {
    const std::size_t p = design_width(ds.schema());
    if (rows.size() < p + 2)
        throw EstimationError("outcome model: arm '" + arm + "' has " +
                              std::to_string(rows.size()) + " contributing rows, needs at least " +
                              std::to_string(p + 2));
    return fit_ols(build_design(ds, rows), outcomes_of(ds, rows));
}

} // namespace

OutcomeModels fit_outcome_models(const MetaDataset& ds, const TargetAssignment& assign) {
    const auto& pair = ds.pair();
    OutcomeModels models;
    models.treatment =
        fit_arm_outcome(ds, arm_rows(ds, assign.contributing_rows, pair.treatment), pair.treatment);
    models.comparator = fit_arm_outcome(ds, arm_rows(ds, assign.contributing_rows, pair.comparator),
                                        pair.comparator);
    return models;
}

ParticipationModel fit_participation(const MetaDataset& ds, const TargetAssignment& assign,
                                     ParticipationMethod method, double clip_epsilon,
                                     std::uint64_t bandwidth_seed) {
    if (clip_epsilon < 0.0 || clip_epsilon >= 0.5)
        throw EstimationError("participation: clip_epsilon must lie in [0, 0.5)");
    if (assign.target_rows.empty())
        throw EstimationError("participation: no target rows");
    if (assign.contributing_rows.empty())
        throw EstimationError("participation: no contributing rows");

    std::vector<std::size_t> rows = assign.target_rows;
    rows.insert(rows.end(), assign.contributing_rows.begin(), assign.contributing_rows.end());

    ParticipationModel model;
    model.method = method;
    model.clip_epsilon = clip_epsilon;
    if (method == ParticipationMethod::Logistic) {
        Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
        y.head(static_cast<Eigen::Index>(assign.target_rows.size())).setOnes();
        model.logistic = fit_logistic(build_design(ds, rows), y);
    } else {
        Eigen::MatrixXd covs(static_cast<Eigen::Index>(rows.size()),
                             static_cast<Eigen::Index>(ds.schema().size()));
        std::vector<int> labels(rows.size(), 0);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t k = 0; k < ds.schema().size(); ++k)
                covs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                    ds.records()[rows[i]].covariates[k];
            labels[i] = i < assign.target_rows.size() ? 1 : 0;
        }
        model.kernel = fit_kernel_model(ds.schema(), covs, labels, bandwidth_seed);
    }
    return model;
}

TreatmentModel fit_treatment_model(const MetaDataset& ds, const TargetAssignment& assign) {
    const auto& pair = ds.pair();
    const auto& rows = assign.contributing_rows;
    std::size_t n_treatment = 0;
    for (auto i : rows)
        if (ds.records()[i].arm == pair.treatment) ++n_treatment;
    if (n_treatment == 0 || n_treatment == rows.size())
        throw EstimationError("treatment model: both arms must be present among contributing rows");

    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        y(static_cast<Eigen::Index>(i)) = ds.records()[rows[i]].arm == pair.treatment ? 1.0 : 0.0;
    TreatmentModel model;
    model.fit = fit_logistic(build_design(ds, rows), y);
    return model;
}

namespace {

/// Shared diagnostics builder. `normalized` selects the aggregate-MA
/// rewriting denominators: per-arm weight totals for Hajek weights (the
/// implied weights then sum to exactly 1), the target sample size otherwise.
WeightDiagnostics build_diagnostics(const MetaDataset& ds, const TargetAssignment& assign,
                                    std::vector<std::size_t> rows, std::vector<double> weights,
                                    std::size_t no_support_rows, bool normalized) {
    const auto& pair = ds.pair();
    WeightDiagnostics diag;
    diag.normalized = normalized;
    diag.no_support_rows = no_support_rows;

    struct StudyAccum {
        double w_t = 0.0, w_c = 0.0;
        double wy_t = 0.0, wy_c = 0.0;
    };
    std::map<std::string, StudyAccum> by_study;
    double w_t = 0.0, w_c = 0.0, w2_t = 0.0, w2_c = 0.0;

    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& rec = ds.records()[rows[i]];
        const double w = weights[i];
        const bool treatment_arm = rec.arm == pair.treatment;
        auto& acc = by_study[rec.study];
        if (treatment_arm) {
            ++diag.n_treatment;
            w_t += w;
            w2_t += w * w;
            acc.w_t += w;
            acc.wy_t += w * rec.outcome;
        } else {
            ++diag.n_comparator;
            w_c += w;
            w2_c += w * w;
            acc.w_c += w;
            acc.wy_c += w * rec.outcome;
        }
    }

    diag.ess_treatment = w2_t > 0.0 ? w_t * w_t / w2_t : 0.0;
    diag.ess_comparator = w2_c > 0.0 ? w_c * w_c / w2_c : 0.0;

    const double n0 = static_cast<double>(assign.target_rows.size());
    const double denom_t = normalized ? w_t : n0;
    const double denom_c = normalized ? w_c : n0;

    diag.implied_weight_sum = 0.0;
    for (const auto& study : ds.studies()) {
        auto it = by_study.find(study);
        if (it == by_study.end()) continue;
        const auto& acc = it->second;
        StudyImpliedWeight sw;
        sw.study = study;
        const double share_t = denom_t > 0.0 ? acc.w_t / denom_t : 0.0;
        const double share_c = denom_c > 0.0 ? acc.w_c / denom_c : 0.0;
        sw.weight = 0.5 * (share_t + share_c);
        if (acc.w_t > 0.0 && acc.w_c > 0.0) {
            sw.te = acc.wy_t / acc.w_t - acc.wy_c / acc.w_c;
            sw.te_defined = true;
        }
        diag.implied_weight_sum += sw.weight;
        diag.study_weights.push_back(std::move(sw));
    }

    diag.rows = std::move(rows);
    diag.weights = std::move(weights);
    return diag;
}

} // namespace

WeightDiagnostics compute_transport_weights(const MetaDataset& ds, const TargetAssignment& assign,
                                            const ParticipationModel& participation,
                                            const TreatmentModel& treatment) {
    const auto& pair = ds.pair();
    std::vector<std::size_t> rows = assign.contributing_rows;
    std::vector<double> weights(rows.size(), 0.0);
    std::size_t no_support = 0;
    std::vector<std::size_t> offending;

    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& rec = ds.records()[rows[i]];
        const auto p = participation.probability(ds.schema(), rec.covariates);
        if (p.no_local_support) {
            ++no_support;
            weights[i] = 0.0;
            continue;
        }
        const bool treatment_arm = rec.arm == pair.treatment;
        const double e = treatment.probability(ds.schema(), rec.covariates, treatment_arm);
        const double w = (p.value / (1.0 - p.value)) / e;
        if (!std::isfinite(w)) {
            offending.push_back(rows[i]);
            continue;
        }
        weights[i] = w;
    }

    if (!offending.empty()) {
        std::ostringstream msg;
        msg << "transport weights: infinite weight (participation probability 1 or treatment "
               "probability 0 with clip_epsilon = "
            << participation.clip_epsilon << ") for row";
        if (offending.size() > 1) msg << 's';
        const std::size_t shown = std::min<std::size_t>(offending.size(), 10);
        for (std::size_t i = 0; i < shown; ++i) msg << ' ' << offending[i];
        if (offending.size() > shown) msg << " (+" << offending.size() - shown << " more)";
        throw EstimationError(msg.str());
    }

    return build_diagnostics(ds, assign, std::move(rows), std::move(weights), no_support,
                             /*normalized=*/false);
}

TransportEstimate estimate_om(const MetaDataset& ds, const TargetAssignment& assign,
                              const OutcomeModels& models) {
    if (assign.target_rows.empty()) throw EstimationError("om: empty target");

    double sum_t = 0.0, sum_c = 0.0;
    for (auto i : assign.target_rows) {
        const auto& covs = ds.records()[i].covariates;
        sum_t += models.predict(ds.schema(), covs, true);
        sum_c += models.predict(ds.schema(), covs, false);
    }
    const double n0 = static_cast<double>(assign.target_rows.size());

    TransportEstimate est;
    est.estimator = "om";
    est.arm_means = {sum_t / n0, sum_c / n0};
    est.point = est.arm_means->first - est.arm_means->second;
    return est;
}

TransportEstimate estimate_ipw(const MetaDataset& ds, const TargetAssignment& assign,
                               const WeightDiagnostics& weights, bool hajek) {
    if (assign.target_rows.empty()) throw EstimationError("ipw: empty target");
    const auto& pair = ds.pair();

    double wy_t = 0.0, wy_c = 0.0, w_t = 0.0, w_c = 0.0;
    for (std::size_t i = 0; i < weights.rows.size(); ++i) {
        const auto& rec = ds.records()[weights.rows[i]];
        const double w = weights.weights[i];
        if (!std::isfinite(w)) throw EstimationError("ipw: non-finite weight");
        if (rec.arm == pair.treatment) {
            wy_t += w * rec.outcome;
            w_t += w;
        } else {
            wy_c += w * rec.outcome;
            w_c += w;
        }
    }

    TransportEstimate est;
    if (hajek) {
        if (w_t <= 0.0)
            throw EstimationError("ipw-h: zero total weight in arm '" + pair.treatment + "'");
        if (w_c <= 0.0)
            throw EstimationError("ipw-h: zero total weight in arm '" + pair.comparator + "'");
        est.estimator = "ipw-h";
        est.arm_means = {wy_t / w_t, wy_c / w_c};
        est.diagnostics = build_diagnostics(ds, assign, weights.rows, weights.weights,
                                            weights.no_support_rows, /*normalized=*/true);
    } else {
        const double n0 = static_cast<double>(assign.target_rows.size());
        est.estimator = "ipw";
        est.arm_means = {wy_t / n0, wy_c / n0};
        est.diagnostics = weights;
    }
    est.point = est.arm_means->first - est.arm_means->second;
    return est;
}

TransportEstimate estimate_dr(const MetaDataset& ds, const TargetAssignment& assign,
                              const OutcomeModels& models, const WeightDiagnostics& weights) {
    if (assign.target_rows.empty()) throw EstimationError("dr: empty target");
    const auto& pair = ds.pair();
    const double n0 = static_cast<double>(assign.target_rows.size());

    // weighted residual corrections from the contributing rows
    double corr_t = 0.0, corr_c = 0.0;
    for (std::size_t i = 0; i < weights.rows.size(); ++i) {
        const auto& rec = ds.records()[weights.rows[i]];
        const bool treatment_arm = rec.arm == pair.treatment;
        const double resid =
            rec.outcome - models.predict(ds.schema(), rec.covariates, treatment_arm);
        (treatment_arm ? corr_t : corr_c) += weights.weights[i] * resid;
    }

    double pred_t = 0.0, pred_c = 0.0;
    for (auto i : assign.target_rows) {
        const auto& covs = ds.records()[i].covariates;
        pred_t += models.predict(ds.schema(), covs, true);
        pred_c += models.predict(ds.schema(), covs, false);
    }

    TransportEstimate est;
    est.estimator = "dr";
    est.arm_means = {(corr_t + pred_t) / n0, (corr_c + pred_c) / n0};
    est.point = est.arm_means->first - est.arm_means->second;
    est.diagnostics = weights;
    return est;
}

} // namespace ipdma
