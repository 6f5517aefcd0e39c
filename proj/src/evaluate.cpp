#include "ipdma/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "ipdma/errors.hpp"
#include "ipdma/parallel.hpp"
#include "ipdma/rng.hpp"

namespace ipdma {

namespace {

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_fixed(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string csv_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else if (c == '\n') out += ' ';
        else out += c;
    }
    return out;
}

} // namespace

ObservedEffect observed_te(const MetaDataset& ds, const std::string& target_study) {
    const auto& pair = ds.pair();
    std::vector<double> y_t, y_c;
    for (auto i : ds.study_rows(target_study)) {
        const auto& rec = ds.records()[i];
        if (rec.arm == pair.treatment) y_t.push_back(rec.outcome);
        else if (rec.arm == pair.comparator) y_c.push_back(rec.outcome);
    }
    if (y_t.size() < 2)
        throw EstimationError("observed: target study '" + target_study + "' arm '" +
                              pair.treatment + "' has n = " + std::to_string(y_t.size()) +
                              " (< 2)");
    if (y_c.size() < 2)
        throw EstimationError("observed: target study '" + target_study + "' arm '" +
                              pair.comparator + "' has n = " + std::to_string(y_c.size()) +
                              " (< 2)");

    auto stats = [](const std::vector<double>& y) {
        double sum = 0.0;
        for (double v : y) sum += v;
        const double mean = sum / static_cast<double>(y.size());
        double ss = 0.0;
        for (double v : y) ss += (v - mean) * (v - mean);
        return std::pair<double, double>{mean, ss / static_cast<double>(y.size() - 1)};
    };
    const auto [mean_t, var_t] = stats(y_t);
    const auto [mean_c, var_c] = stats(y_c);

    ObservedEffect out;
    out.te = mean_t - mean_c;
    out.se = std::sqrt(var_t / static_cast<double>(y_t.size()) +
                       var_c / static_cast<double>(y_c.size()));
    out.n_treatment = y_t.size();
    out.n_comparator = y_c.size();
    return out;
}

namespace {

EvalSummary summarize(const EvalReport& report, std::size_t estimator_index) {
    EvalSummary s;
    s.estimator = report.estimators[estimator_index];
    double sum_abs = 0.0, sum_sad = 0.0;
    for (std::size_t t = 0; t < report.targets.size(); ++t) {
        const auto& cell = report.cells[estimator_index][t];
        if (!cell.ok || !report.observed[t].ok) continue;
        const auto& obs = report.observed_detail[t];
        const double diff = std::abs(cell.estimate - obs.te);
        sum_abs += diff;
        sum_sad += diff / std::sqrt(1.0 / static_cast<double>(obs.n_treatment) +
                                    1.0 / static_cast<double>(obs.n_comparator));
        ++s.cells_used;
    }
    if (s.cells_used > 0) {
        s.aad = sum_abs / static_cast<double>(s.cells_used);
        s.sad = sum_sad / static_cast<double>(s.cells_used);
        s.sad_sum = sum_sad;
    }
    return s;
}

} // namespace

EvalReport loso_evaluate(const MetaDataset& ds, const std::vector<std::string>& estimators,
                         const EngineOptions& options, int threads) {
    for (const auto& id : estimators) {
        const auto& vocab = estimator_vocabulary();
        if (std::find(vocab.begin(), vocab.end(), id) == vocab.end())
            throw ConfigError("unknown estimator id '" + id + "'");
    }
    if (ds.studies().size() < 2)
        throw DataError("loso: needs at least 2 studies, got " +
                        std::to_string(ds.studies().size()));

    EvalReport report;
    report.targets = ds.studies();
    report.estimators = estimators;
    report.observed.resize(report.targets.size());
    report.observed_detail.resize(report.targets.size());
    report.cells.assign(estimators.size(), std::vector<EvalCell>(report.targets.size()));

    parallel_for(report.targets.size(), threads, [&](std::size_t t) {
        const auto& target = report.targets[t];
        try {
            const auto obs = observed_te(ds, target);
            report.observed_detail[t] = obs;
            report.observed[t] = {true, obs.te, ""};
        } catch (const std::exception& e) {
            report.observed[t] = {false, 0.0, e.what()};
        }
        TargetEngine engine(ds, target, options);
        for (std::size_t e = 0; e < estimators.size(); ++e) {
            try {
                report.cells[e][t] = {true, engine.estimate(estimators[e]).point, ""};
            } catch (const std::exception& ex) {
                report.cells[e][t] = {false, 0.0, ex.what()};
            }
        }
    });

    for (std::size_t e = 0; e < estimators.size(); ++e)
        report.summaries.push_back(summarize(report, e));
    return report;
}

namespace {

std::size_t estimator_index(const EvalReport& report, const std::string& estimator) {
    for (std::size_t e = 0; e < report.estimators.size(); ++e)
        if (report.estimators[e] == estimator) return e;
    throw EstimationError("report does not contain estimator '" + estimator + "'");
}

} // namespace

double avg_abs_diff(const EvalReport& report, const std::string& estimator) {
    const auto s = summarize(report, estimator_index(report, estimator));
    if (s.cells_used == 0)
        throw EstimationError("avg_abs_diff: no non-failed cells for '" + estimator + "'");
    return s.aad;
}

double st_abs_diff(const EvalReport& report, const std::string& estimator) {
    const auto s = summarize(report, estimator_index(report, estimator));
    if (s.cells_used == 0)
        throw EstimationError("st_abs_diff: no non-failed cells for '" + estimator + "'");
    return s.sad;
}

std::vector<BootstrapResult> bootstrap_ci_set(const MultiEstimatorClosure& estimators,
                                              std::size_t count, const MetaDataset& ds,
                                              const TargetAssignment& assign,
                                              const BootstrapSpec& spec, double level,
                                              int threads) {
    if (spec.replicates < 1) throw EstimationError("bootstrap: needs at least 1 replicate");
    if (!(level > 0.0 && level < 1.0))
        throw EstimationError("bootstrap: level must lie in (0, 1)");
    if (count == 0) return {};

    // study x arm strata over the retained rows, in dataset order
    std::vector<std::size_t> retained = assign.target_rows;
    retained.insert(retained.end(), assign.contributing_rows.begin(),
                    assign.contributing_rows.end());
    std::sort(retained.begin(), retained.end());

    std::map<std::string, std::map<std::string, std::vector<std::size_t>>> grouped;
    for (auto i : retained) grouped[ds.records()[i].study][ds.records()[i].arm].push_back(i);

    std::vector<std::vector<std::size_t>> strata;
    for (const auto& study : ds.studies()) {
        auto it = grouped.find(study);
        if (it == grouped.end()) continue;
        for (const auto& arm : {ds.pair().treatment, ds.pair().comparator}) {
            auto jt = it->second.find(arm);
            if (jt != it->second.end()) strata.push_back(jt->second);
        }
    }

    std::vector<std::vector<ReplicateValue>> outcomes(spec.replicates);

    parallel_for(spec.replicates, threads, [&](std::size_t r) {
        Rng rng(spec.seed, static_cast<std::uint64_t>(r));
        std::vector<IndividualRecord> records;
        records.reserve(retained.size());
        for (const auto& stratum : strata)
            for (std::size_t draw = 0; draw < stratum.size(); ++draw)
                records.push_back(ds.records()[stratum[rng.bounded(stratum.size())]]);
        try {
            MetaDataset replicate(ds.schema(), std::move(records), ds.pair());
            outcomes[r] = estimators(replicate, assign.target_study);
        } catch (const std::exception& e) {
            // dataset-level failure counts against every estimator
            outcomes[r].assign(count, {false, 0.0, e.what()});
        }
        if (outcomes[r].size() != count)
            throw EstimationError("bootstrap: closure returned the wrong number of estimates");
        for (auto& value : outcomes[r])
            if (value.ok && !std::isfinite(value.value)) {
                value.ok = false;
                value.error = "replicate produced a non-finite estimate";
            }
    });

    std::vector<BootstrapResult> results(count);
    for (std::size_t e = 0; e < count; ++e) {
        auto& result = results[e];
        result.replicates = spec.replicates;
        std::set<std::string> reasons;
        for (std::size_t r = 0; r < spec.replicates; ++r) {
            const auto& value = outcomes[r][e];
            if (value.ok) {
                result.estimates.push_back(value.value);
            } else {
                ++result.failures;
                reasons.insert(value.error);
            }
        }

        if (static_cast<double>(result.failures) > 0.2 * static_cast<double>(spec.replicates) ||
            result.estimates.empty()) {
            std::ostringstream msg;
            msg << "bootstrap: " << result.failures << " of " << spec.replicates
                << " replicates failed (> 20%); reasons:";
            std::size_t shown = 0;
            for (const auto& reason : reasons) {
                msg << "\n  - " << reason;
                if (++shown == 5) break;
            }
            result.failure = msg.str();
            continue;
        }

        std::vector<double> sorted = result.estimates;
        std::sort(sorted.begin(), sorted.end());
        auto quantile = [&](double q) {
            // type-7 empirical quantile with linear interpolation
            const double h = q * static_cast<double>(sorted.size() - 1);
            const auto lo = static_cast<std::size_t>(std::floor(h));
            const auto hi = std::min(lo + 1, sorted.size() - 1);
            const double frac = h - std::floor(h);
            return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
        };
        const double tail = (1.0 - level) / 2.0;
        result.ci = {level, quantile(tail), quantile(1.0 - tail)};
    }
    return results;
}

BootstrapResult bootstrap_ci(const EstimatorClosure& estimator, const MetaDataset& ds,
                             const TargetAssignment& assign, const BootstrapSpec& spec,
                             double level, int threads) {
    const MultiEstimatorClosure closure = [&estimator](const MetaDataset& rds,
                                                       const std::string& target) {
        std::vector<ReplicateValue> out(1);
        try {
            out[0] = {true, estimator(rds, target), ""};
        } catch (const std::exception& e) {
            out[0] = {false, 0.0, e.what()};
        }
        return out;
    };
    auto results = bootstrap_ci_set(closure, 1, ds, assign, spec, level, threads);
    if (!results[0].failure.empty()) throw EstimationError(results[0].failure);
    return std::move(results[0]);
}

ScreenResult screen_effect_modifiers(const MetaDataset& ds,
                                     const std::vector<std::string>& candidates, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw EstimationError("screen: alpha must lie in (0, 1)");
    for (const auto& name : candidates)
        if (!ds.schema().index_of(name))
            throw DataError("screen: unknown covariate '" + name + "'");

    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ds.records().size(); ++i)
        if (ds.in_pair(i)) rows.push_back(i);
    if (rows.size() < 4) throw EstimationError("screen: too few rows in the treatment pair");

    const MetaDataset sub = restrict_covariates(ds, candidates);
    const DesignMatrix base = build_design(sub, rows);
    const std::size_t p_base = base.cols();

    // columns: base | arm | base-covariates x arm
    DesignMatrix design;
    design.column_names = base.column_names;
    design.column_names.push_back("arm");
    for (std::size_t j = 1; j < p_base; ++j)
        design.column_names.push_back(base.column_names[j] + ":arm");

    const std::size_t p = p_base + 1 + (p_base - 1);
    design.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p));
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& rec = ds.records()[rows[i]];
        const double arm = rec.arm == ds.pair().treatment ? 1.0 : 0.0;
        const auto ei = static_cast<Eigen::Index>(i);
        design.X.block(ei, 0, 1, static_cast<Eigen::Index>(p_base)) = base.X.row(ei);
        design.X(ei, static_cast<Eigen::Index>(p_base)) = arm;
        for (std::size_t j = 1; j < p_base; ++j)
            design.X(ei, static_cast<Eigen::Index>(p_base + j)) = base.X(ei, static_cast<Eigen::Index>(j)) * arm;
        y(ei) = rec.outcome;
    }

    const LinearInference inference = fit_ols_inference(design, y);

    // map interaction columns back to their covariates (base columns past the
    // intercept line up with schema order of the candidate subset)
    std::vector<std::string> column_covariate(p_base, "");
    {
        std::size_t col = 1;
        for (const auto& spec : sub.schema().entries()) {
            const std::size_t width =
                spec.kind == CovariateKind::Continuous ? 1 : spec.levels.size() - 1;
            for (std::size_t w = 0; w < width; ++w) column_covariate[col++] = spec.name;
        }
    }

    ScreenResult out;
    std::set<std::string> selected;
    for (std::size_t j = 1; j < p_base; ++j) {
        const std::size_t col = p_base + j;
        InteractionTest test;
        test.covariate = column_covariate[j];
        test.term = design.column_names[col];
        test.coefficient = inference.fit.coefficients(static_cast<Eigen::Index>(col));
        test.p_value = inference.p_values(static_cast<Eigen::Index>(col));
        if (test.p_value < alpha) selected.insert(test.covariate);
        out.tests.push_back(std::move(test));
    }
    for (const auto& name : candidates)
        if (selected.count(name)) out.selected.push_back(name);
    return out;
}

std::string render_eval_table(const EvalReport& report) {
    const std::string fail_marker = "fail";
    std::vector<std::vector<std::string>> grid;

    std::vector<std::string> header = {"Target Study", "Observed TE"};
    for (const auto& id : report.estimators) header.push_back(id);
    grid.push_back(header);

    for (std::size_t t = 0; t < report.targets.size(); ++t) {
        std::vector<std::string> row = {report.targets[t]};
        row.push_back(report.observed[t].ok ? format_fixed(report.observed[t].estimate)
                                            : fail_marker);
        for (std::size_t e = 0; e < report.estimators.size(); ++e)
            row.push_back(report.cells[e][t].ok ? format_fixed(report.cells[e][t].estimate)
                                                : fail_marker);
        grid.push_back(row);
    }

    std::vector<std::string> aad_row = {"Avg Abs Diff", ""};
    std::vector<std::string> sad_row = {"St Abs Diff", ""};
    std::vector<std::string> used_row = {"Cells Used", ""};
    for (const auto& s : report.summaries) {
        aad_row.push_back(s.cells_used ? format_fixed(s.aad) : fail_marker);
        sad_row.push_back(s.cells_used ? format_fixed(s.sad) : fail_marker);
        used_row.push_back(std::to_string(s.cells_used) + "/" +
                           std::to_string(report.targets.size()));
    }
    grid.push_back(aad_row);
    grid.push_back(sad_row);
    grid.push_back(used_row);

    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& row : grid)
        for (std::size_t c = 0; c < row.size(); ++c)
            widths[c] = std::max(widths[c], row[c].size());

    std::ostringstream out;
    for (const auto& row : grid) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out << "  ";
            out << std::left << std::setw(static_cast<int>(widths[c])) << row[c];
        }
        out << '\n';
    }

    bool any_failure = false;
    for (std::size_t t = 0; t < report.targets.size() && !any_failure; ++t) {
        if (!report.observed[t].ok) any_failure = true;
        for (std::size_t e = 0; e < report.estimators.size() && !any_failure; ++e)
            if (!report.cells[e][t].ok) any_failure = true;
    }
    if (any_failure) {
        out << "\nfailures:\n";
        for (std::size_t t = 0; t < report.targets.size(); ++t) {
            if (!report.observed[t].ok)
                out << "  " << report.targets[t] << "/observed: " << report.observed[t].failure
                    << '\n';
            for (std::size_t e = 0; e < report.estimators.size(); ++e)
                if (!report.cells[e][t].ok)
                    out << "  " << report.targets[t] << "/" << report.estimators[e] << ": "
                        << report.cells[e][t].failure << '\n';
        }
    }
    return out.str();
}

std::string render_eval_records(const EvalReport& report) {
    std::ostringstream out;
    out << "#cells\n";
    out << "target,estimator,status,estimate,observed_status,observed_te,n_treatment,"
           "n_comparator,failure\n";
    for (std::size_t t = 0; t < report.targets.size(); ++t) {
        const auto& obs = report.observed[t];
        const auto& detail = report.observed_detail[t];
        for (std::size_t e = 0; e < report.estimators.size(); ++e) {
            const auto& cell = report.cells[e][t];
            out << report.targets[t] << ',' << report.estimators[e] << ','
                << (cell.ok ? "ok" : "fail") << ',' << (cell.ok ? format_full(cell.estimate) : "")
                << ',' << (obs.ok ? "ok" : "fail") << ','
                << (obs.ok ? format_full(obs.estimate) : "") << ','
                << (obs.ok ? std::to_string(detail.n_treatment) : "") << ','
                << (obs.ok ? std::to_string(detail.n_comparator) : "") << ',' << '"'
                << (cell.ok ? "" : csv_escape(cell.failure)) << '"' << '\n';
        }
    }
    out << "#summaries\n";
    out << "estimator,aad,sad,sad_sum,cells_used\n";
    for (const auto& s : report.summaries) {
        out << s.estimator << ',';
        if (s.cells_used) {
            out << format_full(s.aad) << ',' << format_full(s.sad) << ',' << format_full(s.sad_sum);
        } else {
            out << ",,";
        }
        out << ',' << s.cells_used << '\n';
    }
    return out.str();
}

} // namespace ipdma
