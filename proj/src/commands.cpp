#include "ipdma/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <boost/math/distributions/normal.hpp>

#include "ipdma/aggregate.hpp"
#include "ipdma/engine.hpp"
#include "ipdma/errors.hpp"
#include "ipdma/evaluate.hpp"

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

void write_file(const std::string& dir, const std::string& name, const std::string& content,
                std::ostream& log) {
    std::filesystem::create_directories(dir);
    const auto path = std::filesystem::path(dir) / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << content;
    if (!out) throw DataError("write to '" + path.string() + "' failed");
    log << "wrote " << path.string() << '\n';
}

std::string render_grid(const std::vector<std::vector<std::string>>& grid) {
    std::vector<std::size_t> widths;
    for (const auto& row : grid) {
        if (widths.size() < row.size()) widths.resize(row.size(), 0);
        for (std::size_t c = 0; c < row.size(); ++c)
            widths[c] = std::max(widths[c], row[c].size());
    }
    std::ostringstream out;
    for (const auto& row : grid) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out << "  ";
            out << std::left << std::setw(static_cast<int>(widths[c])) << row[c];
        }
        out << '\n';
    }
    return out.str();
}

EngineOptions engine_options(const RunConfig& config) {
    EngineOptions options;
    options.dr_participation = config.participation;
    options.clip_epsilon = config.clip_epsilon;
    options.meta_covariates = config.meta_covariates;
    return options;
}

/// Load + transforms + optional effect-modifier screening restriction.
MetaDataset prepare_dataset(const RunConfig& config, std::ostream& log) {
    LoadReport report;
    MetaDataset ds = load_dataset(config.data_path, config.schema, config.pair, &report);
    log << "loaded " << ds.records().size() << " rows from " << config.data_path;
    if (report.rows_dropped_missing > 0) {
        log << " (" << report.rows_dropped_missing << " dropped by complete-case rule:";
        for (const auto& [column, count] : report.missing_by_column)
            if (count > 0) log << ' ' << column << "=" << count;
        log << ")";
    }
    log << '\n';

    for (const auto& t : config.transforms) {
        ds = transform_covariate(ds, t.covariate, t.kind);
        log << (t.kind == TransformKind::Log ? "log-transformed" : "standardized") << " covariate "
            << t.covariate << '\n';
    }

    if (config.screen) {
        std::vector<std::string> candidates;
        for (const auto& spec : ds.schema().entries()) candidates.push_back(spec.name);
        const auto screen = screen_effect_modifiers(ds, candidates, config.alpha);
        log << "effect-modifier screen (alpha = " << config.alpha << ") selected";
        if (screen.selected.empty()) log << " no covariates";
        for (const auto& name : screen.selected) log << ' ' << name;
        log << '\n';
        ds = restrict_covariates(ds, screen.selected);
    }
    return ds;
}

struct EstimateRow {
    std::string estimator;
    bool ok = false;
    TransportEstimate estimate;
    std::string failure;
    std::string note; // e.g. bootstrap CI failure
};

std::string weight_dump(const MetaDataset& ds, const WeightDiagnostics& diag) {
    std::ostringstream out;
    out << "row,study,arm,weight\n";
    for (std::size_t i = 0; i < diag.rows.size(); ++i) {
        const auto& rec = ds.records()[diag.rows[i]];
        out << diag.rows[i] << ',' << rec.study << ',' << rec.arm << ','
            << format_full(diag.weights[i]) << '\n';
    }
    return out.str();
}

} // namespace

int cmd_transport(const RunConfig& config, std::ostream& log) {
    if (config.loso)
        throw ConfigError("the transport command needs a named target study (target = <id>)");

    const MetaDataset ds = prepare_dataset(config, log);
    const EngineOptions options = engine_options(config);
    TargetEngine engine(ds, config.target, options);
    for (const auto& warning : engine.assignment().warnings) log << "warning: " << warning << '\n';

    const double z = boost::math::quantile(boost::math::normal_distribution<double>(),
                                           1.0 - (1.0 - config.ci_level) / 2.0);

    std::vector<EstimateRow> rows;
    for (const auto& id : config.estimators) {
        EstimateRow row;
        row.estimator = id;
        try {
            row.estimate = engine.estimate(id);
            row.ok = true;

            if (is_transport_estimator(id)) {
                // bootstrap CIs come later, shared across estimators
            } else if (id == "fe-ma" || id == "re-ma") {
                const auto pooled = id == "fe-ma" ? fixed_effect(engine.contributing_summaries())
                                                  : random_effects_dl(engine.contributing_summaries());
                row.estimate.ci =
                    ConfidenceInterval{config.ci_level, pooled.estimate - z * pooled.se,
                                       pooled.estimate + z * pooled.se};
            } else if (id == "meta-reg") {
                std::vector<std::string> moderators = config.meta_covariates;
                if (moderators.empty())
                    for (const auto& spec : ds.schema().entries()) moderators.push_back(spec.name);
                const auto fit =
                    meta_regression(engine.contributing_summaries(), ds.schema(), moderators,
                                    aggregate_covariates(ds, engine.assignment().target_rows));
                row.estimate.ci =
                    ConfidenceInterval{config.ci_level, fit.prediction - z * fit.prediction_se,
                                       fit.prediction + z * fit.prediction_se};
            }
        } catch (const std::exception& e) {
            row.failure = e.what();
        }
        rows.push_back(std::move(row));
    }

    if (config.bootstrap > 0) {
        // one resampled dataset per replicate, one engine shared by every
        // transport estimator so kernel/logistic fits are reused
        std::vector<std::size_t> boot_rows;
        std::vector<std::string> boot_ids;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].ok && is_transport_estimator(rows[i].estimator)) {
                boot_rows.push_back(i);
                boot_ids.push_back(rows[i].estimator);
            }
        }
        if (!boot_ids.empty()) {
            const BootstrapSpec spec{config.bootstrap, *config.seed};
            const MultiEstimatorClosure closure = [&boot_ids, &options](
                                                      const MetaDataset& rds,
                                                      const std::string& target) {
                std::vector<ReplicateValue> out(boot_ids.size());
                TargetEngine replicate_engine(rds, target, options);
                for (std::size_t e = 0; e < boot_ids.size(); ++e) {
                    try {
                        out[e] = {true, replicate_engine.estimate(boot_ids[e]).point, ""};
                    } catch (const std::exception& ex) {
                        out[e] = {false, 0.0, ex.what()};
                    }
                }
                return out;
            };
            const auto boot = bootstrap_ci_set(closure, boot_ids.size(), ds, engine.assignment(),
                                               spec, config.ci_level, config.threads);
            for (std::size_t e = 0; e < boot_ids.size(); ++e) {
                auto& row = rows[boot_rows[e]];
                if (!boot[e].failure.empty()) {
                    std::string note = boot[e].failure;
                    std::replace(note.begin(), note.end(), '\n', ' ');
                    row.note = note;
                } else {
                    row.estimate.ci = boot[e].ci;
                    if (boot[e].failures > 0)
                        row.note = std::to_string(boot[e].failures) + " of " +
                                   std::to_string(boot[e].replicates) + " replicates failed";
                }
            }
        }
    }

    // human-readable table
    std::vector<std::vector<std::string>> grid;
    grid.push_back({"estimator", "estimate", "ci_lo", "ci_hi", "notes"});
    for (const auto& row : rows) {
        std::vector<std::string> line = {row.estimator};
        if (row.ok) {
            line.push_back(format_fixed(row.estimate.point));
            if (row.estimate.ci) {
                line.push_back(format_fixed(row.estimate.ci->lo));
                line.push_back(format_fixed(row.estimate.ci->hi));
            } else {
                line.push_back("");
                line.push_back("");
            }
            line.push_back(row.note);
        } else {
            line.push_back("fail");
            line.push_back("");
            line.push_back("");
            line.push_back(row.failure);
        }
        grid.push_back(std::move(line));
    }
    std::ostringstream table;
    table << "target study: " << config.target << '\n';
    table << "ci level: " << format_fixed(config.ci_level) << '\n';
    table << render_grid(grid);

    // machine-readable records
    std::ostringstream csv;
    csv << "estimator,status,estimate,ci_level,ci_lo,ci_hi,arm_mean_treatment,"
           "arm_mean_comparator,implied_weight_sum,ess_treatment,ess_comparator,failure\n";
    for (const auto& row : rows) {
        csv << row.estimator << ',' << (row.ok ? "ok" : "fail") << ',';
        if (row.ok) {
            csv << format_full(row.estimate.point) << ',';
            if (row.estimate.ci)
                csv << format_full(row.estimate.ci->level) << ',' << format_full(row.estimate.ci->lo)
                    << ',' << format_full(row.estimate.ci->hi) << ',';
            else
                csv << ",,,";
            if (row.estimate.arm_means)
                csv << format_full(row.estimate.arm_means->first) << ','
                    << format_full(row.estimate.arm_means->second) << ',';
            else
                csv << ",,";
            if (row.estimate.diagnostics)
                csv << format_full(row.estimate.diagnostics->implied_weight_sum) << ','
                    << format_full(row.estimate.diagnostics->ess_treatment) << ','
                    << format_full(row.estimate.diagnostics->ess_comparator) << ',';
            else
                csv << ",,,";
            csv << '"' << row.note << '"' << '\n';
        } else {
            std::string failure = row.failure;
            std::replace(failure.begin(), failure.end(), '\n', ' ');
            std::replace(failure.begin(), failure.end(), '"', '\'');
            csv << ",,,,,,,,," << '"' << failure << '"' << '\n';
        }
    }

    write_file(config.out_dir, "transport_estimates.txt", table.str(), log);
    write_file(config.out_dir, "transport_estimates.csv", csv.str(), log);

    // weight dumps for the participation methods the run used
    auto method_used = [&](ParticipationMethod m) {
        for (const auto& row : rows) {
            if (!row.ok) continue;
            const auto& id = row.estimator;
            if ((id == "ipw" || id == "ipw-h") && m == ParticipationMethod::Logistic) return true;
            if ((id == "np-ipw" || id == "np-ipw-h") && m == ParticipationMethod::Kernel) return true;
            if (id == "dr" && m == config.participation) return true;
        }
        return false;
    };
    for (const auto method : {ParticipationMethod::Logistic, ParticipationMethod::Kernel}) {
        if (!method_used(method)) continue;
        write_file(config.out_dir, "weights_" + to_string(method) + ".csv",
                   weight_dump(ds, engine.weights(method)), log);
    }

    bool all_ok = true;
    for (const auto& row : rows) all_ok = all_ok && row.ok;
    for (const auto& row : rows)
        if (!row.ok) log << "estimator " << row.estimator << " failed: " << row.failure << '\n';
    return all_ok ? kExitOk : kExitEstimationError;
}

int cmd_loso(const RunConfig& config, std::ostream& log) {
    if (!config.loso) throw ConfigError("the loso command needs 'target = loso'");

    const MetaDataset ds = prepare_dataset(config, log);
    const EvalReport report =
        loso_evaluate(ds, config.estimators, engine_options(config), config.threads);

    write_file(config.out_dir, "loso_table.txt", render_eval_table(report), log);
    write_file(config.out_dir, "loso_cells.csv", render_eval_records(report), log);

    bool all_ok = true;
    for (const auto& obs : report.observed) all_ok = all_ok && obs.ok;
    for (const auto& column : report.cells)
        for (const auto& cell : column) all_ok = all_ok && cell.ok;
    if (!all_ok) log << "some cells failed; partial results written\n";
    return all_ok ? kExitOk : kExitEstimationError;
}

int cmd_diagnose(const RunConfig& config, std::ostream& log) {
    if (config.loso)
        throw ConfigError("the diagnose command needs a named target study (target = <id>)");

    const MetaDataset ds = prepare_dataset(config, log);
    TargetEngine engine(ds, config.target, engine_options(config));
    const auto& assign = engine.assignment();
    for (const auto& warning : assign.warnings) log << "warning: " << warning << '\n';

    const auto method = config.participation;
    const auto& diag = engine.weights(method);

    // top-decile weight concentration
    std::vector<double> sorted = diag.weights;
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    double total = 0.0;
    for (double w : sorted) total += w;
    const std::size_t top = (sorted.size() + 9) / 10;
    double top_share = 0.0;
    if (total > 0.0) {
        double top_sum = 0.0;
        for (std::size_t i = 0; i < top && i < sorted.size(); ++i) top_sum += sorted[i];
        top_share = top_sum / total;
    }

    std::ostringstream summary;
    summary << "target study: " << config.target << '\n';
    summary << "participation method: " << to_string(method) << '\n';
    if (method == ParticipationMethod::Logistic) {
        const auto& fit = *engine.participation(method).logistic;
        summary << "logistic separation detected: " << (fit.separation_detected ? "yes" : "no")
                << '\n';
    } else {
        const auto& model = *engine.participation(method).kernel;
        summary << "selected bandwidths:";
        for (std::size_t k = 0; k < model.bandwidths.size(); ++k)
            summary << ' ' << model.schema.at(k).name << '=' << format_full(model.bandwidths[k]);
        summary << '\n';
    }
    summary << "target rows: " << assign.target_rows.size() << '\n';
    summary << "contributing rows: " << diag.rows.size() << " (treatment " << diag.n_treatment
            << ", comparator " << diag.n_comparator << ")\n";
    summary << "rows with no local support: " << diag.no_support_rows << '\n';
    summary << "implied study weight sum: " << format_fixed(diag.implied_weight_sum);
    if (std::abs(diag.implied_weight_sum - 1.0) > 0.2)
        summary << "  ** deviates substantially from 1: covariate overlap is problematic **";
    summary << '\n';
    summary << "effective sample size: treatment " << format_fixed(diag.ess_treatment)
            << " of " << diag.n_treatment << ", comparator " << format_fixed(diag.ess_comparator)
            << " of " << diag.n_comparator << '\n';
    summary << "top-decile weight share: " << format_fixed(top_share) << '\n';

    std::vector<std::vector<std::string>> study_grid;
    study_grid.push_back({"study", "implied_weight", "implied_te"});
    for (const auto& sw : diag.study_weights)
        study_grid.push_back(
            {sw.study, format_fixed(sw.weight), sw.te_defined ? format_fixed(sw.te) : "undefined"});
    summary << '\n' << render_grid(study_grid);

    // per-covariate overlap: target vs contributing ranges
    std::ostringstream overlap;
    overlap << "covariate,group,n,min,mean,max\n";
    std::vector<std::vector<std::string>> overlap_grid;
    overlap_grid.push_back({"covariate", "group", "min", "mean", "max"});
    for (std::size_t k = 0; k < ds.schema().size(); ++k) {
        const auto& spec = ds.schema().at(k);
        struct Group {
            const char* name;
            const std::vector<std::size_t>* rows;
        };
        const Group groups[2] = {{"target", &assign.target_rows},
                                 {"contributing", &assign.contributing_rows}};
        for (const auto& group : groups) {
            if (spec.kind == CovariateKind::Continuous) {
                double lo = 0.0, hi = 0.0, sum = 0.0;
                bool first = true;
                for (auto i : *group.rows) {
                    const double v = ds.records()[i].covariates[k];
                    if (first) lo = hi = v;
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                    sum += v;
                    first = false;
                }
                const double mean =
                    group.rows->empty() ? 0.0 : sum / static_cast<double>(group.rows->size());
                overlap << spec.name << ',' << group.name << ',' << group.rows->size() << ','
                        << format_full(lo) << ',' << format_full(mean) << ',' << format_full(hi)
                        << '\n';
                overlap_grid.push_back({spec.name, group.name, format_fixed(lo),
                                        format_fixed(mean), format_fixed(hi)});
            } else {
                std::vector<std::size_t> counts(spec.levels.size(), 0);
                for (auto i : *group.rows)
                    ++counts[static_cast<std::size_t>(ds.records()[i].covariates[k])];
                for (std::size_t l = 0; l < spec.levels.size(); ++l) {
                    const double share = group.rows->empty()
                                             ? 0.0
                                             : static_cast<double>(counts[l]) /
                                                   static_cast<double>(group.rows->size());
                    overlap << spec.name << '=' << spec.levels[l] << ',' << group.name << ','
                            << group.rows->size() << ",," << format_full(share) << ",\n";
                    overlap_grid.push_back(
                        {spec.name + "=" + spec.levels[l], group.name, "", format_fixed(share), ""});
                }
            }
        }
    }
    summary << '\n' << render_grid(overlap_grid);

    std::ostringstream study_csv;
    study_csv << "study,implied_weight,implied_te\n";
    for (const auto& sw : diag.study_weights)
        study_csv << sw.study << ',' << format_full(sw.weight) << ','
                  << (sw.te_defined ? format_full(sw.te) : "") << '\n';

    write_file(config.out_dir, "diagnose_summary.txt", summary.str(), log);
    write_file(config.out_dir, "weights_individual.csv", weight_dump(ds, diag), log);
    write_file(config.out_dir, "weights_study.csv", study_csv.str(), log);
    write_file(config.out_dir, "overlap.csv", overlap.str(), log);
    return kExitOk;
}

int cmd_screen(const RunConfig& config, std::ostream& log) {
    const MetaDataset ds = [&] {
        // screening runs on the un-restricted covariate set
        RunConfig plain = config;
        plain.screen = false;
        return prepare_dataset(plain, log);
    }();

    std::vector<std::string> candidates;
    for (const auto& spec : ds.schema().entries()) candidates.push_back(spec.name);
    const auto result = screen_effect_modifiers(ds, candidates, config.alpha);

    std::vector<std::vector<std::string>> grid;
    grid.push_back({"covariate", "interaction", "coefficient", "p_value", "selected"});
    std::ostringstream csv;
    csv << "covariate,interaction,coefficient,p_value,selected\n";
    for (const auto& test : result.tests) {
        const bool selected = std::find(result.selected.begin(), result.selected.end(),
                                        test.covariate) != result.selected.end();
        grid.push_back({test.covariate, test.term, format_fixed(test.coefficient),
                        format_fixed(test.p_value), selected ? "yes" : "no"});
        csv << test.covariate << ',' << test.term << ',' << format_full(test.coefficient) << ','
            << format_full(test.p_value) << ',' << (selected ? "yes" : "no") << '\n';
    }

    std::ostringstream table;
    table << "effect-modifier screen, alpha = " << format_fixed(config.alpha) << '\n';
    table << render_grid(grid);
    table << "selected:";
    if (result.selected.empty()) table << " (none)";
    for (const auto& name : result.selected) table << ' ' << name;
    table << '\n';

    write_file(config.out_dir, "screen.txt", table.str(), log);
    write_file(config.out_dir, "screen.csv", csv.str(), log);
    return kExitOk;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Transport treatment effects from multi-trial participant data to a target "
                 "population, with traditional meta-analysis baselines and a leave-one-study-out "
                 "evaluation harness."};
    app.require_subcommand(1);

    std::string config_path;
    int (*handler)(const RunConfig&, std::ostream&) = nullptr;

    auto add = [&](const std::string& name, const std::string& description,
                   int (*fn)(const RunConfig&, std::ostream&)) {
        auto* sub = app.add_subcommand(name, description);
        sub->add_option("config", config_path, "run configuration file")->required();
        sub->callback([&handler, fn] { handler = fn; });
        return sub;
    };
    add("transport", "estimate effects for one named target study", &cmd_transport);
    add("loso", "leave-one-study-out evaluation over all studies", &cmd_loso);
    add("diagnose", "weight and overlap diagnostics for one target", &cmd_diagnose);
    add("screen", "effect-modifier screening report", &cmd_screen);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfigError;
    }

    try {
        const RunConfig config = parse_config(config_path);
        return handler(config, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitDataError;
    } catch (const EstimationError& e) {
        err << "estimation error: " << e.what() << '\n';
        return kExitEstimationError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitEstimationError;
    }
}

} // namespace ipdma
