#include "ipdma/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ipdma/errors.hpp"

namespace ipdma {

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_number(const std::string& cell, const std::string& column, std::size_t line_no) {
    const std::string t = trim(cell);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc{} || ptr != t.data() + t.size())
        throw DataError("load: line " + std::to_string(line_no) + ": column '" + column +
                        "': cannot parse '" + cell + "' as a number");
    if (!std::isfinite(value))
        throw DataError("load: line " + std::to_string(line_no) + ": column '" + column +
                        "': non-finite value '" + cell + "'");
    return value;
}

} // namespace

MetaDataset::MetaDataset(CovariateSchema schema, std::vector<IndividualRecord> records,
                         TreatmentPair pair)
    : schema_(std::move(schema)), records_(std::move(records)), pair_(std::move(pair)) {
    if (pair_.treatment.empty() || pair_.comparator.empty())
        throw DataError("dataset: treatment pair labels must be non-empty");
    if (pair_.treatment == pair_.comparator)
        throw DataError("dataset: treatment pair labels must be distinct");

    bool saw_treatment = false, saw_comparator = false;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        if (r.study.empty())
            throw DataError("dataset: record " + std::to_string(i) + " has an empty study id");
        if (!std::isfinite(r.outcome))
            throw DataError("dataset: record " + std::to_string(i) + " has a non-finite outcome");
        if (r.covariates.size() != schema_.size())
            throw DataError("dataset: record " + std::to_string(i) + " carries " +
                            std::to_string(r.covariates.size()) + " covariates, schema declares " +
                            std::to_string(schema_.size()));
        for (std::size_t k = 0; k < schema_.size(); ++k) {
            const auto& spec = schema_.at(k);
            double v = r.covariates[k];
            if (!std::isfinite(v))
                throw DataError("dataset: record " + std::to_string(i) + ": covariate '" +
                                spec.name + "' is non-finite");
            if (spec.kind == CovariateKind::Categorical) {
                double rounded = std::nearbyint(v);
                if (rounded != v || v < 0.0 || v >= static_cast<double>(spec.levels.size()))
                    throw DataError("dataset: record " + std::to_string(i) + ": covariate '" +
                                    spec.name + "' has level index " + format_double(v) +
                                    " outside its " + std::to_string(spec.levels.size()) +
                                    " declared levels");
            }
        }
        saw_treatment = saw_treatment || r.arm == pair_.treatment;
        saw_comparator = saw_comparator || r.arm == pair_.comparator;
        auto [it, inserted] = rows_by_study_.try_emplace(r.study);
        if (inserted || it->second.empty()) {
            if (std::find(studies_.begin(), studies_.end(), r.study) == studies_.end())
                studies_.push_back(r.study);
        }
        it->second.push_back(i);
    }
    if (!records_.empty()) {
        if (!saw_treatment)
            throw DataError("dataset: no record carries treatment arm '" + pair_.treatment + "'");
        if (!saw_comparator)
            throw DataError("dataset: no record carries comparator arm '" + pair_.comparator + "'");
    }
}

const std::vector<std::size_t>& MetaDataset::study_rows(const std::string& study) const {
    auto it = rows_by_study_.find(study);
    if (it == rows_by_study_.end())
        throw DataError("dataset: unknown study '" + study + "'");
    return it->second;
}

bool MetaDataset::has_study(const std::string& study) const {
    return rows_by_study_.count(study) > 0;
}

bool MetaDataset::in_pair(std::size_t row) const {
    const auto& arm = records_.at(row).arm;
    return arm == pair_.treatment || arm == pair_.comparator;
}

MetaDataset load_dataset(const std::string& path, const CovariateSchema& schema,
                         const TreatmentPair& pair, LoadReport* report) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load: cannot open '" + path + "'");

    std::string header_line;
    if (!std::getline(in, header_line)) throw DataError("load: '" + path + "' is empty");
    if (!header_line.empty() && header_line.back() == '\r') header_line.pop_back();

    const auto header = split_csv_line(header_line);
    auto column_of = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (trim(header[i]) == name) return i;
        throw DataError("load: missing required column '" + name + "' in '" + path + "'");
    };

    const std::size_t study_col = column_of("study");
    const std::size_t arm_col = column_of("arm");
    const std::size_t outcome_col = column_of("outcome");
    std::vector<std::size_t> cov_cols(schema.size());
    for (std::size_t k = 0; k < schema.size(); ++k) cov_cols[k] = column_of(schema.at(k).name);

    LoadReport local;
    std::vector<std::string> required_names = {"study", "arm", "outcome"};
    for (std::size_t k = 0; k < schema.size(); ++k) required_names.push_back(schema.at(k).name);
    std::vector<std::size_t> missing_counts(required_names.size(), 0);

    std::vector<IndividualRecord> records;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() < header.size())
            throw DataError("load: line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(fields.size()));
        ++local.rows_parsed;

        auto cell = [&](std::size_t col) { return trim(fields[col]); };

        // complete-case rule: any empty required cell drops the row
        bool missing = false;
        std::vector<std::size_t> required_cols = {study_col, arm_col, outcome_col};
        for (auto c : cov_cols) required_cols.push_back(c);
        for (std::size_t j = 0; j < required_cols.size(); ++j) {
            if (cell(required_cols[j]).empty()) {
                ++missing_counts[j];
                missing = true;
            }
        }
        if (missing) {
            ++local.rows_dropped_missing;
            continue;
        }

        IndividualRecord rec;
        rec.study = cell(study_col);
        rec.arm = cell(arm_col);
        rec.outcome = parse_number(fields[outcome_col], "outcome", line_no);
        rec.covariates.resize(schema.size());
        for (std::size_t k = 0; k < schema.size(); ++k) {
            const auto& spec = schema.at(k);
            if (spec.kind == CovariateKind::Continuous) {
                rec.covariates[k] = parse_number(fields[cov_cols[k]], spec.name, line_no);
            } else {
                const std::string label = cell(cov_cols[k]);
                auto idx = schema.level_index(k, label);
                if (!idx)
                    throw DataError("load: line " + std::to_string(line_no) + ": column '" +
                                    spec.name + "': value '" + label +
                                    "' is not a declared level");
                rec.covariates[k] = static_cast<double>(*idx);
            }
        }
        records.push_back(std::move(rec));
    }

    if (records.empty())
        throw DataError("load: '" + path + "' has no usable rows after complete-case filtering");

    for (std::size_t j = 0; j < required_names.size(); ++j)
        local.missing_by_column.emplace_back(required_names[j], missing_counts[j]);
    if (report) *report = local;

    return MetaDataset(schema, std::move(records), pair);
}

void save_dataset(const MetaDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save: cannot open '" + path + "' for writing");

    out << "study,arm,outcome";
    for (const auto& spec : ds.schema().entries()) out << ',' << csv_quote(spec.name);
    out << '\n';

    for (const auto& r : ds.records()) {
        out << csv_quote(r.study) << ',' << csv_quote(r.arm) << ',' << format_double(r.outcome);
        for (std::size_t k = 0; k < ds.schema().size(); ++k) {
            const auto& spec = ds.schema().at(k);
            out << ',';
            if (spec.kind == CovariateKind::Continuous)
                out << format_double(r.covariates[k]);
            else
                out << csv_quote(spec.levels[static_cast<std::size_t>(r.covariates[k])]);
        }
        out << '\n';
    }
    if (!out) throw DataError("save: write to '" + path + "' failed");
}

TargetAssignment partition(const MetaDataset& ds, const std::string& target_study) {
    if (!ds.has_study(target_study))
        throw DataError("partition: unknown study '" + target_study + "'");

    const auto& pair = ds.pair();

    // arm presence per non-target study, over pair rows only
    std::map<std::string, std::pair<bool, bool>> arms_present;
    for (const auto& r : ds.records()) {
        if (r.study == target_study) continue;
        auto& present = arms_present[r.study];
        if (r.arm == pair.treatment) present.first = true;
        else if (r.arm == pair.comparator) present.second = true;
    }

    TargetAssignment assign;
    assign.target_study = target_study;
    std::set<std::string> warned;
    for (std::size_t i = 0; i < ds.records().size(); ++i) {
        const auto& r = ds.records()[i];
        if (!ds.in_pair(i)) {
            assign.excluded_rows.push_back(i);
            continue;
        }
        if (r.study == target_study) {
            assign.target_rows.push_back(i);
            continue;
        }
        const auto present = arms_present[r.study];
        if (present.first && present.second) {
            assign.contributing_rows.push_back(i);
        } else {
            assign.excluded_rows.push_back(i);
            if (warned.insert(r.study).second) {
                const std::string missing = present.first ? pair.comparator : pair.treatment;
                assign.warnings.push_back("study '" + r.study + "' lacks arm '" + missing +
                                          "' of the treatment pair; excluded from this analysis");
            }
        }
    }
    if (assign.target_rows.empty())
        assign.warnings.push_back("target study '" + target_study +
                                  "' has no rows in the treatment pair");
    return assign;
}

std::vector<CovariateAggregate> aggregate_covariates(const MetaDataset& ds,
                                                     const std::vector<std::size_t>& rows) {
    const auto& schema = ds.schema();
    std::vector<CovariateAggregate> out(schema.size());
    if (rows.empty()) {
        for (std::size_t k = 0; k < schema.size(); ++k) {
            const auto& spec = schema.at(k);
            out[k].values.assign(spec.kind == CovariateKind::Continuous ? 1 : spec.levels.size(),
                                 0.0);
        }
        return out;
    }
    for (std::size_t k = 0; k < schema.size(); ++k) {
        const auto& spec = schema.at(k);
        if (spec.kind == CovariateKind::Continuous) {
            double sum = 0.0;
            for (auto i : rows) sum += ds.records()[i].covariates[k];
            out[k].values = {sum / static_cast<double>(rows.size())};
        } else {
            std::vector<double> counts(spec.levels.size(), 0.0);
            for (auto i : rows)
                counts[static_cast<std::size_t>(ds.records()[i].covariates[k])] += 1.0;
            for (auto& c : counts) c /= static_cast<double>(rows.size());
            out[k].values = std::move(counts);
        }
    }
    return out;
}

namespace {

struct ArmStats {
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;
};

ArmStats arm_stats(const MetaDataset& ds, const std::vector<std::size_t>& rows) {
    ArmStats s;
    s.n = rows.size();
    if (s.n == 0) return s;
    double sum = 0.0;
    for (auto i : rows) sum += ds.records()[i].outcome;
    s.mean = sum / static_cast<double>(s.n);
    if (s.n >= 2) {
        double ss = 0.0;
        for (auto i : rows) {
            const double d = ds.records()[i].outcome - s.mean;
            ss += d * d;
        }
        s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

} // namespace

StudySummarySet study_summaries(const MetaDataset& ds, const std::vector<std::size_t>& rows) {
    const auto& pair = ds.pair();

    std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> by_study;
    for (auto i : rows) {
        const auto& r = ds.records()[i];
        if (r.arm == pair.treatment) by_study[r.study].first.push_back(i);
        else if (r.arm == pair.comparator) by_study[r.study].second.push_back(i);
    }

    StudySummarySet out;
    for (const auto& study : ds.studies()) {
        auto it = by_study.find(study);
        if (it == by_study.end()) continue;
        const auto& [trt_rows, cmp_rows] = it->second;
        if (trt_rows.size() < 2 || cmp_rows.size() < 2) {
            const auto& short_arm = trt_rows.size() < 2 ? pair.treatment : pair.comparator;
            const std::size_t n = trt_rows.size() < 2 ? trt_rows.size() : cmp_rows.size();
            out.flagged.push_back("study '" + study + "': arm '" + short_arm + "' has n = " +
                                  std::to_string(n) + " (< 2); excluded from aggregate pooling");
            continue;
        }
        StudySummary s;
        s.study = study;
        const auto t = arm_stats(ds, trt_rows);
        const auto c = arm_stats(ds, cmp_rows);
        s.n_treatment = t.n;
        s.n_comparator = c.n;
        s.mean_treatment = t.mean;
        s.mean_comparator = c.mean;
        s.sd_treatment = t.sd;
        s.sd_comparator = c.sd;
        s.te = t.mean - c.mean;
        s.se_te = std::sqrt(t.sd * t.sd / static_cast<double>(t.n) +
                            c.sd * c.sd / static_cast<double>(c.n));
        s.degenerate = s.se_te == 0.0;
        if (s.degenerate)
            out.flagged.push_back("study '" + study +
                                  "': zero outcome variance in both arms (degenerate se)");
        std::vector<std::size_t> all_rows = trt_rows;
        all_rows.insert(all_rows.end(), cmp_rows.begin(), cmp_rows.end());
        std::sort(all_rows.begin(), all_rows.end());
        s.covariate_aggregates = aggregate_covariates(ds, all_rows);
        out.summaries.push_back(std::move(s));
    }
    return out;
}

StudySummarySet study_summaries(const MetaDataset& ds) {
    std::vector<std::size_t> all(ds.records().size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return study_summaries(ds, all);
}

MetaDataset restrict_covariates(const MetaDataset& ds, const std::vector<std::string>& names) {
    std::set<std::string> keep(names.begin(), names.end());
    for (const auto& name : names)
        if (!ds.schema().index_of(name))
            throw DataError("restrict: unknown covariate '" + name + "'");

    std::vector<CovariateSpec> specs;
    std::vector<std::size_t> kept_indices;
    for (std::size_t k = 0; k < ds.schema().size(); ++k) {
        if (keep.count(ds.schema().at(k).name)) {
            specs.push_back(ds.schema().at(k));
            kept_indices.push_back(k);
        }
    }

    std::vector<IndividualRecord> records = ds.records();
    for (auto& r : records) {
        std::vector<double> covs(kept_indices.size());
        for (std::size_t j = 0; j < kept_indices.size(); ++j) covs[j] = r.covariates[kept_indices[j]];
        r.covariates = std::move(covs);
    }
    return MetaDataset(CovariateSchema(std::move(specs)), std::move(records), ds.pair());
}

MetaDataset transform_covariate(const MetaDataset& ds, const std::string& name,
                                TransformKind kind) {
    auto idx = ds.schema().index_of(name);
    if (!idx) throw DataError("transform: unknown covariate '" + name + "'");
    if (ds.schema().at(*idx).kind != CovariateKind::Continuous)
        throw DataError("transform: covariate '" + name + "' is categorical");

    std::vector<IndividualRecord> records = ds.records();
    if (kind == TransformKind::Log) {
        for (std::size_t i = 0; i < records.size(); ++i) {
            double v = records[i].covariates[*idx];
            if (v <= 0.0)
                throw DataError("transform: log of covariate '" + name + "' undefined at record " +
                                std::to_string(i) + " (value " + format_double(v) + ")");
            records[i].covariates[*idx] = std::log(v);
        }
    } else {
        double sum = 0.0;
        for (const auto& r : records) sum += r.covariates[*idx];
        const double mean = sum / static_cast<double>(records.size());
        double ss = 0.0;
        for (const auto& r : records) {
            const double d = r.covariates[*idx] - mean;
            ss += d * d;
        }
        const double sd =
            records.size() > 1 ? std::sqrt(ss / static_cast<double>(records.size() - 1)) : 0.0;
        if (sd <= 0.0)
            throw DataError("transform: covariate '" + name + "' has zero variance");
        for (auto& r : records) r.covariates[*idx] = (r.covariates[*idx] - mean) / sd;
    }
    return MetaDataset(ds.schema(), std::move(records), ds.pair());
}

} // namespace ipdma
