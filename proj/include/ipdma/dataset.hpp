#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "ipdma/schema.hpp"

namespace ipdma {

/// One trial participant.
struct IndividualRecord {
    std::string study;
    std::string arm;
    double outcome = 0.0;
    std::vector<double> covariates; // see CovariateSchema for encoding
};

/// The two arms being compared. Treatment effects are always reported as
/// mean(treatment) - mean(comparator).
struct TreatmentPair {
    std::string treatment;
    std::string comparator;
};

/// Immutable individual-participant dataset. All operations over it are pure
/// and safe to call concurrently.
class MetaDataset {
public:
    MetaDataset(CovariateSchema schema, std::vector<IndividualRecord> records,
                TreatmentPair pair);

    const CovariateSchema& schema() const { return schema_; }
    const std::vector<IndividualRecord>& records() const { return records_; }
    const TreatmentPair& pair() const { return pair_; }

    /// Study ids in order of first appearance.
    const std::vector<std::string>& studies() const { return studies_; }
    const std::vector<std::size_t>& study_rows(const std::string& study) const;
    bool has_study(const std::string& study) const;

    bool in_pair(std::size_t row) const;

private:
    CovariateSchema schema_;
    std::vector<IndividualRecord> records_;
    TreatmentPair pair_;
    std::vector<std::string> studies_;
    std::map<std::string, std::vector<std::size_t>> rows_by_study_;
};

/// Per-column accounting of rows dropped by the complete-case rule.
struct LoadReport {
    std::size_t rows_parsed = 0;
    std::size_t rows_dropped_missing = 0;
    std::vector<std::pair<std::string, std::size_t>> missing_by_column; // column order
};

/// Reads a comma-separated file with header columns `study`, `arm`, `outcome`
/// and one column per schema covariate (extra columns are ignored). Rows with
/// any empty required cell are dropped; counts land in `report`.
MetaDataset load_dataset(const std::string& path, const CovariateSchema& schema,
                         const TreatmentPair& pair, LoadReport* report = nullptr);

/// Writes a dataset back out in load_dataset's format. Numeric cells use
/// shortest round-trip precision, so load(save(ds)) reproduces records
/// bitwise.
void save_dataset(const MetaDataset& ds, const std::string& path);

/// Target-vs-contributing split of a dataset's rows. Rows whose arm is
/// outside the treatment pair, and rows of contributing studies lacking one
/// of the two arms, land in excluded_rows.
struct TargetAssignment {
    std::string target_study;
    std::vector<std::size_t> target_rows;
    std::vector<std::size_t> contributing_rows;
    std::vector<std::size_t> excluded_rows;
    std::vector<std::string> warnings;
};

TargetAssignment partition(const MetaDataset& ds, const std::string& target_study);

/// Per-covariate aggregate: {mean} for continuous entries, the full vector of
/// level proportions (summing to 1) for categorical ones.
struct CovariateAggregate {
    std::vector<double> values;
};

struct StudySummary {
    std::string study;
    std::size_t n_treatment = 0;
    std::size_t n_comparator = 0;
    double mean_treatment = 0.0;
    double mean_comparator = 0.0;
    double sd_treatment = 0.0;
    double sd_comparator = 0.0;
    double te = 0.0;    // mean_treatment - mean_comparator
    double se_te = 0.0; // sqrt(sd_t^2/n_t + sd_c^2/n_c)
    bool degenerate = false; // se_te == 0 (constant outcomes in both arms)
    std::vector<CovariateAggregate> covariate_aggregates;
};

struct StudySummarySet {
    std::vector<StudySummary> summaries; // studies with both arms, n >= 2 each
    std::vector<std::string> flagged;    // reasons for excluded studies
};

/// Summaries over all studies, or over the studies present in `rows`.
StudySummarySet study_summaries(const MetaDataset& ds);
StudySummarySet study_summaries(const MetaDataset& ds, const std::vector<std::size_t>& rows);

/// Aggregates over an arbitrary row subset (used for target-population
/// aggregates in meta-regression).
std::vector<CovariateAggregate> aggregate_covariates(const MetaDataset& ds,
                                                     const std::vector<std::size_t>& rows);

/// Projection onto a covariate subset (order of the original schema is kept;
/// records and row indices are unchanged).
MetaDataset restrict_covariates(const MetaDataset& ds, const std::vector<std::string>& names);

enum class TransformKind { Log, Standardize };

/// Returns a copy with one continuous covariate transformed in place.
/// Log requires strictly positive values; Standardize centers and scales by
/// the whole-dataset mean and standard deviation.
MetaDataset transform_covariate(const MetaDataset& ds, const std::string& name,
                                TransformKind kind);

} // namespace ipdma
