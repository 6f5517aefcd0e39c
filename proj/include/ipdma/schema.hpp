#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace ipdma {

enum class CovariateKind { Continuous, Categorical };

struct CovariateSpec {
    std::string name;
    CovariateKind kind = CovariateKind::Continuous;
    std::vector<std::string> levels; // categorical only, >= 2 declared levels
};

/// Ordered covariate declaration shared by datasets, design matrices and
/// kernel models. Records store one double per entry: the raw value for
/// continuous covariates, the 0-based level index for categorical ones.
class CovariateSchema {
public:
    CovariateSchema() = default;
    explicit CovariateSchema(std::vector<CovariateSpec> entries);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const CovariateSpec& at(std::size_t i) const { return entries_.at(i); }
    const std::vector<CovariateSpec>& entries() const { return entries_; }

    std::optional<std::size_t> index_of(const std::string& name) const;

    /// Level index for a categorical entry, or nullopt if the label is not
    /// declared.
    std::optional<std::size_t> level_index(std::size_t entry, const std::string& label) const;

private:
    std::vector<CovariateSpec> entries_;
};

} // namespace ipdma
