#include "ipdma/schema.hpp"

#include <set>

#include "ipdma/errors.hpp"

namespace ipdma {

CovariateSchema::CovariateSchema(std::vector<CovariateSpec> entries)
    : entries_(std::move(entries)) {
    std::set<std::string> seen;
    for (const auto& entry : entries_) {
        if (entry.name.empty()) throw ConfigError("schema: covariate name must be non-empty");
        if (!seen.insert(entry.name).second)
            throw ConfigError("schema: duplicate covariate name '" + entry.name + "'");
        if (entry.kind == CovariateKind::Categorical) {
            if (entry.levels.size() < 2)
                throw ConfigError("schema: categorical covariate '" + entry.name +
                                  "' needs at least 2 declared levels");
            std::set<std::string> levels;
            for (const auto& level : entry.levels) {
                if (level.empty())
                    throw ConfigError("schema: covariate '" + entry.name + "' has an empty level");
                if (!levels.insert(level).second)
                    throw ConfigError("schema: covariate '" + entry.name + "' repeats level '" +
                                      level + "'");
            }
        } else if (!entry.levels.empty()) {
            throw ConfigError("schema: continuous covariate '" + entry.name +
                              "' must not declare levels");
        }
    }
}

std::optional<std::size_t> CovariateSchema::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return i;
    return std::nullopt;
}

std::optional<std::size_t> CovariateSchema::level_index(std::size_t entry,
                                                        const std::string& label) const {
    const auto& levels = entries_.at(entry).levels;
    for (std::size_t i = 0; i < levels.size(); ++i)
        if (levels[i] == label) return i;
    return std::nullopt;
}

} // namespace ipdma
