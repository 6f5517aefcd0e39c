#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ipdma/dataset.hpp"
#include "ipdma/transport.hpp"

namespace ipdma {

struct TransformSpec {
    TransformKind kind = TransformKind::Log;
    std::string covariate;
};

/// One self-contained run description; every key is documented in the README.
struct RunConfig {
    int config_version = 1;
    std::string data_path;
    CovariateSchema schema;
    TreatmentPair pair;
    std::string target; // study id, or empty when loso = true
    bool loso = false;
    std::vector<std::string> estimators;
    ParticipationMethod participation = ParticipationMethod::Logistic; // backs dr
    double clip_epsilon = 0.0;
    std::string bandwidth_method = "likelihood-cv";
    std::size_t bootstrap = 0; // replicate count, 0 = off
    std::optional<std::uint64_t> seed;
    double ci_level = 0.95;
    double alpha = 0.05; // effect-modifier screening
    bool screen = false; // restrict model covariates to screened ones
    std::vector<TransformSpec> transforms;
    std::vector<std::string> meta_covariates; // meta-regression moderators
    std::string out_dir = ".";
    int threads = 1;
};

/// Parses the key-value run configuration. Unknown keys, vocabulary
/// violations and missing requirements raise ConfigError naming the line.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");

} // namespace ipdma
