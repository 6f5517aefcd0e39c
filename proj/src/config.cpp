#include "ipdma/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "ipdma/engine.hpp"
#include "ipdma/errors.hpp"

namespace ipdma {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> tokenize(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

struct Line {
    std::size_t number;
    std::string key;
    std::string value;
};

[[noreturn]] void fail(const std::string& origin, std::size_t line, const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
}

double parse_real(const Line& line, const std::string& origin) {
    const std::string t = trim(line.value);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size())
        fail(origin, line.number, "key '" + line.key + "': cannot parse '" + line.value +
                                      "' as a number");
    return v;
}

std::uint64_t parse_uint(const Line& line, const std::string& origin) {
    const std::string t = trim(line.value);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size())
        fail(origin, line.number, "key '" + line.key + "': cannot parse '" + line.value +
                                      "' as a nonnegative integer");
    return v;
}

bool parse_flag(const Line& line, const std::string& origin) {
    const std::string t = trim(line.value);
    if (t == "on" || t == "true" || t == "yes") return true;
    if (t == "off" || t == "false" || t == "no") return false;
    fail(origin, line.number, "key '" + line.key + "': expected on/off, got '" + line.value + "'");
}

} // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    static const std::set<std::string> known_keys = {
        "config_version", "data",       "covariate",  "treatment_pair", "target",
        "estimators",     "participation", "clip_epsilon", "bandwidth_method", "bootstrap",
        "seed",           "ci_level",   "alpha",      "screen",         "transform",
        "meta_covariates", "out_dir",   "threads"};
    static const std::set<std::string> repeatable = {"covariate", "transform"};

    std::vector<Line> lines;
    {
        std::istringstream in(text);
        std::string raw;
        std::size_t number = 0;
        std::set<std::string> seen;
        while (std::getline(in, raw)) {
            ++number;
            const auto hash = raw.find('#');
            if (hash != std::string::npos) raw = raw.substr(0, hash);
            const std::string stripped = trim(raw);
            if (stripped.empty()) continue;
            const auto eq = stripped.find('=');
            if (eq == std::string::npos)
                fail(origin, number, "expected 'key = value', got '" + stripped + "'");
            Line line{number, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1))};
            if (line.key.empty()) fail(origin, number, "empty key");
            if (!known_keys.count(line.key))
                fail(origin, number, "unknown key '" + line.key + "'");
            if (!repeatable.count(line.key) && !seen.insert(line.key).second)
                fail(origin, number, "duplicate key '" + line.key + "'");
            lines.push_back(std::move(line));
        }
    }

    RunConfig config;
    std::vector<CovariateSpec> covariates;
    bool saw_version = false, saw_data = false, saw_pair = false, saw_target = false;
    bool saw_estimators = false, saw_meta_covariates = false;
    std::vector<std::pair<Line, TransformSpec>> transforms;
    std::vector<std::string> meta_covariates;

    for (const auto& line : lines) {
        if (line.key == "config_version") {
            const auto v = parse_uint(line, origin);
            if (v != 1)
                fail(origin, line.number, "unsupported config_version " + std::to_string(v) +
                                              " (this build reads version 1)");
            config.config_version = 1;
            saw_version = true;
        } else if (line.key == "data") {
            config.data_path = line.value;
            saw_data = true;
        } else if (line.key == "covariate") {
            const auto tokens = tokenize(line.value);
            if (tokens.size() < 2)
                fail(origin, line.number, "covariate needs '<name> <kind> [levels...]'");
            CovariateSpec spec;
            spec.name = tokens[0];
            if (tokens[1] == "continuous") {
                if (tokens.size() != 2)
                    fail(origin, line.number,
                         "continuous covariate '" + spec.name + "' takes no levels");
                spec.kind = CovariateKind::Continuous;
            } else if (tokens[1] == "categorical") {
                spec.kind = CovariateKind::Categorical;
                spec.levels.assign(tokens.begin() + 2, tokens.end());
                if (spec.levels.size() < 2)
                    fail(origin, line.number,
                         "categorical covariate '" + spec.name + "' needs at least 2 levels");
            } else {
                fail(origin, line.number, "covariate kind must be continuous or categorical, got '" +
                                              tokens[1] + "'");
            }
            covariates.push_back(std::move(spec));
        } else if (line.key == "treatment_pair") {
            const auto tokens = tokenize(line.value);
            if (tokens.size() != 2)
                fail(origin, line.number, "treatment_pair needs exactly 2 arm labels");
            if (tokens[0] == tokens[1])
                fail(origin, line.number, "treatment_pair labels must be distinct");
            config.pair = {tokens[0], tokens[1]};
            saw_pair = true;
        } else if (line.key == "target") {
            const std::string t = trim(line.value);
            if (t.empty()) fail(origin, line.number, "target must not be empty");
            config.loso = t == "loso";
            config.target = config.loso ? "" : t;
            saw_target = true;
        } else if (line.key == "estimators") {
            config.estimators = tokenize(line.value);
            if (config.estimators.empty())
                fail(origin, line.number, "estimators list must not be empty");
            const auto& vocab = estimator_vocabulary();
            for (const auto& id : config.estimators)
                if (std::find(vocab.begin(), vocab.end(), id) == vocab.end())
                    fail(origin, line.number, "unknown estimator id '" + id + "'");
            saw_estimators = true;
        } else if (line.key == "participation") {
            const std::string v = trim(line.value);
            if (v == "logistic") config.participation = ParticipationMethod::Logistic;
            else if (v == "kernel") config.participation = ParticipationMethod::Kernel;
            else fail(origin, line.number, "participation must be logistic or kernel, got '" + v + "'");
        } else if (line.key == "clip_epsilon") {
            config.clip_epsilon = parse_real(line, origin);
            if (config.clip_epsilon < 0.0 || config.clip_epsilon >= 0.5)
                fail(origin, line.number, "clip_epsilon must lie in [0, 0.5)");
        } else if (line.key == "bandwidth_method") {
            config.bandwidth_method = trim(line.value);
            if (config.bandwidth_method != "likelihood-cv")
                fail(origin, line.number, "bandwidth_method 'likelihood-cv' is the only supported method");
        } else if (line.key == "bootstrap") {
            config.bootstrap = static_cast<std::size_t>(parse_uint(line, origin));
        } else if (line.key == "seed") {
            config.seed = parse_uint(line, origin);
        } else if (line.key == "ci_level") {
            config.ci_level = parse_real(line, origin);
            if (!(config.ci_level > 0.0 && config.ci_level < 1.0))
                fail(origin, line.number, "ci_level must lie in (0, 1)");
        } else if (line.key == "alpha") {
            config.alpha = parse_real(line, origin);
            if (!(config.alpha > 0.0 && config.alpha < 1.0))
                fail(origin, line.number, "alpha must lie in (0, 1)");
        } else if (line.key == "screen") {
            config.screen = parse_flag(line, origin);
        } else if (line.key == "transform") {
            const auto tokens = tokenize(line.value);
            if (tokens.size() != 2 || (tokens[0] != "log" && tokens[0] != "standardize"))
                fail(origin, line.number, "transform needs 'log <covariate>' or 'standardize <covariate>'");
            transforms.push_back(
                {line,
                 {tokens[0] == "log" ? TransformKind::Log : TransformKind::Standardize, tokens[1]}});
        } else if (line.key == "meta_covariates") {
            meta_covariates = tokenize(line.value);
            saw_meta_covariates = true;
        } else if (line.key == "out_dir") {
            config.out_dir = trim(line.value);
        } else if (line.key == "threads") {
            config.threads = static_cast<int>(parse_uint(line, origin));
        }
    }

    if (!saw_version) throw ConfigError(origin + ": missing required key 'config_version'");
    if (!saw_data) throw ConfigError(origin + ": missing required key 'data'");
    if (!saw_pair) throw ConfigError(origin + ": missing required key 'treatment_pair'");
    if (!saw_target) throw ConfigError(origin + ": missing required key 'target'");

    config.schema = CovariateSchema(std::move(covariates));
    if (!saw_estimators) config.estimators = estimator_vocabulary();

    auto check_covariate = [&](const Line* line, const std::string& name, const char* what) {
        if (!config.schema.index_of(name)) {
            const std::string msg = std::string(what) + " references undeclared covariate '" + name + "'";
            if (line) fail(origin, line->number, msg);
            throw ConfigError(origin + ": " + msg);
        }
    };
    for (const auto& [line, spec] : transforms) {
        check_covariate(&line, spec.covariate, "transform");
        config.transforms.push_back(spec);
    }
    if (saw_meta_covariates) {
        for (const auto& name : meta_covariates) check_covariate(nullptr, name, "meta_covariates");
        config.meta_covariates = meta_covariates;
    }

    if (config.bootstrap > 0 && !config.seed)
        throw ConfigError(origin + ": 'seed' is mandatory when bootstrap is enabled");
    return config;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str(), path);
}

} // namespace ipdma
