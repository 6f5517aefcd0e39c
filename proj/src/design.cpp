#include "ipdma/design.hpp"

#include "ipdma/errors.hpp"

namespace ipdma {

std::vector<std::string> design_column_names(const CovariateSchema& schema) {
    std::vector<std::string> names;
    names.push_back("(intercept)");
    for (const auto& spec : schema.entries()) {
        if (spec.kind == CovariateKind::Continuous) {
            names.push_back(spec.name);
        } else {
            // reference level = first declared level, dropped
            for (std::size_t l = 1; l < spec.levels.size(); ++l)
                names.push_back(spec.name + "=" + spec.levels[l]);
        }
    }
    return names;
}

std::size_t design_width(const CovariateSchema& schema) {
    std::size_t p = 1;
    for (const auto& spec : schema.entries())
        p += spec.kind == CovariateKind::Continuous ? 1 : spec.levels.size() - 1;
    return p;
}

Eigen::RowVectorXd encode_row(const CovariateSchema& schema,
                              const std::vector<double>& covariates) {
    if (covariates.size() != schema.size())
        throw EstimationError("design: covariate vector length " +
                              std::to_string(covariates.size()) + " does not match schema size " +
                              std::to_string(schema.size()));
    Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(design_width(schema)));
    x(0) = 1.0;
    Eigen::Index col = 1;
    for (std::size_t k = 0; k < schema.size(); ++k) {
        const auto& spec = schema.at(k);
        if (spec.kind == CovariateKind::Continuous) {
            x(col++) = covariates[k];
        } else {
            const auto level = static_cast<std::size_t>(covariates[k]);
            for (std::size_t l = 1; l < spec.levels.size(); ++l)
                x(col++) = level == l ? 1.0 : 0.0;
        }
    }
    return x;
}

DesignMatrix build_design(const MetaDataset& ds, const std::vector<std::size_t>& rows) {
    DesignMatrix design;
    design.column_names = design_column_names(ds.schema());
    design.X.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(design_width(ds.schema())));
    for (std::size_t i = 0; i < rows.size(); ++i)
        design.X.row(static_cast<Eigen::Index>(i)) =
            encode_row(ds.schema(), ds.records()[rows[i]].covariates);
    return design;
}

} // namespace ipdma
