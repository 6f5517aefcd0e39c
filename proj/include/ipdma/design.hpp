#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ipdma/dataset.hpp"

namespace ipdma {

/// Model matrix with an intercept column first, continuous covariates passed
/// through and categorical covariates one-hot encoded with the first declared
/// level as reference.
struct DesignMatrix {
    Eigen::MatrixXd X;
    std::vector<std::string> column_names;

    std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(X.cols()); }
};

std::vector<std::string> design_column_names(const CovariateSchema& schema);

/// Encoded width including the intercept.
std::size_t design_width(const CovariateSchema& schema);

Eigen::RowVectorXd encode_row(const CovariateSchema& schema, const std::vector<double>& covariates);

DesignMatrix build_design(const MetaDataset& ds, const std::vector<std::size_t>& rows);

} // namespace ipdma
