#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "intriuap/linops/dense.hpp"

namespace intriuap::spectral {

using linops::DenseOperator;
using linops::Structure;

struct DenseSvdResult {
  double sigma_max = 0.0;
  /// Unit right singular vector (flat, length cols).
  std::vector<double> v_max;
};

namespace detail {

inline Eigen::MatrixXd to_eigen(const DenseOperator<double>& a) {
  Eigen::MatrixXd m(a.rows(), a.cols());
  const auto d = a.dense();
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) m(r, c) = d[r * a.cols() + c];
  return m;
}

}  // namespace detail

/// Largest singular pair from an eigendecomposition of the smaller Gram matrix.
/// Diagonal operators are answered directly.
inline DenseSvdResult dense_svd_max(const DenseOperator<double>& a) {
  DenseSvdResult r;
  r.v_max.assign(a.cols(), 0.0);
  if (a.rows() == 0 || a.cols() == 0) throw DimensionError("empty operator");
  if (a.structure() == Structure::Diagonal) {
    std::size_t best = 0;
    const auto& d = a.entries();
    for (std::size_t i = 1; i < d.size(); ++i)
      if (std::abs(d[i]) > std::abs(d[best])) best = i;
    r.sigma_max = std::abs(d[best]);
    r.v_max[best] = 1.0;
    return r;
  }
  const Eigen::MatrixXd m = detail::to_eigen(a);
  if (a.cols() <= a.rows()) {
    const Eigen::MatrixXd gram = m.transpose() * m;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    const Eigen::Index k = gram.rows() - 1;
    r.sigma_max = std::sqrt(std::max(0.0, es.eigenvalues()(k)));
    const Eigen::VectorXd v = es.eigenvectors().col(k);
    for (std::size_t i = 0; i < a.cols(); ++i) r.v_max[i] = v(static_cast<Eigen::Index>(i));
  } else {
    const Eigen::MatrixXd gram = m * m.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    const Eigen::Index k = gram.rows() - 1;
    r.sigma_max = std::sqrt(std::max(0.0, es.eigenvalues()(k)));
    if (r.sigma_max > 0.0) {
      const Eigen::VectorXd v = m.transpose() * es.eigenvectors().col(k) / r.sigma_max;
      for (std::size_t i = 0; i < a.cols(); ++i) r.v_max[i] = v(static_cast<Eigen::Index>(i));
    } else {
      r.v_max[0] = 1.0;
    }
  }
  return r;
}

/// All singular values in descending order (small operators only).
inline std::vector<double> singular_values(const DenseOperator<double>& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(detail::to_eigen(a));
  const auto& s = svd.singularValues();
  return {s.data(), s.data() + s.size()};
}

/// Dense oracle for a model layer, with the layer's structure exploited.
inline DenseSvdResult dense_svd_max(const model::ModelGraph<double>& g, const std::string& layer_id,
                                    std::size_t cap = linops::kDenseEntryCap) {
  return dense_svd_max(linops::materialize_layer(g, layer_id, cap));
}

}  // namespace intriuap::spectral
