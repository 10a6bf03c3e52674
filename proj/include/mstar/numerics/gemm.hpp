#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace mstar::kernels {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// C (m x n) = op(A) op(B) (+ C when accumulate). Row-major operands; A is
// stored (m x k) or, when trans_a, (k x m); likewise B.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
                 const double* b, double* c, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  Map C(c, M, N);
  if (!accumulate) C.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b)
    C.noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
  else if (trans_a && !trans_b)
    C.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, K, N);
  else if (!trans_a && trans_b)
    C.noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
  else
    C.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, N, K).transpose();
}

}  // namespace mstar::kernels
