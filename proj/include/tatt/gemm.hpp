#pragma once

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Core>

#include <cstddef>

namespace tatt::detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MMap = Eigen::Map<RowMat<T>>;

/// C[m×n] (+)= op(A) · op(B) on row-major buffers. op(A) is m×k, op(B) is k×n.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate) {
    const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
               K = static_cast<Eigen::Index>(k);
    MMap<T> C(c, M, N);
    if (!accumulate) C.setZero();
    if (!trans_a && !trans_b)
        C.noalias() += CMap<T>(a, M, K) * CMap<T>(b, K, N);
    else if (!trans_a && trans_b)
        C.noalias() += CMap<T>(a, M, K) * CMap<T>(b, N, K).transpose();
    else if (trans_a && !trans_b)
        C.noalias() += CMap<T>(a, K, M).transpose() * CMap<T>(b, K, N);
    else
        C.noalias() += CMap<T>(a, K, M).transpose() * CMap<T>(b, N, K).transpose();
}

}  // namespace tatt::detail
