#pragma once

#include <cstddef>
#include <vector>

#include "iin/rng.hpp"
#include "iin/tensor.hpp"

namespace iin {

// Plain value-level helpers for small dense matrices, no tape involvement.

Tensor transpose(const Tensor& a);

// Haar-distributed random orthogonal matrix via Householder QR of a Gaussian
// matrix, with the sign convention that makes the distribution uniform.
Tensor random_orthogonal(std::size_t n, Rng& rng);

struct SymEig {
  std::vector<double> values;  // descending
  Tensor vectors;              // columns are eigenvectors, same order
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymEig sym_eig(const Tensor& a);

// log|det A| via LU with partial pivoting. Throws NumericError on a singular
// matrix.
double log_abs_det(const Tensor& a);

}  // namespace iin
