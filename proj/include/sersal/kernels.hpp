#pragma once

// Dense-layer kernels used by the small model. Every kernel has a serial
// reference and an OpenMP variant with the same signature. The OpenMP variants
// partition work so that each output element is accumulated by one thread in
// the same order as the serial loop, so both produce bit-identical results.

#include <span>

#include "sersal/matrix.hpp"

namespace sersal::kernels {

enum class Backend { Serial, OpenMP };

Backend default_backend();
void set_default_backend(Backend backend);
// Number of threads the OpenMP backend would use (1 when built without OpenMP).
int max_threads();

namespace serial {

// y = x * W^T + b, optionally followed by ReLU. W is out x in, row-major.
void dense_forward(const Matrix& x, std::span<const double> weights,
                   std::span<const double> bias, Matrix& y, bool relu);
// dW += dy^T * x, db += column sums of dy.
void dense_backward_params(const Matrix& x, const Matrix& dy,
                           std::span<double> dweights, std::span<double> dbias);
// dx = dy * W.
void dense_backward_input(const Matrix& dy, std::span<const double> weights,
                          Matrix& dx);
// dy[i] = 0 where activation[i] <= 0.
void relu_backward(const Matrix& activation, Matrix& dy);
void softmax_rows(const Matrix& logits, Matrix& probs);

}  // namespace serial

namespace omp {

void dense_forward(const Matrix& x, std::span<const double> weights,
                   std::span<const double> bias, Matrix& y, bool relu);
void dense_backward_params(const Matrix& x, const Matrix& dy,
                           std::span<double> dweights, std::span<double> dbias);
void dense_backward_input(const Matrix& dy, std::span<const double> weights,
                          Matrix& dx);
void relu_backward(const Matrix& activation, Matrix& dy);
void softmax_rows(const Matrix& logits, Matrix& probs);

}  // namespace omp

// Dispatch on the process-wide default backend.
void dense_forward(const Matrix& x, std::span<const double> weights,
                   std::span<const double> bias, Matrix& y, bool relu);
void dense_backward_params(const Matrix& x, const Matrix& dy,
                           std::span<double> dweights, std::span<double> dbias);
void dense_backward_input(const Matrix& dy, std::span<const double> weights,
                          Matrix& dx);
void relu_backward(const Matrix& activation, Matrix& dy);
void softmax_rows(const Matrix& logits, Matrix& probs);

}  // namespace sersal::kernels
