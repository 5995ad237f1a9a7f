#include "sersal/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sersal::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::OpenMP};

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 15;

inline void forward_row(const double* xr, std::size_t in, const double* w,
                        const double* b, double* yr, std::size_t out, bool relu) {
  for (std::size_t j = 0; j < out; ++j) {
    const double* wj = w + j * in;
    double acc = b[j];
    for (std::size_t k = 0; k < in; ++k) acc += xr[k] * wj[k];
    yr[j] = relu && acc < 0.0 ? 0.0 : acc;
  }
}

inline void params_unit(const Matrix& x, const Matrix& dy, std::size_t j,
                        double* dwj, double& dbj) {
  const std::size_t in = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double g = dy(r, j);
    if (g == 0.0) continue;
    const double* xr = x.data() + r * in;
    for (std::size_t k = 0; k < in; ++k) dwj[k] += g * xr[k];
    dbj += g;
  }
}

inline void input_row(const double* dyr, std::size_t out, const double* w,
                      std::size_t in, double* dxr) {
  std::fill(dxr, dxr + in, 0.0);
  for (std::size_t j = 0; j < out; ++j) {
    const double g = dyr[j];
    if (g == 0.0) continue;
    const double* wj = w + j * in;
    for (std::size_t k = 0; k < in; ++k) dxr[k] += g * wj[k];
  }
}

inline void softmax_row(const double* l, double* p, std::size_t n) {
  double m = l[0];
  for (std::size_t c = 1; c < n; ++c) m = std::max(m, l[c]);
  double s = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    p[c] = std::exp(l[c] - m);
    s += p[c];
  }
  for (std::size_t c = 0; c < n; ++c) p[c] /= s;
}

}  // namespace

Backend default_backend() { return g_backend.load(); }
void set_default_backend(Backend backend) { g_backend.store(backend); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void dense_forward(const Matrix& x, std::span<const double> weights,
                   std::span<const double> bias, Matrix& y, bool relu) {
  const std::size_t in = x.cols(), out = bias.size();
  if (y.rows() != x.rows() || y.cols() != out) y.resize(x.rows(), out);
  for (std::size_t r = 0; r < x.rows(); ++r)
    forward_row(x.data() + r * in, in, weights.data(), bias.data(),
                y.data() + r * out, out, relu);
}

void dense_backward_params(const Matrix& x, const Matrix& dy,
                           std::span<double> dweights, std::span<double> dbias) {
  const std::size_t in = x.cols();
  for (std::size_t j = 0; j < dy.cols(); ++j)
    params_unit(x, dy, j, dweights.data() + j * in, dbias[j]);
}

void dense_backward_input(const Matrix& dy, std::span<const double> weights,
                          Matrix& dx) {
  const std::size_t out = dy.cols(), in = weights.size() / out;
  if (dx.rows() != dy.rows() || dx.cols() != in) dx.resize(dy.rows(), in);
  for (std::size_t r = 0; r < dy.rows(); ++r)
    input_row(dy.data() + r * out, out, weights.data(), in, dx.data() + r * in);
}

void relu_backward(const Matrix& activation, Matrix& dy) {
  const std::size_t n = dy.size();
  for (std::size_t i = 0; i < n; ++i)
    if (activation.data()[i] <= 0.0) dy.data()[i] = 0.0;
}

void softmax_rows(const Matrix& logits, Matrix& probs) {
  if (probs.rows() != logits.rows() || probs.cols() != logits.cols())
    probs.resize(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r)
    softmax_row(logits.data() + r * logits.cols(), probs.data() + r * logits.cols(),
                logits.cols());
}

}  // namespace serial

namespace omp {

void dense_forward(const Matrix& x, std::span<const double> weights,
                   std::span<const double> bias, Matrix& y, bool relu) {
  const std::size_t in = x.cols(), out = bias.size();
  if (y.rows() != x.rows() || y.cols() != out) y.resize(x.rows(), out);
  const auto rows = static_cast<std::ptrdiff_t>(x.rows());
  const bool par = x.rows() * in * out >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < rows; ++r)
    forward_row(x.data() + r * in, in, weights.data(), bias.data(),
                y.data() + r * out, out, relu);
}

void dense_backward_params(const Matrix& x, const Matrix& dy,
                           std::span<double> dweights, std::span<double> dbias) {
  const std::size_t in = x.cols();
  const auto out = static_cast<std::ptrdiff_t>(dy.cols());
  const bool par = x.rows() * in * dy.cols() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t j = 0; j < out; ++j)
    params_unit(x, dy, j, dweights.data() + j * in, dbias[j]);
}

void dense_backward_input(const Matrix& dy, std::span<const double> weights,
                          Matrix& dx) {
  const std::size_t out = dy.cols(), in = weights.size() / out;
  if (dx.rows() != dy.rows() || dx.cols() != in) dx.resize(dy.rows(), in);
  const auto rows = static_cast<std::ptrdiff_t>(dy.rows());
  const bool par = dy.rows() * in * out >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t r = 0; r < rows; ++r)
    input_row(dy.data() + r * out, out, weights.data(), in, dx.data() + r * in);
}

void relu_backward(const Matrix& activation, Matrix& dy) {
  const auto n = static_cast<std::ptrdiff_t>(dy.size());
#pragma omp parallel for schedule(static) if (dy.size() >= kParallelWork)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    if (activation.data()[i] <= 0.0) dy.data()[i] = 0.0;
}

void softmax_rows(const Matrix& logits, Matrix& probs) {
  if (probs.rows() != logits.rows() || probs.cols() != logits.cols())
    probs.resize(logits.rows(), logits.cols());
  const auto rows = static_cast<std::ptrdiff_t>(logits.rows());
#pragma omp parallel for schedule(static) if (logits.size() >= kParallelWork)
  for (std::ptrdiff_t r = 0; r < rows; ++r)
    softmax_row(logits.data() + r * logits.cols(), probs.data() + r * logits.cols(),
                logits.cols());
}

}  // namespace omp

void dense_forward(const Matrix& x, std::span<const double> weights,
                   std::span<const double> bias, Matrix& y, bool relu) {
  if (default_backend() == Backend::OpenMP)
    omp::dense_forward(x, weights, bias, y, relu);
  else
    serial::dense_forward(x, weights, bias, y, relu);
}

void dense_backward_params(const Matrix& x, const Matrix& dy,
                           std::span<double> dweights, std::span<double> dbias) {
  if (default_backend() == Backend::OpenMP)
    omp::dense_backward_params(x, dy, dweights, dbias);
  else
    serial::dense_backward_params(x, dy, dweights, dbias);
}

void dense_backward_input(const Matrix& dy, std::span<const double> weights,
                          Matrix& dx) {
  if (default_backend() == Backend::OpenMP)
    omp::dense_backward_input(dy, weights, dx);
  else
    serial::dense_backward_input(dy, weights, dx);
}

void relu_backward(const Matrix& activation, Matrix& dy) {
  if (default_backend() == Backend::OpenMP)
    omp::relu_backward(activation, dy);
  else
    serial::relu_backward(activation, dy);
}

void softmax_rows(const Matrix& logits, Matrix& probs) {
  if (default_backend() == Backend::OpenMP)
    omp::softmax_rows(logits, probs);
  else
    serial::softmax_rows(logits, probs);
}

}  // namespace sersal::kernels
