// Serial reference vs OpenMP kernels on student-sized and larger shapes.
#include <benchmark/benchmark.h>

#include <vector>

#include "sersal/kernels.hpp"
#include "sersal/rng.hpp"

namespace k = sersal::kernels;
using sersal::Matrix;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < r * c; ++i) m.data()[i] = sersal::keyed_normal(seed, i, 0);
  return m;
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = sersal::keyed_normal(seed, i, 1);
  return v;
}

template <bool Omp>
void BM_DenseForward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto width = static_cast<std::size_t>(state.range(1));
  const Matrix x = random_matrix(rows, width, 1);
  const auto w = random_vector(width * width, 2);
  const auto b = random_vector(width, 3);
  Matrix y(rows, width);
  for (auto _ : state) {
    if constexpr (Omp)
      k::omp::dense_forward(x, w, b, y, true);
    else
      k::serial::dense_forward(x, w, b, y, true);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * width * width));
}

template <bool Omp>
void BM_DenseBackward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto width = static_cast<std::size_t>(state.range(1));
  const Matrix x = random_matrix(rows, width, 4);
  const Matrix dy = random_matrix(rows, width, 5);
  const auto w = random_vector(width * width, 6);
  std::vector<double> dw(width * width), db(width);
  Matrix dx(rows, width);
  for (auto _ : state) {
    if constexpr (Omp) {
      k::omp::dense_backward_params(x, dy, dw, db);
      k::omp::dense_backward_input(dy, w, dx);
    } else {
      k::serial::dense_backward_params(x, dy, dw, db);
      k::serial::dense_backward_input(dy, w, dx);
    }
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * rows * width * width));
}

template <bool Omp>
void BM_Softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const Matrix logits = random_matrix(rows, 2, 7);
  Matrix probs(rows, 2);
  for (auto _ : state) {
    if constexpr (Omp)
      k::omp::softmax_rows(logits, probs);
    else
      k::serial::softmax_rows(logits, probs);
    benchmark::DoNotOptimize(probs.data());
  }
}

void shapes(benchmark::internal::Benchmark* b) {
  for (int rows : {64, 1600, 8192})
    for (int width : {64, 256}) b->Args({rows, width});
}

}  // namespace

BENCHMARK(BM_DenseForward<false>)->Name("dense_forward/serial")->Apply(shapes);
BENCHMARK(BM_DenseForward<true>)->Name("dense_forward/omp")->Apply(shapes);
BENCHMARK(BM_DenseBackward<false>)->Name("dense_backward/serial")->Apply(shapes);
BENCHMARK(BM_DenseBackward<true>)->Name("dense_backward/omp")->Apply(shapes);
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Arg(1600)->Arg(65536);
BENCHMARK(BM_Softmax<true>)->Name("softmax/omp")->Arg(1600)->Arg(65536);

BENCHMARK_MAIN();
