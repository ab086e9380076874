#include <cmath>

#include "pmr/nn/kernels.hpp"

namespace pmr::nn::kernels {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void affine(const double* W, const double* bias, const double* X, double* Y, std::size_t batch,
            std::size_t in, std::size_t out) {
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = X + b * in;
    double* y = Y + b * out;
    for (std::size_t o = 0; o < out; ++o) y[o] = bias[o] + dot(W + o * in, x, in);
  }
}

void affine_backward_input(const double* W, const double* dY, double* dX, std::size_t batch,
                           std::size_t in, std::size_t out) {
  for (std::size_t b = 0; b < batch; ++b) {
    double* dx = dX + b * in;
    for (std::size_t i = 0; i < in; ++i) dx[i] = 0.0;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dY[b * out + o];
      if (g != 0.0) axpy(g, W + o * in, dx, in);
    }
  }
}

void affine_backward_params(const double* X, const double* dY, double* dW, double* db,
                            std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) {
    double* dw = dW + o * in;
    for (std::size_t b = 0; b < batch; ++b) {
      const double g = dY[b * out + o];
      if (g == 0.0) continue;
      axpy(g, X + b * in, dw, in);
      db[o] += g;
    }
  }
}

void adam(double* p, const double* g, double* m, double* v, std::size_t n, double lr, double beta1,
          double beta2, double eps, double bias_corr1, double bias_corr2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] / bias_corr1;
    const double vhat = v[i] / bias_corr2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

const Table& scalar_table() {
  static const Table t{Isa::Scalar, "scalar", dot, axpy, affine, affine_backward_input,
                       affine_backward_params, adam};
  return t;
}

}  // namespace pmr::nn::kernels
