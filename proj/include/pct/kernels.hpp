#pragma once

#include <cstddef>

// Raw row-major loops shared by the ops. All GEMMs accumulate into C.
namespace pct::kernels {

// C(m,n) += A(m,k) * B(k,n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// C(m,n) += A(m,k) * B(n,k)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// C(k,n) += A(m,k)^T * B(m,n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t ksize = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - ksize) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - ksize) / stride + 1; }
};

// cols is (channels*k*k) x (out_h*out_w); zero padding outside the image.
void im2col(const double* image, const ConvGeometry& geo, double* cols);
// Adjoint of im2col: scatters-adds cols back into image.
void col2im(const double* cols, const ConvGeometry& geo, double* image);

}  // namespace pct::kernels
