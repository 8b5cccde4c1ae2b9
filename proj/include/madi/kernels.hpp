#pragma once

#include <cstddef>

namespace madi::kernels {

// Heavy loops exist in two flavors: a serial reference and an OpenMP variant.
// Both compute every output element with the same floating-point operation
// order, so results are bit-identical across backends and thread counts; the
// OpenMP path only distributes independent output rows/elements.
enum class Backend { serial, openmp };

Backend get_backend();
void set_backend(Backend b);

struct BackendGuard {
    explicit BackendGuard(Backend b) : prev_(get_backend()) { set_backend(b); }
    ~BackendGuard() { set_backend(prev_); }

  private:
    Backend prev_;
};

// C[m x n] = A[m x k] * B[k x n]   (accumulate: C += ...)
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
// C[m x n] = A[m x k] * B[n x k]^T
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
// C[k x n] = A[m x k]^T * B[m x n]
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);

void add_bias_rows(double* y, const double* bias, int rows, int cols);
// out[c] = sum over rows of x[r][c]
void col_sum(const double* x, double* out, int rows, int cols, bool accumulate);

void softmax_rows(const double* x, double* y, int rows, int cols);
void softmax_rows_backward(const double* y, const double* dy, double* dx, int rows, int cols,
                           bool accumulate);

void log_softmax_rows(const double* x, double* y, int rows, int cols);
void log_softmax_rows_backward(const double* y, const double* dy, double* dx, int rows, int cols,
                               bool accumulate);

// Per-row normalization: y = gain * (x - mean) / sqrt(var + eps) + bias.
// xhat (rows x cols) and rstd (rows) are saved for the backward pass.
void layer_norm_rows(const double* x, const double* gain, const double* bias, double* y,
                     double* xhat, double* rstd, int rows, int cols, double eps);
void layer_norm_rows_backward(const double* xhat, const double* rstd, const double* gain,
                              const double* dy, double* dx, double* dgain, double* dbias,
                              int rows, int cols);

void gelu(const double* x, double* y, size_t n);
void gelu_backward(const double* x, const double* dy, double* dx, size_t n, bool accumulate);

void logistic(const double* x, double* y, size_t n);
void logistic_backward(const double* y, const double* dy, double* dx, size_t n, bool accumulate);

void tanh_fwd(const double* x, double* y, size_t n);
void tanh_backward(const double* y, const double* dy, double* dx, size_t n, bool accumulate);

// 1-D convolution over frames. x is [frames x in_ch], w is [ksize][in_ch][out_ch],
// b is [out_ch], y is [out_frames x out_ch] with
// out_frames = (frames + 2*pad - ksize) / stride + 1.
void conv1d(const double* x, const double* w, const double* b, double* y, int frames, int in_ch,
            int out_ch, int ksize, int stride, int pad);
void conv1d_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     double* db, int frames, int in_ch, int out_ch, int ksize, int stride,
                     int pad);

int conv1d_out_frames(int frames, int ksize, int stride, int pad);

}  // namespace madi::kernels
