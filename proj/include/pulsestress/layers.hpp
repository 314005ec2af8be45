#pragma once

// Forward and backward kernels for the 1-D network. Activations are laid
// out as [batch, length, channels] and conv kernels as [width, in, out].

#include "pulsestress/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

namespace pulsestress::nn::layers {

inline std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride) {
    if (length < kernel) return 0;
    return (length - kernel) / stride + 1;
}

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                         std::size_t stride) {
    const std::size_t batch = x.dim(0), len = x.dim(1), cin = x.dim(2);
    const std::size_t width = kernel.dim(0), cout = kernel.dim(2);
    if (kernel.dim(1) != cin) throw Error(Errc::Shape, "conv1d: channel mismatch");
    const std::size_t out_len = conv_output_length(len, width, stride);
    Tensor<T> y({batch, out_len, cout});
    const T* w = kernel.data();
    for (std::size_t b = 0; b < batch; ++b) {
        const T* xb = x.data() + b * len * cin;
        T* yb = y.data() + b * out_len * cout;
        for (std::size_t t = 0; t < out_len; ++t) {
            T* yt = yb + t * cout;
            for (std::size_t co = 0; co < cout; ++co) yt[co] = bias[co];
            const T* xt = xb + t * stride * cin;
            for (std::size_t k = 0; k < width; ++k) {
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const T xv = xt[k * cin + ci];
                    const T* wk = w + (k * cin + ci) * cout;
                    for (std::size_t co = 0; co < cout; ++co) yt[co] += xv * wk[co];
                }
            }
        }
    }
    return y;
}

// Accumulates into dkernel/dbias. dx is skipped when null.
template <typename T>
void conv1d_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& dy,
                     std::size_t stride, Tensor<T>& dkernel, Tensor<T>& dbias, Tensor<T>* dx) {
    const std::size_t batch = x.dim(0), len = x.dim(1), cin = x.dim(2);
    const std::size_t width = kernel.dim(0), cout = kernel.dim(2);
    const std::size_t out_len = dy.dim(1);
    if (dx) *dx = Tensor<T>(x.shape());
    const T* w = kernel.data();
    T* dw = dkernel.data();
    for (std::size_t b = 0; b < batch; ++b) {
        const T* xb = x.data() + b * len * cin;
        const T* dyb = dy.data() + b * out_len * cout;
        T* dxb = dx ? dx->data() + b * len * cin : nullptr;
        for (std::size_t t = 0; t < out_len; ++t) {
            const T* g = dyb + t * cout;
            for (std::size_t co = 0; co < cout; ++co) dbias[co] += g[co];
            const T* xt = xb + t * stride * cin;
            for (std::size_t k = 0; k < width; ++k) {
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const T xv = xt[k * cin + ci];
                    T* dwk = dw + (k * cin + ci) * cout;
                    const T* wk = w + (k * cin + ci) * cout;
                    T acc = 0;
                    for (std::size_t co = 0; co < cout; ++co) {
                        dwk[co] += xv * g[co];
                        acc += wk[co] * g[co];
                    }
                    if (dxb) dxb[(t * stride + k) * cin + ci] += acc;
                }
            }
        }
    }
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
    for (auto& v : x.values()) v = v > T(0) ? v : T(0);
}

// Gates `grad` by the pre-activation: zero where pre <= 0.
template <typename T>
void relu_backward_inplace(const Tensor<T>& pre, Tensor<T>& grad) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(pre[i] > T(0))) grad[i] = T(0);
    }
}

template <typename T>
Tensor<T> avgpool_forward(const Tensor<T>& x, std::size_t pool, std::size_t stride) {
    const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
    const std::size_t out_len = conv_output_length(len, pool, stride);
    Tensor<T> y({batch, out_len, ch});
    const T inv = T(1) / static_cast<T>(pool);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < out_len; ++t) {
            T* yt = y.data() + (b * out_len + t) * ch;
            for (std::size_t k = 0; k < pool; ++k) {
                const T* xt = x.data() + (b * len + t * stride + k) * ch;
                for (std::size_t c = 0; c < ch; ++c) yt[c] += xt[c];
            }
            for (std::size_t c = 0; c < ch; ++c) yt[c] *= inv;
        }
    }
    return y;
}

template <typename T>
Tensor<T> avgpool_backward(const Tensor<T>& dy, const Shape& input_shape, std::size_t pool,
                           std::size_t stride) {
    const std::size_t batch = dy.dim(0), out_len = dy.dim(1), ch = dy.dim(2);
    const std::size_t len = input_shape.at(1);
    Tensor<T> dx(input_shape);
    const T inv = T(1) / static_cast<T>(pool);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < out_len; ++t) {
            const T* g = dy.data() + (b * out_len + t) * ch;
            for (std::size_t k = 0; k < pool; ++k) {
                T* dxt = dx.data() + (b * len + t * stride + k) * ch;
                for (std::size_t c = 0; c < ch; ++c) dxt[c] += g[c] * inv;
            }
        }
    }
    return dx;
}

template <typename T>
struct BatchNormCache {
    Tensor<T> normalized;           // x-hat
    std::vector<T> inv_std;         // per channel
};

// Batch statistics over (batch, length) per channel; updates running stats.
template <typename T>
Tensor<T> batchnorm_forward_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                  Tensor<T>& running_mean, Tensor<T>& running_var, double momentum,
                                  double eps, BatchNormCache<T>& cache) {
    const std::size_t ch = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / ch;
    std::vector<double> mean(ch, 0.0), var(ch, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ch; ++c) mean[c] += static_cast<double>(x[r * ch + c]);
    }
    for (auto& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ch; ++c) {
            const double d = static_cast<double>(x[r * ch + c]) - mean[c];
            var[c] += d * d;
        }
    }
    for (auto& v : var) v /= static_cast<double>(rows);

    cache.inv_std.resize(ch);
    for (std::size_t c = 0; c < ch; ++c) {
        cache.inv_std[c] = static_cast<T>(1.0 / std::sqrt(var[c] + eps));
        running_mean[c] = static_cast<T>(momentum * static_cast<double>(running_mean[c]) +
                                         (1.0 - momentum) * mean[c]);
        running_var[c] = static_cast<T>(momentum * static_cast<double>(running_var[c]) +
                                        (1.0 - momentum) * var[c]);
    }
    cache.normalized = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t i = r * ch + c;
            const T xh = static_cast<T>(static_cast<double>(x[i]) - mean[c]) * cache.inv_std[c];
            cache.normalized[i] = xh;
            y[i] = gamma[c] * xh + beta[c];
        }
    }
    return y;
}

template <typename T>
Tensor<T> batchnorm_forward_infer(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                  const Tensor<T>& running_mean, const Tensor<T>& running_var,
                                  double eps) {
    const std::size_t ch = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / ch;
    std::vector<T> scale(ch), shift(ch);
    for (std::size_t c = 0; c < ch; ++c) {
        scale[c] = static_cast<T>(static_cast<double>(gamma[c]) /
                                  std::sqrt(static_cast<double>(running_var[c]) + eps));
        shift[c] = beta[c] - scale[c] * running_mean[c];
    }
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ch; ++c) y[r * ch + c] = scale[c] * x[r * ch + c] + shift[c];
    }
    return y;
}

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma,
                             const BatchNormCache<T>& cache, Tensor<T>& dgamma, Tensor<T>& dbeta) {
    const std::size_t ch = dy.dim(dy.rank() - 1);
    const std::size_t rows = dy.size() / ch;
    std::vector<double> sum_dxh(ch, 0.0), sum_dxh_xh(ch, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t i = r * ch + c;
            dgamma[c] += dy[i] * cache.normalized[i];
            dbeta[c] += dy[i];
            const double dxh = static_cast<double>(dy[i]) * static_cast<double>(gamma[c]);
            sum_dxh[c] += dxh;
            sum_dxh_xh[c] += dxh * static_cast<double>(cache.normalized[i]);
        }
    }
    Tensor<T> dx(dy.shape());
    const double m = static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t i = r * ch + c;
            const double dxh = static_cast<double>(dy[i]) * static_cast<double>(gamma[c]);
            const double v = (m * dxh - sum_dxh[c] -
                              static_cast<double>(cache.normalized[i]) * sum_dxh_xh[c]) /
                             m;
            dx[i] = static_cast<T>(v * static_cast<double>(cache.inv_std[c]));
        }
    }
    return dx;
}

// Inverted dropout: kept units are scaled by 1/(1-p). Returns the mask
// (already scaled) so backward can reuse it; empty mask when p == 0.
template <typename T>
std::vector<T> dropout_inplace(Tensor<T>& x, double p, std::mt19937_64& rng) {
    if (p <= 0.0) return {};
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask[i] = uniform01(rng) >= p ? keep_scale : T(0);
        x[i] *= mask[i];
    }
    return mask;
}

template <typename T>
void dropout_backward_inplace(const std::vector<T>& mask, Tensor<T>& grad) {
    if (mask.empty()) return;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
}

template <typename T>
Tensor<T> global_avgpool_forward(const Tensor<T>& x) {
    const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
    Tensor<T> y({batch, ch});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t c = 0; c < ch; ++c) y[b * ch + c] += x[(b * len + t) * ch + c];
        }
        for (std::size_t c = 0; c < ch; ++c) y[b * ch + c] /= static_cast<T>(len);
    }
    return y;
}

template <typename T>
Tensor<T> global_avgpool_backward(const Tensor<T>& dy, const Shape& input_shape) {
    const std::size_t batch = input_shape[0], len = input_shape[1], ch = input_shape[2];
    Tensor<T> dx(input_shape);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t c = 0; c < ch; ++c) {
                dx[(b * len + t) * ch + c] = dy[b * ch + c] / static_cast<T>(len);
            }
        }
    }
    return dx;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
    const std::size_t batch = x.dim(0), in = x.dim(1), out = kernel.dim(1);
    if (kernel.dim(0) != in) throw Error(Errc::Shape, "dense: input width mismatch");
    Tensor<T> y({batch, out});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < out; ++o) y[b * out + o] = bias[o];
        for (std::size_t i = 0; i < in; ++i) {
            const T xv = x[b * in + i];
            for (std::size_t o = 0; o < out; ++o) y[b * out + o] += xv * kernel[i * out + o];
        }
    }
    return y;
}

template <typename T>
Tensor<T> dense_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& dy,
                         Tensor<T>& dkernel, Tensor<T>& dbias) {
    const std::size_t batch = x.dim(0), in = x.dim(1), out = kernel.dim(1);
    Tensor<T> dx(x.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < out; ++o) dbias[o] += dy[b * out + o];
        for (std::size_t i = 0; i < in; ++i) {
            T acc = 0;
            for (std::size_t o = 0; o < out; ++o) {
                dkernel[i * out + o] += x[b * in + i] * dy[b * out + o];
                acc += kernel[i * out + o] * dy[b * out + o];
            }
            dx[b * in + i] = acc;
        }
    }
    return dx;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    Tensor<T> p(logits.shape());
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        T mx = logits[r * cols];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, logits[r * cols + c]);
        T sum = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            p[r * cols + c] = std::exp(logits[r * cols + c] - mx);
            sum += p[r * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) p[r * cols + c] /= sum;
    }
    return p;
}

}  // namespace pulsestress::nn::layers
