#include "patchnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "patchnet/error.hpp"
#include "patchnet/parallel.hpp"

namespace patchnet::ops {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct ConvDims {
    std::size_t n, cin, h, w;
    std::size_t cout, kh, kw;
    std::size_t ho, wo;
    std::size_t k() const { return cin * kh * kw; }
    std::size_t p() const { return ho * wo; }
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, ConvGeom geom) {
    require(input.rank() == 4, "conv2d input must be [N,C,H,W], got " + shape_str(input.shape()));
    require(weight.rank() == 4,
            "conv2d weight must be [Cout,Cin,kh,kw], got " + shape_str(weight.shape()));
    if (input.dim(1) != weight.dim(1))
        fail(ErrorKind::InvalidArgument, "conv2d channel mismatch: input " +
                                             shape_str(input.shape()) + " vs weight " +
                                             shape_str(weight.shape()));
    require(geom.stride >= 1, "conv2d stride must be >= 1");
    ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
               weight.dim(0), weight.dim(2), weight.dim(3), 0, 0};
    d.ho = conv_output_extent(d.h, d.kh, geom.stride, geom.padding);
    d.wo = conv_output_extent(d.w, d.kw, geom.stride, geom.padding);
    return d;
}

bool is_pointwise(const ConvDims& d, ConvGeom g) {
    return d.kh == 1 && d.kw == 1 && g.stride == 1 && g.padding == 0;
}

// Unfolds sample `src` ([Cin,H,W]) into col [K, P].
void im2col(const float* src, const ConvDims& d, ConvGeom g, float* col) {
    const auto pad = static_cast<std::ptrdiff_t>(g.padding);
    const auto H = static_cast<std::ptrdiff_t>(d.h), W = static_cast<std::ptrdiff_t>(d.w);
    std::size_t row = 0;
    for (std::size_t c = 0; c < d.cin; ++c)
        for (std::size_t i = 0; i < d.kh; ++i)
            for (std::size_t j = 0; j < d.kw; ++j, ++row) {
                float* out = col + row * d.p();
                const float* plane = src + c * d.h * d.w;
                for (std::size_t y = 0; y < d.ho; ++y) {
                    const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + i) - pad;
                    float* orow = out + y * d.wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(orow, orow + d.wo, 0.0f);
                        continue;
                    }
                    const float* irow = plane + iy * W;
                    for (std::size_t x = 0; x < d.wo; ++x) {
                        const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + j) - pad;
                        orow[x] = (ix < 0 || ix >= W) ? 0.0f : irow[ix];
                    }
                }
            }
}

// Scatter-adds col [K, P] back onto sample `dst` ([Cin,H,W]).
void col2im(const float* col, const ConvDims& d, ConvGeom g, float* dst) {
    const auto pad = static_cast<std::ptrdiff_t>(g.padding);
    const auto H = static_cast<std::ptrdiff_t>(d.h), W = static_cast<std::ptrdiff_t>(d.w);
    std::size_t row = 0;
    for (std::size_t c = 0; c < d.cin; ++c)
        for (std::size_t i = 0; i < d.kh; ++i)
            for (std::size_t j = 0; j < d.kw; ++j, ++row) {
                const float* in = col + row * d.p();
                float* plane = dst + c * d.h * d.w;
                for (std::size_t y = 0; y < d.ho; ++y) {
                    const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + i) - pad;
                    if (iy < 0 || iy >= H) continue;
                    float* prow = plane + iy * W;
                    const float* irow = in + y * d.wo;
                    for (std::size_t x = 0; x < d.wo; ++x) {
                        const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + j) - pad;
                        if (ix >= 0 && ix < W) prow[ix] += irow[x];
                    }
                }
            }
}

}  // namespace

std::size_t conv_output_extent(std::size_t n, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
    require(stride >= 1, "stride must be >= 1");
    if (kernel > n + 2 * padding)
        fail(ErrorKind::InvalidArgument,
             "kernel " + std::to_string(kernel) + " exceeds padded input extent " +
                 std::to_string(n + 2 * padding));
    return (n + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvGeom geom) {
    const ConvDims d = conv_dims(input, weight, geom);
    require(bias.size() == d.cout, "conv2d bias length " + std::to_string(bias.size()) +
                                       " does not match Cout " + std::to_string(d.cout));
    Tensor out({d.n, d.cout, d.ho, d.wo});
    const ConstMatMap wmat(weight.data(), d.cout, d.k());
    const bool pointwise = is_pointwise(d, geom);

    parallel_for(d.n, [&](std::size_t n) {
        const float* src = input.data() + n * d.cin * d.h * d.w;
        MatMap omat(out.data() + n * d.cout * d.p(), d.cout, d.p());
        if (pointwise) {
            omat.noalias() = wmat * ConstMatMap(src, d.k(), d.p());
        } else {
            RowMat col(d.k(), d.p());
            im2col(src, d, geom, col.data());
            omat.noalias() = wmat * col;
        }
        for (std::size_t o = 0; o < d.cout; ++o) omat.row(o).array() += bias[o];
    });
    return out;
}

ConvGrads conv2d_backward(const Tensor& grad_out, const ConvSaved& saved) {
    if (saved.input == nullptr || saved.weight == nullptr || saved.input->empty() ||
        saved.weight->empty())
        fail(ErrorKind::InvalidArgument, "conv2d_backward: missing saved forward tensors");
    const Tensor& input = *saved.input;
    const Tensor& weight = *saved.weight;
    const ConvDims d = conv_dims(input, weight, saved.geom);
    const Shape expect{d.n, d.cout, d.ho, d.wo};
    if (grad_out.shape() != expect)
        fail(ErrorKind::InvalidArgument, "conv2d_backward: grad_out " +
                                             shape_str(grad_out.shape()) + " != forward output " +
                                             shape_str(expect));

    ConvGrads g{saved.input_grad ? Tensor(input.shape()) : Tensor(), Tensor(weight.shape()),
                Tensor({d.cout})};
    const ConstMatMap wmat(weight.data(), d.cout, d.k());
    const bool pointwise = is_pointwise(d, saved.geom);

    // Per-sample partials, summed in sample order below so the result does
    // not depend on the worker count.
    std::vector<float> wpart(d.n * weight.size());
    std::vector<double> bpart(d.n * d.cout);

    parallel_for(d.n, [&](std::size_t n) {
        const float* src = input.data() + n * d.cin * d.h * d.w;
        const ConstMatMap gy(grad_out.data() + n * d.cout * d.p(), d.cout, d.p());
        MatMap gw(wpart.data() + n * weight.size(), d.cout, d.k());
        float* gx = saved.input_grad ? g.input.data() + n * d.cin * d.h * d.w : nullptr;
        if (pointwise) {
            gw.noalias() = gy * ConstMatMap(src, d.k(), d.p()).transpose();
            if (gx) MatMap(gx, d.k(), d.p()).noalias() = wmat.transpose() * gy;
        } else {
            RowMat col(d.k(), d.p());
            im2col(src, d, saved.geom, col.data());
            gw.noalias() = gy * col.transpose();
            if (gx) {
                col.noalias() = wmat.transpose() * gy;
                col2im(col.data(), d, saved.geom, gx);
            }
        }
        for (std::size_t o = 0; o < d.cout; ++o) {
            double s = 0.0;
            const float* row = gy.data() + o * d.p();
            for (std::size_t p = 0; p < d.p(); ++p) s += row[p];
            bpart[n * d.cout + o] = s;
        }
    });

    for (std::size_t n = 0; n < d.n; ++n) {
        const float* part = wpart.data() + n * weight.size();
        for (std::size_t i = 0; i < weight.size(); ++i) g.weight[i] += part[i];
    }
    for (std::size_t o = 0; o < d.cout; ++o) {
        double s = 0.0;
        for (std::size_t n = 0; n < d.n; ++n) s += bpart[n * d.cout + o];
        g.bias[o] = static_cast<float>(s);
    }
    return g;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, Mode mode, BatchNormCache* cache,
                   BatchNormOptions options) {
    require(input.rank() == 4, "batchnorm2d input must be [N,C,H,W], got " +
                                   shape_str(input.shape()));
    const std::size_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
    require(gamma.size() == C && beta.size() == C && running_mean.size() == C &&
                running_var.size() == C,
            "batchnorm2d parameter length does not match channel count " + std::to_string(C));
    const std::size_t M = N * HW;
    if (mode == Mode::Train && M < 2)
        fail(ErrorKind::InvalidArgument,
             "batchnorm2d train mode needs N*H*W >= 2 (degenerate variance), got input " +
                 shape_str(input.shape()));

    Tensor out(input.shape());
    Tensor x_hat(input.shape());
    std::vector<float> inv_std(C);

    for (std::size_t c = 0; c < C; ++c) {
        double mean, var;
        if (mode == Mode::Train) {
            double s = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const float* p = input.data() + (n * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) s += p[i];
            }
            mean = s / static_cast<double>(M);
            double ss = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const float* p = input.data() + (n * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    const double dv = p[i] - mean;
                    ss += dv * dv;
                }
            }
            var = ss / static_cast<double>(M);
            const float m = options.momentum;
            running_mean[c] = (1.0f - m) * running_mean[c] + m * static_cast<float>(mean);
            running_var[c] = (1.0f - m) * running_var[c] + m * static_cast<float>(var);
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const auto istd = static_cast<float>(1.0 / std::sqrt(var + options.eps));
        const auto fmean = static_cast<float>(mean);
        inv_std[c] = istd;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * HW;
            const float* p = input.data() + off;
            float* xh = x_hat.data() + off;
            float* o = out.data() + off;
            for (std::size_t i = 0; i < HW; ++i) {
                xh[i] = (p[i] - fmean) * istd;
                o[i] = gamma[c] * xh[i] + beta[c];
            }
        }
    }
    if (cache) {
        cache->mode = mode;
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

BatchNormGrads batchnorm2d_backward(const Tensor& grad_out, const Tensor& gamma,
                                    const BatchNormCache& cache) {
    require(!cache.x_hat.empty(), "batchnorm2d_backward: missing saved forward state");
    require(grad_out.shape() == cache.x_hat.shape(),
            "batchnorm2d_backward: grad_out " + shape_str(grad_out.shape()) +
                " != forward output " + shape_str(cache.x_hat.shape()));
    const Shape& s = grad_out.shape();
    const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
    const double M = static_cast<double>(N * HW);
    BatchNormGrads g{Tensor(s), Tensor({C}), Tensor({C})};

    for (std::size_t c = 0; c < C; ++c) {
        double sum_gy = 0.0, sum_gy_xh = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
                sum_gy += grad_out[off + i];
                sum_gy_xh += static_cast<double>(grad_out[off + i]) * cache.x_hat[off + i];
            }
        }
        g.beta[c] = static_cast<float>(sum_gy);
        g.gamma[c] = static_cast<float>(sum_gy_xh);
        const double scale = static_cast<double>(gamma[c]) * cache.inv_std[c];
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
                if (cache.mode == Mode::Train) {
                    g.input[off + i] = static_cast<float>(
                        scale * (grad_out[off + i] - sum_gy / M -
                                 cache.x_hat[off + i] * sum_gy_xh / M));
                } else {
                    g.input[off + i] = static_cast<float>(scale * grad_out[off + i]);
                }
            }
        }
    }
    return g;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0f ? input[i] : 0.0f;
    return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& input) {
    require(grad_out.shape() == input.shape(), "relu_backward: shape mismatch " +
                                                   shape_str(grad_out.shape()) + " vs " +
                                                   shape_str(input.shape()));
    Tensor g(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > 0.0f ? grad_out[i] : 0.0f;
    return g;
}

Tensor dropout(const Tensor& input, float p, Mode mode, const Rng& rng, std::uint64_t call_index,
               Tensor* scale) {
    if (!(p >= 0.0f && p < 1.0f))
        fail(ErrorKind::InvalidArgument, "dropout rate must be in [0, 1), got " + std::to_string(p));
    if (mode == Mode::Eval || p == 0.0f) {
        if (scale) *scale = Tensor(input.shape(), 1.0f);
        return input;
    }
    const Rng site = rng.split(call_index);
    const float keep_scale = 1.0f / (1.0f - p);
    Tensor out(input.shape());
    Tensor mask(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        mask[i] = site.uniform(i) < p ? 0.0f : keep_scale;
        out[i] = input[i] * mask[i];
    }
    if (scale) *scale = std::move(mask);
    return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require(input.rank() == 2 && weight.rank() == 2,
            "linear expects input [N,F] and weight [G,F], got " + shape_str(input.shape()) +
                " and " + shape_str(weight.shape()));
    if (input.dim(1) != weight.dim(1))
        fail(ErrorKind::InvalidArgument, "linear feature mismatch: input " +
                                             shape_str(input.shape()) + " vs weight " +
                                             shape_str(weight.shape()));
    const std::size_t N = input.dim(0), F = input.dim(1), G = weight.dim(0);
    require(bias.size() == G, "linear bias length does not match output features");
    Tensor out({N, G});
    MatMap o(out.data(), N, G);
    o.noalias() = ConstMatMap(input.data(), N, F) * ConstMatMap(weight.data(), G, F).transpose();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t g = 0; g < G; ++g) o(n, g) += bias[g];
    return out;
}

LinearGrads linear_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight) {
    const std::size_t N = input.dim(0), F = input.dim(1), G = weight.dim(0);
    require(grad_out.shape() == Shape({N, G}), "linear_backward: grad_out shape " +
                                                   shape_str(grad_out.shape()) +
                                                   " does not match forward output");
    LinearGrads g{Tensor({N, F}), Tensor({G, F}), Tensor({G})};
    const ConstMatMap gy(grad_out.data(), N, G);
    MatMap(g.input.data(), N, F).noalias() = gy * ConstMatMap(weight.data(), G, F);
    MatMap(g.weight.data(), G, F).noalias() = gy.transpose() * ConstMatMap(input.data(), N, F);
    for (std::size_t o = 0; o < G; ++o) {
        double s = 0.0;
        for (std::size_t n = 0; n < N; ++n) s += gy(n, o);
        g.bias[o] = static_cast<float>(s);
    }
    return g;
}

Tensor softmax(const Tensor& logits) {
    require(logits.rank() == 2, "softmax expects [N,K], got " + shape_str(logits.shape()));
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t n = 0; n < N; ++n) {
        const float* row = logits.data() + n * K;
        float mx = row[0];
        for (std::size_t k = 0; k < K; ++k) {
            if (!std::isfinite(row[k]))
                fail(ErrorKind::InvalidArgument, "softmax: non-finite logit in row " +
                                                     std::to_string(n));
            mx = std::max(mx, row[k]);
        }
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
        for (std::size_t k = 0; k < K; ++k)
            out[n * K + k] = static_cast<float>(std::exp(static_cast<double>(row[k]) - mx) / z);
    }
    return out;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad) {
    require(logits.rank() == 2, "cross_entropy expects logits [N,K]");
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    require(labels.size() == N, "cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for batch of " + std::to_string(N));
    for (std::size_t n = 0; n < N; ++n)
        if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= K)
            fail(ErrorKind::InvalidArgument, "cross_entropy: label " + std::to_string(labels[n]) +
                                                 " out of range 0.." + std::to_string(K - 1));
    const Tensor prob = softmax(logits);
    double loss = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const float* row = logits.data() + n * K;
        const double mx = *std::max_element(row, row + K);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
        loss += std::log(z) + mx - row[labels[n]];
    }
    if (grad) {
        *grad = prob;
        const float inv_n = 1.0f / static_cast<float>(N);
        for (std::size_t n = 0; n < N; ++n) {
            (*grad)[n * K + static_cast<std::size_t>(labels[n])] -= 1.0f;
            for (std::size_t k = 0; k < K; ++k) (*grad)[n * K + k] *= inv_n;
        }
    }
    return loss / static_cast<double>(N);
}

Tensor global_avg_pool(const Tensor& input) {
    require(input.rank() == 4, "global_avg_pool expects [N,C,H,W], got " +
                                   shape_str(input.shape()));
    const std::size_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
    Tensor out({N, C});
    for (std::size_t i = 0; i < N * C; ++i) {
        double s = 0.0;
        const float* p = input.data() + i * HW;
        for (std::size_t j = 0; j < HW; ++j) s += p[j];
        out[i] = static_cast<float>(s / static_cast<double>(HW));
    }
    return out;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& input_shape) {
    require(input_shape.size() == 4 && grad_out.shape() == Shape({input_shape[0], input_shape[1]}),
            "global_avg_pool_backward: grad_out " + shape_str(grad_out.shape()) +
                " does not match input " + shape_str(input_shape));
    const std::size_t HW = input_shape[2] * input_shape[3];
    Tensor g(input_shape);
    const float inv = 1.0f / static_cast<float>(HW);
    for (std::size_t i = 0; i < grad_out.size(); ++i)
        std::fill_n(g.data() + i * HW, HW, grad_out[i] * inv);
    return g;
}

Tensor concat_channels(std::span<const Tensor> inputs) {
    require(!inputs.empty(), "concat_channels: empty input list");
    const Tensor& first = inputs.front();
    require(first.rank() == 3, "concat_channels expects [C,H,W] inputs, got " +
                                   shape_str(first.shape()));
    std::size_t channels = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& t = inputs[i];
        if (t.rank() != 3 || t.dim(1) != first.dim(1) || t.dim(2) != first.dim(2))
            fail(ErrorKind::InvalidArgument, "concat_channels: input " + std::to_string(i) +
                                                 " has shape " + shape_str(t.shape()) +
                                                 ", expected spatial extent of " +
                                                 shape_str(first.shape()));
        channels += t.dim(0);
    }
    Tensor out({channels, first.dim(1), first.dim(2)});
    float* dst = out.data();
    for (const Tensor& t : inputs) dst = std::copy(t.data(), t.data() + t.size(), dst);
    return out;
}

Tensor batch_item(const Tensor& batch, std::size_t n) {
    require(batch.rank() == 4 && n < batch.dim(0), "batch_item: index out of range");
    const Shape item{batch.dim(1), batch.dim(2), batch.dim(3)};
    const std::size_t len = shape_numel(item);
    const float* src = batch.data() + n * len;
    return Tensor(item, std::vector<float>(src, src + len));
}

Tensor stack_batch(std::span<const Tensor> items) {
    require(!items.empty(), "stack_batch: empty input list");
    Shape shape = items.front().shape();
    for (const Tensor& t : items)
        require(t.shape() == shape, "stack_batch: mismatched item shapes " +
                                        shape_str(t.shape()) + " vs " + shape_str(shape));
    shape.insert(shape.begin(), items.size());
    Tensor out(shape);
    float* dst = out.data();
    for (const Tensor& t : items) dst = std::copy(t.data(), t.data() + t.size(), dst);
    return out;
}

}  // namespace patchnet::ops
