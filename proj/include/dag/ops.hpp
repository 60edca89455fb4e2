#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "dag/parallel.hpp"
#include "dag/tensor.hpp"

// Differentiable tensor operations. Every backward rule accumulates with +=
// in a fixed index order; parallel sections only ever write disjoint output
// slots, so gradients are bitwise reproducible for any thread count.

namespace dag {

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    DAG_CHECK(a.shape() == b.shape(), contract,
              std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Tensor make_output(const Shape& s, bool requires_grad) {
    Tensor t = Tensor::zeros(s);
    t.set_requires_grad(requires_grad);
    return t;
}

}  // namespace detail

// ---------------------------------------------------------------- pointwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    bool rec = tracing({&a, &b});
    Tensor y = detail::make_output(a.shape(), rec);
    const float* pa = a.data();
    const float* pb = b.data();
    float* py = y.mutable_data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) py[i] = pa[i] + pb[i];
    if (rec) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        Tape::current()->record([ai, bi, yi] {
            if (yi->grad.empty()) return;
            int64_t n = yi->numel();
            if (ai->requires_grad) {
                float* g = ai->grad_acc();
                for (int64_t i = 0; i < n; ++i) g[i] += yi->grad[i];
            }
            if (bi->requires_grad) {
                float* g = bi->grad_acc();
                for (int64_t i = 0; i < n; ++i) g[i] += yi->grad[i];
            }
        });
    }
    return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    bool rec = tracing({&a, &b});
    Tensor y = detail::make_output(a.shape(), rec);
    const float* pa = a.data();
    const float* pb = b.data();
    float* py = y.mutable_data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) py[i] = pa[i] - pb[i];
    if (rec) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        Tape::current()->record([ai, bi, yi] {
            if (yi->grad.empty()) return;
            int64_t n = yi->numel();
            if (ai->requires_grad) {
                float* g = ai->grad_acc();
                for (int64_t i = 0; i < n; ++i) g[i] += yi->grad[i];
            }
            if (bi->requires_grad) {
                float* g = bi->grad_acc();
                for (int64_t i = 0; i < n; ++i) g[i] -= yi->grad[i];
            }
        });
    }
    return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    bool rec = tracing({&a, &b});
    Tensor y = detail::make_output(a.shape(), rec);
    const float* pa = a.data();
    const float* pb = b.data();
    float* py = y.mutable_data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) py[i] = pa[i] * pb[i];
    if (rec) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        Tape::current()->record([ai, bi, yi] {
            if (yi->grad.empty()) return;
            int64_t n = yi->numel();
            if (ai->requires_grad) {
                float* g = ai->grad_acc();
                for (int64_t i = 0; i < n; ++i) g[i] += yi->grad[i] * bi->data[i];
            }
            if (bi->requires_grad) {
                float* g = bi->grad_acc();
                for (int64_t i = 0; i < n; ++i) g[i] += yi->grad[i] * ai->data[i];
            }
        });
    }
    return y;
}

inline Tensor scale(const Tensor& a, float c) {
    bool rec = tracing({&a});
    Tensor y = detail::make_output(a.shape(), rec);
    const float* pa = a.data();
    float* py = y.mutable_data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) py[i] = c * pa[i];
    if (rec) {
        auto ai = a.impl(), yi = y.impl();
        Tape::current()->record([ai, yi, c] {
            if (yi->grad.empty() || !ai->requires_grad) return;
            float* g = ai->grad_acc();
            int64_t n = yi->numel();
            for (int64_t i = 0; i < n; ++i) g[i] += c * yi->grad[i];
        });
    }
    return y;
}

inline Tensor add_scalar(const Tensor& a, float c) {
    bool rec = tracing({&a});
    Tensor y = detail::make_output(a.shape(), rec);
    const float* pa = a.data();
    float* py = y.mutable_data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) py[i] = pa[i] + c;
    if (rec) {
        auto ai = a.impl(), yi = y.impl();
        Tape::current()->record([ai, yi] {
            if (yi->grad.empty() || !ai->requires_grad) return;
            float* g = ai->grad_acc();
            int64_t n = yi->numel();
            for (int64_t i = 0; i < n; ++i) g[i] += yi->grad[i];
        });
    }
    return y;
}

inline Tensor sigmoid(const Tensor& a) {
    bool rec = tracing({&a});
    Tensor y = detail::make_output(a.shape(), rec);
    const float* pa = a.data();
    float* py = y.mutable_data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) py[i] = 1.0f / (1.0f + std::exp(-pa[i]));
    if (rec) {
        auto ai = a.impl(), yi = y.impl();
        Tape::current()->record([ai, yi] {
            if (yi->grad.empty() || !ai->requires_grad) return;
            float* g = ai->grad_acc();
            int64_t n = yi->numel();
            for (int64_t i = 0; i < n; ++i) {
                float s = yi->data[i];
                g[i] += yi->grad[i] * s * (1.0f - s);
            }
        });
    }
    return y;
}

inline Tensor silu(const Tensor& a) {
    bool rec = tracing({&a});
    Tensor y = detail::make_output(a.shape(), rec);
    const float* pa = a.data();
    float* py = y.mutable_data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) {
        float s = 1.0f / (1.0f + std::exp(-pa[i]));
        py[i] = pa[i] * s;
    }
    if (rec) {
        auto ai = a.impl(), yi = y.impl();
        Tape::current()->record([ai, yi] {
            if (yi->grad.empty() || !ai->requires_grad) return;
            float* g = ai->grad_acc();
            int64_t n = yi->numel();
            for (int64_t i = 0; i < n; ++i) {
                float x = ai->data[i];
                float s = 1.0f / (1.0f + std::exp(-x));
                g[i] += yi->grad[i] * s * (1.0f + x * (1.0f - s));
            }
        });
    }
    return y;
}

// value-equal tensor severed from the tape; no gradient ever flows through
inline Tensor detach(const Tensor& a) {
    auto p = std::make_shared<TensorImpl>();
    p->shape = a.shape();
    p->data = std::vector<float>(a.data(), a.data() + a.numel());
    return Tensor(p);
}

// --------------------------------------------------------------- reductions

inline Tensor sum_all(const Tensor& a) {
    bool rec = tracing({&a});
    float s = 0.0f;
    const float* pa = a.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) s += pa[i];
    Tensor y = detail::make_output({1}, rec);
    y.mutable_data()[0] = s;
    if (rec) {
        auto ai = a.impl(), yi = y.impl();
        Tape::current()->record([ai, yi] {
            if (yi->grad.empty() || !ai->requires_grad) return;
            float gy = yi->grad[0];
            float* g = ai->grad_acc();
            int64_t n = ai->numel();
            for (int64_t i = 0; i < n; ++i) g[i] += gy;
        });
    }
    return y;
}

inline Tensor mean_all(const Tensor& a) {
    bool rec = tracing({&a});
    float s = 0.0f;
    const float* pa = a.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) s += pa[i];
    Tensor y = detail::make_output({1}, rec);
    y.mutable_data()[0] = s / static_cast<float>(n);
    if (rec) {
        auto ai = a.impl(), yi = y.impl();
        Tape::current()->record([ai, yi] {
            if (yi->grad.empty() || !ai->requires_grad) return;
            float gy = yi->grad[0] / static_cast<float>(ai->numel());
            float* g = ai->grad_acc();
            int64_t n = ai->numel();
            for (int64_t i = 0; i < n; ++i) g[i] += gy;
        });
    }
    return y;
}

// mean |a-b|; subgradient at 0 is 0
inline Tensor l1_loss(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "l1_loss");
    bool rec = tracing({&a, &b});
    const float* pa = a.data();
    const float* pb = b.data();
    int64_t n = a.numel();
    float s = 0.0f;
    for (int64_t i = 0; i < n; ++i) s += std::fabs(pa[i] - pb[i]);
    Tensor y = detail::make_output({1}, rec);
    y.mutable_data()[0] = s / static_cast<float>(n);
    if (rec) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        Tape::current()->record([ai, bi, yi] {
            if (yi->grad.empty()) return;
            int64_t n = ai->numel();
            float gy = yi->grad[0] / static_cast<float>(n);
            for (int64_t i = 0; i < n; ++i) {
                float d = ai->data[i] - bi->data[i];
                float sg = d > 0.0f ? gy : (d < 0.0f ? -gy : 0.0f);
                if (ai->requires_grad) ai->grad_acc()[i] += sg;
                if (bi->requires_grad) bi->grad_acc()[i] -= sg;
            }
        });
    }
    return y;
}

// mean (a-b)^2
inline Tensor mse_loss(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mse_loss");
    bool rec = tracing({&a, &b});
    const float* pa = a.data();
    const float* pb = b.data();
    int64_t n = a.numel();
    float s = 0.0f;
    for (int64_t i = 0; i < n; ++i) {
        float d = pa[i] - pb[i];
        s += d * d;
    }
    Tensor y = detail::make_output({1}, rec);
    y.mutable_data()[0] = s / static_cast<float>(n);
    if (rec) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        Tape::current()->record([ai, bi, yi] {
            if (yi->grad.empty()) return;
            int64_t n = ai->numel();
            float gy = 2.0f * yi->grad[0] / static_cast<float>(n);
            for (int64_t i = 0; i < n; ++i) {
                float d = gy * (ai->data[i] - bi->data[i]);
                if (ai->requires_grad) ai->grad_acc()[i] += d;
                if (bi->requires_grad) bi->grad_acc()[i] -= d;
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------- structure

// [N,Ci,H,W] inputs concatenated along the channel dim in argument order
inline Tensor concat_channels(const std::vector<Tensor>& xs) {
    DAG_CHECK(!xs.empty(), config, "concat_channels: empty selection");
    const Shape& s0 = xs[0].shape();
    DAG_CHECK(s0.size() == 4, contract, "concat_channels expects [N,C,H,W]");
    int64_t N = s0[0], H = s0[2], W = s0[3];
    int64_t ctot = 0;
    bool rg = false;
    for (const Tensor& x : xs) {
        DAG_CHECK(x.ndim() == 4 && x.dim(0) == N && x.dim(2) == H && x.dim(3) == W, contract,
                  "concat_channels: inputs must share all dims except channel");
        ctot += x.dim(1);
        rg = rg || x.requires_grad();
    }
    bool rec = Tape::current() && rg;
    Tensor y = detail::make_output({N, ctot, H, W}, rec);
    float* py = y.mutable_data();
    int64_t hw = H * W;
    int64_t coff = 0;
    for (const Tensor& x : xs) {
        int64_t c = x.dim(1);
        const float* px = x.data();
        for (int64_t n = 0; n < N; ++n)
            std::copy(px + n * c * hw, px + (n + 1) * c * hw, py + (n * ctot + coff) * hw);
        coff += c;
    }
    if (rec) {
        std::vector<std::shared_ptr<TensorImpl>> ins;
        for (const Tensor& x : xs) ins.push_back(x.impl());
        auto yi = y.impl();
        Tape::current()->record([ins, yi, N, ctot, hw] {
            if (yi->grad.empty()) return;
            int64_t coff = 0;
            for (auto& xi : ins) {
                int64_t c = xi->shape[1];
                if (xi->requires_grad) {
                    float* g = xi->grad_acc();
                    for (int64_t n = 0; n < N; ++n) {
                        const float* gy = yi->grad.data() + (n * ctot + coff) * hw;
                        float* gx = g + n * c * hw;
                        for (int64_t i = 0; i < c * hw; ++i) gx[i] += gy[i];
                    }
                }
                coff += c;
            }
        });
    }
    return y;
}

// [N,C,H,W] -> [N*H*W, C]: one row per pixel, channels last
inline Tensor pixels_from_image(const Tensor& x) {
    DAG_CHECK(x.ndim() == 4, contract, "pixels_from_image expects [N,C,H,W]");
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    bool rec = tracing({&x});
    Tensor y = detail::make_output({N * H * W, C}, rec);
    const float* px = x.data();
    float* py = y.mutable_data();
    int64_t hw = H * W;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const float* src = px + (n * C + c) * hw;
            float* dst = py + n * hw * C + c;
            for (int64_t i = 0; i < hw; ++i) dst[i * C] = src[i];
        }
    if (rec) {
        auto xi = x.impl(), yi = y.impl();
        Tape::current()->record([xi, yi, N, C, hw] {
            if (yi->grad.empty() || !xi->requires_grad) return;
            float* gx = xi->grad_acc();
            const float* gy = yi->grad.data();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    float* dst = gx + (n * C + c) * hw;
                    const float* src = gy + n * hw * C + c;
                    for (int64_t i = 0; i < hw; ++i) dst[i] += src[i * C];
                }
        });
    }
    return y;
}

// [N*H*W, C] -> [N,C,H,W]; inverse layout of pixels_from_image
inline Tensor image_from_pixels(const Tensor& x, int64_t N, int64_t H, int64_t W) {
    DAG_CHECK(x.ndim() == 2 && x.dim(0) == N * H * W, contract, "image_from_pixels: row count mismatch");
    int64_t C = x.dim(1);
    bool rec = tracing({&x});
    Tensor y = detail::make_output({N, C, H, W}, rec);
    const float* px = x.data();
    float* py = y.mutable_data();
    int64_t hw = H * W;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            float* dst = py + (n * C + c) * hw;
            const float* src = px + n * hw * C + c;
            for (int64_t i = 0; i < hw; ++i) dst[i] = src[i * C];
        }
    if (rec) {
        auto xi = x.impl(), yi = y.impl();
        Tape::current()->record([xi, yi, N, C, hw] {
            if (yi->grad.empty() || !xi->requires_grad) return;
            float* gx = xi->grad_acc();
            const float* gy = yi->grad.data();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const float* src = gy + (n * C + c) * hw;
                    float* dst = gx + n * hw * C + c;
                    for (int64_t i = 0; i < hw; ++i) dst[i * C] += src[i];
                }
        });
    }
    return y;
}

// x[B,D] + v[1,D] broadcast over rows
inline Tensor add_row(const Tensor& x, const Tensor& v) {
    DAG_CHECK(x.ndim() == 2 && v.ndim() == 2 && v.dim(0) == 1 && v.dim(1) == x.dim(1), contract,
              "add_row: expected x[B,D] and v[1,D]");
    bool rec = tracing({&x, &v});
    int64_t B = x.dim(0), D = x.dim(1);
    Tensor y = detail::make_output(x.shape(), rec);
    const float* px = x.data();
    const float* pv = v.data();
    float* py = y.mutable_data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t d = 0; d < D; ++d) py[b * D + d] = px[b * D + d] + pv[d];
    if (rec) {
        auto xi = x.impl(), vi = v.impl(), yi = y.impl();
        Tape::current()->record([xi, vi, yi, B, D] {
            if (yi->grad.empty()) return;
            if (xi->requires_grad) {
                float* g = xi->grad_acc();
                for (int64_t i = 0; i < B * D; ++i) g[i] += yi->grad[i];
            }
            if (vi->requires_grad) {
                float* g = vi->grad_acc();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t d = 0; d < D; ++d) g[d] += yi->grad[b * D + d];
            }
        });
    }
    return y;
}

// x[N,C,H,W] + v[N,C] broadcast over spatial dims
inline Tensor add_channel(const Tensor& x, const Tensor& v) {
    DAG_CHECK(x.ndim() == 4 && v.ndim() == 2 && v.dim(0) == x.dim(0) && v.dim(1) == x.dim(1), contract,
              "add_channel: expected x[N,C,H,W] and v[N,C]");
    bool rec = tracing({&x, &v});
    int64_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor y = detail::make_output(x.shape(), rec);
    const float* px = x.data();
    const float* pv = v.data();
    float* py = y.mutable_data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        float b = pv[nc];
        for (int64_t i = 0; i < hw; ++i) py[nc * hw + i] = px[nc * hw + i] + b;
    }
    if (rec) {
        auto xi = x.impl(), vi = v.impl(), yi = y.impl();
        Tape::current()->record([xi, vi, yi, N, C, hw] {
            if (yi->grad.empty()) return;
            if (xi->requires_grad) {
                float* g = xi->grad_acc();
                for (int64_t i = 0; i < N * C * hw; ++i) g[i] += yi->grad[i];
            }
            if (vi->requires_grad) {
                float* g = vi->grad_acc();
                for (int64_t nc = 0; nc < N * C; ++nc) {
                    float s = 0.0f;
                    for (int64_t i = 0; i < hw; ++i) s += yi->grad[nc * hw + i];
                    g[nc] += s;
                }
            }
        });
    }
    return y;
}

// x[N,C,H,W] + b[C]
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    DAG_CHECK(x.ndim() == 4 && b.ndim() == 1 && b.dim(0) == x.dim(1), contract,
              "add_channel_bias: expected x[N,C,H,W] and b[C]");
    bool rec = tracing({&x, &b});
    int64_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor y = detail::make_output(x.shape(), rec);
    const float* px = x.data();
    const float* pb = b.data();
    float* py = y.mutable_data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            float bv = pb[c];
            const float* src = px + (n * C + c) * hw;
            float* dst = py + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] + bv;
        }
    if (rec) {
        auto xi = x.impl(), bi = b.impl(), yi = y.impl();
        Tape::current()->record([xi, bi, yi, N, C, hw] {
            if (yi->grad.empty()) return;
            if (xi->requires_grad) {
                float* g = xi->grad_acc();
                for (int64_t i = 0; i < N * C * hw; ++i) g[i] += yi->grad[i];
            }
            if (bi->requires_grad) {
                float* g = bi->grad_acc();
                for (int64_t c = 0; c < C; ++c) {
                    float s = 0.0f;
                    for (int64_t n = 0; n < N; ++n) {
                        const float* gy = yi->grad.data() + (n * C + c) * hw;
                        for (int64_t i = 0; i < hw; ++i) s += gy[i];
                    }
                    g[c] += s;
                }
            }
        });
    }
    return y;
}

// ------------------------------------------------------------ linear algebra

// x[B,Din] * w[Dout,Din]^T + b[Dout]; pass an undefined b for no bias
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor()) {
    DAG_CHECK(x.ndim() == 2 && w.ndim() == 2, contract, "linear expects 2-D input and weight");
    DAG_CHECK(x.dim(1) == w.dim(1), contract,
              "linear: Din mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    if (b.defined())
        DAG_CHECK(b.ndim() == 1 && b.dim(0) == w.dim(0), contract, "linear: bias shape mismatch");
    int64_t B = x.dim(0), Din = x.dim(1), Dout = w.dim(0);
    bool rec = b.defined() ? tracing({&x, &w, &b}) : tracing({&x, &w});
    Tensor y = detail::make_output({B, Dout}, rec);
    const float* px = x.data();
    const float* pw = w.data();
    const float* pb = b.defined() ? b.data() : nullptr;
    float* py = y.mutable_data();
    // transposed weight copy turns the row dot products into accumulation
    // loops over contiguous spans, which vectorize without reassociation
    std::vector<float> wt(static_cast<size_t>(Din) * Dout);
    for (int64_t o = 0; o < Dout; ++o)
        for (int64_t kk = 0; kk < Din; ++kk) wt[kk * Dout + o] = pw[o * Din + kk];
    parallel_for(B, [&](int64_t i) {
        const float* xr = px + i * Din;
        float* yr = py + i * Dout;
        if (pb)
            std::copy(pb, pb + Dout, yr);
        else
            std::fill(yr, yr + Dout, 0.0f);
        for (int64_t kk = 0; kk < Din; ++kk) {
            float a = xr[kk];
            const float* wr = wt.data() + kk * Dout;
            for (int64_t o = 0; o < Dout; ++o) yr[o] += a * wr[o];
        }
    });
    if (rec) {
        auto xi = x.impl(), wi = w.impl(), yi = y.impl();
        auto bi = b.defined() ? b.impl() : nullptr;
        Tape::current()->record([xi, wi, bi, yi, B, Din, Dout] {
            if (yi->grad.empty()) return;
            const float* gy = yi->grad.data();
            if (xi->requires_grad) {
                float* gx = xi->grad_acc();
                const float* pw = wi->data.data();
                parallel_for(B, [&](int64_t i) {
                    float* gxr = gx + i * Din;
                    const float* gyr = gy + i * Dout;
                    for (int64_t o = 0; o < Dout; ++o) {
                        float g = gyr[o];
                        const float* wr = pw + o * Din;
                        for (int64_t k = 0; k < Din; ++k) gxr[k] += g * wr[k];
                    }
                });
            }
            if (wi->requires_grad) {
                float* gw = wi->grad_acc();
                const float* px = xi->data.data();
                parallel_for(Dout, [&](int64_t o) {
                    float* gwr = gw + o * Din;
                    for (int64_t i = 0; i < B; ++i) {
                        float g = gy[i * Dout + o];
                        const float* xr = px + i * Din;
                        for (int64_t k = 0; k < Din; ++k) gwr[k] += g * xr[k];
                    }
                });
            }
            if (bi && bi->requires_grad) {
                float* gb = bi->grad_acc();
                for (int64_t o = 0; o < Dout; ++o) {
                    float s = 0.0f;
                    for (int64_t i = 0; i < B; ++i) s += gy[i * Dout + o];
                    gb[o] += s;
                }
            }
        });
    }
    return y;
}

namespace detail {

// patch matrix for one sample: row (ci,u,v), column (oh,ow); zeros where the
// window reads padding
inline void im2col(const float* xp, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
                   int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, float* patch) {
    int64_t hwo = Ho * Wo;
    std::fill(patch, patch + Cin * kh * kw * hwo, 0.0f);
    for (int64_t ci = 0; ci < Cin; ++ci)
        for (int64_t u = 0; u < kh; ++u)
            for (int64_t v = 0; v < kw; ++v) {
                float* row = patch + ((ci * kh + u) * kw + v) * hwo;
                int64_t off = v - pad;
                int64_t lo = off < 0 ? (-off + stride - 1) / stride : 0;
                int64_t hi = std::min<int64_t>((W - 1 - off) / stride, Wo - 1);
                for (int64_t oh = 0; oh < Ho; ++oh) {
                    int64_t ih = oh * stride + u - pad;
                    if (ih < 0 || ih >= H) continue;
                    const float* xr = xp + (ci * H + ih) * W + off;
                    float* dst = row + oh * Wo;
                    if (stride == 1)
                        for (int64_t ow = lo; ow <= hi; ++ow) dst[ow] = xr[ow];
                    else
                        for (int64_t ow = lo; ow <= hi; ++ow) dst[ow] = xr[ow * stride];
                }
            }
}

// transpose of im2col: accumulate patch rows back into the image
inline void col2im_acc(const float* patch, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
                       int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, float* gx) {
    int64_t hwo = Ho * Wo;
    for (int64_t ci = 0; ci < Cin; ++ci)
        for (int64_t u = 0; u < kh; ++u)
            for (int64_t v = 0; v < kw; ++v) {
                const float* row = patch + ((ci * kh + u) * kw + v) * hwo;
                int64_t off = v - pad;
                int64_t lo = off < 0 ? (-off + stride - 1) / stride : 0;
                int64_t hi = std::min<int64_t>((W - 1 - off) / stride, Wo - 1);
                for (int64_t oh = 0; oh < Ho; ++oh) {
                    int64_t ih = oh * stride + u - pad;
                    if (ih < 0 || ih >= H) continue;
                    float* gxr = gx + (ci * H + ih) * W + off;
                    const float* src = row + oh * Wo;
                    if (stride == 1)
                        for (int64_t ow = lo; ow <= hi; ++ow) gxr[ow] += src[ow];
                    else
                        for (int64_t ow = lo; ow <= hi; ++ow) gxr[ow * stride] += src[ow];
                }
            }
}

}  // namespace detail

// cross-correlation of x[N,Cin,H,W] with k[Cout,Cin,kh,kw]; per-sample
// im2col keeps the hot loops long and contiguous
inline Tensor conv2d(const Tensor& x, const Tensor& k, int stride = 1, int padding = 0) {
    DAG_CHECK(x.ndim() == 4 && k.ndim() == 4, contract, "conv2d expects 4-D input and kernel");
    DAG_CHECK(x.dim(1) == k.dim(1), contract,
              "conv2d: input channels " + std::to_string(x.dim(1)) + " do not match kernel " +
                  std::to_string(k.dim(1)));
    DAG_CHECK(k.dim(2) % 2 == 1 && k.dim(3) % 2 == 1, contract, "conv2d: kernel dims must be odd");
    DAG_CHECK(stride >= 1 && padding >= 0, contract, "conv2d: bad stride/padding");
    int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t Cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    int64_t Ho = (H + 2 * padding - kh) / stride + 1;
    int64_t Wo = (W + 2 * padding - kw) / stride + 1;
    DAG_CHECK(Ho >= 1 && Wo >= 1, contract, "conv2d: output would be empty");
    int64_t P = Cin * kh * kw;
    int64_t hwo = Ho * Wo;
    bool rec = tracing({&x, &k});
    Tensor y = detail::make_output({N, Cout, Ho, Wo}, rec);
    const float* px = x.data();
    const float* pk = k.data();
    float* py = y.mutable_data();

    parallel_for(N, [&](int64_t n) {
        std::vector<float> patch(static_cast<size_t>(P) * hwo);
        detail::im2col(px + n * Cin * H * W, Cin, H, W, kh, kw, stride, padding, Ho, Wo, patch.data());
        for (int64_t co = 0; co < Cout; ++co) {
            float* yr = py + (n * Cout + co) * hwo;
            const float* kr = pk + co * P;
            for (int64_t p = 0; p < P; ++p) {
                float a = kr[p];
                if (a == 0.0f) continue;
                const float* pr = patch.data() + p * hwo;
                for (int64_t i = 0; i < hwo; ++i) yr[i] += a * pr[i];
            }
        }
    });

    if (rec) {
        auto xi = x.impl(), ki = k.impl(), yi = y.impl();
        int64_t s = stride, p = padding;
        Tape::current()->record([xi, ki, yi, N, Cin, Cout, H, W, Ho, Wo, kh, kw, s, p, P, hwo] {
            if (yi->grad.empty()) return;
            const float* gy = yi->grad.data();
            const float* px = xi->data.data();
            const float* pk = ki->data.data();

            if (ki->requires_grad) {
                // per-sample partials reduced serially in sample order, so the
                // result does not depend on the worker count
                std::vector<float> partials(static_cast<size_t>(N) * Cout * P, 0.0f);
                parallel_for(N, [&](int64_t n) {
                    std::vector<float> patch(static_cast<size_t>(P) * hwo);
                    detail::im2col(px + n * Cin * H * W, Cin, H, W, kh, kw, s, p, Ho, Wo, patch.data());
                    float* out = partials.data() + n * Cout * P;
                    for (int64_t co = 0; co < Cout; ++co) {
                        const float* gyr = gy + (n * Cout + co) * hwo;
                        for (int64_t pi = 0; pi < P; ++pi) {
                            const float* pr = patch.data() + pi * hwo;
                            float acc = 0.0f;
                            for (int64_t i = 0; i < hwo; ++i) acc += gyr[i] * pr[i];
                            out[co * P + pi] = acc;
                        }
                    }
                });
                float* gk = ki->grad_acc();
                for (int64_t n = 0; n < N; ++n) {
                    const float* out = partials.data() + n * Cout * P;
                    for (int64_t i = 0; i < Cout * P; ++i) gk[i] += out[i];
                }
            }

            if (xi->requires_grad) {
                float* gx = xi->grad_acc();
                parallel_for(N, [&](int64_t n) {
                    std::vector<float> dpatch(static_cast<size_t>(P) * hwo, 0.0f);
                    for (int64_t co = 0; co < Cout; ++co) {
                        const float* gyr = gy + (n * Cout + co) * hwo;
                        const float* kr = pk + co * P;
                        for (int64_t pi = 0; pi < P; ++pi) {
                            float a = kr[pi];
                            if (a == 0.0f) continue;
                            float* dr = dpatch.data() + pi * hwo;
                            for (int64_t i = 0; i < hwo; ++i) dr[i] += a * gyr[i];
                        }
                    }
                    detail::col2im_acc(dpatch.data(), Cin, H, W, kh, kw, s, p, Ho, Wo,
                                       gx + n * Cin * H * W);
                });
            }
        });
    }
    return y;
}

// ------------------------------------------------------------- normalization

// group normalization over [N,C,H,W]; groups must divide C
inline Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                         float eps = 1e-5f) {
    DAG_CHECK(x.ndim() == 4, contract, "group_norm expects [N,C,H,W]");
    int64_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    DAG_CHECK(groups >= 1 && C % groups == 0, contract, "group_norm: groups must divide channels");
    DAG_CHECK(gamma.numel() == C && beta.numel() == C, contract, "group_norm: affine shape mismatch");
    int64_t cg = C / groups;
    int64_t m = cg * hw;
    bool rec = tracing({&x, &gamma, &beta});
    Tensor y = detail::make_output(x.shape(), rec);
    std::vector<float> inv_std(static_cast<size_t>(N * groups));
    std::vector<float> mean(static_cast<size_t>(N * groups));
    const float* px = x.data();
    const float* pg = gamma.data();
    const float* pb = beta.data();
    float* py = y.mutable_data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t g = 0; g < groups; ++g) {
            const float* xp = px + (n * C + g * cg) * hw;
            float mu = 0.0f;
            for (int64_t i = 0; i < m; ++i) mu += xp[i];
            mu /= static_cast<float>(m);
            float var = 0.0f;
            for (int64_t i = 0; i < m; ++i) {
                float d = xp[i] - mu;
                var += d * d;
            }
            var /= static_cast<float>(m);
            float inv = 1.0f / std::sqrt(var + eps);
            mean[n * groups + g] = mu;
            inv_std[n * groups + g] = inv;
            float* yp = py + (n * C + g * cg) * hw;
            for (int64_t c = 0; c < cg; ++c) {
                float gm = pg[g * cg + c], bt = pb[g * cg + c];
                for (int64_t i = 0; i < hw; ++i)
                    yp[c * hw + i] = gm * (xp[c * hw + i] - mu) * inv + bt;
            }
        }
    if (rec) {
        auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl();
        Tape::current()->record([xi, gi, bi, yi, N, C, hw, cg, m, mean, inv_std, groups] {
            if (yi->grad.empty()) return;
            const float* gy = yi->grad.data();
            const float* px = xi->data.data();
            const float* pg = gi->data.data();
            float* gx = xi->requires_grad ? xi->grad_acc() : nullptr;
            float* gg = gi->requires_grad ? gi->grad_acc() : nullptr;
            float* gb = bi->requires_grad ? bi->grad_acc() : nullptr;
            for (int64_t n = 0; n < N; ++n)
                for (int64_t g = 0; g < groups; ++g) {
                    const float* xp = px + (n * C + g * cg) * hw;
                    const float* gyp = gy + (n * C + g * cg) * hw;
                    float mu = mean[n * groups + g];
                    float inv = inv_std[n * groups + g];
                    float sum_dg = 0.0f, sum_dg_xhat = 0.0f;
                    for (int64_t c = 0; c < cg; ++c) {
                        float gm = pg[g * cg + c];
                        for (int64_t i = 0; i < hw; ++i) {
                            float dg = gyp[c * hw + i] * gm;
                            sum_dg += dg;
                            sum_dg_xhat += dg * (xp[c * hw + i] - mu) * inv;
                        }
                    }
                    float inv_m = 1.0f / static_cast<float>(m);
                    for (int64_t c = 0; c < cg; ++c) {
                        float gm = pg[g * cg + c];
                        for (int64_t i = 0; i < hw; ++i) {
                            float xhat = (xp[c * hw + i] - mu) * inv;
                            if (gx)
                                gx[(n * C + g * cg + c) * hw + i] +=
                                    inv * (gyp[c * hw + i] * gm - inv_m * sum_dg - xhat * inv_m * sum_dg_xhat);
                            if (gg) gg[g * cg + c] += gyp[c * hw + i] * xhat;
                            if (gb) gb[g * cg + c] += gyp[c * hw + i];
                        }
                    }
                }
        });
    }
    return y;
}

struct BnStats {
    std::vector<float> mean;
    std::vector<float> var;
};

// 1-D normalization over the batch dim of x[B,D] using current batch
// statistics (always "training mode", mirroring how the depth heads are used
// at guidance time). Pass `fixed` to normalize with externally supplied
// statistics instead; `out_stats` reports the batch statistics when wanted.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f,
                         const BnStats* fixed = nullptr, BnStats* out_stats = nullptr) {
    DAG_CHECK(x.ndim() == 2, contract, "batch_norm expects [B,D]");
    int64_t B = x.dim(0), D = x.dim(1);
    DAG_CHECK(gamma.numel() == D && beta.numel() == D, contract, "batch_norm: affine shape mismatch");
    bool rec = tracing({&x, &gamma, &beta});
    Tensor y = detail::make_output(x.shape(), rec);
    std::vector<float> mean(static_cast<size_t>(D)), var(static_cast<size_t>(D));
    const float* px = x.data();
    if (fixed) {
        mean = fixed->mean;
        var = fixed->var;
    } else {
        for (int64_t d = 0; d < D; ++d) {
            float mu = 0.0f;
            for (int64_t b = 0; b < B; ++b) mu += px[b * D + d];
            mu /= static_cast<float>(B);
            float v = 0.0f;
            for (int64_t b = 0; b < B; ++b) {
                float df = px[b * D + d] - mu;
                v += df * df;
            }
            mean[d] = mu;
            var[d] = v / static_cast<float>(B);
        }
    }
    if (out_stats) {
        out_stats->mean = mean;
        out_stats->var = var;
    }
    const float* pg = gamma.data();
    const float* pb = beta.data();
    float* py = y.mutable_data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t d = 0; d < D; ++d) {
            float inv = 1.0f / std::sqrt(var[d] + eps);
            py[b * D + d] = pg[d] * (px[b * D + d] - mean[d]) * inv + pb[d];
        }
    if (rec) {
        auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl();
        bool use_fixed = fixed != nullptr;
        Tape::current()->record([xi, gi, bi, yi, B, D, mean, var, eps, use_fixed] {
            if (yi->grad.empty()) return;
            const float* gy = yi->grad.data();
            const float* px = xi->data.data();
            const float* pg = gi->data.data();
            float* gx = xi->requires_grad ? xi->grad_acc() : nullptr;
            float* gg = gi->requires_grad ? gi->grad_acc() : nullptr;
            float* gb = bi->requires_grad ? bi->grad_acc() : nullptr;
            for (int64_t d = 0; d < D; ++d) {
                float inv = 1.0f / std::sqrt(var[d] + eps);
                if (use_fixed) {
                    // fixed statistics: plain affine transform per element
                    for (int64_t b = 0; b < B; ++b) {
                        float xhat = (px[b * D + d] - mean[d]) * inv;
                        if (gx) gx[b * D + d] += gy[b * D + d] * pg[d] * inv;
                        if (gg) gg[d] += gy[b * D + d] * xhat;
                        if (gb) gb[d] += gy[b * D + d];
                    }
                    continue;
                }
                float sum_dg = 0.0f, sum_dg_xhat = 0.0f;
                for (int64_t b = 0; b < B; ++b) {
                    float dg = gy[b * D + d] * pg[d];
                    sum_dg += dg;
                    sum_dg_xhat += dg * (px[b * D + d] - mean[d]) * inv;
                }
                float inv_b = 1.0f / static_cast<float>(B);
                for (int64_t b = 0; b < B; ++b) {
                    float xhat = (px[b * D + d] - mean[d]) * inv;
                    if (gx)
                        gx[b * D + d] +=
                            inv * (gy[b * D + d] * pg[d] - inv_b * sum_dg - xhat * inv_b * sum_dg_xhat);
                    if (gg) gg[d] += gy[b * D + d] * xhat;
                    if (gb) gb[d] += gy[b * D + d];
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------- resampling

enum class UpsampleMode { nearest, bilinear };

// resize [N,C,H,W] to (H2,W2); nearest uses floor index mapping, bilinear uses
// half-pixel centers, both constant-preserving
inline Tensor upsample(const Tensor& x, UpsampleMode mode, int64_t H2, int64_t W2) {
    DAG_CHECK(x.ndim() == 4, contract, "upsample expects [N,C,H,W]");
    DAG_CHECK(H2 >= 1 && W2 >= 1, contract, "upsample: target size must be >= 1");
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    bool rec = tracing({&x});
    Tensor y = detail::make_output({N, C, H2, W2}, rec);
    const float* px = x.data();
    float* py = y.mutable_data();

    if (mode == UpsampleMode::nearest) {
        std::vector<int64_t> src_h(static_cast<size_t>(H2)), src_w(static_cast<size_t>(W2));
        for (int64_t i = 0; i < H2; ++i) src_h[i] = std::min<int64_t>(i * H / H2, H - 1);
        for (int64_t j = 0; j < W2; ++j) src_w[j] = std::min<int64_t>(j * W / W2, W - 1);
        for (int64_t nc = 0; nc < N * C; ++nc) {
            const float* xp = px + nc * H * W;
            float* yp = py + nc * H2 * W2;
            for (int64_t i = 0; i < H2; ++i)
                for (int64_t j = 0; j < W2; ++j) yp[i * W2 + j] = xp[src_h[i] * W + src_w[j]];
        }
        if (rec) {
            auto xi = x.impl(), yi = y.impl();
            Tape::current()->record([xi, yi, N, C, H, W, H2, W2, src_h, src_w] {
                if (yi->grad.empty() || !xi->requires_grad) return;
                float* gx = xi->grad_acc();
                const float* gy = yi->grad.data();
                for (int64_t nc = 0; nc < N * C; ++nc) {
                    float* gxp = gx + nc * H * W;
                    const float* gyp = gy + nc * H2 * W2;
                    for (int64_t i = 0; i < H2; ++i)
                        for (int64_t j = 0; j < W2; ++j) gxp[src_h[i] * W + src_w[j]] += gyp[i * W2 + j];
                }
            });
        }
        return y;
    }

    // bilinear taps per output coordinate
    struct Tap {
        int64_t i0, i1;
        float w0, w1;
    };
    auto make_taps = [](int64_t in, int64_t out) {
        std::vector<Tap> taps(static_cast<size_t>(out));
        double r = static_cast<double>(in) / static_cast<double>(out);
        for (int64_t o = 0; o < out; ++o) {
            double s = (o + 0.5) * r - 0.5;
            if (s < 0) s = 0;
            int64_t i0 = static_cast<int64_t>(s);
            if (i0 > in - 1) i0 = in - 1;
            int64_t i1 = std::min<int64_t>(i0 + 1, in - 1);
            float w1 = static_cast<float>(s - static_cast<double>(i0));
            taps[o] = {i0, i1, 1.0f - w1, w1};
        }
        return taps;
    };
    std::vector<Tap> th = make_taps(H, H2), tw = make_taps(W, W2);
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const float* xp = px + nc * H * W;
        float* yp = py + nc * H2 * W2;
        for (int64_t i = 0; i < H2; ++i) {
            const Tap& a = th[i];
            for (int64_t j = 0; j < W2; ++j) {
                const Tap& b = tw[j];
                yp[i * W2 + j] = a.w0 * (b.w0 * xp[a.i0 * W + b.i0] + b.w1 * xp[a.i0 * W + b.i1]) +
                                 a.w1 * (b.w0 * xp[a.i1 * W + b.i0] + b.w1 * xp[a.i1 * W + b.i1]);
            }
        }
    }
    if (rec) {
        auto xi = x.impl(), yi = y.impl();
        Tape::current()->record([xi, yi, N, C, H, W, H2, W2, th, tw] {
            if (yi->grad.empty() || !xi->requires_grad) return;
            float* gx = xi->grad_acc();
            const float* gy = yi->grad.data();
            for (int64_t nc = 0; nc < N * C; ++nc) {
                float* gxp = gx + nc * H * W;
                const float* gyp = gy + nc * H2 * W2;
                for (int64_t i = 0; i < H2; ++i) {
                    const Tap& a = th[i];
                    for (int64_t j = 0; j < W2; ++j) {
                        const Tap& b = tw[j];
                        float g = gyp[i * W2 + j];
                        gxp[a.i0 * W + b.i0] += a.w0 * b.w0 * g;
                        gxp[a.i0 * W + b.i1] += a.w0 * b.w1 * g;
                        gxp[a.i1 * W + b.i0] += a.w1 * b.w0 * g;
                        gxp[a.i1 * W + b.i1] += a.w1 * b.w1 * g;
                    }
                }
            }
        });
    }
    return y;
}

inline bool all_finite(const Tensor& t) {
    const float* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

}  // namespace dag
