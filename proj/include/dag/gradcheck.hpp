#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dag/ops.hpp"
#include "dag/tensor.hpp"

namespace dag {

// Central-difference gradient check. make_loss() must rebuild the forward
// graph from the current contents of `x` (tape active or not), returning a
// scalar. Reports the global relative error ||g_ad - g_fd|| / (||g_ad|| +
// ||g_fd||), the norm-ratio form used by most gradient-check harnesses, which
// stays meaningful when individual components are near zero.
inline double gradcheck_rel_error(const std::function<Tensor()>& make_loss, Tensor& x,
                                  float step = 1e-3f) {
    Tape tape;
    std::vector<float> g_ad;
    {
        TapeScope scope(tape);
        x.zero_grad();
        Tensor loss = make_loss();
        tape.backward(loss);
        DAG_CHECK(x.has_grad(), contract, "gradcheck: x received no gradient");
        g_ad = x.grad();
    }
    int64_t n = x.numel();
    std::vector<double> g_fd(static_cast<size_t>(n));
    float* px = x.mutable_data();
    for (int64_t i = 0; i < n; ++i) {
        float keep = px[i];
        px[i] = keep + step;
        double lp = make_loss().item();
        px[i] = keep - step;
        double lm = make_loss().item();
        px[i] = keep;
        g_fd[i] = (lp - lm) / (2.0 * static_cast<double>(step));
    }
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(g_ad[i]) - g_fd[i];
        diff += d * d;
        na += static_cast<double>(g_ad[i]) * g_ad[i];
        nf += g_fd[i] * g_fd[i];
    }
    double denom = std::sqrt(na) + std::sqrt(nf);
    if (denom < 1e-12) return std::sqrt(diff);
    return std::sqrt(diff) / denom;
}

}  // namespace dag
