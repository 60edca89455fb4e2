#pragma once

#include <cmath>
#include <vector>

#include "dag/ops.hpp"
#include "dag/rng.hpp"

namespace dag {

// ---------------------------------------------------------------- linear algebra (f64)

namespace detail {

// cyclic Jacobi eigendecomposition of a symmetric matrix; A is overwritten
// with rotations, V accumulates eigenvectors (columns), diag(A) -> eigenvalues
inline void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& eigvals,
                         std::vector<double>& v) {
    v.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                double apq = a[p * n + q];
                if (std::fabs(apq) < 1e-30) continue;
                double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
    }
    eigvals.resize(n);
    for (int i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
}

// principal square root of a symmetric PSD matrix; negative eigenvalues are
// clamped to zero
inline std::vector<double> sqrt_psd(std::vector<double> a, int n) {
    std::vector<double> eigvals, v;
    jacobi_eigen(a, n, eigvals, v);
    std::vector<double> r(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) {
                double lam = eigvals[k] > 0 ? std::sqrt(eigvals[k]) : 0.0;
                acc += v[i * n + k] * lam * v[j * n + k];
            }
            r[i * n + j] = acc;
        }
    return r;
}

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, int n) {
    std::vector<double> c(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            double aik = a[i * n + k];
            for (int j = 0; j < n; ++j) c[i * n + j] += aik * b[k * n + j];
        }
    return c;
}

}  // namespace detail

// Frechet distance between N(mu1, cov1) and N(mu2, cov2):
// |mu1-mu2|^2 + Tr(c1 + c2 - 2 (c1^1/2 c2 c1^1/2)^1/2)
inline double frechet_distance(const std::vector<double>& mu1, const std::vector<double>& cov1,
                               const std::vector<double>& mu2, const std::vector<double>& cov2) {
    int n = static_cast<int>(mu1.size());
    DAG_CHECK(mu2.size() == static_cast<size_t>(n), contract, "frechet: mean dim mismatch");
    DAG_CHECK(cov1.size() == static_cast<size_t>(n) * n && cov2.size() == static_cast<size_t>(n) * n,
              contract, "frechet: covariance dim mismatch");
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            DAG_CHECK(std::fabs(cov1[i * n + j] - cov1[j * n + i]) <= 1e-5, contract,
                      "frechet: cov1 not symmetric");
            DAG_CHECK(std::fabs(cov2[i * n + j] - cov2[j * n + i]) <= 1e-5, contract,
                      "frechet: cov2 not symmetric");
        }
    double dist = 0.0;
    for (int i = 0; i < n; ++i) {
        double d = mu1[i] - mu2[i];
        dist += d * d;
    }
    std::vector<double> s1 = detail::sqrt_psd(cov1, n);
    std::vector<double> inner = detail::matmul(detail::matmul(s1, cov2, n), s1, n);
    // symmetrize against rounding before taking the square root
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double m = 0.5 * (inner[i * n + j] + inner[j * n + i]);
            inner[i * n + j] = inner[j * n + i] = m;
        }
    std::vector<double> root = detail::sqrt_psd(std::move(inner), n);
    for (int i = 0; i < n; ++i) dist += cov1[i * n + i] + cov2[i * n + i] - 2.0 * root[i * n + i];
    return dist;
}

// ---------------------------------------------------------------- toy embedding

// Fixed seeded embedding for depth maps: bilinear downsample to 16x16,
// flatten, project with a row-orthonormalized Gaussian matrix to 48 dims.
// With Inception/DPT out of reach at this scale, dFID numbers live on this
// embedding's own scale; only orderings are comparable with the reference
// implementation.
struct EmbeddingSpec {
    int down_h = 16, down_w = 16;
    int in_dim = 256;
    int out_dim = 48;
    uint64_t seed = 0x9d51a6e2u;  // fixed; identical across runs by construction

    std::vector<float> projection() const {
        Rng rng(seed);
        std::vector<float> p(static_cast<size_t>(out_dim) * in_dim);
        for (auto& x : p) x = rng.normal();
        // modified Gram-Schmidt on rows, fixed order
        for (int r = 0; r < out_dim; ++r) {
            float* row = p.data() + static_cast<size_t>(r) * in_dim;
            for (int q = 0; q < r; ++q) {
                const float* prev = p.data() + static_cast<size_t>(q) * in_dim;
                double dot = 0.0;
                for (int i = 0; i < in_dim; ++i) dot += double(row[i]) * prev[i];
                for (int i = 0; i < in_dim; ++i) row[i] -= static_cast<float>(dot) * prev[i];
            }
            double norm = 0.0;
            for (int i = 0; i < in_dim; ++i) norm += double(row[i]) * row[i];
            float inv = static_cast<float>(1.0 / std::sqrt(norm));
            for (int i = 0; i < in_dim; ++i) row[i] *= inv;
        }
        return p;
    }
};

inline std::vector<float> embed_depth(const Tensor& depth, const EmbeddingSpec& spec,
                                      const std::vector<float>& projection) {
    DAG_CHECK(depth.ndim() == 3 || depth.ndim() == 4, contract, "embed_depth expects [1,H,W] or [N,1,H,W]");
    Tensor d4 = depth.ndim() == 3
                    ? Tensor::from({1, depth.dim(0), depth.dim(1), depth.dim(2)},
                                   std::vector<float>(depth.data(), depth.data() + depth.numel()))
                    : depth;
    Tensor small = upsample(d4, UpsampleMode::bilinear, spec.down_h, spec.down_w);
    std::vector<float> e(static_cast<size_t>(spec.out_dim), 0.0f);
    const float* v = small.data();
    for (int r = 0; r < spec.out_dim; ++r) {
        const float* row = projection.data() + static_cast<size_t>(r) * spec.in_dim;
        double acc = 0.0;
        for (int i = 0; i < spec.in_dim; ++i) acc += double(row[i]) * v[i];
        e[r] = static_cast<float>(acc);
    }
    return e;
}

struct GaussianMoments {
    std::vector<double> mean;
    std::vector<double> cov;  // unbiased, row-major dim x dim
};

inline GaussianMoments fit_moments(const std::vector<std::vector<float>>& embeddings) {
    int n = static_cast<int>(embeddings.size());
    int d = static_cast<int>(embeddings[0].size());
    GaussianMoments m;
    m.mean.assign(d, 0.0);
    m.cov.assign(static_cast<size_t>(d) * d, 0.0);
    for (const auto& e : embeddings)
        for (int i = 0; i < d; ++i) m.mean[i] += e[i];
    for (int i = 0; i < d; ++i) m.mean[i] /= n;
    for (const auto& e : embeddings)
        for (int i = 0; i < d; ++i) {
            double di = e[i] - m.mean[i];
            for (int j = 0; j < d; ++j) m.cov[i * d + j] += di * (e[j] - m.mean[j]);
        }
    for (auto& c : m.cov) c /= (n - 1);
    return m;
}

// Frechet distance between the embedding distributions of two depth-map sets
inline double dfid(const std::vector<Tensor>& sample_depths, const std::vector<Tensor>& reference_depths,
                   const EmbeddingSpec& spec = {}) {
    size_t min_count = static_cast<size_t>(2 * spec.out_dim);
    DAG_CHECK(sample_depths.size() >= min_count && reference_depths.size() >= min_count, config,
              "dfid: each set needs at least " + std::to_string(min_count) + " samples");
    std::vector<float> proj = spec.projection();
    auto embed_all = [&](const std::vector<Tensor>& set) {
        std::vector<std::vector<float>> es(set.size());
        for (size_t i = 0; i < set.size(); ++i) es[i] = embed_depth(set[i], spec, proj);
        return es;
    };
    GaussianMoments a = fit_moments(embed_all(sample_depths));
    GaussianMoments b = fit_moments(embed_all(reference_depths));
    return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

// ---------------------------------------------------------------- depth metrics

// fraction of pixels with max(pred/gt, gt/pred) < threshold
inline double depth_accuracy(const Tensor& pred, const Tensor& gt, double threshold = 1.25) {
    DAG_CHECK(pred.shape() == gt.shape(), contract, "depth_accuracy: shape mismatch");
    int64_t n = pred.numel();
    int64_t hits = 0;
    for (int64_t i = 0; i < n; ++i) {
        double g = gt.data()[i];
        DAG_CHECK(g > 0.0, contract, "depth_accuracy: gt must be positive");
        double p = pred.data()[i];
        double ratio = p > g ? p / g : g / p;
        if (p > 0.0 && ratio < threshold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

// mean |pred-gt| / gt
inline double abs_rel(const Tensor& pred, const Tensor& gt) {
    DAG_CHECK(pred.shape() == gt.shape(), contract, "abs_rel: shape mismatch");
    int64_t n = pred.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double g = gt.data()[i];
        DAG_CHECK(g > 0.0, contract, "abs_rel: gt must be positive");
        acc += std::fabs(pred.data()[i] - g) / g;
    }
    return acc / static_cast<double>(n);
}

}  // namespace dag
