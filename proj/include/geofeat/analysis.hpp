/**
 * @file analysis.hpp
 * @brief PCA, exact t-SNE and k-means over feature samples.
 *
 * Every routine takes samples as an Eigen expression with one row per
 * observation and returns models templated on the sample's scalar type.
 * All of them are deterministic for a fixed seed and input.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geofeat/error.hpp"

namespace geofeat {

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// PCA

template <class Scalar>
struct PcaModel {
    VectorX<Scalar> mean;                ///< d
    MatrixX<Scalar> components;          ///< k x d, orthonormal rows
    VectorX<Scalar> explained_variance;  ///< k, non-increasing

    int input_dim() const { return static_cast<int>(mean.size()); }
    int output_dim() const { return static_cast<int>(components.rows()); }

    /// (x - mean) * components^T, one row per observation.
    template <class Derived>
    MatrixX<Scalar> transform(const Eigen::MatrixBase<Derived>& x) const {
        return (x.rowwise() - mean.transpose()) * components.transpose();
    }

    template <class Derived>
    MatrixX<Scalar> inverse_transform(const Eigen::MatrixBase<Derived>& y) const {
        return (y * components).rowwise() + mean.transpose();
    }
};

namespace detail {

/// Index of the largest-magnitude entry (first one on ties).
template <class Derived>
Eigen::Index dominant_index(const Eigen::MatrixBase<Derived>& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (std::abs(v(i)) > std::abs(v(best))) best = i;
    return best;
}

template <class Derived>
void require_finite(const Eigen::MatrixBase<Derived>& x, const char* what) {
    if (!x.allFinite()) throw InputError(std::string(what) + ": non-finite input");
}

}  // namespace detail

/**
 * Fits k principal axes from the population covariance of the rows of x.
 *
 * Components are sorted by decreasing variance; equal variances are ordered
 * by the position of each component's largest-magnitude entry. Each
 * component's largest-magnitude entry is made positive.
 */
template <class Derived>
PcaModel<typename Derived::Scalar> fit_pca(const Eigen::MatrixBase<Derived>& x, int k) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    if (n < 2) throw InputError("fit_pca: need at least 2 samples");
    if (k < 1 || k > std::min<Eigen::Index>(n - 1, d))
        throw InputError("fit_pca: k=" + std::to_string(k) + " out of range [1, " +
                         std::to_string(std::min<Eigen::Index>(n - 1, d)) + "]");
    detail::require_finite(x, "fit_pca");

    PcaModel<Scalar> model;
    model.mean = x.colwise().mean().transpose();
    const MatrixX<Scalar> centered = x.rowwise() - model.mean.transpose();
    const MatrixX<Scalar> cov = (centered.transpose() * centered) / Scalar(n);
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> solver(cov);
    if (solver.info() != Eigen::Success) throw Error("fit_pca: eigendecomposition failed");
    const VectorX<Scalar>& values = solver.eigenvalues();
    const MatrixX<Scalar>& vectors = solver.eigenvectors();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values(a) > values(b); });
    const Scalar tie_tol = Scalar(1e-10) * std::max(Scalar(1), std::abs(values.maxCoeff()));
    for (std::size_t lo = 0; lo < order.size();) {
        std::size_t hi = lo + 1;
        while (hi < order.size() && values(order[lo]) - values(order[hi]) <= tie_tol) ++hi;
        std::stable_sort(order.begin() + lo, order.begin() + hi, [&](auto a, auto b) {
            return detail::dominant_index(vectors.col(a)) < detail::dominant_index(vectors.col(b));
        });
        lo = hi;
    }

    model.components.resize(k, d);
    model.explained_variance.resize(k);
    for (int i = 0; i < k; ++i) {
        VectorX<Scalar> v = vectors.col(order[i]);
        if (v(detail::dominant_index(v)) < 0) v = -v;
        model.components.row(i) = v.transpose();
        model.explained_variance(i) = std::max(Scalar(0), values(order[i]));
    }
    return model;
}

// ---------------------------------------------------------------------------
// k-means

template <class Scalar>
struct KMeansModel {
    int k = 0;
    MatrixX<Scalar> centroids;  ///< k x d
    Scalar inertia = 0;
    std::uint64_t seed = 0;
    int iterations = 0;
    std::vector<Scalar> inertia_history;  ///< inertia after every assignment step

    /// Nearest centroid; ties go to the lowest index.
    template <class Derived>
    int predict_one(const Eigen::MatrixBase<Derived>& row, Scalar* dist2 = nullptr) const {
        int best = 0;
        Scalar best_d = std::numeric_limits<Scalar>::infinity();
        for (int c = 0; c < k; ++c) {
            const Scalar dd = (centroids.row(c) - row).squaredNorm();
            if (dd < best_d) {
                best_d = dd;
                best = c;
            }
        }
        if (dist2) *dist2 = best_d;
        return best;
    }

    template <class Derived>
    std::vector<int> predict(const Eigen::MatrixBase<Derived>& x) const {
        std::vector<int> labels(static_cast<std::size_t>(x.rows()));
        for (Eigen::Index i = 0; i < x.rows(); ++i) labels[i] = predict_one(x.row(i));
        return labels;
    }
};

struct KMeansOptions {
    int k = 5;
    std::uint64_t seed = 0;
    int max_iter = 300;
    double tol = 1e-6;
};

namespace detail {

/// Greedy k-means++ seeding: each new centre is the best of 2 + floor(ln k)
/// D^2-weighted candidates.
template <class Scalar, class Derived>
MatrixX<Scalar> kmeans_plus_plus(const Eigen::MatrixBase<Derived>& x, int k, std::mt19937_64& rng) {
    const Eigen::Index n = x.rows();
    MatrixX<Scalar> centers(k, x.cols());
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centers.row(0) = x.row(first(rng));
    VectorX<Scalar> closest(n);
    for (Eigen::Index i = 0; i < n; ++i) closest(i) = (x.row(i) - centers.row(0)).squaredNorm();
    const int trials = 2 + static_cast<int>(std::log(double(k)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 1; c < k; ++c) {
        const Scalar potential = closest.sum();
        Eigen::Index best_candidate = -1;
        Scalar best_potential = std::numeric_limits<Scalar>::infinity();
        VectorX<Scalar> best_closest;
        for (int t = 0; t < trials; ++t) {
            Eigen::Index cand = n - 1;
            if (potential > 0) {
                Scalar target = Scalar(unit(rng)) * potential;
                for (Eigen::Index i = 0; i < n; ++i) {
                    target -= closest(i);
                    if (target < 0) {
                        cand = i;
                        break;
                    }
                }
            } else {
                cand = first(rng);
            }
            VectorX<Scalar> updated(n);
            for (Eigen::Index i = 0; i < n; ++i)
                updated(i) = std::min(closest(i), Scalar((x.row(i) - x.row(cand)).squaredNorm()));
            const Scalar pot = updated.sum();
            if (pot < best_potential) {
                best_potential = pot;
                best_candidate = cand;
                best_closest = std::move(updated);
            }
        }
        centers.row(c) = x.row(best_candidate);
        closest = std::move(best_closest);
    }
    return centers;
}

}  // namespace detail

/**
 * Lloyd's algorithm from greedy k-means++ seeds.
 *
 * Stops when no centroid moves more than `tol` or after max_iter rounds.
 * A cluster left empty is re-seeded at the point farthest from its centroid.
 * Throws if the inertia ever increases between rounds.
 */
template <class Derived>
KMeansModel<typename Derived::Scalar> fit_kmeans(const Eigen::MatrixBase<Derived>& x, const KMeansOptions& opt) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index n = x.rows();
    if (opt.k < 1) throw InputError("fit_kmeans: k must be >= 1");
    if (opt.k > n) throw InputError("fit_kmeans: k=" + std::to_string(opt.k) + " exceeds sample count " + std::to_string(n));
    if (opt.max_iter < 1) throw InputError("fit_kmeans: max_iter must be >= 1");
    detail::require_finite(x, "fit_kmeans");

    KMeansModel<Scalar> m;
    m.k = opt.k;
    m.seed = opt.seed;
    std::mt19937_64 rng(opt.seed);
    m.centroids = detail::kmeans_plus_plus<Scalar>(x, opt.k, rng);

    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    VectorX<Scalar> dist(n);
    auto assign = [&]() {
        Scalar total = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            Scalar d2;
            labels[i] = m.predict_one(x.row(i), &d2);
            dist(i) = d2;
            total += d2;
        }
        return total;
    };

    Scalar inertia = assign();
    m.inertia_history.push_back(inertia);
    for (int it = 0; it < opt.max_iter; ++it) {
        MatrixX<Scalar> sums = MatrixX<Scalar>::Zero(opt.k, x.cols());
        std::vector<Eigen::Index> counts(opt.k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(labels[i]) += x.row(i);
            ++counts[labels[i]];
        }
        MatrixX<Scalar> next = m.centroids;
        for (int c = 0; c < opt.k; ++c) {
            if (counts[c] > 0) {
                next.row(c) = sums.row(c) / Scalar(counts[c]);
            } else {
                Eigen::Index far = 0;
                dist.maxCoeff(&far);
                next.row(c) = x.row(far);
                dist(far) = 0;
            }
        }
        const Scalar shift = (next - m.centroids).rowwise().norm().maxCoeff();
        m.centroids = std::move(next);
        m.iterations = it + 1;
        const Scalar updated = assign();
        if (updated > inertia * (1 + Scalar(1e-12)) + std::numeric_limits<Scalar>::min())
            throw Error("fit_kmeans: inertia increased between iterations");
        inertia = updated;
        m.inertia_history.push_back(inertia);
        if (shift < Scalar(opt.tol)) break;
    }
    m.inertia = inertia;
    return m;
}

// ---------------------------------------------------------------------------
// t-SNE

struct TsneOptions {
    int dims = 2;
    double perplexity = 30.0;
    int iterations = 1000;
    std::uint64_t seed = 0;  ///< recorded only; initialization is PCA-based
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    int exaggeration_iters = 250;
    int momentum_switch_iter = 250;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
};

template <class Scalar>
struct TsneResult {
    MatrixX<Scalar> embedding;  ///< n x dims
    Scalar kl_initial = 0;
    Scalar kl_final = 0;
};

namespace detail {

template <class Scalar>
MatrixX<Scalar> squared_distances(const MatrixX<Scalar>& x) {
    const VectorX<Scalar> norms = x.rowwise().squaredNorm();
    MatrixX<Scalar> d = (-2 * x * x.transpose()).colwise() + norms;
    d.rowwise() += norms.transpose();
    d = d.cwiseMax(Scalar(0));
    d.diagonal().setZero();
    return d;
}

/// Row-conditional Gaussian affinities with per-row bandwidths matched to
/// the perplexity by bisection on beta (entropy tolerance 1e-5, <= 50 steps).
template <class Scalar>
MatrixX<Scalar> conditional_affinities(const MatrixX<Scalar>& dist2, double perplexity) {
    const Eigen::Index n = dist2.rows();
    const double target = std::log(perplexity);
    MatrixX<Scalar> p = MatrixX<Scalar>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double beta = 1.0;
        double lo = -std::numeric_limits<double>::max();
        double hi = std::numeric_limits<double>::max();
        std::vector<double> row(static_cast<std::size_t>(n));
        for (int step = 0; step < 50; ++step) {
            double sum = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                row[j] = j == i ? 0.0 : std::exp(-beta * double(dist2(i, j)));
                sum += row[j];
            }
            if (sum <= std::numeric_limits<double>::min()) sum = std::numeric_limits<double>::min();
            double weighted = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) weighted += beta * double(dist2(i, j)) * row[j];
            const double entropy = std::log(sum) + weighted / sum;
            for (auto& v : row) v /= sum;
            const double diff = entropy - target;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0) {
                lo = beta;
                beta = hi == std::numeric_limits<double>::max() ? beta * 2 : (beta + hi) / 2;
            } else {
                hi = beta;
                beta = lo == -std::numeric_limits<double>::max() ? beta / 2 : (beta + lo) / 2;
            }
        }
        for (Eigen::Index j = 0; j < n; ++j) p(i, j) = Scalar(row[j]);
    }
    return p;
}

template <class Scalar>
Scalar kl_divergence(const MatrixX<Scalar>& p, const MatrixX<Scalar>& y) {
    const MatrixX<Scalar> num = (MatrixX<Scalar>::Ones(y.rows(), y.rows()) + squared_distances(y))
                                    .cwiseInverse();
    Scalar qsum = num.sum() - num.diagonal().sum();
    Scalar kl = 0;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            if (i == j) continue;
            const Scalar q = std::max(num(i, j) / qsum, Scalar(1e-12));
            kl += p(i, j) * std::log(p(i, j) / q);
        }
    return kl;
}

}  // namespace detail

/**
 * Exact O(n^2) t-SNE.
 *
 * Symmetrized Gaussian input affinities, Student-t output kernel, gradient
 * descent with momentum and per-coordinate adaptive gains. The start layout
 * is the first `dims` principal coordinates rescaled to standard deviation
 * 1e-4, so no random numbers are drawn.
 */
template <class Derived>
TsneResult<typename Derived::Scalar> tsne_embed(const Eigen::MatrixBase<Derived>& x, const TsneOptions& opt) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index n = x.rows();
    if (opt.dims != 2 && opt.dims != 3) throw InputError("tsne_embed: dims must be 2 or 3");
    if (!(opt.perplexity > 0)) throw InputError("tsne_embed: perplexity must be > 0");
    if (double(n) < 3.0 * opt.perplexity + 1.0)
        throw InputError("tsne_embed: n=" + std::to_string(n) + " too small for perplexity " +
                         std::to_string(opt.perplexity) + " (need n >= 3*perplexity + 1)");
    if (n > 10000) throw InputError("tsne_embed: exact t-SNE limited to 10000 samples");
    detail::require_finite(x, "tsne_embed");

    const MatrixX<Scalar> data = x;
    MatrixX<Scalar> p = detail::conditional_affinities(detail::squared_distances(data), opt.perplexity);
    p = (p + p.transpose()) / Scalar(2 * n);
    p = p.cwiseMax(Scalar(1e-12));
    p.diagonal().setZero();

    // Deterministic start: leading principal coordinates at std 1e-4.
    MatrixX<Scalar> y = MatrixX<Scalar>::Zero(n, opt.dims);
    const int pcs = static_cast<int>(std::min<Eigen::Index>({Eigen::Index(opt.dims), n - 1, data.cols()}));
    const auto pca = fit_pca(data, pcs);
    y.leftCols(pcs) = pca.transform(data);
    for (int c = 0; c < opt.dims; ++c) {
        auto col = y.col(c);
        col.array() -= col.mean();
        const Scalar sd = std::sqrt(col.squaredNorm() / Scalar(n));
        if (sd > 0) col *= Scalar(1e-4) / sd;
    }

    TsneResult<Scalar> result;
    result.kl_initial = detail::kl_divergence(p, y);

    MatrixX<Scalar> update = MatrixX<Scalar>::Zero(n, opt.dims);
    MatrixX<Scalar> gains = MatrixX<Scalar>::Ones(n, opt.dims);
    for (int it = 0; it < opt.iterations; ++it) {
        const Scalar exaggeration = it < opt.exaggeration_iters ? Scalar(opt.early_exaggeration) : Scalar(1);
        const Scalar momentum = Scalar(it < opt.momentum_switch_iter ? opt.initial_momentum : opt.final_momentum);

        MatrixX<Scalar> num = (MatrixX<Scalar>::Ones(n, n) + detail::squared_distances(y)).cwiseInverse();
        num.diagonal().setZero();
        const Scalar qsum = num.sum();
        const MatrixX<Scalar> q = (num / qsum).cwiseMax(Scalar(1e-12));
        const MatrixX<Scalar> w = (exaggeration * p - q).cwiseProduct(num);
        // grad_i = sum_j w_ij (y_i - y_j). The constant factor 4 of the exact
        // gradient is left out, as in the reference implementation the
        // learning rate of 200 was tuned for.
        const MatrixX<Scalar> grad = w.rowwise().sum().asDiagonal() * y - w * y;

        for (Eigen::Index i = 0; i < n; ++i)
            for (int d = 0; d < opt.dims; ++d) {
                const bool same_sign = (grad(i, d) > 0) == (update(i, d) > 0);
                gains(i, d) = same_sign ? gains(i, d) * Scalar(0.8) : gains(i, d) + Scalar(0.2);
                gains(i, d) = std::max(gains(i, d), Scalar(0.01));
            }
        update = momentum * update - Scalar(opt.learning_rate) * gains.cwiseProduct(grad);
        y += update;
        y.rowwise() -= y.colwise().mean();
    }
    result.kl_final = detail::kl_divergence(p, y);
    result.embedding = std::move(y);
    return result;
}

}  // namespace geofeat
