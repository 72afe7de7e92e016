#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace oracles {

EigenPairs jacobi_eigen(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a[x][x] > a[y][y]; });
    EigenPairs out;
    for (auto k : order) {
        out.values.push_back(a[k][k]);
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = v[i][k];
        out.vectors.push_back(col);
    }
    return out;
}

std::vector<std::vector<double>> covariance(const std::vector<std::vector<double>>& x) {
    const std::size_t n = x.size(), d = x[0].size();
    std::vector<double> mean(d, 0.0);
    for (const auto& r : x)
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j] / double(n);
    std::vector<std::vector<double>> c(d, std::vector<double>(d, 0.0));
    for (const auto& r : x)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / double(n);
    return c;
}

namespace {

struct Shape {
    std::string name;
    std::vector<int> dims;
    std::int64_t size() const {
        std::int64_t s = 1;
        for (int d : dims) s *= d;
        return s;
    }
};

int hidden(const VitShape& s) { return int(s.dim * s.mlp_ratio); }

std::vector<Shape> shapes(const VitShape& s) {
    const int D = s.dim, H = hidden(s), G = s.sample / s.patch;
    std::vector<Shape> out{{"patch_w", {D, s.in_bands, s.patch, s.patch}}, {"patch_b", {D}}, {"pos", {G * G, D}}};
    for (int b = 0; b < s.depth; ++b) {
        const std::string p = std::to_string(b) + ".";
        out.push_back({p + "n1w", {D}});
        out.push_back({p + "n1b", {D}});
        for (const char* m : {"q", "k", "v", "proj"}) {
            out.push_back({p + m + "w", {D, D}});
            out.push_back({p + m + "b", {D}});
        }
        out.push_back({p + "n2w", {D}});
        out.push_back({p + "n2b", {D}});
        out.push_back({p + "fc1w", {H, D}});
        out.push_back({p + "fc1b", {H}});
        out.push_back({p + "fc2w", {D, H}});
        out.push_back({p + "fc2b", {D}});
    }
    out.push_back({"nw", {D}});
    out.push_back({"nb", {D}});
    return out;
}

/// Flat analytic weights of each tensor, keyed by the local short names above.
std::map<std::string, std::vector<double>> weights(const VitShape& s) {
    std::map<std::string, std::vector<double>> w;
    std::int64_t j = 0;
    for (const auto& sh : shapes(s)) {
        std::vector<double> v(std::size_t(sh.size()));
        // float32 rounding matches how the weights are stored by the library.
        for (auto& x : v) x = double(float(0.02 * std::sin(double(j++) + 1.0)));
        w[sh.name] = std::move(v);
    }
    return w;
}

using Mat = std::vector<std::vector<double>>;

Mat linear(const Mat& x, const std::vector<double>& w, const std::vector<double>& b, int out, int in) {
    Mat y(x.size(), std::vector<double>(std::size_t(out)));
    for (std::size_t t = 0; t < x.size(); ++t)
        for (int o = 0; o < out; ++o) {
            double acc = b[std::size_t(o)];
            for (int i = 0; i < in; ++i) acc += w[std::size_t(o) * in + i] * x[t][std::size_t(i)];
            y[t][std::size_t(o)] = acc;
        }
    return y;
}

Mat layernorm(const Mat& x, const std::vector<double>& w, const std::vector<double>& b) {
    Mat y = x;
    for (auto& row : y) {
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= double(row.size());
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= double(row.size());
        for (std::size_t i = 0; i < row.size(); ++i) row[i] = (row[i] - mean) / std::sqrt(var + 1e-6) * w[i] + b[i];
    }
    return y;
}

}  // namespace

std::int64_t vit_parameter_count(const VitShape& s) {
    std::int64_t total = 0;
    for (const auto& sh : shapes(s)) total += sh.size();
    return total;
}

std::vector<std::vector<double>> vit_forward(const VitShape& s,
                                             const std::vector<std::vector<std::vector<double>>>& tile) {
    const int D = s.dim, H = hidden(s), p = s.patch, G = s.sample / s.patch;
    const int T = G * G, dh = D / s.heads;
    auto w = weights(s);

    Mat x(static_cast<std::size_t>(T), std::vector<double>(static_cast<std::size_t>(D)));
    for (int gy = 0; gy < G; ++gy)
        for (int gx = 0; gx < G; ++gx)
            for (int d = 0; d < D; ++d) {
                double acc = w["patch_b"][std::size_t(d)];
                for (int b = 0; b < s.in_bands; ++b)
                    for (int i = 0; i < p; ++i)
                        for (int j = 0; j < p; ++j)
                            acc += w["patch_w"][std::size_t(((d * s.in_bands + b) * p + i) * p + j)] *
                                   tile[std::size_t(b)][std::size_t(gy * p + i)][std::size_t(gx * p + j)];
                const int t = gy * G + gx;
                x[std::size_t(t)][std::size_t(d)] = acc + w["pos"][std::size_t(t * D + d)];
            }

    for (int blk = 0; blk < s.depth; ++blk) {
        const std::string pre = std::to_string(blk) + ".";
        const Mat h = layernorm(x, w[pre + "n1w"], w[pre + "n1b"]);
        const Mat q = linear(h, w[pre + "qw"], w[pre + "qb"], D, D);
        const Mat k = linear(h, w[pre + "kw"], w[pre + "kb"], D, D);
        const Mat v = linear(h, w[pre + "vw"], w[pre + "vb"], D, D);
        Mat att(std::size_t(T), std::vector<double>(std::size_t(D), 0.0));
        for (int head = 0; head < s.heads; ++head) {
            for (int a = 0; a < T; ++a) {
                std::vector<double> logits(static_cast<std::size_t>(T));
                double mx = -1e300;
                for (int b = 0; b < T; ++b) {
                    double dot = 0.0;
                    for (int e = 0; e < dh; ++e)
                        dot += q[std::size_t(a)][std::size_t(head * dh + e)] * k[std::size_t(b)][std::size_t(head * dh + e)];
                    logits[std::size_t(b)] = dot / std::sqrt(double(dh));
                    mx = std::max(mx, logits[std::size_t(b)]);
                }
                double z = 0.0;
                for (auto& l : logits) z += (l = std::exp(l - mx));
                for (int b = 0; b < T; ++b)
                    for (int e = 0; e < dh; ++e)
                        att[std::size_t(a)][std::size_t(head * dh + e)] +=
                            logits[std::size_t(b)] / z * v[std::size_t(b)][std::size_t(head * dh + e)];
            }
        }
        const Mat proj = linear(att, w[pre + "projw"], w[pre + "projb"], D, D);
        for (int t = 0; t < T; ++t)
            for (int d = 0; d < D; ++d) x[std::size_t(t)][std::size_t(d)] += proj[std::size_t(t)][std::size_t(d)];
        const Mat h2 = layernorm(x, w[pre + "n2w"], w[pre + "n2b"]);
        Mat m = linear(h2, w[pre + "fc1w"], w[pre + "fc1b"], H, D);
        for (auto& row : m)
            for (auto& val : row) val = 0.5 * val * (1.0 + std::erf(val / std::sqrt(2.0)));
        const Mat m2 = linear(m, w[pre + "fc2w"], w[pre + "fc2b"], D, H);
        for (int t = 0; t < T; ++t)
            for (int d = 0; d < D; ++d) x[std::size_t(t)][std::size_t(d)] += m2[std::size_t(t)][std::size_t(d)];
    }
    return layernorm(x, w["nw"], w["nb"]);
}

double best_two_partition_inertia(const std::vector<std::vector<double>>& pts) {
    const std::size_t n = pts.size(), d = pts[0].size();
    if (n > 20) throw std::invalid_argument("too many points to enumerate");
    double best = 1e300;
    for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
        double inertia = 0.0;
        for (int side = 0; side < 2; ++side) {
            std::vector<double> c(d, 0.0);
            int cnt = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (bool(mask >> i & 1u) == bool(side)) {
                    for (std::size_t j = 0; j < d; ++j) c[j] += pts[i][j];
                    ++cnt;
                }
            for (auto& v : c) v /= cnt;
            for (std::size_t i = 0; i < n; ++i)
                if (bool(mask >> i & 1u) == bool(side))
                    for (std::size_t j = 0; j < d; ++j) inertia += (pts[i][j] - c[j]) * (pts[i][j] - c[j]);
        }
        best = std::min(best, inertia);
    }
    return best;
}

std::vector<int> enumerate_offsets(int dim, int sample, int stride) {
    std::vector<int> out;
    for (int o = 0; o <= dim - sample; o += stride) out.push_back(o);
    if (out.back() != dim - sample) out.push_back(dim - sample);
    return out;
}

std::vector<std::vector<int>> enumerate_cell_counts(int width, int height, int sample, int stride, int patch) {
    const int ow = (width + patch - 1) / patch, oh = (height + patch - 1) / patch;
    std::vector<std::vector<int>> counts(std::size_t(oh), std::vector<int>(std::size_t(ow), 0));
    for (int ry : enumerate_offsets(height, sample, stride))
        for (int rx : enumerate_offsets(width, sample, stride))
            // Walk each tile pixel; a pixel that is a patch centre contributes to the cell containing it.
            for (int y = ry; y < ry + sample; ++y)
                for (int x = rx; x < rx + sample; ++x)
                    if ((y - ry) % patch == patch / 2 && (x - rx) % patch == patch / 2)
                        ++counts[std::size_t(y / patch)][std::size_t(x / patch)];
    return counts;
}

}  // namespace oracles
