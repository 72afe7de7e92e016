#include "geofeat/geoml.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "geofeat/error.hpp"

namespace geofeat {
namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

Eigen::VectorXd cell_vector(const RasterDataset& fr, const PixelIndex& cell) {
    const PixelBlock blk = read_window(fr, {int(cell.col), int(cell.row), 1, 1});
    return blk.values.row(0).transpose().cast<double>();
}

double cosine(const Eigen::Ref<const Eigen::VectorXd>& v, const Eigen::Ref<const Eigen::VectorXd>& t) {
    const double nv = v.norm();
    if (nv == 0.0) return 0.0;
    return v.dot(t) / (nv * t.norm());
}

}  // namespace

Aggregation parse_aggregation(const std::string& s) {
    if (s == "mean") return Aggregation::Mean;
    if (s == "max") return Aggregation::Max;
    throw ConfigError("unknown aggregation '" + s + "' (expected mean or max)");
}

NegativeScores parse_negative_scores(const std::string& s) {
    if (s == "clamp") return NegativeScores::Clamp;
    if (s == "rescale") return NegativeScores::Rescale;
    throw ConfigError("unknown negative-score rule '" + s + "' (expected clamp or rescale)");
}

TemplateSet extract_template(const RasterDataset& fr, const std::vector<GeoPoint>& points) {
    if (points.empty()) throw InputError("template point set is empty");
    TemplateSet t;
    t.points = points;
    t.unit_vectors.resize(Eigen::Index(points.size()), fr.band_count);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const PixelIndex cell = pixel_of_geo(fr.geotransform, points[i].x, points[i].y, fr.width, fr.height);
        const Eigen::VectorXd v = cell_vector(fr, cell);
        if (v.array().isNaN().any())
            throw InputError("template point " + std::to_string(i) + " falls on a nodata cell");
        const double n = v.norm();
        if (n == 0.0) throw InputError("template point " + std::to_string(i) + " has a zero feature vector");
        t.cells.push_back(cell);
        t.unit_vectors.row(Eigen::Index(i)) = (v / n).transpose();
    }
    const Eigen::VectorXd mean = t.unit_vectors.colwise().mean().transpose();
    const double n = mean.norm();
    if (n < 1e-12) throw InputError("template vectors cancel out: zero-norm mean");
    t.template_vector = mean / n;
    return t;
}

double similarity_score(const Eigen::Ref<const Eigen::VectorXd>& v, const TemplateSet& t, const SimilarityOptions& opt) {
    if (v.size() != t.template_vector.size())
        throw InputError("dimension mismatch: template has " + std::to_string(t.template_vector.size()) +
                         " bands, raster has " + std::to_string(v.size()));
    if (v.array().isNaN().any()) return kNan;
    double s;
    if (opt.aggregation == Aggregation::Mean) {
        s = cosine(v, t.template_vector);
    } else {
        s = -1.0;
        for (Eigen::Index i = 0; i < t.unit_vectors.rows(); ++i)
            s = std::max(s, cosine(v, t.unit_vectors.row(i).transpose()));
        if (v.norm() == 0.0) s = 0.0;
    }
    if (opt.negative == NegativeScores::Clamp) return std::clamp(s, 0.0, 1.0);
    return std::clamp((s + 1.0) / 2.0, 0.0, 1.0);
}

void similarity_map(const RasterDataset& fr, const TemplateSet& t, const std::filesystem::path& out,
                    const SimilarityOptions& opt, Compression compression) {
    if (fr.band_count != t.template_vector.size())
        throw InputError("dimension mismatch: template has " + std::to_string(t.template_vector.size()) +
                         " bands, raster has " + std::to_string(fr.band_count));
    WriteOptions wo;
    wo.compression = compression;
    wo.sample_type = SampleType::Float32;
    wo.nodata = kNan;
    const RasterSpec spec{fr.width, fr.height, 1, fr.geotransform, fr.crs_id};
    write_raster(out, spec,
                 [&](const Window& w) {
                     const PixelBlock blk = read_window(fr, w);
                     Eigen::MatrixXf s(blk.values.rows(), 1);
                     for (Eigen::Index i = 0; i < blk.values.rows(); ++i)
                         s(i, 0) = float(similarity_score(blk.values.row(i).transpose().cast<double>(), t, opt));
                     return s;
                 },
                 wo);
}

void threshold_mask(const RasterDataset& sim, double threshold, const std::filesystem::path& out,
                    Compression compression) {
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw ConfigError("threshold must be in [0, 1], got " + std::to_string(threshold));
    if (sim.band_count != 1) throw InputError("threshold input must be a single-band similarity raster");
    WriteOptions wo;
    wo.compression = compression;
    wo.sample_type = SampleType::UInt8;
    wo.nodata = kMaskNodata;
    const RasterSpec spec{sim.width, sim.height, 1, sim.geotransform, sim.crs_id};
    write_raster(out, spec,
                 [&](const Window& w) {
                     const PixelBlock blk = read_window(sim, w);
                     return Eigen::MatrixXf(blk.values.unaryExpr([threshold](float v) {
                         if (std::isnan(v)) return v;
                         return double(v) >= threshold ? 1.0f : 0.0f;
                     }));
                 },
                 wo);
}

LabeledDataset build_dataset(const RasterDataset& fr, const PointCollection& points) {
    LabeledDataset d;
    const auto n = Eigen::Index(points.points.size());
    d.x.resize(n, fr.band_count);
    std::map<std::string, int> codes;
    std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> seen;
    for (std::size_t i = 0; i < points.points.size(); ++i) {
        const auto& pf = points.points[i];
        const PixelIndex cell = pixel_of_geo(fr.geotransform, pf.location.x, pf.location.y, fr.width, fr.height);
        const Eigen::VectorXd v = cell_vector(fr, cell);
        if (v.array().isNaN().any()) throw InputError("labelled point " + std::to_string(i) + " falls on a nodata cell");
        d.x.row(Eigen::Index(i)) = v.transpose();
        d.cells.push_back(cell);

        const auto& props = pf.properties;
        if (!props.is_object() || !props.contains("label") || props["label"].is_null())
            throw InputError("missing label property on point " + std::to_string(i));
        const auto& lj = props["label"];
        std::string label;
        if (lj.is_string()) label = lj.get<std::string>();
        else if (lj.is_number_integer()) label = std::to_string(lj.get<std::int64_t>());
        else throw InputError("label of point " + std::to_string(i) + " must be a string or integer");
        auto [it, inserted] = codes.emplace(label, int(d.classes.size()));
        if (inserted) d.classes.push_back(label);
        d.y.push_back(it->second);

        std::optional<std::int64_t> fold;
        if (props.contains("fold") && !props["fold"].is_null()) {
            if (!props["fold"].is_number_integer())
                throw InputError("fold of point " + std::to_string(i) + " must be an integer");
            fold = props["fold"].get<std::int64_t>();
        }
        d.fold.push_back(fold);
        std::optional<std::string> split;
        if (props.contains("split") && !props["split"].is_null()) {
            const auto& sj = props["split"];
            if (!sj.is_string() || (sj != "train" && sj != "test"))
                throw InputError("split of point " + std::to_string(i) + " must be \"train\" or \"test\"");
            split = sj.get<std::string>();
        }
        d.split.push_back(split);

        auto [sit, fresh] = seen.emplace(std::make_pair(cell.col, cell.row), i);
        if (!fresh)
            d.warnings.push_back("points " + std::to_string(sit->second) + " and " + std::to_string(i) +
                                 " share cell (" + std::to_string(cell.col) + ", " + std::to_string(cell.row) + ")");
    }
    return d;
}

// ---------------------------------------------------------------------------
// kNN

DistanceMetric parse_metric(const std::string& s) {
    if (s == "euclidean") return DistanceMetric::Euclidean;
    if (s == "cosine") return DistanceMetric::Cosine;
    throw ConfigError("unknown metric '" + s + "' (expected euclidean or cosine)");
}

KnnModel fit_knn(const Eigen::MatrixXd& x, const std::vector<int>& y, int class_count, const KnnParams& params) {
    if (x.rows() != Eigen::Index(y.size())) throw InputError("feature and label counts differ");
    if (params.k < 1 || params.k > x.rows())
        throw ConfigError("k out of range: k=" + std::to_string(params.k) + " with " + std::to_string(x.rows()) +
                          " training samples");
    return KnnModel{params, x, y, class_count};
}

int KnnModel::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    const Eigen::Index n = x.rows();
    std::vector<double> dist(std::size_t(n), 0.0);
    const double qn = row.norm();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (params.metric == DistanceMetric::Euclidean) {
            dist[std::size_t(i)] = (x.row(i) - row).squaredNorm();
        } else {
            const double xn = x.row(i).norm();
            dist[std::size_t(i)] = (qn == 0.0 || xn == 0.0) ? 1.0 : 1.0 - x.row(i).dot(row) / (xn * qn);
        }
    }
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + params.k, order.end(), [&](int a, int b) {
        return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
    });

    std::vector<int> votes(std::size_t(class_count), 0);
    std::vector<double> nearest(std::size_t(class_count), std::numeric_limits<double>::infinity());
    for (int j = 0; j < params.k; ++j) {
        const int c = y[std::size_t(order[j])];
        ++votes[std::size_t(c)];
        nearest[std::size_t(c)] = std::min(nearest[std::size_t(c)], dist[std::size_t(order[j])]);
    }
    const int top = *std::max_element(votes.begin(), votes.end());
    int best = -1;
    for (int c = 0; c < class_count; ++c) {
        if (votes[std::size_t(c)] != top) continue;
        if (best < 0 || nearest[std::size_t(c)] < nearest[std::size_t(best)]) best = c;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Random forest

namespace {

double gini(const std::vector<int>& counts, int total) {
    if (total == 0) return 0.0;
    double s = 0.0;
    for (int c : counts) {
        const double p = double(c) / total;
        s += p * p;
    }
    return 1.0 - s;
}

int majority(const std::vector<int>& counts) {
    return int(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double decrease = -1.0;
};

}  // namespace

int DecisionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    int i = 0;
    while (nodes[std::size_t(i)].feature >= 0) {
        const Node& nd = nodes[std::size_t(i)];
        i = row(nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[std::size_t(i)].label;
}

DecisionTree fit_tree(const Eigen::MatrixXd& x, const std::vector<int>& y, int class_count,
                      const std::vector<int>& rows, const RfParams& params, std::uint64_t tree_seed) {
    const int d = int(x.cols());
    const int fps = params.features_per_split > 0 ? std::min(params.features_per_split, d)
                                                  : std::max(1, int(std::floor(std::sqrt(double(d)))));
    const int min_leaf = std::max(1, params.min_samples_leaf);
    std::mt19937_64 rng(tree_seed);

    DecisionTree tree;
    struct Pending {
        int node;
        std::vector<int> rows;
        int depth;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, rows, 0});

    std::vector<int> features(static_cast<std::size_t>(d));
    std::vector<std::pair<double, int>> column;
    while (!stack.empty()) {
        Pending cur = std::move(stack.back());
        stack.pop_back();
        const int n = int(cur.rows.size());
        std::vector<int> counts(std::size_t(class_count), 0);
        for (int r : cur.rows) ++counts[std::size_t(y[std::size_t(r)])];
        tree.nodes[std::size_t(cur.node)].label = majority(counts);

        const bool pure = *std::max_element(counts.begin(), counts.end()) == n;
        const bool depth_done = params.max_depth >= 0 && cur.depth >= params.max_depth;
        if (pure || depth_done || n < 2 * min_leaf) continue;

        const double parent = gini(counts, n);
        // Visit features in random order until fps non-constant ones have been scored.
        std::iota(features.begin(), features.end(), 0);
        std::shuffle(features.begin(), features.end(), rng);
        Split best;
        int scored = 0;
        for (int f : features) {
            if (scored >= fps) break;
            column.clear();
            for (int r : cur.rows) column.emplace_back(x(r, f), y[std::size_t(r)]);
            std::sort(column.begin(), column.end());
            if (column.front().first == column.back().first) continue;
            ++scored;
            std::vector<int> left(std::size_t(class_count), 0);
            for (int i = 0; i + 1 < n; ++i) {
                ++left[std::size_t(column[std::size_t(i)].second)];
                const double a = column[std::size_t(i)].first, b = column[std::size_t(i) + 1].first;
                if (a == b) continue;
                const int nl = i + 1, nr = n - nl;
                if (nl < min_leaf || nr < min_leaf) continue;
                std::vector<int> right(counts);
                for (int c = 0; c < class_count; ++c) right[std::size_t(c)] -= left[std::size_t(c)];
                const double dec = parent - (nl * gini(left, nl) + nr * gini(right, nr)) / n;
                const double thr = a + (b - a) / 2.0;
                const bool better = dec > best.decrease + 1e-12 ||
                                    (std::abs(dec - best.decrease) <= 1e-12 &&
                                     (f < best.feature || (f == best.feature && thr < best.threshold)));
                if (best.feature < 0 || better) best = {f, thr, dec};
            }
        }
        if (best.feature < 0) continue;

        std::vector<int> lrows, rrows;
        for (int r : cur.rows) (x(r, best.feature) <= best.threshold ? lrows : rrows).push_back(r);
        const int li = int(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& nd = tree.nodes[std::size_t(cur.node)];
        nd.feature = best.feature;
        nd.threshold = best.threshold;
        nd.left = li;
        nd.right = li + 1;
        stack.push_back({li + 1, std::move(rrows), cur.depth + 1});
        stack.push_back({li, std::move(lrows), cur.depth + 1});
    }
    return tree;
}

RandomForest fit_random_forest(const Eigen::MatrixXd& x, const std::vector<int>& y, int class_count,
                               const RfParams& params) {
    const int n = int(x.rows());
    if (n != int(y.size())) throw InputError("feature and label counts differ");
    if (n < 2) throw InputError("random forest needs at least 2 samples");
    std::vector<int> present(std::size_t(class_count), 0);
    for (int c : y) present[std::size_t(c)] = 1;
    if (std::accumulate(present.begin(), present.end(), 0) < 2)
        throw InputError("single-class input: random forest needs at least 2 classes");
    if (params.n_trees < 1) throw ConfigError("n_trees must be >= 1");

    RandomForest rf{params, {}, class_count, int(x.cols())};
    for (int t = 0; t < params.n_trees; ++t) {
        const std::uint64_t seed = params.seed + std::uint64_t(t);
        std::vector<int> rows(static_cast<std::size_t>(n));
        if (params.bootstrap) {
            std::mt19937_64 rng(seed);
            std::uniform_int_distribution<int> pick(0, n - 1);
            for (int& r : rows) r = pick(rng);
        } else {
            std::iota(rows.begin(), rows.end(), 0);
        }
        // The split sampler gets its own stream so bootstrap and feature draws stay independent.
        rf.trees.push_back(fit_tree(x, y, class_count, rows, params, seed ^ 0x9e3779b97f4a7c15ULL));
    }
    return rf;
}

int RandomForest::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    std::vector<int> votes(std::size_t(class_count), 0);
    for (const auto& t : trees) ++votes[std::size_t(t.predict(row))];
    return majority(votes);
}

Classifier fit_classifier(const Eigen::MatrixXd& x, const std::vector<int>& y, const std::vector<std::string>& classes,
                          const ClassifierSpec& spec) {
    const int cc = int(classes.size());
    if (spec.algorithm == "knn") return {fit_knn(x, y, cc, spec.knn), classes};
    if (spec.algorithm == "rf") return {fit_random_forest(x, y, cc, spec.rf), classes};
    throw ConfigError("unknown algorithm '" + spec.algorithm + "' (expected knn or rf)");
}

int Classifier::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    return std::visit([&](const auto& m) { return m.predict(row); }, model);
}

// ---------------------------------------------------------------------------
// Cross-validation

CvScheme parse_scheme(const std::string& s) {
    if (s == "random-kfold") return CvScheme::RandomKFold;
    if (s == "column-fold") return CvScheme::ColumnFold;
    if (s == "column-split") return CvScheme::ColumnSplit;
    throw ConfigError("unknown validation scheme '" + s + "'");
}

const char* to_string(CvScheme s) {
    switch (s) {
        case CvScheme::RandomKFold: return "random-kfold";
        case CvScheme::ColumnFold: return "column-fold";
        case CvScheme::ColumnSplit: return "column-split";
    }
    return "?";
}

std::vector<std::vector<int>> random_kfold_partition(int n, int k, std::uint64_t seed) {
    if (k < 2 || k > n) throw ConfigError("fold count must be in [2, n]: k=" + std::to_string(k) + ", n=" +
                                          std::to_string(n));
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(idx[std::size_t(i)], idx[std::size_t(pick(rng))]);
    }
    std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
    int pos = 0;
    for (int f = 0; f < k; ++f) {
        const int size = n / k + (f < n % k ? 1 : 0);
        folds[std::size_t(f)].assign(idx.begin() + pos, idx.begin() + pos + size);
        pos += size;
    }
    return folds;
}

std::pair<double, double> classification_metrics(const Eigen::MatrixXi& cm) {
    const int total = cm.sum();
    const double acc = total ? double(cm.trace()) / total : 0.0;
    double f1 = 0.0;
    int classes = 0;
    for (Eigen::Index c = 0; c < cm.rows(); ++c) {
        const int support = cm.row(c).sum();
        if (support == 0) continue;
        const int tp = cm(c, c);
        const int fp = cm.col(c).sum() - tp;
        const int fn = support - tp;
        f1 += 2.0 * tp / double(2 * tp + fp + fn);
        ++classes;
    }
    return {acc, classes ? f1 / classes : 0.0};
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / double(v.size()))};
}

}  // namespace

CvReport cross_validate(const LabeledDataset& data, const CvOptions& options, const ClassifierSpec& spec) {
    const int n = int(data.y.size());
    if (data.class_count() < 2) throw InputError("cross-validation needs at least 2 distinct labels");

    std::vector<std::pair<std::string, std::vector<int>>> tests;
    switch (options.scheme) {
        case CvScheme::RandomKFold: {
            const auto folds = random_kfold_partition(n, options.folds, options.seed);
            for (std::size_t f = 0; f < folds.size(); ++f) tests.emplace_back("fold " + std::to_string(f), folds[f]);
            break;
        }
        case CvScheme::ColumnFold: {
            std::map<std::int64_t, std::vector<int>> groups;
            for (int i = 0; i < n; ++i) {
                if (!data.fold[std::size_t(i)]) throw InputError("missing column: point " + std::to_string(i) + " has no fold");
                groups[*data.fold[std::size_t(i)]].push_back(i);
            }
            if (groups.size() < 2) throw InputError("degenerate fold: column-fold needs at least 2 fold values");
            for (auto& [v, rows] : groups) tests.emplace_back("fold " + std::to_string(v), rows);
            break;
        }
        case CvScheme::ColumnSplit: {
            std::vector<int> test;
            for (int i = 0; i < n; ++i) {
                if (!data.split[std::size_t(i)]) throw InputError("missing column: point " + std::to_string(i) + " has no split");
                if (*data.split[std::size_t(i)] == "test") test.push_back(i);
            }
            tests.emplace_back("split", test);
            break;
        }
    }

    CvReport report;
    report.scheme = to_string(options.scheme);
    report.classes = data.classes;
    std::vector<double> accs, f1s;
    for (auto& [name, test] : tests) {
        std::vector<char> is_test(std::size_t(n), 0);
        for (int i : test) is_test[std::size_t(i)] = 1;
        std::vector<int> train;
        for (int i = 0; i < n; ++i)
            if (!is_test[std::size_t(i)]) train.push_back(i);
        if (test.empty()) throw InputError("degenerate fold: " + name + " has no test samples");
        Eigen::MatrixXd xtr(Eigen::Index(train.size()), data.x.cols());
        std::vector<int> ytr;
        std::vector<int> present(std::size_t(data.class_count()), 0);
        for (std::size_t r = 0; r < train.size(); ++r) {
            xtr.row(Eigen::Index(r)) = data.x.row(train[r]);
            ytr.push_back(data.y[std::size_t(train[r])]);
            present[std::size_t(ytr.back())] = 1;
        }
        if (std::accumulate(present.begin(), present.end(), 0) < 2)
            throw InputError("degenerate fold: " + name + " leaves fewer than 2 classes for training");

        const Classifier model = fit_classifier(xtr, ytr, data.classes, spec);
        FoldResult fr;
        fr.name = name;
        fr.test_rows = test;
        fr.confusion = Eigen::MatrixXi::Zero(data.class_count(), data.class_count());
        for (int i : test) ++fr.confusion(data.y[std::size_t(i)], model.predict(data.x.row(i)));
        std::tie(fr.accuracy, fr.macro_f1) = classification_metrics(fr.confusion);
        accs.push_back(fr.accuracy);
        f1s.push_back(fr.macro_f1);
        report.folds.push_back(std::move(fr));
    }
    std::tie(report.accuracy_mean, report.accuracy_std) = mean_std(accs);
    std::tie(report.macro_f1_mean, report.macro_f1_std) = mean_std(f1s);
    return report;
}

}  // namespace geofeat
