#include <fstream>
#include <limits>

#include "geofeat/error.hpp"
#include "geofeat/geoml.hpp"

namespace geofeat {
namespace {

using nlohmann::json;

json matrix_rows(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

Eigen::MatrixXd rows_matrix(const json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    const Eigen::Index cols = rows.empty() ? 0 : Eigen::Index(rows[0].size());
    Eigen::MatrixXd m(Eigen::Index(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (Eigen::Index(rows[i].size()) != cols) throw InputError("ragged matrix in model file");
        for (Eigen::Index c = 0; c < cols; ++c) m(Eigen::Index(i), c) = rows[i][std::size_t(c)];
    }
    return m;
}

json tree_json(const DecisionTree& t) {
    json nodes = json::array();
    for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.label});
    return nodes;
}

DecisionTree tree_from_json(const json& j, int class_count) {
    DecisionTree t;
    for (const auto& n : j) {
        DecisionTree::Node nd{n.at(0), n.at(1), n.at(2), n.at(3), n.at(4)};
        if (nd.label < 0 || nd.label >= class_count) throw InputError("tree node label out of range");
        t.nodes.push_back(nd);
    }
    const int size = int(t.nodes.size());
    if (size == 0) throw InputError("empty decision tree");
    for (const auto& nd : t.nodes)
        if (nd.feature >= 0 && (nd.left <= 0 || nd.left >= size || nd.right <= 0 || nd.right >= size))
            throw InputError("tree node child index out of range");
    return t;
}

}  // namespace

json to_json(const Classifier& c) {
    json j{{"classes", c.classes}};
    if (const auto* knn = std::get_if<KnnModel>(&c.model)) {
        j["type"] = "knn";
        j["k"] = knn->params.k;
        j["metric"] = knn->params.metric == DistanceMetric::Euclidean ? "euclidean" : "cosine";
        j["x"] = matrix_rows(knn->x);
        j["y"] = knn->y;
    } else {
        const auto& rf = std::get<RandomForest>(c.model);
        j["type"] = "rf";
        j["params"] = {{"n_trees", rf.params.n_trees},
                       {"max_depth", rf.params.max_depth},
                       {"min_samples_leaf", rf.params.min_samples_leaf},
                       {"features_per_split", rf.params.features_per_split},
                       {"seed", rf.params.seed},
                       {"bootstrap", rf.params.bootstrap}};
        json trees = json::array();
        for (const auto& t : rf.trees) trees.push_back(tree_json(t));
        j["trees"] = std::move(trees);
        j["feature_count"] = rf.feature_count;
    }
    return j;
}

Classifier classifier_from_json(const json& j) {
    try {
        Classifier c;
        c.classes = j.at("classes").get<std::vector<std::string>>();
        const int cc = int(c.classes.size());
        const std::string type = j.at("type");
        if (type == "knn") {
            KnnModel m;
            m.params.k = j.at("k");
            m.params.metric = parse_metric(j.at("metric"));
            m.x = rows_matrix(j.at("x"));
            m.y = j.at("y").get<std::vector<int>>();
            m.class_count = cc;
            if (m.x.rows() != Eigen::Index(m.y.size())) throw InputError("kNN model has inconsistent sizes");
            c.model = std::move(m);
        } else if (type == "rf") {
            RandomForest rf;
            const auto& p = j.at("params");
            rf.params.n_trees = p.at("n_trees");
            rf.params.max_depth = p.at("max_depth");
            rf.params.min_samples_leaf = p.at("min_samples_leaf");
            rf.params.features_per_split = p.at("features_per_split");
            rf.params.seed = p.at("seed");
            rf.params.bootstrap = p.at("bootstrap");
            rf.class_count = cc;
            rf.feature_count = j.at("feature_count");
            for (const auto& t : j.at("trees")) rf.trees.push_back(tree_from_json(t, cc));
            c.model = std::move(rf);
        } else {
            throw InputError("unknown classifier type '" + type + "'");
        }
        return c;
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed classifier model: ") + e.what());
    }
}

void predict_raster(const RasterDataset& fr, const Classifier& c, const std::filesystem::path& out,
                    Compression compression) {
    const Eigen::Index dim = std::visit(
        [](const auto& m) -> Eigen::Index {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, KnnModel>) return m.x.cols();
            else return m.feature_count;
        },
        c.model);
    if (dim != fr.band_count)
        throw InputError("dimension mismatch: model expects " + std::to_string(dim) + " bands, raster has " +
                         std::to_string(fr.band_count));
    WriteOptions wo;
    wo.compression = compression;
    wo.sample_type = SampleType::Int16;
    wo.nodata = kClassNodata;
    const RasterSpec spec{fr.width, fr.height, 1, fr.geotransform, fr.crs_id};
    write_raster(out, spec,
                 [&](const Window& w) {
                     const PixelBlock blk = read_window(fr, w);
                     Eigen::MatrixXf labels(blk.values.rows(), 1);
                     for (Eigen::Index i = 0; i < blk.values.rows(); ++i) {
                         const auto row = blk.values.row(i);
                         labels(i, 0) = row.array().isNaN().any() ? std::numeric_limits<float>::quiet_NaN()
                                                                  : float(c.predict(row.cast<double>()));
                     }
                     return labels;
                 },
                 wo);
    json sidecar{{"nodata", kClassNodata}, {"labels", json::object()}};
    for (std::size_t i = 0; i < c.classes.size(); ++i) sidecar["labels"][std::to_string(i)] = c.classes[i];
    std::ofstream f(out.string() + ".labels.json");
    f << sidecar.dump(2) << '\n';
    if (!f) throw ResumableError("cannot write label sidecar for " + out.string());
}

json CvReport::to_json() const {
    json fj = json::array();
    for (const auto& f : folds) {
        json cm = json::array();
        for (Eigen::Index r = 0; r < f.confusion.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < f.confusion.cols(); ++c) row.push_back(f.confusion(r, c));
            cm.push_back(std::move(row));
        }
        fj.push_back({{"name", f.name},
                      {"test_count", f.test_rows.size()},
                      {"confusion", std::move(cm)},
                      {"accuracy", f.accuracy},
                      {"macro_f1", f.macro_f1}});
    }
    return {{"scheme", scheme},
            {"classes", classes},
            {"folds", std::move(fj)},
            {"accuracy", {{"mean", accuracy_mean}, {"std", accuracy_std}}},
            {"macro_f1", {{"mean", macro_f1_mean}, {"std", macro_f1_std}}}};
}

}  // namespace geofeat
