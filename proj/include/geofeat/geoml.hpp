/**
 * @file geoml.hpp
 * @brief Template similarity maps and supervised classification on feature rasters.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "geofeat/points.hpp"
#include "geofeat/raster_io.hpp"

namespace geofeat {

// ---------------------------------------------------------------------------
// Similarity

enum class Aggregation { Mean, Max };
/// Clamp maps negative cosine to 0; Rescale maps s to (s + 1) / 2.
enum class NegativeScores { Clamp, Rescale };

Aggregation parse_aggregation(const std::string& s);
NegativeScores parse_negative_scores(const std::string& s);

struct TemplateSet {
    std::vector<GeoPoint> points;
    std::vector<PixelIndex> cells;
    Eigen::MatrixXd unit_vectors;  ///< one L2-normalized feature vector per point
    Eigen::VectorXd template_vector;  ///< normalized mean of unit_vectors
};

/// Reads each point's cell, normalizes, averages and re-normalizes.
TemplateSet extract_template(const RasterDataset& fr, const std::vector<GeoPoint>& points);

struct SimilarityOptions {
    Aggregation aggregation = Aggregation::Mean;
    NegativeScores negative = NegativeScores::Clamp;
};

/// Score of one feature vector: 0 for zero-norm vectors, NaN if any entry is NaN.
double similarity_score(const Eigen::Ref<const Eigen::VectorXd>& v, const TemplateSet& t, const SimilarityOptions& opt);

/// Single-band float32 similarity raster.
void similarity_map(const RasterDataset& fr, const TemplateSet& t, const std::filesystem::path& out,
                    const SimilarityOptions& opt = {}, Compression compression = Compression::Deflate);

constexpr double kMaskNodata = 255.0;

/// uint8 mask: 1 where s >= threshold, 0 elsewhere, 255 for NaN.
void threshold_mask(const RasterDataset& sim, double threshold, const std::filesystem::path& out,
                    Compression compression = Compression::Deflate);

// ---------------------------------------------------------------------------
// Labelled samples

struct LabeledDataset {
    Eigen::MatrixXd x;                 ///< n x D
    std::vector<int> y;                ///< dense codes into `classes`
    std::vector<std::string> classes;  ///< first-appearance order
    std::vector<std::optional<std::int64_t>> fold;
    std::vector<std::optional<std::string>> split;
    std::vector<PixelIndex> cells;
    std::vector<std::string> warnings;

    int class_count() const { return static_cast<int>(classes.size()); }
};

/// Feature rows for labelled points, in file order. Points sharing a cell are
/// kept and reported in `warnings`.
LabeledDataset build_dataset(const RasterDataset& fr, const PointCollection& points);

// ---------------------------------------------------------------------------
// Classifiers

enum class DistanceMetric { Euclidean, Cosine };

DistanceMetric parse_metric(const std::string& s);

struct KnnParams {
    int k = 5;
    DistanceMetric metric = DistanceMetric::Euclidean;
};

/// Brute-force kNN. Majority vote; tied classes resolve to the class of the
/// nearest tied neighbour, then to the lowest code.
struct KnnModel {
    KnnParams params;
    Eigen::MatrixXd x;
    std::vector<int> y;
    int class_count = 0;

    int predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

KnnModel fit_knn(const Eigen::MatrixXd& x, const std::vector<int>& y, int class_count, const KnnParams& params);

struct RfParams {
    int n_trees = 100;
    int max_depth = -1;            ///< -1 means unlimited
    int min_samples_leaf = 1;
    int features_per_split = 0;    ///< 0 means floor(sqrt(D))
    std::uint64_t seed = 0;
    bool bootstrap = true;
};

struct DecisionTree {
    struct Node {
        int feature = -1;  ///< -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        int label = 0;
    };
    std::vector<Node> nodes;

    int predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

/// CART on Gini impurity with midpoint thresholds; x[f] <= threshold goes left.
DecisionTree fit_tree(const Eigen::MatrixXd& x, const std::vector<int>& y, int class_count,
                      const std::vector<int>& rows, const RfParams& params, std::uint64_t tree_seed);

struct RandomForest {
    RfParams params;
    std::vector<DecisionTree> trees;
    int class_count = 0;
    int feature_count = 0;

    /// Majority vote over trees; ties go to the lowest code.
    int predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

/// Tree t uses seed + t for its bootstrap draw and feature sampling.
RandomForest fit_random_forest(const Eigen::MatrixXd& x, const std::vector<int>& y, int class_count,
                               const RfParams& params);

struct ClassifierSpec {
    std::string algorithm = "knn";  ///< "knn" or "rf"
    KnnParams knn;
    RfParams rf;
};

struct Classifier {
    std::variant<KnnModel, RandomForest> model;
    std::vector<std::string> classes;

    int predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

Classifier fit_classifier(const Eigen::MatrixXd& x, const std::vector<int>& y, const std::vector<std::string>& classes,
                          const ClassifierSpec& spec);

nlohmann::json to_json(const Classifier& c);
Classifier classifier_from_json(const nlohmann::json& j);

constexpr double kClassNodata = -1.0;

/// int16 class raster (nodata -1) plus a "<out>.labels.json" sidecar.
void predict_raster(const RasterDataset& fr, const Classifier& c, const std::filesystem::path& out,
                    Compression compression = Compression::Deflate);

// ---------------------------------------------------------------------------
// Validation

enum class CvScheme { RandomKFold, ColumnFold, ColumnSplit };

CvScheme parse_scheme(const std::string& s);
const char* to_string(CvScheme s);

struct CvOptions {
    CvScheme scheme = CvScheme::RandomKFold;
    int folds = 5;
    std::uint64_t seed = 0;
};

struct FoldResult {
    std::string name;
    std::vector<int> test_rows;
    Eigen::MatrixXi confusion;  ///< rows: true class, cols: predicted class
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

struct CvReport {
    std::string scheme;
    std::vector<std::string> classes;
    std::vector<FoldResult> folds;
    double accuracy_mean = 0.0;
    double accuracy_std = 0.0;
    double macro_f1_mean = 0.0;
    double macro_f1_std = 0.0;

    nlohmann::json to_json() const;
};

/// Shuffle with the seed, then deal contiguous folds; the first n mod k folds get one extra row.
std::vector<std::vector<int>> random_kfold_partition(int n, int k, std::uint64_t seed);

/// Accuracy and macro-F1 of a confusion matrix; classes absent from the
/// test rows are left out of the macro average.
std::pair<double, double> classification_metrics(const Eigen::MatrixXi& confusion);

CvReport cross_validate(const LabeledDataset& data, const CvOptions& options, const ClassifierSpec& spec);

}  // namespace geofeat
