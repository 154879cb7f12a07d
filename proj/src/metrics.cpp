#include "scribble/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "scribble/data_io.hpp"
#include "scribble/error.hpp"

namespace scribble::eval {

namespace fs = std::filesystem;

namespace {

void require_binary(const Grid& g, const char* what) {
    for (double v : g.data())
        if (v != 0.0 && v != 1.0) throw ArgumentError(std::string(what) + " mask is not binary (found " + std::to_string(v) + ")");
}

double sorted_mean(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

MetricsRow metrics(const Grid& pred, const Grid& gt, double beta2, std::string id) {
    if (pred.shape() != gt.shape() || pred.rank() != 2) {
        throw ShapeError("metrics: prediction " + to_string(pred.shape()) + " and ground truth " + to_string(gt.shape()) +
                         " must be equal H x W shapes");
    }
    if (!(beta2 > 0)) throw ArgumentError("beta2 must be > 0");
    require_binary(pred, "prediction");
    require_binary(gt, "ground-truth");
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const bool p = pred[k] == 1.0, g = gt[k] == 1.0;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    MetricsRow r{std::move(id)};
    r.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    r.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double den = beta2 * r.precision + r.recall;
    r.f_measure = den > 0 ? (1.0 + beta2) * r.precision * r.recall / den : 0.0;
    return r;
}

MetricsRow mean_row(const std::vector<MetricsRow>& rows) {
    if (rows.empty()) throw ArgumentError("cannot average an empty set of metrics");
    std::vector<double> p, r, f;
    for (const auto& row : rows) p.push_back(row.precision), r.push_back(row.recall), f.push_back(row.f_measure);
    return {"mean", sorted_mean(p), sorted_mean(r), sorted_mean(f)};
}

std::vector<MetricsRow> evaluate_dirs(const fs::path& pred_dir, const fs::path& gt_dir, double beta2) {
    for (const auto& d : {pred_dir, gt_dir})
        if (!fs::is_directory(d)) throw IoError("not a directory: " + d.string());
    auto index = [](const fs::path& dir) {
        std::map<std::string, fs::path> m;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            const std::string ext = e.path().extension().string();
            if (ext != ".png" && ext != ".pgm" && ext != ".ppm" && ext != ".pnm") continue;
            const std::string stem = e.path().stem().string();
            if (!m.emplace(stem, e.path()).second) throw IoError("two masks share the name '" + stem + "' in " + dir.string());
        }
        return m;
    };
    const auto gts = index(gt_dir), preds = index(pred_dir);
    if (gts.empty()) throw IoError("no masks found in " + gt_dir.string());
    std::vector<MetricsRow> rows;
    for (const auto& [stem, gt_path] : gts) {
        auto it = preds.find(stem);
        if (it == preds.end()) throw IoError("no prediction for '" + stem + "' in " + pred_dir.string());
        const Grid gt = data::raster_to_mask(data::read_raster(gt_path));
        const Grid pred = data::raster_to_mask(data::read_raster(it->second));
        if (gt.shape() != pred.shape()) {
            throw ShapeError("'" + stem + "': prediction " + to_string(pred.shape()) + " vs ground truth " + to_string(gt.shape()));
        }
        rows.push_back(metrics(pred, gt, beta2, stem));
    }
    return rows;
}

std::string metrics_header() { return "id\tprecision\trecall\tf_measure"; }

std::string format_metrics(const MetricsRow& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\t%.6f", r.precision, r.recall, r.f_measure);
    return r.id + buf;
}

}  // namespace scribble::eval
