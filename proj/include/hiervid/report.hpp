#pragma once
// report.json / report.csv / SVG chart emission. Output bytes depend only on
// the metrics passed in.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hiervid {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct Chart {
    enum class Kind { line, bar };
    std::string id;  // file stem: chart_<id>.svg
    std::string title;
    std::string x_label;
    std::string y_label;
    Kind kind = Kind::line;
    std::vector<std::string> categories;  // bar charts: one label per x position
    std::vector<Series> series;
};

struct Metrics {
    nlohmann::json values = nlohmann::json::object();
    std::vector<Chart> charts;
};

nlohmann::json to_json(const Metrics& m);
Metrics metrics_from_json(const nlohmann::json& j);

/// Rows `path,value` for every scalar leaf of `values`, in key order.
std::string metrics_csv(const nlohmann::json& values);
std::string render_svg(const Chart& chart);

/// Writes report.json, report.csv and one chart_<id>.svg per chart; returns the paths written.
std::vector<std::filesystem::path> emit_report(const Metrics& metrics, const std::filesystem::path& out_dir);

}  // namespace hiervid
