#include "hiervid/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hiervid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

void flatten(const json& j, const std::string& path, std::ostringstream& os) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), path.empty() ? it.key() : path + "." + it.key(), os);
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], path + "[" + std::to_string(i) + "]", os);
    } else {
        std::string v;
        if (j.is_number_float()) v = fmt("%.17g", j.get<double>());
        else if (j.is_string()) v = j.get<std::string>();
        else v = j.dump();
        os << csv_field(path) << ',' << csv_field(v) << '\n';
    }
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

json to_json(const Metrics& m) {
    json charts = json::array();
    for (const auto& c : m.charts) {
        json series = json::array();
        for (const auto& s : c.series) series.push_back({{"name", s.name}, {"x", s.x}, {"y", s.y}});
        charts.push_back({{"id", c.id},
                          {"title", c.title},
                          {"x_label", c.x_label},
                          {"y_label", c.y_label},
                          {"kind", c.kind == Chart::Kind::line ? "line" : "bar"},
                          {"categories", c.categories},
                          {"series", series}});
    }
    return {{"values", m.values}, {"charts", charts}};
}

Metrics metrics_from_json(const json& j) {
    Metrics m;
    m.values = j.at("values");
    for (const auto& c : j.at("charts")) {
        Chart ch;
        ch.id = c.at("id").get<std::string>();
        ch.title = c.at("title").get<std::string>();
        ch.x_label = c.at("x_label").get<std::string>();
        ch.y_label = c.at("y_label").get<std::string>();
        ch.kind = c.at("kind").get<std::string>() == "bar" ? Chart::Kind::bar : Chart::Kind::line;
        ch.categories = c.at("categories").get<std::vector<std::string>>();
        for (const auto& s : c.at("series"))
            ch.series.push_back({s.at("name").get<std::string>(), s.at("x").get<std::vector<double>>(),
                                 s.at("y").get<std::vector<double>>()});
        m.charts.push_back(std::move(ch));
    }
    return m;
}

std::string metrics_csv(const json& values) {
    std::ostringstream os;
    os << "metric,value\n";
    flatten(values, "", os);
    return os.str();
}

std::string render_svg(const Chart& chart) {
    constexpr double W = 560, H = 360, left = 70, right = 150, top = 40, bottom = 60;
    const double pw = W - left - right, ph = H - top - bottom;
    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& s : chart.series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("chart " + chart.id + ": series " + s.name + " has mismatched x/y");
        for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
        for (double v : s.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
    }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (chart.kind == Chart::Kind::bar) ymin = std::min(ymin, 0.0);
    if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
    if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(chart.title)
       << "</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\" font-size=\"13\">"
       << xml_escape(chart.x_label) << "</text>\n";
    os << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
       << top + ph / 2 << ")\">" << xml_escape(chart.y_label) << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = ymin + (ymax - ymin) * i / 4.0;
        os << "<text x=\"" << left - 6 << "\" y=\"" << fmt("%.2f", py(y) + 4) << "\" text-anchor=\"end\" font-size=\"10\">"
           << fmt("%.3g", y) << "</text>\n";
    }

    if (chart.kind == Chart::Kind::line) {
        for (int i = 0; i <= 4; ++i) {
            const double x = xmin + (xmax - xmin) * i / 4.0;
            os << "<text x=\"" << fmt("%.2f", px(x)) << "\" y=\"" << top + ph + 16
               << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt("%.3g", x) << "</text>\n";
        }
        for (std::size_t si = 0; si < chart.series.size(); ++si) {
            const auto& s = chart.series[si];
            const char* color = kPalette[si % 8];
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                os << (i ? " " : "") << fmt("%.2f", px(s.x[i])) << ',' << fmt("%.2f", py(s.y[i]));
            os << "\"/>\n";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                os << "<circle cx=\"" << fmt("%.2f", px(s.x[i])) << "\" cy=\"" << fmt("%.2f", py(s.y[i]))
                   << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
    } else {
        const std::size_t groups = chart.categories.size();
        const std::size_t ns = std::max<std::size_t>(1, chart.series.size());
        const double gw = groups ? pw / static_cast<double>(groups) : pw;
        const double bw = 0.8 * gw / static_cast<double>(ns);
        for (std::size_t g = 0; g < groups; ++g)
            os << "<text x=\"" << fmt("%.2f", left + gw * (g + 0.5)) << "\" y=\"" << top + ph + 16
               << "\" text-anchor=\"middle\" font-size=\"10\">" << xml_escape(chart.categories[g]) << "</text>\n";
        for (std::size_t si = 0; si < chart.series.size(); ++si) {
            const auto& s = chart.series[si];
            for (std::size_t i = 0; i < s.y.size() && i < groups; ++i) {
                const double x0 = left + gw * i + 0.1 * gw + bw * si;
                const double y0 = py(std::max(0.0, s.y[i])), y1 = py(std::min(0.0, s.y[i]));
                os << "<rect x=\"" << fmt("%.2f", x0) << "\" y=\"" << fmt("%.2f", y0) << "\" width=\"" << fmt("%.2f", bw)
                   << "\" height=\"" << fmt("%.2f", y1 - y0) << "\" fill=\"" << kPalette[si % 8] << "\"/>\n";
            }
        }
    }
    for (std::size_t si = 0; si < chart.series.size(); ++si) {
        const double ly = top + 14 + 18.0 * static_cast<double>(si);
        os << "<rect x=\"" << left + pw + 12 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
           << kPalette[si % 8] << "\"/>\n";
        os << "<text x=\"" << left + pw + 28 << "\" y=\"" << ly << "\" font-size=\"11\">"
           << xml_escape(chart.series[si].name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::vector<fs::path> emit_report(const Metrics& metrics, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<fs::path> written;
    written.push_back(out_dir / "report.json");
    write_text(written.back(), to_json(metrics).dump(2) + "\n");
    written.push_back(out_dir / "report.csv");
    write_text(written.back(), metrics_csv(metrics.values));
    for (const auto& c : metrics.charts) {
        written.push_back(out_dir / ("chart_" + c.id + ".svg"));
        write_text(written.back(), render_svg(c));
    }
    return written;
}

}  // namespace hiervid
