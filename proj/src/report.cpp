#include "entcell/report.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <sstream>

namespace entcell {

namespace {

constexpr int kWidth = 720, kHeight = 420;
constexpr int kLeft = 70, kRight = 20, kTop = 48, kBottom = 64;

const char * kPalette[] = {"#4878cf", "#d65f5f", "#59a14f", "#b279a2", "#e49444", "#76b7b2"};

std::string svg_header(const std::string & title) {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";
    return os.str();
}

double nice_max(double v) {
    if (v <= 0.0) return 1.0;
    double mag = std::pow(10.0, std::floor(std::log10(v)));
    for (double step : {1.0, 2.0, 2.5, 5.0, 10.0}) {
        if (v <= step * mag) return step * mag;
    }
    return 10.0 * mag;
}

std::string axis_and_gridlines(double y_max, double y_min, const std::string & y_label) {
    std::ostringstream os;
    int plot_h = kHeight - kTop - kBottom;
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
       << kTop + plot_h << "\" stroke=\"#444\"/>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kWidth - kRight
       << "\" y2=\"" << kTop + plot_h << "\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double frac = static_cast<double>(i) / 4.0;
        double val = y_min + (y_max - y_min) * frac;
        int y = kTop + plot_h - static_cast<int>(frac * plot_h);
        os << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << y << "\" x2=\"" << kWidth - kRight
           << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n";
        char buf[32];
        snprintf(buf, sizeof(buf), "%.3g", val);
        os << "<text x=\"" << kLeft - 8 << "\" y=\"" << y + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << buf
           << "</text>\n";
    }
    os << "<text x=\"16\" y=\"" << kTop + plot_h / 2
       << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
       << kTop + plot_h / 2 << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
    return os.str();
}

} // namespace

std::string svg_bar_chart(const std::string & title, const std::vector<std::string> & labels,
                          const std::vector<double> & values, const std::string & y_label) {
    if (labels.size() != values.size()) throw data_error("bar chart labels/values mismatch");
    double y_max = nice_max(*std::max_element(values.begin(), values.end()));
    std::ostringstream os;
    os << svg_header(title) << axis_and_gridlines(y_max, 0.0, y_label);
    int plot_w = kWidth - kLeft - kRight;
    int plot_h = kHeight - kTop - kBottom;
    size_t n = labels.size();
    double slot = static_cast<double>(plot_w) / static_cast<double>(n);
    double bar_w = slot * 0.7;
    for (size_t i = 0; i < n; ++i) {
        double h = values[i] / y_max * plot_h;
        double x = kLeft + slot * static_cast<double>(i) + (slot - bar_w) / 2.0;
        double y = kTop + plot_h - h;
        os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w << "\" height=\"" << h
           << "\" fill=\"" << kPalette[0] << "\"/>\n";
        os << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << kTop + plot_h + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << labels[i]
           << "</text>\n";
        char buf[32];
        snprintf(buf, sizeof(buf), "%.3g", values[i]);
        os << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << y - 4
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << buf
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_line_chart(const std::string & title, const std::vector<double> & x,
                           const std::vector<SvgSeries> & series, const std::string & x_label,
                           const std::string & y_label) {
    if (x.empty() || series.empty()) throw data_error("empty line chart");
    double y_max = 0.0, y_min = 0.0;
    for (const auto & s : series) {
        if (s.y.size() != x.size()) throw data_error("line chart series length mismatch");
        for (double v : s.y) {
            y_max = std::max(y_max, v);
            y_min = std::min(y_min, v);
        }
    }
    y_max = nice_max(y_max);
    double x_lo = *std::min_element(x.begin(), x.end());
    double x_hi = *std::max_element(x.begin(), x.end());
    if (x_hi == x_lo) x_hi = x_lo + 1.0;

    std::ostringstream os;
    os << svg_header(title) << axis_and_gridlines(y_max, y_min, y_label);
    int plot_w = kWidth - kLeft - kRight;
    int plot_h = kHeight - kTop - kBottom;
    auto px = [&](double v) { return kLeft + (v - x_lo) / (x_hi - x_lo) * plot_w; };
    auto py = [&](double v) { return kTop + plot_h - (v - y_min) / (y_max - y_min) * plot_h; };
    for (size_t s = 0; s < series.size(); ++s) {
        os << "<polyline fill=\"none\" stroke=\"" << kPalette[s % 6] << "\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < x.size(); ++i) os << px(x[i]) << "," << py(series[s].y[i]) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << kWidth - kRight - 8 << "\" y=\"" << kTop + 16 + 16 * static_cast<int>(s)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
           << kPalette[s % 6] << "\">" << series[s].name << "</text>\n";
    }
    os << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
       << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::string svg_paired_bars(const std::string & title, const std::vector<std::string> & labels,
                            const std::vector<double> & first, const std::vector<double> & second,
                            const std::string & first_name, const std::string & second_name) {
    if (labels.size() != first.size() || labels.size() != second.size()) {
        throw data_error("paired bars size mismatch");
    }
    double y_max = 0.0;
    for (double v : first) y_max = std::max(y_max, v);
    for (double v : second) y_max = std::max(y_max, v);
    y_max = nice_max(y_max);

    std::ostringstream os;
    os << svg_header(title) << axis_and_gridlines(y_max, 0.0, "probability");
    int plot_w = kWidth - kLeft - kRight;
    int plot_h = kHeight - kTop - kBottom;
    size_t n = labels.size();
    double slot = static_cast<double>(plot_w) / static_cast<double>(n);
    double bar_w = slot * 0.32;
    for (size_t i = 0; i < n; ++i) {
        double x0 = kLeft + slot * static_cast<double>(i) + slot * 0.15;
        for (int which = 0; which < 2; ++which) {
            double v = which == 0 ? first[i] : second[i];
            double h = v / y_max * plot_h;
            double x = x0 + which * bar_w;
            os << "<rect x=\"" << x << "\" y=\"" << kTop + plot_h - h << "\" width=\"" << bar_w
               << "\" height=\"" << h << "\" fill=\"" << kPalette[which] << "\"/>\n";
        }
        os << "<text x=\"" << kLeft + slot * (static_cast<double>(i) + 0.5) << "\" y=\""
           << kTop + plot_h + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << labels[i]
           << "</text>\n";
    }
    os << "<text x=\"" << kWidth - kRight - 8 << "\" y=\"" << kTop + 16
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << kPalette[0]
       << "\">" << first_name << "</text>\n";
    os << "<text x=\"" << kWidth - kRight - 8 << "\" y=\"" << kTop + 32
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << kPalette[1]
       << "\">" << second_name << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

void write_text_file(const std::string & path, const std::string & content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write file: " + path);
    out << content;
}

std::string iso_timestamp_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["tool_version"] = tool_version;
    j["seed"] = seed;
    j["config"] = config_snapshot;
    j["organism_fingerprint"] = organism_fingerprint;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["wall_clock_s"] = wall_clock_s;
    j["status"] = status;
    return j;
}

void write_manifest(const std::string & path, const RunManifest & manifest) {
    write_text_file(path, manifest.to_json().dump(2) + "\n");
}

} // namespace entcell
