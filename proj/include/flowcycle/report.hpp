#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "flowcycle/errors.hpp"

namespace flowcycle {

// One (task, editor) cell of an experiment.
struct MetricsRow {
    std::uint64_t task_id = 0;
    std::string editor;
    std::uint64_t seed = 0;
    double lambda = 0.0;
    int opt_steps = 0;
    double src_cfg = 0.0;
    double tar_cfg = 0.0;
    double consistency = 0.0;
    double alignment = 0.0;
    double l_rec = std::nan("");
    double l_align = std::nan("");
    double runtime_ms = 0.0;
};

struct RunReport {
    std::vector<MetricsRow> rows;
    std::uint64_t config_hash = 0;
    std::string resolved_config;

    // Median over finite values of a per-editor column.
    double median(const std::string& editor,
                  const std::function<double(const MetricsRow&)>& column) const {
        std::vector<double> vals;
        for (const MetricsRow& r : rows)
            if (r.editor == editor && std::isfinite(column(r))) vals.push_back(column(r));
        if (vals.empty()) return std::nan("");
        std::sort(vals.begin(), vals.end());
        const std::size_t n = vals.size();
        return n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    }

    std::vector<std::string> editors() const {
        std::vector<std::string> out;
        for (const MetricsRow& r : rows)
            if (std::find(out.begin(), out.end(), r.editor) == out.end())
                out.push_back(r.editor);
        return out;
    }
};

namespace detail {

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Write-temp-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw io_error("cannot open for writing: " + tmp.string());
    const bool ok = std::fwrite(content.data(), 1, content.size(), f) == content.size();
    std::fclose(f);
    if (!ok) throw io_error("short write: " + tmp.string());
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw io_error("rename failed: " + path.string());
}

}  // namespace detail

inline std::string metrics_csv(const RunReport& report) {
    std::string out =
        "task_id,editor,seed,lambda,opt_steps,src_cfg,tar_cfg,"
        "consistency,alignment,l_rec,l_align,runtime_ms\n";
    for (const MetricsRow& r : report.rows) {
        out += std::to_string(r.task_id) + "," + r.editor + "," + std::to_string(r.seed) + "," +
               detail::fmt17(r.lambda) + "," + std::to_string(r.opt_steps) + "," +
               detail::fmt17(r.src_cfg) + "," + detail::fmt17(r.tar_cfg) + "," +
               detail::fmt17(r.consistency) + "," + detail::fmt17(r.alignment) + "," +
               detail::fmt17(r.l_rec) + "," + detail::fmt17(r.l_align) + "," +
               detail::fmt17(r.runtime_ms) + "\n";
    }
    return out;
}

inline std::string summary_csv(const RunReport& report) {
    std::string out = "editor,median_consistency,median_alignment,median_l_rec,median_l_align\n";
    for (const std::string& ed : report.editors()) {
        out += ed + "," +
               detail::fmt17(report.median(ed, [](const MetricsRow& r) { return r.consistency; })) +
               "," +
               detail::fmt17(report.median(ed, [](const MetricsRow& r) { return r.alignment; })) +
               "," + detail::fmt17(report.median(ed, [](const MetricsRow& r) { return r.l_rec; })) +
               "," +
               detail::fmt17(report.median(ed, [](const MetricsRow& r) { return r.l_align; })) +
               "\n";
    }
    return out;
}

// Minimal hand-rolled scatter of (consistency, alignment), one marker
// per row, one color per editor.
inline std::string tradeoff_svg(const RunReport& report) {
    const int width = 640, height = 480, margin = 60;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const MetricsRow& r : report.rows) {
        if (!std::isfinite(r.consistency) || !std::isfinite(r.alignment)) continue;
        xmin = std::min(xmin, r.consistency);
        xmax = std::max(xmax, r.consistency);
        ymin = std::min(ymin, r.alignment);
        ymax = std::max(ymax, r.alignment);
    }
    if (xmin > xmax) {
        xmin = ymin = 0.0;
        xmax = ymax = 1.0;
    }
    if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
    if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
    auto px = [&](double x) {
        return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin);
    };
    auto py = [&](double y) {
        return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin);
    };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b"};
    std::map<std::string, const char*> color;
    {
        std::size_t i = 0;
        for (const std::string& ed : report.editors())
            color[ed] = palette[i++ % 6];
    }
    std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", margin,
                  height - margin, width - margin, height - margin);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", margin,
                  margin, margin, height - margin);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-size=\"13\">consistency (lower better)</text>\n",
                  width / 2 - 80, height - 20);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"18\" y=\"%d\" font-size=\"13\" transform=\"rotate(-90 18 %d)\">"
                  "alignment (lower better)</text>\n",
                  height / 2 + 70, height / 2 + 70);
    svg += buf;
    for (const MetricsRow& r : report.rows) {
        if (!std::isfinite(r.consistency) || !std::isfinite(r.alignment)) continue;
        std::snprintf(buf, sizeof(buf),
                      "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"%s\" fill-opacity=\"0.7\"/>\n",
                      px(r.consistency), py(r.alignment), color[r.editor]);
        svg += buf;
    }
    int ly = margin;
    for (const std::string& ed : report.editors()) {
        std::snprintf(buf, sizeof(buf),
                      "<circle cx=\"%d\" cy=\"%d\" r=\"5\" fill=\"%s\"/>"
                      "<text x=\"%d\" y=\"%d\" font-size=\"13\">%s</text>\n",
                      width - margin - 110, ly, color[ed], width - margin - 98, ly + 4,
                      ed.c_str());
        svg += buf;
        ly += 20;
    }
    svg += "</svg>\n";
    return svg;
}

// Writes metrics.csv, summary.csv, tradeoff.svg and the resolved config
// next to each other; every file lands atomically.
inline void emit_report(const RunReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output dir: " + dir.string());
    detail::write_file_atomic(dir / "metrics.csv", metrics_csv(report));
    detail::write_file_atomic(dir / "summary.csv", summary_csv(report));
    detail::write_file_atomic(dir / "tradeoff.svg", tradeoff_svg(report));
    detail::write_file_atomic(dir / "config.txt", report.resolved_config);
}

}  // namespace flowcycle
