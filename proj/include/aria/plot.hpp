#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "aria/dsp.hpp"
#include "aria/error.hpp"

namespace aria {

/// Write reference and generated log-mel spectrograms stacked vertically into
/// one grayscale PGM (reference on top), sharing a common intensity scale.
/// Frequency goes bottom-up, time left-to-right.
inline void write_mel_comparison_pgm(const MelSpectrogram& ref, const MelSpectrogram& gen,
                                     const std::string& path) {
    const int frames = std::min(ref.frames(), gen.frames());
    const int bins = static_cast<int>(ref.values.cols());
    if (frames < 1 || bins < 1 || gen.values.cols() != bins)
        throw ValidationError("mel plot: spectrograms empty or bin counts differ");
    double lo = 1e30, hi = -1e30;
    for (const MelSpectrogram* m : {&ref, &gen}) {
        lo = std::min(lo, m->values.topRows(frames).minCoeff());
        hi = std::max(hi, m->values.topRows(frames).maxCoeff());
    }
    if (hi <= lo) hi = lo + 1.0;

    const int gap = 2;
    const int height = 2 * bins + gap;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("mel plot: cannot open '" + path + "'");
    os << "P5\n" << frames << " " << height << "\n255\n";
    const auto shade = [&](double v) {
        const double x = (v - lo) / (hi - lo);
        return static_cast<unsigned char>(std::lround(255.0 * std::clamp(x, 0.0, 1.0)));
    };
    std::vector<unsigned char> row(static_cast<std::size_t>(frames));
    const auto emit_panel = [&](const MelSpectrogram& m) {
        for (int b = bins - 1; b >= 0; --b) {
            for (int t = 0; t < frames; ++t) row[static_cast<std::size_t>(t)] = shade(m.values(t, b));
            os.write(reinterpret_cast<const char*>(row.data()), frames);
        }
    };
    emit_panel(ref);
    std::fill(row.begin(), row.end(), static_cast<unsigned char>(255));
    for (int i = 0; i < gap; ++i) os.write(reinterpret_cast<const char*>(row.data()), frames);
    emit_panel(gen);
    if (!os) throw Error("mel plot: write to '" + path + "' failed");
}

/// Histogram of per-phoneme duration deviations (predicted - labeled frames)
/// as a standalone SVG. A second series, when given, is drawn alongside for
/// comparison. Deviations beyond +-clip_at land in the edge buckets.
inline void write_duration_histogram_svg(const std::vector<int>& primary,
                                         const std::vector<int>& secondary,
                                         const std::string& primary_label,
                                         const std::string& secondary_label,
                                         const std::string& path, int clip_at = 8) {
    if (primary.empty()) throw ValidationError("duration plot: no deviations to plot");
    const int n_buckets = 2 * clip_at + 1;
    const auto bucketize = [&](const std::vector<int>& devs) {
        std::vector<double> h(static_cast<std::size_t>(n_buckets), 0.0);
        for (int d : devs) h[static_cast<std::size_t>(std::clamp(d, -clip_at, clip_at) + clip_at)] += 1.0;
        for (double& v : h) v /= static_cast<double>(devs.size());
        return h;
    };
    std::vector<std::vector<double>> series{bucketize(primary)};
    if (!secondary.empty()) series.push_back(bucketize(secondary));

    double peak = 0.0;
    for (const auto& h : series)
        for (double v : h) peak = std::max(peak, v);
    if (peak <= 0.0) peak = 1.0;

    const int width = 640, height = 360, margin = 40;
    const double plot_w = width - 2.0 * margin, plot_h = height - 2.0 * margin;
    const double group_w = plot_w / n_buckets;
    const char* colors[2] = {"#3465a4", "#cc7a00"};

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
                      "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    for (std::size_t s = 0; s < series.size(); ++s) {
        const double bar_w = group_w / static_cast<double>(series.size() + 1);
        for (int b = 0; b < n_buckets; ++b) {
            const double v = series[s][static_cast<std::size_t>(b)];
            const double bh = plot_h * v / peak;
            const double x = margin + b * group_w + (static_cast<double>(s) + 0.5) * bar_w;
            const double y = margin + plot_h - bh;
            svg += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(bar_w) +
                   "\" height=\"" + num(bh) + "\" fill=\"" + colors[s % 2] + "\"/>\n";
        }
        const std::string label = s == 0 ? primary_label : secondary_label;
        svg += "<text x=\"" + std::to_string(margin + 8) + "\" y=\"" +
               std::to_string(margin + 16 + 18 * static_cast<int>(s)) + "\" font-size=\"13\" fill=\"" +
               colors[s % 2] + "\">" + label + "</text>\n";
    }
    svg += "<line x1=\"" + std::to_string(margin) + "\" y1=\"" + std::to_string(height - margin) +
           "\" x2=\"" + std::to_string(width - margin) + "\" y2=\"" + std::to_string(height - margin) +
           "\" stroke=\"black\"/>\n";
    for (int b = 0; b < n_buckets; b += 2) {
        const double x = margin + (b + 0.5) * group_w;
        svg += "<text x=\"" + num(x) + "\" y=\"" + std::to_string(height - margin + 16) +
               "\" font-size=\"11\" text-anchor=\"middle\">" + std::to_string(b - clip_at) +
               "</text>\n";
    }
    svg += "<text x=\"" + std::to_string(width / 2) + "\" y=\"" + std::to_string(height - 6) +
           "\" font-size=\"12\" text-anchor=\"middle\">predicted minus labeled duration (frames)"
           "</text>\n";
    svg += "</svg>\n";

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("duration plot: cannot open '" + path + "'");
    os << svg;
    if (!os) throw Error("duration plot: write to '" + path + "' failed");
}

}  // namespace aria
